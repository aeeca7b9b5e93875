//! Locality-weighted and plain sparse encoding against a codebook.
//!
//! Both encoders minimise
//!
//! ```text
//! F(γ) = ½‖x − Σ_v γ_v v‖² + Σ_v w_v |γ_v|
//! ```
//!
//! with `w_v = μ‖v − x‖^{1+p}` (local coordinate coding) or `w_v = β`
//! (sparse coding), by cyclic coordinate descent with soft-thresholding on
//! the anchor Gram matrix. Each sweep is followed by an exact solve on the
//! current support and sign pattern.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LccError, Result};
use crate::io::{fmt_f64, read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodebookMode {
    /// Anchors penalised by `λ Σ‖v‖²`.
    RidgeRegularized,
    /// Anchors constrained to the unit ball.
    UnitNormConstrained,
}

/// Anchor points, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookRepr", into = "CodebookRepr")]
pub struct Codebook {
    anchors: Array2<f64>,
    mode: CodebookMode,
}

#[derive(Serialize, Deserialize)]
struct CodebookRepr {
    d: usize,
    mode: CodebookMode,
    anchors: Vec<Vec<f64>>,
}

impl TryFrom<CodebookRepr> for Codebook {
    type Error = LccError;

    fn try_from(repr: CodebookRepr) -> Result<Self> {
        let k = repr.anchors.len();
        let mut flat = Vec::with_capacity(k * repr.d);
        for row in &repr.anchors {
            if row.len() != repr.d {
                return Err(LccError::DimensionMismatch { expected: repr.d, found: row.len() });
            }
            flat.extend_from_slice(row);
        }
        let anchors = Array2::from_shape_vec((k, repr.d), flat).map_err(|e| LccError::Malformed(e.to_string()))?;
        Codebook::new(anchors, repr.mode)
    }
}

impl From<Codebook> for CodebookRepr {
    fn from(c: Codebook) -> Self {
        CodebookRepr {
            d: c.d(),
            mode: c.mode,
            anchors: c.anchors.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

pub(crate) const UNIT_NORM_SLACK: f64 = 1e-9;

impl Codebook {
    pub fn new(anchors: Array2<f64>, mode: CodebookMode) -> Result<Self> {
        if anchors.iter().any(|v| !v.is_finite()) {
            return Err(LccError::Malformed("codebook contains non-finite values".into()));
        }
        if mode == CodebookMode::UnitNormConstrained {
            for (i, row) in anchors.outer_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm > 1.0 + UNIT_NORM_SLACK {
                    return Err(LccError::Malformed(format!("anchor {i} has norm {norm} > 1")));
                }
            }
        }
        Ok(Self { anchors, mode })
    }

    pub fn size(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn d(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn mode(&self) -> CodebookMode {
        self.mode
    }

    pub fn anchors(&self) -> ArrayView2<'_, f64> {
        self.anchors.view()
    }

    pub fn anchor(&self, v: usize) -> ArrayView1<'_, f64> {
        self.anchors.row(v)
    }

    pub fn into_anchors(self) -> Array2<f64> {
        self.anchors
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// CSV export with the dataset header convention (`x0,...`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = (0..self.d()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
        text.push('\n');
        for row in self.anchors.outer_iter() {
            text.push_str(&row.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Sparse coefficient vector over a codebook, entries sorted by anchor index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodeRepr")]
pub struct Code {
    size: usize,
    entries: Vec<(usize, f64)>,
}

#[derive(Deserialize)]
struct CodeRepr {
    size: usize,
    entries: Vec<(usize, f64)>,
}

impl TryFrom<CodeRepr> for Code {
    type Error = LccError;

    fn try_from(repr: CodeRepr) -> Result<Self> {
        Code::from_entries(repr.size, repr.entries)
    }
}

impl Code {
    pub fn zeros(size: usize) -> Self {
        Self { size, entries: Vec::new() }
    }

    /// Indicator code `e_k`.
    pub fn unit(size: usize, k: usize) -> Result<Self> {
        Self::from_entries(size, vec![(k, 1.0)])
    }

    /// Drops exact zeros; indices must be unique and below `size`.
    pub fn from_entries(size: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(LccError::Malformed(format!("duplicate code index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = entries.iter().find(|&&(i, _)| i >= size) {
            return Err(LccError::IndexOutOfRange { index: i, size });
        }
        if entries.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(LccError::Malformed("non-finite code coefficient".into()));
        }
        Ok(Self { size, entries })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            size: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, v))
                .collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    /// `Σ_v w_v γ_v`.
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| weights[i] * v).sum()
    }

    /// `Σ_v γ_v`, accumulated with Neumaier compensation.
    pub fn coefficient_sum(&self) -> f64 {
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for &(_, v) in &self.entries {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }

    pub fn scaled(&self, factor: f64) -> Code {
        Code::from_entries(self.size, self.entries.iter().map(|&(i, v)| (i, v * factor)).collect())
            .expect("scaling keeps indices valid")
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [(usize, f64)] {
        &mut self.entries
    }
}

/// `γ(x) = Σ_v γ_v v`.
pub fn reconstruct(code: &Code, codebook: &Codebook) -> Result<Array1<f64>> {
    if code.size() != codebook.size() {
        return Err(LccError::DimensionMismatch { expected: codebook.size(), found: code.size() });
    }
    let mut out = Array1::zeros(codebook.d());
    for &(i, g) in code.entries() {
        if i >= codebook.size() {
            return Err(LccError::IndexOutOfRange { index: i, size: codebook.size() });
        }
        out.scaled_add(g, &codebook.anchor(i));
    }
    Ok(out)
}

/// `‖x‖_γ = (Σ_v γ_v²)^{1/2}`.
pub fn coding_norm(code: &Code) -> f64 {
    code.entries().iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodingConfig {
    /// Locality weight on `Σ|γ_v|‖v − x‖^{1+p}`.
    pub mu: f64,
    /// Plain L1 weight.
    pub beta_sparse: f64,
    /// Locality exponent, 0 or 1.
    pub p: u32,
    /// KKT tolerance.
    pub tol: f64,
    /// Maximum coordinate-descent sweeps.
    pub max_iter: usize,
}

impl Default for CodingConfig {
    fn default() -> Self {
        Self { mu: 0.0, beta_sparse: 0.0, p: 1, tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Local,
    Sparse,
}

impl CodingConfig {
    pub fn lcc(mu: f64) -> Self {
        Self { mu, ..Self::default() }
    }

    pub fn sparse(beta: f64) -> Self {
        Self { beta_sparse: beta, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LccError::InvalidConfig(msg.to_string()));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and >= 0");
        }
        if !(self.beta_sparse >= 0.0 && self.beta_sparse.is_finite()) {
            return bad("beta_sparse must be finite and >= 0");
        }
        if self.mu > 0.0 && self.beta_sparse > 0.0 {
            return bad("at most one of mu and beta_sparse may be positive");
        }
        if self.p > 1 {
            return bad("p must be 0 or 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }

    /// Positive `mu` selects local coordinate coding, anything else plain
    /// sparse coding.
    pub fn kind(&self) -> EncoderKind {
        if self.mu > 0.0 {
            EncoderKind::Local
        } else {
            EncoderKind::Sparse
        }
    }

    /// Per-anchor soft-threshold for input `x`.
    pub fn penalty_weight(&self, anchor: ArrayView1<f64>, x: ArrayView1<f64>) -> f64 {
        match self.kind() {
            EncoderKind::Local => {
                let sq = sq_dist(anchor, x);
                self.mu * if self.p == 1 { sq } else { sq.sqrt() }
            }
            EncoderKind::Sparse => self.beta_sparse,
        }
    }
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub sweeps: usize,
    pub kkt_residual: f64,
}

/// Coordinate-wise weighted LASSO in Gram form:
/// `½γᵀGγ − cᵀγ + Σ_v w_v|γ_v|`.
pub struct WeightedLasso<'a> {
    pub gram: ArrayView2<'a, f64>,
    pub corr: &'a [f64],
    pub weights: &'a [f64],
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cholesky factor of `a`, unless `a` is numerically singular.
fn well_conditioned_cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let top = a.diagonal().max();
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    (min_pivot > 1e-8 * top).then_some(chol)
}

impl WeightedLasso<'_> {
    pub fn objective(&self, gamma: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut pen = 0.0;
        for (j, &gj) in gamma.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let row = self.gram.row(j);
            quad += gj * gamma.iter().enumerate().filter(|(_, &g)| g != 0.0).map(|(k, &g)| row[k] * g).sum::<f64>();
            lin += self.corr[j] * gj;
            pen += self.weights[j] * gj.abs();
        }
        0.5 * quad - lin + pen
    }

    /// `c − Gγ`, the negated gradient of the smooth part.
    fn neg_gradient(&self, gamma: &[f64]) -> Vec<f64> {
        let mut g = self.corr.to_vec();
        for (k, &gk) in gamma.iter().enumerate() {
            if gk != 0.0 {
                for (gj, &a) in g.iter_mut().zip(self.gram.column(k).iter()) {
                    *gj -= a * gk;
                }
            }
        }
        g
    }

    fn violation(&self, g: f64, gamma: f64, j: usize) -> f64 {
        if self.gram[[j, j]] <= 0.0 {
            0.0
        } else if gamma == 0.0 {
            (g.abs() - self.weights[j]).max(0.0)
        } else {
            (g - gamma.signum() * self.weights[j]).abs()
        }
    }

    fn residual_from(&self, g: &[f64], gamma: &[f64]) -> f64 {
        (0..gamma.len()).map(|j| self.violation(g[j], gamma[j], j)).fold(0.0, f64::max)
    }

    /// Largest violation of the subgradient optimality conditions.
    pub fn kkt_residual(&self, gamma: &[f64]) -> f64 {
        self.residual_from(&self.neg_gradient(gamma), gamma)
    }

    pub fn solve(&self, gamma: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
        self.solve_traced(gamma, tol, max_iter, |_| {})
    }

    /// Minimises exactly over the current support and signs. While the
    /// support Gram is singular the objective is linear along its null
    /// space, so the iterate first slides along that descent direction
    /// until a coefficient reaches zero; on a full-rank support a Newton
    /// step follows, cut at the first zero crossing. Never increases the
    /// objective.
    fn refine_support(&self, gamma: &mut [f64]) {
        for _ in 0..gamma.len() {
            let support: Vec<usize> = (0..gamma.len()).filter(|&j| gamma[j] != 0.0).collect();
            let s = support.len();
            if s == 0 {
                return;
            }
            let g_ss = DMatrix::from_fn(s, s, |a, b| self.gram[[support[a], support[b]]]);
            let gamma_s = DVector::from_fn(s, |a, _| gamma[support[a]]);
            let lin = DVector::from_fn(s, |a, _| {
                let j = support[a];
                self.corr[j] - gamma[j].signum() * self.weights[j]
            });
            let h = &g_ss * &gamma_s - &lin;
            let (dir, sliding) = match well_conditioned_cholesky(&g_ss) {
                Some(chol) => (-chol.solve(&h), false),
                None => {
                    let Some(eig) = SymmetricEigen::try_new(g_ss.clone(), f64::EPSILON, 1000) else {
                        return;
                    };
                    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
                    let mut newton = DVector::zeros(s);
                    let mut null = DVector::zeros(s);
                    for (i, &l) in eig.eigenvalues.iter().enumerate() {
                        let u = eig.eigenvectors.column(i);
                        let proj = u.dot(&h);
                        if l > 1e-10 * top {
                            newton -= u * (proj / l);
                        } else {
                            null -= u * proj;
                        }
                    }
                    let noise = 64.0 * f64::EPSILON * (lin.norm() + top * gamma_s.norm());
                    if null.norm() > noise {
                        (null, true)
                    } else {
                        (newton, false)
                    }
                }
            };
            let slope = h.dot(&dir);
            if !(slope < 0.0) {
                return;
            }
            let curvature = dir.dot(&(&g_ss * &dir));
            let t_star = if curvature > 0.0 && !sliding { -slope / curvature } else { f64::INFINITY };
            let (mut t_max, mut blocking) = (f64::INFINITY, None);
            for a in 0..s {
                if gamma_s[a] * dir[a] < 0.0 {
                    let t = -gamma_s[a] / dir[a];
                    if t < t_max {
                        t_max = t;
                        blocking = Some(a);
                    }
                }
            }
            let t = t_star.min(t_max);
            if !t.is_finite() || t <= 0.0 {
                return;
            }
            let before = self.objective(gamma);
            let saved: Vec<f64> = support.iter().map(|&j| gamma[j]).collect();
            for a in 0..s {
                let j = support[a];
                let new = gamma_s[a] + t * dir[a];
                // Stay on the sign pattern the step was computed for.
                gamma[j] = if new * gamma_s[a] > 0.0 { new } else { 0.0 };
            }
            if let Some(a) = blocking.filter(|_| t_max <= t_star) {
                gamma[support[a]] = 0.0;
            }
            if self.objective(gamma) > before {
                // Rounding defeated the step; keep the previous iterate.
                for (&j, &v) in support.iter().zip(&saved) {
                    gamma[j] = v;
                }
                return;
            }
            if !(t_max <= t_star) {
                return;
            }
        }
    }

    /// Like [`WeightedLasso::solve`], calling `on_sweep` after every sweep.
    pub fn solve_traced(
        &self,
        gamma: &mut [f64],
        tol: f64,
        max_iter: usize,
        mut on_sweep: impl FnMut(&[f64]),
    ) -> Result<SolveStats> {
        let k = gamma.len();
        // Zero-norm anchors are inert: keep their coefficient at zero.
        for j in 0..k {
            if self.gram[[j, j]] <= 0.0 {
                gamma[j] = 0.0;
            }
        }
        let mut g = self.neg_gradient(gamma);
        let mut residual = self.residual_from(&g, gamma);
        if residual <= tol {
            return Ok(SolveStats { sweeps: 0, kkt_residual: residual });
        }
        // Sweeps run over a working set that at most doubles per sweep,
        // taking the worst outside violators, so supports stay near their
        // final size.
        let mut in_working = vec![false; k];
        let mut working: Vec<usize> = (0..k).filter(|&j| gamma[j] != 0.0).collect();
        for &j in &working {
            in_working[j] = true;
        }
        let mut q: Vec<f64> = self.corr.iter().zip(&g).map(|(c, gi)| c - gi).collect();
        for sweep in 1..=max_iter {
            let mut outside: Vec<(f64, usize)> = (0..k)
                .filter(|&j| !in_working[j])
                .map(|j| (self.violation(g[j], gamma[j], j), j))
                .filter(|&(v, _)| v > tol)
                .collect();
            outside.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, j) in outside.iter().take(working.len().max(1)) {
                in_working[j] = true;
                working.push(j);
            }
            for &j in &working {
                let gjj = self.gram[[j, j]];
                let old = gamma[j];
                let rho = self.corr[j] - q[j] + gjj * old;
                let new = soft_threshold(rho, self.weights[j]) / gjj;
                let delta = new - old;
                if delta != 0.0 {
                    gamma[j] = new;
                    for (qi, &a) in q.iter_mut().zip(self.gram.column(j).iter()) {
                        *qi += delta * a;
                    }
                }
            }
            self.refine_support(gamma);
            on_sweep(gamma);
            // Refresh the running product to shed accumulated rounding.
            g = self.neg_gradient(gamma);
            residual = self.residual_from(&g, gamma);
            if residual <= tol {
                return Ok(SolveStats { sweeps: sweep, kkt_residual: residual });
            }
            for ((qi, c), gi) in q.iter_mut().zip(self.corr).zip(&g) {
                *qi = c - gi;
            }
        }
        Err(LccError::NonConvergence { iterations: max_iter, residual })
    }
}

/// Codebook with its Gram matrix precomputed for repeated encoding.
pub struct PreparedCodebook<'a> {
    codebook: &'a Codebook,
    gram: Array2<f64>,
}

impl<'a> PreparedCodebook<'a> {
    pub fn new(codebook: &'a Codebook) -> Self {
        let a = codebook.anchors();
        let gram = a.dot(&a.t());
        for v in 0..codebook.size() {
            if gram[[v, v]] <= 0.0 {
                log::warn!("anchor {v} has zero norm and is skipped by the encoder");
            }
        }
        Self { codebook, gram }
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    pub fn gram(&self) -> ArrayView2<'_, f64> {
        self.gram.view()
    }

    /// Solves for the code of `x`, optionally warm-started from `warm`.
    pub fn encode(&self, x: ArrayView1<f64>, config: &CodingConfig, warm: Option<&Code>) -> Result<Code> {
        let cb = self.codebook;
        if x.len() != cb.d() {
            return Err(LccError::DimensionMismatch { expected: cb.d(), found: x.len() });
        }
        let corr: Vec<f64> = cb.anchors().dot(&x).to_vec();
        let weights: Vec<f64> = cb.anchors().outer_iter().map(|v| config.penalty_weight(v, x)).collect();
        let mut gamma = match warm {
            Some(code) if code.size() == cb.size() => code.to_dense(),
            _ => vec![0.0; cb.size()],
        };
        let problem = WeightedLasso { gram: self.gram.view(), corr: &corr, weights: &weights };
        problem.solve(&mut gamma, config.tol, config.max_iter)?;
        Ok(Code::from_dense(&gamma))
    }
}

fn encode_checked(x: ArrayView1<f64>, codebook: &Codebook, config: &CodingConfig) -> Result<Code> {
    config.validate()?;
    if codebook.size() == 0 {
        return Err(LccError::EmptyInput("codebook"));
    }
    PreparedCodebook::new(codebook).encode(x, config, None)
}

/// Local coordinate coding of `x`: thresholds `μ‖v − x‖^{1+p}`.
pub fn encode_lcc(x: ArrayView1<f64>, codebook: &Codebook, config: &CodingConfig) -> Result<Code> {
    encode_checked(x, codebook, &CodingConfig { beta_sparse: 0.0, ..*config })
}

/// Plain sparse coding of `x` with uniform threshold `β`.
pub fn encode_sparse(x: ArrayView1<f64>, codebook: &Codebook, config: &CodingConfig) -> Result<Code> {
    encode_checked(x, codebook, &CodingConfig { mu: 0.0, ..*config })
}

/// Per-point cost `½‖x − γ(x)‖² + Σ_v w_v|γ_v|` under `config`.
pub fn point_objective(x: ArrayView1<f64>, code: &Code, codebook: &Codebook, config: &CodingConfig) -> Result<f64> {
    let recon = reconstruct(code, codebook)?;
    let fit = 0.5 * sq_dist(x, recon.view());
    let penalty: f64 = code
        .entries()
        .iter()
        .map(|&(v, g)| g.abs() * config.penalty_weight(codebook.anchor(v), x))
        .sum();
    Ok(fit + penalty)
}

/// Encodes every row of `points` with the encoder selected by `config`.
pub fn encode_dataset(points: ArrayView2<f64>, codebook: &Codebook, config: &CodingConfig) -> Result<Vec<Code>> {
    encode_dataset_warm(points, codebook, config, None)
}

/// Batch encoding, optionally warm-started from previous codes of the same points.
pub fn encode_dataset_warm(
    points: ArrayView2<f64>,
    codebook: &Codebook,
    config: &CodingConfig,
    warm: Option<&[Code]>,
) -> Result<Vec<Code>> {
    config.validate()?;
    if points.nrows() == 0 {
        return Ok(Vec::new());
    }
    if codebook.size() == 0 {
        return Err(LccError::EmptyInput("codebook"));
    }
    if let Some(w) = warm {
        if w.len() != points.nrows() {
            return Err(LccError::DimensionMismatch { expected: points.nrows(), found: w.len() });
        }
    }
    let prepared = PreparedCodebook::new(codebook);
    let results: Vec<Result<Code>> = (0..points.nrows())
        .into_par_iter()
        .map(|i| prepared.encode(points.row(i), config, warm.map(|w| &w[i])))
        .collect();

    let mut codes = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => codes.push(c),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(codes)
    } else {
        Err(LccError::BatchFailure { failures })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn book(rows: Array2<f64>) -> Codebook {
        Codebook::new(rows, CodebookMode::RidgeRegularized).unwrap()
    }

    /// Dense grid minimum of the encoder objective for two coefficients.
    fn grid_min_2d(x: &[f64], anchors: &Array2<f64>, weights: [f64; 2], lo: f64, hi: f64, step: f64) -> (f64, [f64; 2]) {
        let steps = ((hi - lo) / step).round() as i64;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for a in 0..=steps {
            let g0 = lo + a as f64 * step;
            for b in 0..=steps {
                let g1 = lo + b as f64 * step;
                let mut r2 = 0.0;
                for (j, &xj) in x.iter().enumerate() {
                    let r = xj - g0 * anchors[[0, j]] - g1 * anchors[[1, j]];
                    r2 += r * r;
                }
                let f = 0.5 * r2 + weights[0] * g0.abs() + weights[1] * g1.abs();
                if f < best.0 {
                    best = (f, [g0, g1]);
                }
            }
        }
        best
    }

    #[test]
    fn anchor_encodes_to_itself() {
        let cb = book(array![[1.0, 0.0, 0.5], [0.0, 2.0, 0.0], [1.0, 1.0, 3.0]]);
        let x = cb.anchor(0).to_owned();
        let code = encode_lcc(x.view(), &cb, &CodingConfig::lcc(0.3)).unwrap();
        assert_eq!(code.nnz(), 1);
        assert!((code.get(0) - 1.0).abs() < 1e-9);
        let f = point_objective(x.view(), &code, &cb, &CodingConfig::lcc(0.3)).unwrap();
        assert!(f < 1e-15);
    }

    #[test]
    fn one_dimensional_lcc_matches_grid_search() {
        // F = ½(0.5 + γ1 − γ2)² + 0.225|γ1| + 0.025|γ2| has its minimum at (0, 0.475).
        let anchors = array![[-1.0], [1.0]];
        let (fmin, arg) = grid_min_2d(&[0.5], &anchors, [0.225, 0.025], -1.0, 1.0, 1e-3);
        assert!(arg[0].abs() < 1e-9 && (arg[1] - 0.475).abs() < 1e-9, "grid argmin {arg:?}");

        let cb = book(anchors);
        let cfg = CodingConfig::lcc(0.1);
        let x = array![0.5];
        let code = encode_lcc(x.view(), &cb, &cfg).unwrap();
        assert_eq!(code.get(0), 0.0);
        assert!((code.get(1) - 0.475).abs() < 1e-9);
        let f = point_objective(x.view(), &code, &cb, &cfg).unwrap();
        assert!((f - fmin).abs() < 1e-9);
    }

    #[test]
    fn huge_mu_gives_zero_code() {
        let cb = book(array![[1.0, 0.0], [0.0, 1.0]]);
        let code = encode_lcc(array![0.3, 0.4].view(), &cb, &CodingConfig::lcc(1e9)).unwrap();
        assert_eq!(code.nnz(), 0);
    }

    #[test]
    fn orthonormal_sparse_coding_is_soft_thresholding() {
        let anchors = array![[1.0, 0.0], [0.0, 1.0]];
        let (_, arg) = grid_min_2d(&[1.0, 0.1], &anchors, [0.2, 0.2], -2.0, 2.0, 1e-3);
        assert!((arg[0] - 0.8).abs() < 1e-9 && arg[1].abs() < 1e-9);
        let code = encode_sparse(array![1.0, 0.1].view(), &book(anchors), &CodingConfig::sparse(0.2)).unwrap();
        assert!((code.get(0) - 0.8).abs() < 1e-12);
        assert_eq!(code.get(1), 0.0);
    }

    #[test]
    fn unpenalised_square_system_is_solved_exactly() {
        let cb = book(array![[2.0, 1.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 3.0]]);
        let x = array![1.0, -2.0, 0.5];
        let code = encode_sparse(x.view(), &cb, &CodingConfig::sparse(0.0)).unwrap();
        let recon = reconstruct(&code, &cb).unwrap();
        assert!(sq_dist(recon.view(), x.view()).sqrt() < 1e-7);
    }

    #[test]
    fn zero_input_gives_zero_code() {
        let cb = book(array![[1.0, 2.0], [3.0, -1.0]]);
        let code = encode_sparse(array![0.0, 0.0].view(), &cb, &CodingConfig::sparse(0.5)).unwrap();
        assert_eq!(code.nnz(), 0);
    }

    #[test]
    fn zero_norm_anchor_is_skipped() {
        let cb = book(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let code = encode_sparse(array![0.5, 0.5].view(), &cb, &CodingConfig::sparse(0.0)).unwrap();
        assert_eq!(code.get(0), 0.0);
        assert!((code.get(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_reports_residual() {
        // Two nearly collinear anchors converge slowly under coordinate descent.
        let cb = book(array![[1.0, 0.0], [1.0, 1e-3]]);
        let cfg = CodingConfig { max_iter: 2, tol: 1e-14, ..CodingConfig::sparse(1e-4) };
        match encode_sparse(array![1.0, 1.0].view(), &cb, &cfg) {
            Err(LccError::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cb = book(array![[1.0]]);
        let both = CodingConfig { mu: 1.0, beta_sparse: 1.0, ..CodingConfig::default() };
        assert!(matches!(both.validate(), Err(LccError::InvalidConfig(_))));
        let p2 = CodingConfig { p: 2, ..CodingConfig::lcc(1.0) };
        assert!(encode_lcc(array![1.0].view(), &cb, &p2).is_err());
        assert!(matches!(
            encode_lcc(array![1.0, 2.0].view(), &cb, &CodingConfig::lcc(1.0)),
            Err(LccError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reconstruct_examples() {
        let cb = book(array![[0.0, 0.0], [2.0, 2.0]]);
        assert_eq!(reconstruct(&Code::unit(2, 1).unwrap(), &cb).unwrap(), array![2.0, 2.0]);
        assert_eq!(reconstruct(&Code::zeros(2), &cb).unwrap(), array![0.0, 0.0]);
        let half = Code::from_dense(&[0.5, 0.5]);
        assert_eq!(reconstruct(&half, &cb).unwrap(), array![1.0, 1.0]);
        assert!(reconstruct(&Code::zeros(3), &cb).is_err());
    }

    #[test]
    fn coding_norm_examples() {
        assert!((coding_norm(&Code::from_dense(&[0.6, 0.8])) - 1.0).abs() < 1e-15);
        assert_eq!(coding_norm(&Code::zeros(4)), 0.0);
        assert_eq!(coding_norm(&Code::unit(4, 2).unwrap()), 1.0);
    }

    #[test]
    fn code_rejects_bad_entries() {
        assert!(matches!(Code::from_entries(2, vec![(2, 1.0)]), Err(LccError::IndexOutOfRange { .. })));
        assert!(Code::from_entries(3, vec![(1, 1.0), (1, 2.0)]).is_err());
        let c = Code::from_entries(3, vec![(2, 1.0), (0, 0.0), (1, -1.0)]).unwrap();
        assert_eq!(c.entries(), &[(1, -1.0), (2, 1.0)]);
    }

    #[test]
    fn code_json_layout() {
        let c = Code::from_dense(&[0.0, 0.5, 0.0, -2.0]);
        let json = crate::io::to_json_line(&c).unwrap();
        assert_eq!(json, r#"{"size":4,"entries":[[1,5.0000000000000000e-1],[3,-2.0000000000000000e0]]}"#);
        let back: Code = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<Code>(r#"{"size":1,"entries":[[3,1.0]]}"#).is_err());
    }

    #[test]
    fn unit_norm_codebook_rejects_long_anchors() {
        assert!(Codebook::new(array![[1.0, 0.5]], CodebookMode::UnitNormConstrained).is_err());
        assert!(Codebook::new(array![[0.6, 0.8]], CodebookMode::UnitNormConstrained).is_ok());
    }

    #[test]
    fn batch_matches_pointwise_and_handles_empty() {
        let cb = book(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let pts = array![[1.0, 0.2], [0.3, 0.9], [1.0, 1.0]];
        let cfg = CodingConfig::lcc(0.2);
        let batch = encode_dataset(pts.view(), &cb, &cfg).unwrap();
        for (i, code) in batch.iter().enumerate() {
            assert_eq!(code, &encode_lcc(pts.row(i), &cb, &cfg).unwrap());
        }
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(encode_dataset(empty.view(), &cb, &cfg).unwrap().is_empty());
    }

    #[test]
    fn anchors_as_data_give_identity_codes() {
        let cb = book(array![[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [2.0, 0.0, 1.0]]);
        let codes = encode_dataset(cb.anchors(), &cb, &CodingConfig::lcc(0.5)).unwrap();
        for (v, code) in codes.iter().enumerate() {
            assert_eq!(code.nnz(), 1);
            assert!((code.get(v) - 1.0).abs() < 1e-9);
        }
    }
}
