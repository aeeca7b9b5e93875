//! Anchor learning by alternating minimisation.
//!
//! Each round encodes every point against the current anchors and then
//! minimises exactly over the anchors with the codes held fixed:
//!
//! ```text
//! Σ_i ½‖x_i − Σ_v γ_iv v‖² + Σ_i Σ_v w_iv |γ_iv| + λ Σ_v ‖v‖²
//! ```
//!
//! where `w_iv = μ‖v − x_i‖²` for local coordinate coding and `β` for
//! sparse coding. In unit-norm mode the ridge term is replaced by
//! `‖v‖ ≤ 1`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{encode_dataset_warm, point_objective, sq_dist, Code, Codebook, CodebookMode, CodingConfig, EncoderKind};
use crate::error::{LccError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    RandomSample,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictLearnConfig {
    pub codebook_size: usize,
    pub lambda_ridge: f64,
    pub mode: CodebookMode,
    pub coding: CodingConfig,
    pub n_iters: usize,
    pub init: InitMethod,
    pub seed: u64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            codebook_size: 128,
            lambda_ridge: 1e-3,
            mode: CodebookMode::RidgeRegularized,
            coding: CodingConfig::default(),
            n_iters: 30,
            init: InitMethod::RandomSample,
            seed: 0,
        }
    }
}

impl DictLearnConfig {
    pub fn validate(&self) -> Result<()> {
        self.coding.validate()?;
        if self.codebook_size == 0 {
            return Err(LccError::InvalidConfig("codebook_size must be >= 1".into()));
        }
        if !(self.lambda_ridge >= 0.0 && self.lambda_ridge.is_finite()) {
            return Err(LccError::InvalidConfig("lambda_ridge must be finite and >= 0".into()));
        }
        if self.mode == CodebookMode::UnitNormConstrained && self.lambda_ridge != 0.0 {
            return Err(LccError::InvalidConfig("unit-norm mode requires lambda_ridge = 0".into()));
        }
        if self.coding.kind() == EncoderKind::Local && self.coding.p != 1 {
            return Err(LccError::InvalidConfig(
                "anchor updates need the squared locality distance (p = 1)".into(),
            ));
        }
        Ok(())
    }

    /// Locality weight entering the anchor update (zero for sparse coding).
    fn mu(&self) -> f64 {
        match self.coding.kind() {
            EncoderKind::Local => self.coding.mu,
            EncoderKind::Sparse => 0.0,
        }
    }
}

fn project_to_ball(mut v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 1.0 {
        v /= norm;
    }
    v
}

fn finish(anchors: Array2<f64>, mode: CodebookMode) -> Result<Codebook> {
    let anchors = match mode {
        CodebookMode::RidgeRegularized => anchors,
        CodebookMode::UnitNormConstrained => {
            let mut a = anchors;
            for mut row in a.outer_iter_mut() {
                let projected = project_to_ball(row.to_owned());
                row.assign(&projected);
            }
            a
        }
    };
    Codebook::new(anchors, mode)
}

/// Initial anchors: distinct data rows, or Lloyd's k-means from a random partition.
pub fn init_codebook(points: ArrayView2<f64>, config: &DictLearnConfig) -> Result<Codebook> {
    let (n, k) = (points.nrows(), config.codebook_size);
    if k == 0 {
        return Err(LccError::InvalidConfig("codebook_size must be >= 1".into()));
    }
    if n < k {
        return Err(LccError::InsufficientData { requested: k, available: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let anchors = match config.init {
        InitMethod::RandomSample => {
            let idx = sample(&mut rng, n, k).into_vec();
            points.select(ndarray::Axis(0), &idx)
        }
        InitMethod::Kmeans => kmeans(points, k, &mut rng),
    };
    finish(anchors, config.mode)
}

fn nearest(x: ndarray::ArrayView1<f64>, centers: &Array2<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, row) in centers.outer_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn kmeans(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (n, d) = points.dim();
    let mut assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut initialised = vec![false; k];
    for _ in 0..100 {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            sums.row_mut(a).scaled_add(1.0, &points.row(i));
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
                initialised[c] = true;
            } else if !initialised[c] {
                centers.row_mut(c).assign(&points.row(rng.random_range(0..n)));
                initialised[c] = true;
            }
        }
        let next: Vec<usize> = (0..n).into_par_iter().map(|i| nearest(points.row(i), &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    centers
}

/// Full learning objective for the given codes and anchors.
pub fn dictionary_objective(points: ArrayView2<f64>, codes: &[Code], codebook: &Codebook, config: &DictLearnConfig) -> Result<f64> {
    if codes.len() != points.nrows() {
        return Err(LccError::DimensionMismatch { expected: points.nrows(), found: codes.len() });
    }
    let per_point: Vec<f64> = (0..codes.len())
        .into_par_iter()
        .map(|i| point_objective(points.row(i), &codes[i], codebook, &config.coding))
        .collect::<Result<_>>()?;
    let ridge = match config.mode {
        CodebookMode::RidgeRegularized => config.lambda_ridge * codebook.anchors().iter().map(|v| v * v).sum::<f64>(),
        CodebookMode::UnitNormConstrained => 0.0,
    };
    Ok(per_point.iter().sum::<f64>() + ridge)
}

/// Result of an anchor update.
#[derive(Debug, Clone)]
pub struct CodebookUpdate {
    pub codebook: Codebook,
    /// Anchors whose code column is entirely zero.
    pub dead: Vec<usize>,
}

/// Sufficient statistics of the codes for the anchor subproblem.
struct CodeStats {
    /// `ΓᵀΓ`
    gram: Array2<f64>,
    /// `ΓᵀX`
    cross: Array2<f64>,
    /// `Σ_i |γ_iv|`
    abs_mass: Vec<f64>,
    /// `Σ_i |γ_iv| x_i`
    abs_cross: Array2<f64>,
}

fn code_stats(points: ArrayView2<f64>, codes: &[Code], k: usize) -> CodeStats {
    let d = points.ncols();
    let mut gram = Array2::zeros((k, k));
    let mut cross = Array2::zeros((k, d));
    let mut abs_mass = vec![0.0; k];
    let mut abs_cross = Array2::zeros((k, d));
    for (i, code) in codes.iter().enumerate() {
        let x = points.row(i);
        for &(u, gu) in code.entries() {
            for &(v, gv) in code.entries() {
                gram[[u, v]] += gu * gv;
            }
            cross.row_mut(u).scaled_add(gu, &x);
            abs_mass[u] += gu.abs();
            abs_cross.row_mut(u).scaled_add(gu.abs(), &x);
        }
    }
    CodeStats { gram, cross, abs_mass, abs_cross }
}

/// Exact minimisation over the anchors with codes fixed.
///
/// Ridge mode solves `(ΓᵀΓ + 2μD + 2λI) V = ΓᵀX + 2μS` jointly; unit-norm
/// mode runs block coordinate descent over anchors, each block being a
/// ball-constrained problem with isotropic Hessian.
pub fn update_codebook(points: ArrayView2<f64>, codes: &[Code], current: &Codebook, config: &DictLearnConfig) -> Result<CodebookUpdate> {
    config.validate()?;
    let k = current.size();
    if codes.len() != points.nrows() {
        return Err(LccError::DimensionMismatch { expected: points.nrows(), found: codes.len() });
    }
    if points.ncols() != current.d() {
        return Err(LccError::DimensionMismatch { expected: current.d(), found: points.ncols() });
    }
    if let Some(c) = codes.iter().find(|c| c.size() != k) {
        return Err(LccError::DimensionMismatch { expected: k, found: c.size() });
    }
    let stats = code_stats(points, codes, k);
    let dead: Vec<usize> = (0..k).filter(|&v| stats.abs_mass[v] == 0.0).collect();
    let mu = config.mu();

    let anchors = match config.mode {
        CodebookMode::RidgeRegularized => ridge_update(&stats, current, mu, config.lambda_ridge, &dead)?,
        CodebookMode::UnitNormConstrained => unit_norm_update(&stats, current, mu),
    };
    Ok(CodebookUpdate { codebook: Codebook::new(anchors, config.mode)?, dead })
}

fn ridge_update(stats: &CodeStats, current: &Codebook, mu: f64, lambda: f64, dead: &[usize]) -> Result<Array2<f64>> {
    let k = current.size();
    let d = current.d();
    // With λ = 0 a dead anchor makes the system singular; keep it as is.
    let active: Vec<usize> = if lambda > 0.0 {
        (0..k).collect()
    } else {
        (0..k).filter(|v| !dead.contains(v)).collect()
    };
    let mut out = current.anchors().to_owned();
    if active.is_empty() {
        return Ok(out);
    }
    let m = active.len();
    let lhs = DMatrix::from_fn(m, m, |a, b| {
        let (u, v) = (active[a], active[b]);
        let mut val = stats.gram[[u, v]];
        if u == v {
            val += 2.0 * mu * stats.abs_mass[u] + 2.0 * lambda;
        }
        val
    });
    let rhs = DMatrix::from_fn(m, d, |a, j| {
        let u = active[a];
        stats.cross[[u, j]] + 2.0 * mu * stats.abs_cross[[u, j]]
    });
    let chol = lhs.cholesky().ok_or(LccError::NotPositiveDefinite)?;
    let sol = chol.solve(&rhs);
    for (a, &u) in active.iter().enumerate() {
        for j in 0..d {
            out[[u, j]] = sol[(a, j)];
        }
    }
    Ok(out)
}

const UNIT_NORM_MAX_SWEEPS: usize = 100;
const UNIT_NORM_MOVE_TOL: f64 = 1e-7;

fn unit_norm_update(stats: &CodeStats, current: &Codebook, mu: f64) -> Array2<f64> {
    let k = current.size();
    let mut anchors = current.anchors().to_owned();
    let neighbours: Vec<Vec<(usize, f64)>> = (0..k)
        .map(|v| (0..k).filter(|&u| u != v && stats.gram[[v, u]] != 0.0).map(|u| (u, stats.gram[[v, u]])).collect())
        .collect();
    for _ in 0..UNIT_NORM_MAX_SWEEPS {
        let mut max_move = 0.0f64;
        for v in 0..k {
            let curvature = stats.gram[[v, v]] + 2.0 * mu * stats.abs_mass[v];
            if curvature <= 0.0 {
                continue;
            }
            let mut target = &stats.cross.row(v) + &(&stats.abs_cross.row(v) * (2.0 * mu));
            for &(u, a) in &neighbours[v] {
                target.scaled_add(-a, &anchors.row(u));
            }
            let next = project_to_ball(target / curvature);
            max_move = max_move.max(sq_dist(next.view(), anchors.row(v)).sqrt());
            anchors.row_mut(v).assign(&next);
        }
        if max_move < UNIT_NORM_MOVE_TOL {
            break;
        }
    }
    anchors
}

/// Output of [`learn`].
#[derive(Debug, Clone)]
pub struct LearnedCodebook {
    pub codebook: Codebook,
    /// Objective after every encode and every anchor update, in order.
    pub history: Vec<f64>,
    /// Codes of the training points against the final anchors' predecessor
    /// (the last encode step); empty when `n_iters = 0`.
    pub codes: Vec<Code>,
    /// Anchors re-seeded to data points because their code column was empty.
    pub reseeded: Vec<usize>,
}

/// Alternates encoding and exact anchor updates for `n_iters` rounds,
/// starting from [`init_codebook`].
pub fn learn(points: ArrayView2<f64>, config: &DictLearnConfig) -> Result<LearnedCodebook> {
    config.validate()?;
    let init = init_codebook(points, config)?;
    learn_from(points, init, config)
}

/// [`learn`] from a caller-supplied initial codebook.
pub fn learn_from(points: ArrayView2<f64>, init: Codebook, config: &DictLearnConfig) -> Result<LearnedCodebook> {
    config.validate()?;
    if init.mode() != config.mode {
        return Err(LccError::InvalidConfig("initial codebook mode differs from config mode".into()));
    }
    let mut codebook = init;
    let mut history = Vec::with_capacity(2 * config.n_iters);
    let mut codes: Vec<Code> = Vec::new();
    let mut reseeded = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));

    for round in 0..config.n_iters {
        let warm = if codes.is_empty() { None } else { Some(codes.as_slice()) };
        codes = encode_dataset_warm(points, &codebook, &config.coding, warm)?;
        history.push(dictionary_objective(points, &codes, &codebook, config)?);

        let update = update_codebook(points, &codes, &codebook, config)?;
        codebook = update.codebook;
        // Re-seeding is only objective-neutral when a dead anchor carries no
        // ridge cost; otherwise the exact update already zeroed it.
        let neutral = config.mode == CodebookMode::UnitNormConstrained || config.lambda_ridge == 0.0;
        if neutral && !update.dead.is_empty() {
            let mut anchors = codebook.into_anchors();
            for &v in &update.dead {
                let row = points.row(rng.random_range(0..points.nrows())).to_owned();
                let row = match config.mode {
                    CodebookMode::UnitNormConstrained => project_to_ball(row),
                    CodebookMode::RidgeRegularized => row,
                };
                anchors.row_mut(v).assign(&row);
                reseeded.push(v);
            }
            codebook = Codebook::new(anchors, config.mode)?;
        }
        history.push(dictionary_objective(points, &codes, &codebook, config)?);
        log::debug!("round {round}: objective {:.6e}", history.last().unwrap());
    }
    Ok(LearnedCodebook { codebook, history, codes, reseeded })
}

/// Negates every anchor whose nonzero coefficients are mostly negative,
/// together with its coefficients. This is a symmetry of the sparse-coding
/// objective (no locality term).
pub fn rectify_signs(codebook: &Codebook, codes: &[Code]) -> (Codebook, Vec<Code>) {
    let k = codebook.size();
    let mut balance = vec![0i64; k];
    for code in codes {
        for &(v, g) in code.entries() {
            if v < k {
                balance[v] += if g < 0.0 { 1 } else { -1 };
            }
        }
    }
    let flip: Vec<bool> = balance.iter().map(|&b| b > 0).collect();
    let mut anchors = codebook.anchors().to_owned();
    for (v, mut row) in anchors.outer_iter_mut().enumerate() {
        if flip[v] {
            row.mapv_inplace(|x| -x);
        }
    }
    let codes = codes
        .iter()
        .map(|c| {
            let mut c = c.clone();
            for (v, g) in c.entries_mut() {
                if flip[*v] {
                    *g = -*g;
                }
            }
            c
        })
        .collect();
    let flipped = Codebook::new(anchors, codebook.mode()).expect("negation preserves validity");
    (flipped, codes)
}
