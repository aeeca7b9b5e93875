//! Constructive manifold coding: an ε-net of the data, a tangent frame at
//! each center, and codes that project `x − u_x` onto the frame of the
//! nearest center `u_x`.
//!
//! The anchors are the centers together with `u + v_j(u)` for every frame
//! vector, so a code touches at most `m + 1` anchors and always sums to one.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{coding_norm, reconstruct, sq_dist, Code, Codebook, CodebookMode};
use crate::diagnostics::{localization_measure, SmoothnessSpec};
use crate::error::{LccError, Result};
use crate::io::{read_json, write_json};

/// Farthest-point traversal from row 0: keeps adding the point farthest
/// from the chosen centers until every point is within `epsilon`.
/// Returns row indices of the centers.
pub fn greedy_cover(points: ArrayView2<f64>, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon > 0.0) {
        return Err(LccError::InvalidConfig("epsilon must be positive".into()));
    }
    let n = points.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut centers = vec![0];
    let mut min_dist: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(points.row(i), points.row(0)).sqrt()).collect();
    loop {
        let (far, dist) = min_dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        if dist <= epsilon {
            break;
        }
        centers.push(far);
        let c = points.row(far);
        min_dist.par_iter_mut().enumerate().for_each(|(i, md)| {
            let d = sq_dist(points.row(i), c).sqrt();
            if d < *md {
                *md = d;
            }
        });
    }
    Ok(centers)
}

const RANK_TOL: f64 = 1e-12;

/// Top-`m` principal directions of the points within `2ε` of
/// `points[center]`, pairwise orthogonal and each scaled to norm `ε`.
/// Returned as an `m × d` matrix.
pub fn tangent_frame(center: usize, points: ArrayView2<f64>, m: usize, epsilon: f64) -> Result<Array2<f64>> {
    if center >= points.nrows() {
        return Err(LccError::IndexOutOfRange { index: center, size: points.nrows() });
    }
    let d = points.ncols();
    if m == 0 || m > d {
        return Err(LccError::InvalidConfig(format!("intrinsic dimension {m} must lie in 1..={d}")));
    }
    let c = points.row(center);
    let radius_sq = 4.0 * epsilon * epsilon;
    let idx: Vec<usize> = (0..points.nrows()).filter(|&i| sq_dist(points.row(i), c) <= radius_sq).collect();
    let mut nbhd = points.select(Axis(0), &idx);
    let mean = nbhd.mean_axis(Axis(0)).expect("neighbourhood contains the center");
    nbhd -= &mean;
    let k = nbhd.nrows();

    // Eigen-decompose whichever of YᵀY (d×d) and YYᵀ (k×k) is smaller.
    let y = DMatrix::from_fn(k, d, |i, j| nbhd[[i, j]]);
    let (values, directions): (Vec<f64>, Vec<DVector<f64>>) = if d <= k {
        let eig = SymmetricEigen::new(y.transpose() * &y);
        let order = descending(&eig.eigenvalues);
        order.iter().map(|&i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())).unzip()
    } else {
        let eig = SymmetricEigen::new(&y * y.transpose());
        let order = descending(&eig.eigenvalues);
        order
            .iter()
            .map(|&i| {
                let u = y.transpose() * eig.eigenvectors.column(i);
                (eig.eigenvalues[i], u)
            })
            .unzip()
    };

    let top = values.first().copied().unwrap_or(0.0);
    let rank = values.iter().filter(|&&l| l > RANK_TOL * top && l > 0.0).count();
    if rank < m {
        return Err(LccError::RankDeficient { center, rank, m });
    }

    let mut frame = Array2::zeros((m, d));
    for j in 0..m {
        let dir = &directions[j];
        let norm = dir.norm();
        // Fix the sign so that the largest component is positive.
        let pivot = dir.iter().fold(0.0f64, |acc, &v| if v.abs() > acc.abs() { v } else { acc });
        let scale = epsilon / norm * pivot.signum();
        for i in 0..d {
            frame[[j, i]] = dir[i] * scale;
        }
    }
    Ok(frame)
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// ε-net centers with their tangent frames and the induced anchor set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoverRepr", into = "CoverRepr")]
pub struct ManifoldCover {
    epsilon: f64,
    m: usize,
    centers: Array2<f64>,
    frames: Vec<Array2<f64>>,
    anchors: Codebook,
}

#[derive(Serialize, Deserialize)]
struct CoverRepr {
    epsilon: f64,
    m: usize,
    centers: Vec<Vec<f64>>,
    frames: Vec<Vec<Vec<f64>>>,
    anchors: Vec<Vec<f64>>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], d: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if rows.iter().any(|r| r.len() != d) {
        return Err(LccError::Malformed("ragged matrix in cover file".into()));
    }
    Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| LccError::Malformed(e.to_string()))
}

impl From<ManifoldCover> for CoverRepr {
    fn from(c: ManifoldCover) -> Self {
        CoverRepr {
            epsilon: c.epsilon,
            m: c.m,
            centers: rows(&c.centers),
            frames: c.frames.iter().map(rows).collect(),
            anchors: rows(&c.anchors.anchors().to_owned()),
        }
    }
}

impl TryFrom<CoverRepr> for ManifoldCover {
    type Error = LccError;

    fn try_from(r: CoverRepr) -> Result<Self> {
        let d = r.centers.first().map_or(0, Vec::len);
        let centers = from_rows(&r.centers, d)?;
        let frames = r.frames.iter().map(|f| from_rows(f, d)).collect::<Result<Vec<_>>>()?;
        if frames.len() != centers.nrows() || frames.iter().any(|f| f.nrows() != r.m) {
            return Err(LccError::Malformed("frame count does not match centers and m".into()));
        }
        let anchors = Codebook::new(from_rows(&r.anchors, d)?, CodebookMode::RidgeRegularized)?;
        if anchors.size() != centers.nrows() * (r.m + 1) {
            return Err(LccError::Malformed("anchor count does not match centers and m".into()));
        }
        Ok(ManifoldCover { epsilon: r.epsilon, m: r.m, centers, frames, anchors })
    }
}

impl ManifoldCover {
    /// Greedy ε-net plus local-PCA frames over `points`.
    pub fn build(points: ArrayView2<f64>, epsilon: f64, m: usize) -> Result<Self> {
        let center_idx = greedy_cover(points, epsilon)?;
        if center_idx.is_empty() {
            return Err(LccError::EmptyInput("cover of an empty dataset"));
        }
        let frames: Vec<Array2<f64>> = center_idx
            .par_iter()
            .map(|&c| tangent_frame(c, points, m, epsilon))
            .collect::<Result<_>>()?;
        let centers = points.select(Axis(0), &center_idx);
        let d = points.ncols();
        let mut anchors = Array2::zeros((center_idx.len() * (m + 1), d));
        for (c, frame) in frames.iter().enumerate() {
            let u = centers.row(c);
            anchors.row_mut(c * (m + 1)).assign(&u);
            for j in 0..m {
                anchors.row_mut(c * (m + 1) + j + 1).assign(&(&u + &frame.row(j)));
            }
        }
        let anchors = Codebook::new(anchors, CodebookMode::RidgeRegularized)?;
        Ok(Self { epsilon, m, centers, frames, anchors })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn frame(&self, center: usize) -> ArrayView2<'_, f64> {
        self.frames[center].view()
    }

    pub fn anchors(&self) -> &Codebook {
        &self.anchors
    }

    pub fn n_centers(&self) -> usize {
        self.centers.nrows()
    }

    fn nearest_center(&self, x: ArrayView1<f64>) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (c, u) in self.centers.outer_iter().enumerate() {
            let d = sq_dist(x, u);
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// A code built from the cover; its coefficients sum to one by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructedCode {
    pub code: Code,
    /// Index of the nearest center `u_x`.
    pub center: usize,
    /// Projection coefficients `γ'_j` on the frame of `u_x`.
    pub projection: Vec<f64>,
}

impl ConstructedCode {
    pub fn sums_to_one(&self) -> bool {
        true
    }
}

/// Codes `x` as `(1 − Σ_j γ'_j) u_x + Σ_j γ'_j (u_x + v_j)`, where
/// `γ'_j = v_jᵀ(x − u_x) / ε²` projects onto the orthogonal frame at `u_x`.
pub fn construct_code(x: ArrayView1<f64>, cover: &ManifoldCover) -> Result<ConstructedCode> {
    if x.len() != cover.centers.ncols() {
        return Err(LccError::DimensionMismatch { expected: cover.centers.ncols(), found: x.len() });
    }
    let c = cover.nearest_center(x);
    let offset: Array1<f64> = &x - &cover.centers.row(c);
    let eps_sq = cover.epsilon * cover.epsilon;
    // On a grid of 2^-48 every partial sum below 32 in magnitude is exact,
    // so the coefficients sum to exactly 1.0 in floating point.
    const GRID: f64 = (1u64 << 48) as f64;
    let projection: Vec<f64> = cover.frames[c]
        .outer_iter()
        .map(|v| (v.dot(&offset) / eps_sq * GRID).round() / GRID)
        .collect();
    let base = c * (cover.m + 1);
    let mut entries = vec![(base, 1.0 - projection.iter().sum::<f64>())];
    entries.extend(projection.iter().enumerate().map(|(j, &g)| (base + j + 1, g)));
    let code = Code::from_entries(cover.anchors.size(), entries)?;
    Ok(ConstructedCode { code, center: c, projection })
}

/// Empirical check of the manifold-coding guarantees, with the greedy
/// cover size standing in for the covering number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub epsilon: f64,
    pub m: usize,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_points: usize,
    pub greedy_cover_size: usize,
    pub anchor_count: usize,
    /// `(1 + m) · N`, with `N` the greedy cover size.
    pub anchor_count_bound: usize,
    pub localization_measure: f64,
    /// `[α ĉ_p + (1 + √m + 2^{1+p}√m) β] ε^{1+p}`
    pub localization_bound: f64,
    /// Largest `‖x − γ(x)‖ / ‖x − u_x‖^{1+p}` over the data.
    pub curvature_constant: f64,
    pub max_coding_norm_sq: f64,
    /// `1 + (1 + √m)²`
    pub coding_norm_sq_bound: f64,
    pub max_projection_sq: f64,
    pub max_reconstruction_error: f64,
    pub max_sum_deviation: f64,
    pub max_center_distance: f64,
    pub covering_number_note: String,
}

impl BoundsReport {
    pub fn all_hold(&self) -> bool {
        self.anchor_count <= self.anchor_count_bound
            && self.localization_measure <= self.localization_bound * (1.0 + 1e-9)
            && self.max_coding_norm_sq <= self.coding_norm_sq_bound + 1e-9
            && self.max_center_distance <= self.epsilon
    }
}

pub fn verify_bounds(points: ArrayView2<f64>, cover: &ManifoldCover, spec: &SmoothnessSpec) -> Result<BoundsReport> {
    spec.validate()?;
    if points.nrows() == 0 {
        return Err(LccError::EmptyInput("bounds over no samples"));
    }
    let built: Vec<ConstructedCode> = (0..points.nrows())
        .into_par_iter()
        .map(|i| construct_code(points.row(i), cover))
        .collect::<Result<_>>()?;

    let mut max_norm_sq = 0.0f64;
    let mut max_proj_sq = 0.0f64;
    let mut max_err = 0.0f64;
    let mut max_dev = 0.0f64;
    let mut max_center = 0.0f64;
    let mut curvature = 0.0f64;
    for (i, cc) in built.iter().enumerate() {
        let x = points.row(i);
        max_norm_sq = max_norm_sq.max(coding_norm(&cc.code).powi(2));
        max_proj_sq = max_proj_sq.max(cc.projection.iter().map(|g| g * g).sum());
        max_dev = max_dev.max((cc.code.coefficient_sum() - 1.0).abs());
        let recon = reconstruct(&cc.code, &cover.anchors)?;
        let err = sq_dist(x, recon.view()).sqrt();
        max_err = max_err.max(err);
        let r = sq_dist(x, cover.centers.row(cc.center)).sqrt();
        max_center = max_center.max(r);
        if r > 0.0 {
            curvature = curvature.max(err / r.powf(1.0 + spec.p));
        }
    }
    let codes: Vec<Code> = built.into_iter().map(|c| c.code).collect();
    let q = localization_measure(points, &cover.anchors, &codes, spec)?;
    let m = cover.m as f64;
    let eps_pow = cover.epsilon.powf(1.0 + spec.p);
    let q_bound = (spec.alpha * curvature + (1.0 + m.sqrt() + 2f64.powf(1.0 + spec.p) * m.sqrt()) * spec.beta) * eps_pow;

    Ok(BoundsReport {
        epsilon: cover.epsilon,
        m: cover.m,
        p: spec.p,
        alpha: spec.alpha,
        beta: spec.beta,
        n_points: points.nrows(),
        greedy_cover_size: cover.n_centers(),
        anchor_count: cover.anchors.size(),
        anchor_count_bound: (1 + cover.m) * cover.n_centers(),
        localization_measure: q,
        localization_bound: q_bound,
        curvature_constant: curvature,
        max_coding_norm_sq: max_norm_sq,
        coding_norm_sq_bound: 1.0 + (1.0 + m.sqrt()).powi(2),
        max_projection_sq: max_proj_sq,
        max_reconstruction_error: max_err,
        max_sum_deviation: max_dev,
        max_center_distance: max_center,
        covering_number_note: "covering number N(eps) replaced by the greedy farthest-point cover size".into(),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
