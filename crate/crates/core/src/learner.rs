//! Linear learning on codes, the local kernel smoothing baseline and
//! evaluation metrics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{sq_dist, Code};
use crate::datagen::Dataset;
use crate::error::{LccError, Result};
use crate::io::{read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½(z − y)²`
    Squared,
    /// `ln(1 + e^{−yz})`
    Logistic,
    /// `max(0, 1 − yz)²`
    SquaredHinge,
}

impl Loss {
    pub fn value(self, z: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * (z - y) * (z - y),
            Loss::Logistic => softplus(-y * z),
            Loss::SquaredHinge => {
                let m = (1.0 - y * z).max(0.0);
                m * m
            }
        }
    }

    /// Derivative with respect to the score `z`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => z - y,
            Loss::Logistic => -y * sigmoid(-y * z),
            Loss::SquaredHinge => -2.0 * y * (1.0 - y * z).max(0.0),
        }
    }

    /// Bound `B` on `|∂φ/∂z|` over all scores, when one exists.
    pub fn lipschitz_bound(self) -> Option<f64> {
        match self {
            Loss::Logistic => Some(1.0),
            Loss::Squared | Loss::SquaredHinge => None,
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Per-anchor weights; one row for regression, one row per class otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub lambda: f64,
    pub loss: Loss,
    /// Class labels in ascending order; empty for regression.
    #[serde(default)]
    pub classes: Vec<u32>,
    pub weights: Vec<Vec<f64>>,
    /// Unpenalised offsets, present only when fitted with an intercept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intercepts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Value(f64),
    Label(u32),
}

impl LinearModel {
    pub fn n_weights(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn is_classifier(&self) -> bool {
        !self.classes.is_empty()
    }

    /// Raw scores `Σ_v w_v γ_v (+ b)`, one per weight row.
    pub fn scores(&self, code: &Code) -> Result<Vec<f64>> {
        if code.size() != self.n_weights() {
            return Err(LccError::DimensionMismatch { expected: self.n_weights(), found: code.size() });
        }
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(c, w)| code.dot(w) + self.intercepts.get(c).copied().unwrap_or(0.0))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Regression value, or the argmax class (ties go to the lowest class).
pub fn predict(model: &LinearModel, code: &Code) -> Result<Prediction> {
    let scores = model.scores(code)?;
    if !model.is_classifier() {
        return Ok(Prediction::Value(scores[0]));
    }
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(Prediction::Label(model.classes[best]))
}

pub fn predict_values(model: &LinearModel, codes: &[Code]) -> Result<Vec<f64>> {
    codes
        .iter()
        .map(|c| match predict(model, c)? {
            Prediction::Value(v) => Ok(v),
            Prediction::Label(l) => Ok(f64::from(l)),
        })
        .collect()
}

pub fn predict_labels(model: &LinearModel, codes: &[Code]) -> Result<Vec<u32>> {
    if !model.is_classifier() {
        return Err(LccError::InvalidConfig("model is not a classifier".into()));
    }
    codes
        .iter()
        .map(|c| match predict(model, c)? {
            Prediction::Label(l) => Ok(l),
            Prediction::Value(_) => unreachable!("classifier predictions are labels"),
        })
        .collect()
}

fn check_codes(codes: &[Code], n_targets: usize) -> Result<usize> {
    if codes.is_empty() {
        return Err(LccError::EmptyInput("training codes"));
    }
    if codes.len() != n_targets {
        return Err(LccError::DimensionMismatch { expected: codes.len(), found: n_targets });
    }
    let k = codes[0].size();
    if let Some(c) = codes.iter().find(|c| c.size() != k) {
        return Err(LccError::DimensionMismatch { expected: k, found: c.size() });
    }
    Ok(k)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(LccError::InvalidConfig("lambda must be finite and > 0".into()));
    }
    Ok(())
}

/// Ridge regression without intercept: solves `(ΓᵀΓ + 2λI) w = Γᵀy`,
/// the minimiser of `Σ_i ½(wᵀγ_i − y_i)² + λ‖w‖²`.
pub fn train_ridge(codes: &[Code], targets: &[f64], lambda: f64) -> Result<LinearModel> {
    train_ridge_with(codes, targets, lambda, false)
}

/// [`train_ridge`] with an optional unpenalised intercept.
pub fn train_ridge_with(codes: &[Code], targets: &[f64], lambda: f64, intercept: bool) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let k = check_codes(codes, targets.len())?;
    let dim = k + usize::from(intercept);
    let mut lhs = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (code, &y) in codes.iter().zip(targets) {
        for &(u, gu) in code.entries() {
            for &(v, gv) in code.entries() {
                lhs[(u, v)] += gu * gv;
            }
            rhs[u] += gu * y;
            if intercept {
                lhs[(u, k)] += gu;
                lhs[(k, u)] += gu;
            }
        }
        if intercept {
            lhs[(k, k)] += 1.0;
            rhs[k] += y;
        }
    }
    for v in 0..k {
        lhs[(v, v)] += 2.0 * lambda;
    }
    let sol = lhs.cholesky().ok_or(LccError::NotPositiveDefinite)?.solve(&rhs);
    Ok(LinearModel {
        lambda,
        loss: Loss::Squared,
        classes: Vec::new(),
        weights: vec![sol.iter().take(k).copied().collect()],
        intercepts: if intercept { vec![sol[k]] } else { Vec::new() },
    })
}

/// `Σ_i φ(wᵀγ_i, y_i) + λ‖w‖²` and its gradient.
pub struct LinearObjective<'a> {
    pub codes: &'a [Code],
    pub targets: &'a [f64],
    pub lambda: f64,
    pub loss: Loss,
}

impl LinearObjective<'_> {
    pub fn value(&self, w: &[f64]) -> f64 {
        let data: f64 = self.codes.iter().zip(self.targets).map(|(c, &y)| self.loss.value(c.dot(w), y)).sum();
        data + self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|v| 2.0 * self.lambda * v).collect();
        for (c, &y) in self.codes.iter().zip(self.targets) {
            let dz = self.loss.derivative(c.dot(w), y);
            if dz != 0.0 {
                for &(v, gv) in c.entries() {
                    g[v] += dz * gv;
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 200_000 }
    }
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective value at every accepted iterate, starting from `w = 0`.
    pub trace: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full-batch gradient descent from `w = 0`. Trial steps come from the
/// Barzilai-Borwein rule and are halved until the Armijo condition holds,
/// so the objective never increases.
pub fn gradient_descent(objective: &LinearObjective, k: usize, options: &DescentOptions) -> Result<DescentResult> {
    const ARMIJO: f64 = 1e-4;
    let mut w = vec![0.0; k];
    let mut f = objective.value(&w);
    let mut g = objective.gradient(&w);
    let mut trace = vec![f];
    let mut step = 1.0 / (1.0 + norm(&g));
    for it in 0..options.max_iter {
        let gn = norm(&g);
        if gn <= options.grad_tol {
            return Ok(DescentResult { weights: w, iterations: it, grad_norm: gn, trace });
        }
        let mut t = step;
        let (w_new, f_new) = loop {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - t * gi).collect();
            let fc = objective.value(&cand);
            if fc <= f - ARMIJO * t * gn * gn {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-300 {
                return Err(LccError::NonConvergence { iterations: it, residual: gn });
            }
        };
        let g_new = objective.gradient(&w_new);
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(g_new.iter().zip(&g)).map(|(si, (a, b))| si * (a - b)).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 { ss / sy } else { 2.0 * t };
        w = w_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    Err(LccError::NonConvergence { iterations: options.max_iter, residual: norm(&g) })
}

/// One-vs-all linear classifier; each class minimises
/// `Σ_i φ(wᵀγ_i, ±1) + λ‖w‖²` by gradient descent.
pub fn train_classifier(codes: &[Code], labels: &[u32], lambda: f64, loss: Loss) -> Result<LinearModel> {
    train_classifier_with(codes, labels, lambda, loss, &DescentOptions::default())
}

pub fn train_classifier_with(codes: &[Code], labels: &[u32], lambda: f64, loss: Loss, options: &DescentOptions) -> Result<LinearModel> {
    check_lambda(lambda)?;
    if loss == Loss::Squared {
        return Err(LccError::InvalidConfig("classifiers use the logistic or squared hinge loss".into()));
    }
    let k = check_codes(codes, labels.len())?;
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(LccError::InvalidConfig("classification needs at least two classes".into()));
    }
    let weights: Vec<Vec<f64>> = classes
        .par_iter()
        .map(|&class| {
            let ys: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let objective = LinearObjective { codes, targets: &ys, lambda, loss };
            gradient_descent(&objective, k, options).map(|r| r.weights)
        })
        .collect::<Result<_>>()?;
    Ok(LinearModel { lambda, loss, classes, weights, intercepts: Vec::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Gaussian width equal to the distance of the k-th neighbour.
    KthNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub k: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_rule: BandwidthRule,
}

fn default_bandwidth() -> BandwidthRule {
    BandwidthRule::KthNeighbor
}

impl SmootherConfig {
    pub fn new(k: usize) -> Self {
        Self { k, bandwidth_rule: BandwidthRule::KthNeighbor }
    }
}

fn smooth_one(points: ArrayView2<f64>, targets: &[f64], query: ArrayView1<f64>, k: usize) -> f64 {
    let mut dists: Vec<(f64, usize)> = points.outer_iter().enumerate().map(|(i, x)| (sq_dist(x, query), i)).collect();
    // Order by distance, then index.
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
        dists.truncate(k);
    }
    dists.sort_by(cmp);
    let h_sq = dists[k - 1].0;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(d_sq, i) in &dists {
        let w = if h_sq > 0.0 { (-d_sq / h_sq).exp() } else { 1.0 };
        num += w * targets[i];
        den += w;
    }
    num / den
}

fn smoother_inputs<'a>(train: &'a Dataset, config: &SmootherConfig) -> Result<&'a [f64]> {
    if train.n() == 0 {
        return Err(LccError::EmptyInput("kernel smoothing training set"));
    }
    if config.k == 0 || config.k > train.n() {
        return Err(LccError::InvalidConfig(format!("k = {} must lie in 1..={}", config.k, train.n())));
    }
    train
        .real_targets()
        .ok_or_else(|| LccError::InvalidConfig("kernel smoothing needs real-valued targets".into()))
}

/// Gaussian-weighted average of the targets of the `k` nearest training
/// points, with bandwidth equal to the `k`-th neighbour distance.
pub fn kernel_smooth(train: &Dataset, query: ArrayView1<f64>, config: &SmootherConfig) -> Result<f64> {
    let targets = smoother_inputs(train, config)?;
    if query.len() != train.d() {
        return Err(LccError::DimensionMismatch { expected: train.d(), found: query.len() });
    }
    Ok(smooth_one(train.points(), targets, query, config.k))
}

pub fn kernel_smooth_batch(train: &Dataset, queries: ArrayView2<f64>, config: &SmootherConfig) -> Result<Vec<f64>> {
    let targets = smoother_inputs(train, config)?;
    if queries.ncols() != train.d() {
        return Err(LccError::DimensionMismatch { expected: train.d(), found: queries.ncols() });
    }
    Ok((0..queries.nrows())
        .into_par_iter()
        .map(|i| smooth_one(train.points(), targets, queries.row(i), config.k))
        .collect())
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(LccError::EmptyInput("rmse"));
    }
    if predictions.len() != targets.len() {
        return Err(LccError::DimensionMismatch { expected: predictions.len(), found: targets.len() });
    }
    let mse = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predictions.len() as f64;
    Ok(mse.sqrt())
}

pub fn error_rate(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(LccError::EmptyInput("error rate"));
    }
    if predictions.len() != labels.len() {
        return Err(LccError::DimensionMismatch { expected: predictions.len(), found: labels.len() });
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / predictions.len() as f64)
}
