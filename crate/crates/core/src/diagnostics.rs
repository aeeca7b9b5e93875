//! Locality diagnostics: the localization measure, the linearization bound
//! and per-coefficient sign/distance reports.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{reconstruct, sq_dist, Code, Codebook};
use crate::error::{LccError, Result};
use crate::io::fmt_f64;

/// `(α, β, p)` Lipschitz smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
}

impl SmoothnessSpec {
    pub fn unit() -> Self {
        Self { alpha: 1.0, beta: 1.0, p: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.p > 0.0 && self.p <= 1.0) {
            return Err(LccError::InvalidConfig(format!(
                "smoothness needs alpha, beta > 0 and p in (0, 1], got {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_aligned(points: ArrayView2<f64>, codebook: &Codebook, codes: &[Code]) -> Result<()> {
    if codes.len() != points.nrows() {
        return Err(LccError::DimensionMismatch { expected: points.nrows(), found: codes.len() });
    }
    if points.ncols() != codebook.d() {
        return Err(LccError::DimensionMismatch { expected: codebook.d(), found: points.ncols() });
    }
    Ok(())
}

/// `α‖x − γ(x)‖ + β Σ_v |γ_v|‖v − γ(x)‖^{1+p}` for a single point.
pub fn coding_bound(x: ArrayView1<f64>, code: &Code, codebook: &Codebook, spec: &SmoothnessSpec) -> Result<f64> {
    let recon = reconstruct(code, codebook)?;
    let fit = sq_dist(x, recon.view()).sqrt();
    let locality: f64 = code
        .entries()
        .iter()
        .map(|&(v, g)| g.abs() * sq_dist(codebook.anchor(v), recon.view()).sqrt().powf(1.0 + spec.p))
        .sum();
    Ok(spec.alpha * fit + spec.beta * locality)
}

/// Sample mean of [`coding_bound`] over the rows of `points`.
pub fn localization_measure(points: ArrayView2<f64>, codebook: &Codebook, codes: &[Code], spec: &SmoothnessSpec) -> Result<f64> {
    check_aligned(points, codebook, codes)?;
    if codes.is_empty() {
        return Err(LccError::EmptyInput("localization measure over no samples"));
    }
    let terms: Vec<f64> = (0..codes.len())
        .into_par_iter()
        .map(|i| coding_bound(points.row(i), &codes[i], codebook, spec))
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Both sides of the linearization bound at `x`:
/// `|f(x) − Σ_v γ_v f(v)|` and [`coding_bound`]. The inequality between
/// them is only guaranteed for codes summing to one.
pub fn linearization_gap(
    f: impl Fn(ArrayView1<f64>) -> f64,
    x: ArrayView1<f64>,
    code: &Code,
    codebook: &Codebook,
    spec: &SmoothnessSpec,
) -> Result<(f64, f64)> {
    let linear: f64 = code.entries().iter().map(|&(v, g)| g * f(codebook.anchor(v))).sum();
    let lhs = (f(x) - linear).abs();
    let rhs = coding_bound(x, code, codebook, spec)?;
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignClass {
    Positive,
    Negative,
    Zero,
}

impl SignClass {
    pub fn of(value: f64) -> Self {
        if value > 0.0 {
            SignClass::Positive
        } else if value < 0.0 {
            SignClass::Negative
        } else {
            SignClass::Zero
        }
    }
}

impl fmt::Display for SignClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignClass::Positive => "positive",
            SignClass::Negative => "negative",
            SignClass::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalityRecord {
    pub sample: usize,
    pub anchor: usize,
    pub sign: SignClass,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Sign class and anchor distance for every (sample, anchor) pair.
#[derive(Debug, Clone)]
pub struct LocalityReport {
    pub records: Vec<LocalityRecord>,
    pub histogram: Vec<HistogramBin>,
    /// Mean of `‖v − x‖` over all pairs.
    pub mean_distance: f64,
}

impl LocalityReport {
    pub fn distances(&self, sign: SignClass) -> Vec<f64> {
        self.records.iter().filter(|r| r.sign == sign).map(|r| r.distance).collect()
    }

    /// Nearest-rank quantile of the distances in one sign class.
    pub fn distance_quantile(&self, sign: SignClass, q: f64) -> Option<f64> {
        quantile(self.distances(sign), q)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "sample_index,anchor_index,sign_class,distance")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.sample, r.anchor, r.sign, fmt_f64(r.distance))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "bin_lo,bin_hi,count_pos,count_neg,count_zero")?;
        for b in &self.histogram {
            writeln!(out, "{},{},{},{},{}", fmt_f64(b.lo), fmt_f64(b.hi), b.positive, b.negative, b.zero)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Nearest-rank quantile; `None` for an empty sample.
pub fn quantile(mut values: Vec<f64>, q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * values.len() as f64).ceil() as usize).max(1);
    Some(values[rank - 1])
}

pub fn locality_report(points: ArrayView2<f64>, codebook: &Codebook, codes: &[Code]) -> Result<LocalityReport> {
    check_aligned(points, codebook, codes)?;
    let k = codebook.size();
    let records: Vec<LocalityRecord> = (0..codes.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = points.row(i);
            let code = &codes[i];
            (0..k).map(move |v| LocalityRecord {
                sample: i,
                anchor: v,
                sign: SignClass::of(code.get(v)),
                distance: sq_dist(codebook.anchor(v), x).sqrt(),
            })
        })
        .collect();

    let max = records.iter().map(|r| r.distance).fold(0.0, f64::max);
    let width = max / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|b| HistogramBin { lo: b as f64 * width, hi: (b + 1) as f64 * width, positive: 0, negative: 0, zero: 0 })
        .collect();
    for r in &records {
        let b = if width > 0.0 { ((r.distance / width) as usize).min(HISTOGRAM_BINS - 1) } else { 0 };
        match r.sign {
            SignClass::Positive => histogram[b].positive += 1,
            SignClass::Negative => histogram[b].negative += 1,
            SignClass::Zero => histogram[b].zero += 1,
        }
    }
    let mean_distance = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.distance).sum::<f64>() / records.len() as f64
    };
    Ok(LocalityReport { records, histogram, mean_distance })
}
