//! Synthetic manifold data, MNIST IDX ingestion and seeded splits.

use std::f64::consts::PI;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::SmoothnessSpec;
use crate::error::{LccError, Result};
use crate::io::fmt_f64;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Labels(Vec<u32>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(indices.iter().map(|&i| v[i]).collect()),
            Targets::Labels(v) => Targets::Labels(indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Samples in `R^d`, one per row, with optional targets and manifold coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    targets: Option<Targets>,
    intrinsic: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(
        points: Array2<f64>,
        targets: Option<Targets>,
        intrinsic: Option<Array2<f64>>,
    ) -> Result<Self> {
        let n = points.nrows();
        if points.iter().any(|v| !v.is_finite()) {
            return Err(LccError::Malformed("dataset contains non-finite values".into()));
        }
        if let Some(t) = &targets {
            if t.len() != n {
                return Err(LccError::DimensionMismatch { expected: n, found: t.len() });
            }
        }
        if let Some(z) = &intrinsic {
            if z.nrows() != n {
                return Err(LccError::DimensionMismatch { expected: n, found: z.nrows() });
            }
            if z.ncols() > points.ncols() {
                return Err(LccError::Malformed(format!(
                    "intrinsic dimension {} exceeds ambient dimension {}",
                    z.ncols(),
                    points.ncols()
                )));
            }
        }
        Ok(Self { points, targets, intrinsic })
    }

    /// Convenience constructor for unlabeled data.
    pub fn from_points(points: Array2<f64>) -> Result<Self> {
        Self::new(points, None, None)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn targets(&self) -> Option<&Targets> {
        self.targets.as_ref()
    }

    pub fn real_targets(&self) -> Option<&[f64]> {
        match &self.targets {
            Some(Targets::Real(v)) => Some(v),
            _ => None,
        }
    }

    pub fn labels(&self) -> Option<&[u32]> {
        match &self.targets {
            Some(Targets::Labels(v)) => Some(v),
            _ => None,
        }
    }

    pub fn intrinsic(&self) -> Option<ArrayView2<'_, f64>> {
        self.intrinsic.as_ref().map(|z| z.view())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: self.points.select(Axis(0), indices),
            targets: self.targets.as_ref().map(|t| t.select(indices)),
            intrinsic: self.intrinsic.as_ref().map(|z| z.select(Axis(0), indices)),
        }
    }

    /// Writes `x0,...,x{d-1}[,y]` CSV. Real targets use 17 significant
    /// digits; class labels are written as integers.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x{j}")).collect();
        if self.targets.is_some() {
            header.push("y".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, row) in self.points.outer_iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            match &self.targets {
                Some(Targets::Real(y)) => fields.push(fmt_f64(y[i])),
                Some(Targets::Labels(y)) => fields.push(y[i].to_string()),
                None => {}
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`Dataset::write_csv`]. A `y`
    /// column made only of plain integers is read back as class labels.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let file = crate::io::open(path)?;
        let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
        let headers = reader.headers()?.clone();
        let has_y = headers.iter().next_back() == Some("y");
        let d = if has_y { headers.len() - 1 } else { headers.len() };
        for (j, h) in headers.iter().take(d).enumerate() {
            if h != format!("x{j}") {
                return Err(LccError::Malformed(format!("unexpected CSV column `{h}`")));
            }
        }

        let mut values = Vec::new();
        let mut raw_y: Vec<String> = Vec::new();
        let mut n = 0;
        for record in reader.records() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(LccError::Malformed(format!("row {n} has {} fields", record.len())));
            }
            for field in record.iter().take(d) {
                values.push(parse_f64(field)?);
            }
            if has_y {
                raw_y.push(record[d].trim().to_string());
            }
            n += 1;
        }
        let points = Array2::from_shape_vec((n, d), values)
            .map_err(|e| LccError::Malformed(e.to_string()))?;
        let targets = if has_y {
            let integral = raw_y.iter().all(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
            if integral {
                let labels = raw_y
                    .iter()
                    .map(|s| s.parse::<u32>().map_err(|e| LccError::Malformed(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                Some(Targets::Labels(labels))
            } else {
                Some(Targets::Real(raw_y.iter().map(|s| parse_f64(s)).collect::<Result<Vec<_>>>()?))
            }
        } else {
            None
        };
        Dataset::new(points, targets, None)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| LccError::Malformed(format!("cannot parse `{s}` as a number")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwissRollSpec {
    pub n: usize,
    #[serde(default = "default_t_range")]
    pub t_range: (f64, f64),
    #[serde(default = "default_h_range")]
    pub h_range: (f64, f64),
    #[serde(default)]
    pub noise_dims: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_t_range() -> (f64, f64) {
    (1.5 * PI, 4.5 * PI)
}

fn default_h_range() -> (f64, f64) {
    (0.0, 21.0)
}

impl SwissRollSpec {
    pub fn new(n: usize, noise_dims: usize, seed: u64) -> Self {
        Self {
            n,
            t_range: default_t_range(),
            h_range: default_h_range(),
            noise_dims,
            seed,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        3 + self.noise_dims
    }

    fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 < r.1;
        if self.n == 0 {
            return Err(LccError::InvalidConfig("swiss roll needs n >= 1".into()));
        }
        if !ok(self.t_range) || !ok(self.h_range) {
            return Err(LccError::InvalidConfig("swiss roll parameter ranges must be nonempty".into()));
        }
        Ok(())
    }
}

/// Regression target on the roll, as a function of the intrinsic coordinates.
pub fn swiss_roll_target(t: f64, h: f64) -> f64 {
    (t / 2.0).sin() * (h / 5.0).cos()
}

/// Conservative smoothness constants of [`swiss_roll_target`] over the
/// intrinsic parameter box: `alpha` bounds the gradient norm measured along
/// the surface and `beta` is half a Frobenius bound on the chart Hessian.
pub fn swiss_roll_target_smoothness(spec: &SwissRollSpec) -> SmoothnessSpec {
    let t_min = spec.t_range.0.abs().min(spec.t_range.1.abs());
    // |f_t| <= 1/2 scaled by the arc-length factor sqrt(1 + t^2); |f_h| <= 1/5.
    let alpha = (0.25 / (1.0 + t_min * t_min) + 0.04).sqrt();
    // |f_tt| <= 1/4, |f_hh| <= 1/25, |f_th| <= 1/10.
    let hessian = (1.0f64 / 16.0 + 1.0 / 625.0 + 2.0 / 100.0).sqrt();
    SmoothnessSpec { alpha, beta: 0.5 * hessian, p: 1.0 }
}

/// Samples the Swiss roll `(t cos t, h, t sin t)` with the target
/// `sin(t/2) cos(h/5)`, appending `noise_dims` standard normal coordinates.
pub fn gen_swiss_roll(spec: &SwissRollSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.ambient_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Array2::zeros((spec.n, d));
    let mut intrinsic = Array2::zeros((spec.n, 2));
    let mut targets = Vec::with_capacity(spec.n);

    for i in 0..spec.n {
        let t = rng.random_range(spec.t_range.0..spec.t_range.1);
        let h = rng.random_range(spec.h_range.0..spec.h_range.1);
        let mut row = points.row_mut(i);
        row[0] = t * t.cos();
        row[1] = h;
        row[2] = t * t.sin();
        for j in 3..d {
            row[j] = rng.sample(StandardNormal);
        }
        intrinsic[[i, 0]] = t;
        intrinsic[[i, 1]] = h;
        targets.push(swiss_roll_target(t, h));
    }
    Dataset::new(points, Some(Targets::Real(targets)), Some(intrinsic))
}

/// `n` points on the unit circle in the plane at angles `2πi/n`, with the
/// angle as the intrinsic coordinate.
pub fn gen_unit_circle(n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(LccError::InvalidConfig("circle needs n >= 1".into()));
    }
    let mut points = Array2::zeros((n, 2));
    let mut intrinsic = Array2::zeros((n, 1));
    for i in 0..n {
        let a = 2.0 * PI * i as f64 / n as f64;
        points[[i, 0]] = a.cos();
        points[[i, 1]] = a.sin();
        intrinsic[[i, 0]] = a;
    }
    Dataset::new(points, None, Some(intrinsic))
}

/// Reads an MNIST-style IDX image/label file pair. Pixels are scaled to
/// `[0, 1]` and every image is then normalised to unit Euclidean norm.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| missing(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| missing(labels_path, e))?;
    parse_idx(&images, images_path, &labels, labels_path)
}

fn missing(path: &Path, e: std::io::Error) -> LccError {
    if e.kind() == std::io::ErrorKind::NotFound {
        LccError::MissingFile(path.to_path_buf())
    } else {
        LccError::Io(e)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]])
}

pub fn parse_idx(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<Dataset> {
    let truncated = |path: &Path, expected: usize, found: usize| LccError::Truncated {
        path: path.to_path_buf(),
        expected,
        found,
    };

    if images.len() < 16 {
        return Err(truncated(images_path, 16, images.len()));
    }
    let magic = be_u32(images, 0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(LccError::BadMagic { path: images_path.to_path_buf(), expected: IDX_IMAGE_MAGIC, found: magic });
    }
    if labels.len() < 8 {
        return Err(truncated(labels_path, 8, labels.len()));
    }
    let magic = be_u32(labels, 0);
    if magic != IDX_LABEL_MAGIC {
        return Err(LccError::BadMagic { path: labels_path.to_path_buf(), expected: IDX_LABEL_MAGIC, found: magic });
    }

    let n = be_u32(images, 4) as usize;
    let rows = be_u32(images, 8) as usize;
    let cols = be_u32(images, 12) as usize;
    let n_labels = be_u32(labels, 4) as usize;
    if n != n_labels {
        return Err(LccError::LengthMismatch { images: n, labels: n_labels });
    }
    let d = rows * cols;
    let image_len = 16 + n * d;
    if images.len() < image_len {
        return Err(truncated(images_path, image_len, images.len()));
    }
    if labels.len() < 8 + n {
        return Err(truncated(labels_path, 8 + n, labels.len()));
    }

    let mut points = Array2::zeros((n, d));
    for (i, mut row) in points.outer_iter_mut().enumerate() {
        let pixels = &images[16 + i * d..16 + (i + 1) * d];
        for (dst, &p) in row.iter_mut().zip(pixels) {
            *dst = f64::from(p) / 255.0;
        }
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(LccError::ZeroImage(i));
        }
        row.mapv_inplace(|v| v / norm);
    }
    let label_vec: Vec<u32> = labels[8..8 + n].iter().map(|&b| u32::from(b)).collect();
    if let Some(bad) = label_vec.iter().find(|&&l| l > 9) {
        return Err(LccError::Malformed(format!("label {bad} outside 0..9")));
    }
    Dataset::new(points, Some(Targets::Labels(label_vec)), None)
}

/// Seeded disjoint index sets `(labeled, unlabeled, test)`.
pub fn split_indices(n: usize, n_labeled: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n_labeled + n_test > n {
        return Err(LccError::InsufficientData { requested: n_labeled + n_test, available: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let labeled = perm[..n_labeled].to_vec();
    let test = perm[n_labeled..n_labeled + n_test].to_vec();
    let unlabeled = perm[n_labeled + n_test..].to_vec();
    Ok((labeled, unlabeled, test))
}

pub fn split(dataset: &Dataset, n_labeled: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (l, u, t) = split_indices(dataset.n(), n_labeled, n_test, seed)?;
    Ok((dataset.select(&l), dataset.select(&u), dataset.select(&t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_points_have_unit_norm() {
        let data = gen_unit_circle(12).unwrap();
        for x in data.points().outer_iter() {
            assert!((x.dot(&x) - 1.0).abs() < 1e-15);
        }
        assert!((data.point(3)[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noisy_roll_has_256_dimensions() {
        let data = gen_swiss_roll(&SwissRollSpec::new(10, 253, 1)).unwrap();
        assert_eq!(data.d(), 256);
    }

    #[test]
    fn clean_roll_lies_on_the_spiral() {
        let spec = SwissRollSpec::new(500, 0, 7);
        let data = gen_swiss_roll(&spec).unwrap();
        assert_eq!(data.d(), 3);
        let z = data.intrinsic().unwrap();
        for i in 0..data.n() {
            let x = data.point(i);
            let t = z[[i, 0]];
            assert!(t >= spec.t_range.0 && t <= spec.t_range.1);
            assert!((x[0] * x[0] + x[2] * x[2] - t * t).abs() < 1e-9 * t * t);
            let t_back = (x[0] * x[0] + x[2] * x[2]).sqrt();
            assert!((t_back - t).abs() < 1e-9);
            assert!((x[1] - z[[i, 1]]).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SwissRollSpec::new(200, 5, 42);
        assert_eq!(gen_swiss_roll(&spec).unwrap(), gen_swiss_roll(&spec).unwrap());
        let other = gen_swiss_roll(&SwissRollSpec::new(200, 5, 43)).unwrap();
        assert_ne!(gen_swiss_roll(&spec).unwrap(), other);
    }

    #[test]
    fn noise_coordinates_are_standard_normal() {
        let n = 10_000;
        let data = gen_swiss_roll(&SwissRollSpec::new(n, 4, 3)).unwrap();
        let nf = n as f64;
        for j in 3..7 {
            let col = data.points().column(j).to_owned();
            let mean = col.sum() / nf;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            assert!(mean.abs() <= 5.0 / nf.sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() <= 5.0 * (2.0 / nf).sqrt(), "var {var}");
        }
    }

    #[test]
    fn empty_ranges_are_rejected() {
        let mut spec = SwissRollSpec::new(5, 0, 0);
        spec.h_range = (1.0, 1.0);
        assert!(gen_swiss_roll(&spec).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let (l, u, t) = split_indices(100, 10, 20, 9).unwrap();
        assert_eq!((l.len(), u.len(), t.len()), (10, 70, 20));
        let mut all: Vec<usize> = l.iter().chain(&u).chain(&t).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 10, 20, 9).unwrap(), (l, u, t));
    }

    #[test]
    fn split_boundaries() {
        let (l, u, t) = split_indices(30, 30, 0, 1).unwrap();
        assert_eq!((l.len(), u.len(), t.len()), (30, 0, 0));
        assert!(matches!(split_indices(30, 20, 11, 1), Err(LccError::InsufficientData { .. })));
    }

    #[test]
    fn smoothness_constants_are_positive() {
        let s = swiss_roll_target_smoothness(&SwissRollSpec::new(1, 0, 0));
        assert!(s.alpha > 0.0 && s.beta > 0.0 && s.p == 1.0);
    }
}
