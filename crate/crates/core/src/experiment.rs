//! End-to-end pipelines driven by a single JSON config.

use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::codebook::{init_codebook, learn_from, rectify_signs, DictLearnConfig, InitMethod};
use crate::coder::{encode_dataset, Code, Codebook, CodebookMode, CodingConfig};
use crate::cover::{construct_code, loglog_slope, verify_bounds, BoundsReport, ManifoldCover};
use crate::datagen::{gen_swiss_roll, gen_unit_circle, read_idx, split, Dataset, SwissRollSpec};
use crate::diagnostics::{locality_report, LocalityReport, SignClass, SmoothnessSpec};
use crate::error::{LccError, Result};
use crate::io::read_json;
use crate::learner::{
    error_rate, kernel_smooth_batch, predict_labels, predict_values, rmse, train_classifier, train_ridge, LinearModel,
    Loss, SmootherConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Swissroll,
    SwissrollNoisy,
    MnistSubset,
    CoverVerify,
}

/// Seeds for every randomized step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub codebook: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self { data: seed, split: seed.wrapping_add(1), codebook: seed.wrapping_add(2) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwissRollSetup {
    pub n_unlabeled: usize,
    pub n_labeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Extra standard normal coordinates; defaults to 0 for `swissroll`
    /// and 253 for `swissroll-noisy`.
    pub noise_dims: Option<usize>,
}

impl Default for SwissRollSetup {
    fn default() -> Self {
        Self { n_unlabeled: 10_000, n_labeled: 500, n_validation: 500, n_test: 2000, noise_dims: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SparseFixed,
    LccFixed,
    SparseLearned,
    LccLearned,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SparseFixed => "sparse-fixed",
            Method::LccFixed => "lcc-fixed",
            Method::SparseLearned => "sparse-learned",
            Method::LccLearned => "lcc-learned",
        }
    }

    fn is_lcc(self) -> bool {
        matches!(self, Method::LccFixed | Method::LccLearned)
    }

    fn is_learned(self) -> bool {
        matches!(self, Method::SparseLearned | Method::LccLearned)
    }

    fn fixed_counterpart(self) -> Method {
        if self.is_lcc() {
            Method::LccFixed
        } else {
            Method::SparseFixed
        }
    }
}

/// Hyperparameter grids searched on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tuning {
    pub mu_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub ridge_lambda_grid: Vec<f64>,
    pub smoother_k: Vec<usize>,
    /// Learn one codebook per grid value; otherwise reuse the value tuned
    /// on the fixed anchors.
    pub tune_learned: bool,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            mu_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            beta_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            ridge_lambda_grid: vec![1e-6, 1e-4, 1e-2, 1.0],
            smoother_k: vec![5, 10, 20, 40],
            tune_learned: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSetup {
    pub codebook_size: usize,
    pub lambda_ridge: f64,
    pub n_iters: usize,
    pub init: InitMethod,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LearningSetup {
    fn default() -> Self {
        Self { codebook_size: 128, lambda_ridge: 1e-3, n_iters: 30, init: InitMethod::RandomSample, tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSetup {
    /// Directory holding the four standard IDX files.
    pub dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub codebook_size: usize,
    pub n_iters: usize,
    pub mu_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub loss: Loss,
}

impl Default for MnistSetup {
    fn default() -> Self {
        Self {
            dir: None,
            n_train: 10_000,
            n_validation: 1000,
            n_test: 2000,
            codebook_size: 512,
            n_iters: 10,
            mu_grid: vec![0.01, 0.1, 1.0],
            beta_grid: vec![0.01, 0.1, 1.0],
            lambda_grid: vec![1e-3, 1e-1, 10.0],
            loss: Loss::SquaredHinge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverSetup {
    pub n_points: usize,
    pub epsilons: Vec<f64>,
    pub m: usize,
    pub smoothness: SmoothnessSpec,
}

impl Default for CoverSetup {
    fn default() -> Self {
        Self { n_points: 10_000, epsilons: vec![0.6, 0.3, 0.15], m: 1, smoothness: SmoothnessSpec::unit() }
    }
}

/// Inputs and outputs of the individual subcommands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub codes: Option<PathBuf>,
    pub test_codes: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub cover: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub swiss_roll: SwissRollSetup,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub learning: LearningSetup,
    /// Encoder settings for the single-step subcommands.
    #[serde(default)]
    pub coding: CodingConfig,
    /// Ridge penalty for the single-step `train` subcommand.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub loss: Option<Loss>,
    #[serde(default)]
    pub mnist: MnistSetup,
    #[serde(default)]
    pub cover: CoverSetup,
    #[serde(default)]
    pub paths: Paths,
}

fn default_lambda() -> f64 {
    1e-2
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seeds: Seeds::default(),
            swiss_roll: SwissRollSetup::default(),
            tuning: Tuning::default(),
            learning: LearningSetup::default(),
            coding: CodingConfig::default(),
            lambda: default_lambda(),
            loss: None,
            mnist: MnistSetup::default(),
            cover: CoverSetup::default(),
            paths: Paths::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    /// Fills in experiment-dependent defaults.
    pub fn resolved(mut self) -> Self {
        if self.swiss_roll.noise_dims.is_none() {
            self.swiss_roll.noise_dims = Some(if self.experiment == ExperimentKind::SwissrollNoisy { 253 } else { 0 });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LccError::InvalidConfig(msg.into()));
        let t = &self.tuning;
        if t.mu_grid.is_empty() || t.beta_grid.is_empty() || t.ridge_lambda_grid.is_empty() || t.smoother_k.is_empty() {
            return bad("tuning grids must be nonempty");
        }
        if t.mu_grid.iter().chain(&t.beta_grid).chain(&t.ridge_lambda_grid).any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("grid values must be finite and > 0");
        }
        if t.smoother_k.contains(&0) {
            return bad("smoother k must be >= 1");
        }
        let s = &self.swiss_roll;
        if s.n_labeled == 0 || s.n_validation == 0 || s.n_test == 0 {
            return bad("swiss roll splits must be nonempty");
        }
        if self.learning.codebook_size == 0 || self.learning.codebook_size > s.n_unlabeled {
            return bad("codebook size must lie in 1..=n_unlabeled");
        }
        if !(self.learning.lambda_ridge >= 0.0) {
            return bad("lambda_ridge must be >= 0");
        }
        if self.cover.epsilons.iter().any(|e| !(*e > 0.0)) || self.cover.m == 0 {
            return bad("cover needs positive epsilons and m >= 1");
        }
        self.cover.smoothness.validate()?;
        self.coding.validate()
    }

    pub fn dict_config(&self, coding: CodingConfig, mode: CodebookMode, lambda_ridge: f64) -> DictLearnConfig {
        DictLearnConfig {
            codebook_size: self.learning.codebook_size,
            lambda_ridge,
            mode,
            coding,
            n_iters: self.learning.n_iters,
            init: self.learning.init,
            seed: self.seeds.codebook,
        }
    }

    pub fn coding_for(&self, lcc: bool, param: f64) -> CodingConfig {
        let base = CodingConfig { tol: self.learning.tol, max_iter: self.learning.max_iter, ..CodingConfig::default() };
        if lcc {
            CodingConfig { mu: param, ..base }
        } else {
            CodingConfig { beta_sparse: param, ..base }
        }
    }
}

/// Validation score of one hyperparameter combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub param: f64,
    pub lambda: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// `mu` for the locality encoder, `beta` for plain sparse coding.
    pub param_name: String,
    pub param: f64,
    pub ridge_lambda: f64,
    pub validation_rmse: f64,
    pub test_rmse: f64,
    /// Mean nonzeros per test code.
    pub mean_nnz: f64,
    pub grid: Vec<GridPoint>,
    /// Dictionary objective after every half-step, for learned anchors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_history: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherPoint {
    pub k: usize,
    pub validation_rmse: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherResult {
    /// Chosen on the validation split.
    pub best_k: usize,
    pub test_rmse: f64,
    pub per_k: Vec<SmootherPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalitySummary {
    pub encoder: String,
    pub param: f64,
    pub mean_nnz: f64,
    pub p95_positive_distance: Option<f64>,
    pub mean_distance: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwissRollResults {
    pub ambient_dim: usize,
    pub methods: Vec<MethodResult>,
    pub kernel_smoothing: SmootherResult,
    /// Locality of LCC codes at the tuned `mu` and of sparse codes at
    /// matched sparsity, on the test points with the fixed anchors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locality: Vec<LocalitySummary>,
}

impl SwissRollResults {
    pub fn method(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn locality(&self, encoder: &str) -> Option<&LocalitySummary> {
        self.locality.iter().find(|l| l.encoder == encoder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResult {
    pub features: String,
    pub param: Option<f64>,
    pub lambda: f64,
    pub validation_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistResults {
    pub classifiers: Vec<ClassifierResult>,
}

impl MnistResults {
    pub fn classifier(&self, features: &str) -> Option<&ClassifierResult> {
        self.classifiers.iter().find(|c| c.features == features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverResults {
    pub reports: Vec<BoundsReport>,
    /// Log-log slope of the localization measure against `ε`.
    pub q_slope: f64,
    /// `Q(ε_{i+1}) / Q(ε_i)` for consecutive sweep values.
    pub q_ratios: Vec<f64>,
    /// Every constructed code sums to exactly 1.0.
    pub all_sum_to_one: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swissroll: Option<SwissRollResults>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist: Option<MnistResults>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover: Option<CoverResults>,
}

/// Results plus the locality reports behind [`SwissRollResults::locality`].
pub struct ExperimentOutput {
    pub results: ExperimentResults,
    pub locality_reports: Vec<(String, LocalityReport)>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let config = config.clone().resolved();
    let mut results = ExperimentResults { config: config.clone(), swissroll: None, mnist: None, cover: None };
    let mut locality_reports = Vec::new();
    match config.experiment {
        ExperimentKind::Swissroll => {
            let methods = [Method::SparseFixed, Method::LccFixed, Method::SparseLearned, Method::LccLearned];
            let (res, reports) = run_swissroll(&config, &methods, true)?;
            results.swissroll = Some(res);
            locality_reports = reports;
        }
        ExperimentKind::SwissrollNoisy => {
            let (res, _) = run_swissroll(&config, &[Method::LccLearned], false)?;
            results.swissroll = Some(res);
        }
        ExperimentKind::MnistSubset => results.mnist = Some(run_mnist(&config)?),
        ExperimentKind::CoverVerify => results.cover = Some(run_cover(&config.cover)?),
    }
    Ok(ExperimentOutput { results, locality_reports })
}

/// Labeled, validation, unlabeled and test parts of one generated roll.
pub struct SwissRollSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

pub fn swiss_roll_splits(config: &ExperimentConfig) -> Result<SwissRollSplits> {
    let s = &config.swiss_roll;
    let total = s.n_unlabeled + s.n_labeled + s.n_validation + s.n_test;
    let spec = SwissRollSpec::new(total, s.noise_dims.unwrap_or(0), config.seeds.data);
    let data = gen_swiss_roll(&spec)?;
    let (labeled, unlabeled, test) = split(&data, s.n_labeled + s.n_validation, s.n_test, config.seeds.split)?;
    let train_idx: Vec<usize> = (0..s.n_labeled).collect();
    let val_idx: Vec<usize> = (s.n_labeled..labeled.n()).collect();
    Ok(SwissRollSplits { train: labeled.select(&train_idx), validation: labeled.select(&val_idx), unlabeled, test })
}

fn targets(data: &Dataset) -> Result<&[f64]> {
    data.real_targets().ok_or_else(|| LccError::InvalidConfig("dataset has no real-valued targets".into()))
}

fn mean_nnz(codes: &[Code]) -> f64 {
    if codes.is_empty() {
        return 0.0;
    }
    codes.iter().map(Code::nnz).sum::<usize>() as f64 / codes.len() as f64
}

/// Ridge fits over the lambda grid, scored on validation; ties keep the
/// earlier grid value.
fn tune_ridge(
    train: &[Code],
    y_train: &[f64],
    val: &[Code],
    y_val: &[f64],
    lambdas: &[f64],
    param: f64,
    grid: &mut Vec<GridPoint>,
) -> Result<(LinearModel, f64)> {
    let mut best: Option<(LinearModel, f64)> = None;
    for &lambda in lambdas {
        let model = train_ridge(train, y_train, lambda)?;
        let score = rmse(&predict_values(&model, val)?, y_val)?;
        grid.push(GridPoint { param, lambda, validation: score });
        if best.as_ref().is_none_or(|(_, s)| score < *s) {
            best = Some((model, score));
        }
    }
    Ok(best.expect("lambda grid is nonempty"))
}

struct Candidate {
    param: f64,
    codebook: Codebook,
    model: LinearModel,
    validation: f64,
    history: Option<Vec<f64>>,
}

fn evaluate_method(
    config: &ExperimentConfig,
    splits: &SwissRollSplits,
    fixed: &Codebook,
    method: Method,
    params: &[f64],
) -> Result<MethodResult> {
    let lcc = method.is_lcc();
    let mut grid = Vec::new();
    let mut best: Option<Candidate> = None;
    for &param in params {
        let coding = config.coding_for(lcc, param);
        let (codebook, history) = if method.is_learned() {
            let dict = config.dict_config(coding, CodebookMode::RidgeRegularized, config.learning.lambda_ridge);
            let learned = learn_from(splits.unlabeled.points(), fixed.clone(), &dict)?;
            (learned.codebook, Some(learned.history))
        } else {
            (fixed.clone(), None)
        };
        let train_codes = encode_dataset(splits.train.points(), &codebook, &coding)?;
        let val_codes = encode_dataset(splits.validation.points(), &codebook, &coding)?;
        let (model, validation) = tune_ridge(
            &train_codes,
            targets(&splits.train)?,
            &val_codes,
            targets(&splits.validation)?,
            &config.tuning.ridge_lambda_grid,
            param,
            &mut grid,
        )?;
        log::info!("{} param {param:e}: validation rmse {validation:.6}", method.name());
        if best.as_ref().is_none_or(|b| validation < b.validation) {
            best = Some(Candidate { param, codebook, model, validation, history });
        }
    }
    let best = best.ok_or_else(|| LccError::InvalidConfig("empty parameter grid".into()))?;
    let coding = config.coding_for(lcc, best.param);
    let test_codes = encode_dataset(splits.test.points(), &best.codebook, &coding)?;
    let test_rmse = rmse(&predict_values(&best.model, &test_codes)?, targets(&splits.test)?)?;
    log::info!("{}: test rmse {test_rmse:.6}", method.name());
    Ok(MethodResult {
        method,
        param_name: if lcc { "mu" } else { "beta" }.into(),
        param: best.param,
        ridge_lambda: best.model.lambda,
        validation_rmse: best.validation,
        test_rmse,
        mean_nnz: mean_nnz(&test_codes),
        grid,
        objective_history: best.history,
    })
}

fn run_smoother(config: &ExperimentConfig, splits: &SwissRollSplits) -> Result<SmootherResult> {
    let mut per_k = Vec::new();
    for &k in &config.tuning.smoother_k {
        let sc = SmootherConfig::new(k);
        let val = kernel_smooth_batch(&splits.train, splits.validation.points(), &sc)?;
        let test = kernel_smooth_batch(&splits.train, splits.test.points(), &sc)?;
        per_k.push(SmootherPoint {
            k,
            validation_rmse: rmse(&val, targets(&splits.validation)?)?,
            test_rmse: rmse(&test, targets(&splits.test)?)?,
        });
    }
    let best = per_k
        .iter()
        .fold(None::<&SmootherPoint>, |b, p| match b {
            Some(b) if b.validation_rmse <= p.validation_rmse => Some(b),
            _ => Some(p),
        })
        .expect("k grid is nonempty");
    Ok(SmootherResult { best_k: best.k, test_rmse: best.test_rmse, per_k })
}

/// Smallest-magnitude sparse penalty whose mean code size does not exceed
/// `target_nnz`, found by bisection on `ln β`.
pub fn match_sparsity(points: ArrayView2<f64>, codebook: &Codebook, base: &CodingConfig, target_nnz: f64) -> Result<f64> {
    let nnz_at = |beta: f64| -> Result<f64> {
        let coding = CodingConfig { mu: 0.0, beta_sparse: beta, ..*base };
        Ok(mean_nnz(&encode_dataset(points, codebook, &coding)?))
    };
    // Above max |vᵀx| every code is zero.
    let mut hi = 0.0f64;
    for x in points.outer_iter() {
        for v in codebook.anchors().outer_iter() {
            hi = hi.max(v.dot(&x).abs());
        }
    }
    let (mut lo, mut hi) = ((hi * 1e-8).max(f64::MIN_POSITIVE).ln(), hi.max(f64::MIN_POSITIVE).ln());
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if nnz_at(mid.exp())? > target_nnz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.exp())
}

fn summarize(encoder: &str, param: f64, codes: &[Code], report: &LocalityReport) -> LocalitySummary {
    LocalitySummary {
        encoder: encoder.into(),
        param,
        mean_nnz: mean_nnz(codes),
        p95_positive_distance: report.distance_quantile(SignClass::Positive, 0.95),
        mean_distance: report.mean_distance,
        n_positive: report.records.iter().filter(|r| r.sign == SignClass::Positive).count(),
        n_negative: report.records.iter().filter(|r| r.sign == SignClass::Negative).count(),
    }
}

fn run_swissroll(
    config: &ExperimentConfig,
    methods: &[Method],
    with_locality: bool,
) -> Result<(SwissRollResults, Vec<(String, LocalityReport)>)> {
    let splits = swiss_roll_splits(config)?;
    let dict = config.dict_config(CodingConfig::default(), CodebookMode::RidgeRegularized, config.learning.lambda_ridge);
    let fixed = init_codebook(splits.unlabeled.points(), &dict)?;

    let mut results: Vec<MethodResult> = Vec::new();
    for &method in methods {
        let grid: Vec<f64> = if method.is_learned() && !config.tuning.tune_learned {
            let counterpart = method.fixed_counterpart();
            let param = match results.iter().find(|r| r.method == counterpart) {
                Some(r) => r.param,
                None => {
                    let grid = if method.is_lcc() { &config.tuning.mu_grid } else { &config.tuning.beta_grid };
                    evaluate_method(config, &splits, &fixed, counterpart, grid)?.param
                }
            };
            vec![param]
        } else if method.is_lcc() {
            config.tuning.mu_grid.clone()
        } else {
            config.tuning.beta_grid.clone()
        };
        results.push(evaluate_method(config, &splits, &fixed, method, &grid)?);
    }
    let kernel_smoothing = run_smoother(config, &splits)?;

    let mut locality = Vec::new();
    let mut reports = Vec::new();
    if with_locality {
        if let Some(lcc) = results.iter().find(|r| r.method == Method::LccFixed) {
            let test = splits.test.points();
            let lcc_coding = config.coding_for(true, lcc.param);
            let lcc_codes = encode_dataset(test, &fixed, &lcc_coding)?;
            let lcc_report = locality_report(test, &fixed, &lcc_codes)?;
            let beta = match_sparsity(test, &fixed, &lcc_coding, mean_nnz(&lcc_codes))?;
            let sparse_codes = encode_dataset(test, &fixed, &config.coding_for(false, beta))?;
            let sparse_report = locality_report(test, &fixed, &sparse_codes)?;
            locality.push(summarize("lcc", lcc.param, &lcc_codes, &lcc_report));
            locality.push(summarize("sparse", beta, &sparse_codes, &sparse_report));
            reports.push(("lcc".to_string(), lcc_report));
            reports.push(("sparse".to_string(), sparse_report));
        }
    }
    let res = SwissRollResults { ambient_dim: splits.test.d(), methods: results, kernel_smoothing, locality };
    Ok((res, reports))
}

const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

fn labels(data: &Dataset) -> Result<&[u32]> {
    data.labels().ok_or_else(|| LccError::InvalidConfig("dataset has no class labels".into()))
}

fn dense_codes(points: ArrayView2<f64>) -> Vec<Code> {
    points.outer_iter().map(|x| Code::from_dense(&x.to_vec())).collect()
}

fn tune_classifier(
    features: &str,
    param: Option<f64>,
    train: (&[Code], &[u32]),
    val: (&[Code], &[u32]),
    test: (&[Code], &[u32]),
    setup: &MnistSetup,
) -> Result<ClassifierResult> {
    let mut best: Option<(LinearModel, f64)> = None;
    for &lambda in &setup.lambda_grid {
        let model = train_classifier(train.0, train.1, lambda, setup.loss)?;
        let err = error_rate(&predict_labels(&model, val.0)?, val.1)?;
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((model, err));
        }
    }
    let (model, validation_error) = best.ok_or_else(|| LccError::InvalidConfig("empty lambda grid".into()))?;
    let test_error = error_rate(&predict_labels(&model, test.0)?, test.1)?;
    log::info!("mnist {features}: test error {test_error:.4}");
    Ok(ClassifierResult { features: features.into(), param, lambda: model.lambda, validation_error, test_error })
}

fn run_mnist(config: &ExperimentConfig) -> Result<MnistResults> {
    let setup = &config.mnist;
    let dir = setup
        .dir
        .as_ref()
        .ok_or_else(|| LccError::InvalidConfig("mnist.dir must name the directory with the IDX files".into()))?;
    let file = |i: usize| dir.join(MNIST_FILES[i]);
    let full_train = read_idx(&file(0), &file(1))?;
    let full_test = read_idx(&file(2), &file(3))?;
    let (labeled, _, _) = split(&full_train, setup.n_train + setup.n_validation, 0, config.seeds.split)?;
    let train = labeled.select(&(0..setup.n_train).collect::<Vec<_>>());
    let validation = labeled.select(&(setup.n_train..labeled.n()).collect::<Vec<_>>());
    let (test, _, _) = split(&full_test, setup.n_test, 0, config.seeds.split)?;

    let mut classifiers = Vec::new();
    let raw = |d: &Dataset| dense_codes(d.points());
    classifiers.push(tune_classifier(
        "raw-pixels",
        None,
        (&raw(&train), labels(&train)?),
        (&raw(&validation), labels(&validation)?),
        (&raw(&test), labels(&test)?),
        setup,
    )?);

    for (lcc, name, grid) in [(false, "sparse-codes", &setup.beta_grid), (true, "lcc-codes", &setup.mu_grid)] {
        let mut best: Option<ClassifierResult> = None;
        for &param in grid {
            let coding = config.coding_for(lcc, param);
            let dict = DictLearnConfig {
                codebook_size: setup.codebook_size,
                lambda_ridge: 0.0,
                mode: CodebookMode::UnitNormConstrained,
                coding,
                n_iters: setup.n_iters,
                init: InitMethod::RandomSample,
                seed: config.seeds.codebook,
            };
            let init = init_codebook(train.points(), &dict)?;
            let learned = learn_from(train.points(), init, &dict)?;
            let codebook = if lcc { learned.codebook } else { rectify_signs(&learned.codebook, &learned.codes).0 };
            let enc = |d: &Dataset| encode_dataset(d.points(), &codebook, &coding);
            let result = tune_classifier(
                name,
                Some(param),
                (&enc(&train)?, labels(&train)?),
                (&enc(&validation)?, labels(&validation)?),
                (&enc(&test)?, labels(&test)?),
                setup,
            )?;
            if best.as_ref().is_none_or(|b| result.validation_error < b.validation_error) {
                best = Some(result);
            }
        }
        classifiers.extend(best);
    }
    Ok(MnistResults { classifiers })
}

/// Builds a cover of the unit circle for every `ε` and checks the bounds.
pub fn run_cover(setup: &CoverSetup) -> Result<CoverResults> {
    let data = gen_unit_circle(setup.n_points)?;
    let points = data.points();
    let mut reports = Vec::new();
    let mut all_sum_to_one = true;
    for &eps in &setup.epsilons {
        let cover = ManifoldCover::build(points, eps, setup.m)?;
        for x in points.outer_iter() {
            all_sum_to_one &= construct_code(x, &cover)?.code.coefficient_sum() == 1.0;
        }
        let report = verify_bounds(points, &cover, &setup.smoothness)?;
        log::info!("cover eps {eps}: {} centers, Q = {:.6e}", report.greedy_cover_size, report.localization_measure);
        reports.push(report);
    }
    let eps: Vec<f64> = reports.iter().map(|r| r.epsilon).collect();
    let q: Vec<f64> = reports.iter().map(|r| r.localization_measure).collect();
    let q_slope = if q.len() >= 2 { loglog_slope(&eps, &q) } else { f64::NAN };
    let q_ratios = q.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(CoverResults { reports, q_slope, q_ratios, all_sum_to_one })
}
