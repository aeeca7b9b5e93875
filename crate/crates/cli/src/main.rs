//! `lcc` command-line harness.
//!
//! Every subcommand reads one JSON config (`--config`) and writes its
//! artifacts under `--out`. Inputs default to the file names that the
//! preceding pipeline step writes, so a bare sequence of subcommands
//! sharing one output directory runs end to end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lcc::codebook::learn;
use lcc::coder::{encode_dataset, Code, Codebook, CodebookMode};
use lcc::cover::ManifoldCover;
use lcc::datagen::{gen_unit_circle, Dataset};
use lcc::experiment::{run_cover, run_experiment, swiss_roll_splits, ExperimentConfig, ExperimentKind, Seeds};
use lcc::io::{fmt_f64, read_json_lines, write_json, write_json_lines};
use lcc::learner::{error_rate, predict_labels, predict_values, rmse, train_classifier, train_ridge, LinearModel};
use lcc::{locality_report, LccError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "lcc", version, about = "Local coordinate coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Master seed, overriding the config's seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the Swiss-roll splits (or the circle sample for cover-verify).
    GenData,
    /// Learn anchors from the unlabeled split.
    LearnCodebook,
    /// Encode the train and test splits against the codebook.
    Encode,
    /// Fit a linear model on the training codes.
    Train,
    /// Predict on the test codes.
    Predict,
    /// Score the model on the test split.
    Eval,
    /// Export the per-coefficient locality report.
    DiagnoseLocality,
    /// Build ε-net covers and check the construction bounds.
    CoverVerify,
    /// Run a full experiment into a single results file.
    RunExperiment,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_MISSING: u8 = 4;

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn fail(code: u8, kind: &str, message: String) -> ExitCode {
    let report = ErrorReport { error: kind, message };
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    ExitCode::from(code)
}

fn classify(err: &LccError) -> (u8, &'static str) {
    match err {
        LccError::MissingFile(_) => (EXIT_MISSING, "missing-file"),
        LccError::InvalidConfig(_) => (EXIT_CONFIG, "malformed-config"),
        _ => (EXIT_FAILURE, "failure"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(EXIT_USAGE, "usage", e.to_string().trim_end().to_string()),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_FAILURE, "failure", e.to_string());
        }
    }
    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(e @ LccError::MissingFile(_)) => return fail(EXIT_MISSING, "missing-file", e.to_string()),
        Err(e) => return fail(EXIT_CONFIG, "malformed-config", e.to_string()),
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        return fail(EXIT_FAILURE, "failure", e.to_string());
    }
    let ctx = Context { config, out: cli.out.clone() };
    let result = match cli.command {
        Command::GenData => ctx.gen_data(),
        Command::LearnCodebook => ctx.learn_codebook(),
        Command::Encode => ctx.encode(),
        Command::Train => ctx.train(),
        Command::Predict => ctx.predict(),
        Command::Eval => ctx.eval(),
        Command::DiagnoseLocality => ctx.diagnose_locality(),
        Command::CoverVerify => ctx.cover_verify(),
        Command::RunExperiment => ctx.run_experiment(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            fail(code, kind, e.to_string())
        }
    }
}

fn load_config(cli: &Cli) -> lcc::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| LccError::InvalidConfig("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seeds = Seeds::from_master(seed);
    }
    Ok(config.resolved())
}

struct Context {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Configured path, or `default` inside the output directory.
    fn input(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out(default))
    }

    fn gen_data(&self) -> lcc::Result<()> {
        if self.config.experiment == ExperimentKind::CoverVerify {
            let data = gen_unit_circle(self.config.cover.n_points)?;
            data.write_csv(&self.out("data.csv"))?;
            println!("wrote {} circle points", data.n());
            return Ok(());
        }
        if self.config.experiment == ExperimentKind::MnistSubset {
            return Err(LccError::InvalidConfig("gen-data does not apply to mnist-subset; point mnist.dir at the IDX files".into()));
        }
        let splits = swiss_roll_splits(&self.config)?;
        for (name, part) in [
            ("unlabeled.csv", &splits.unlabeled),
            ("train.csv", &splits.train),
            ("validation.csv", &splits.validation),
            ("test.csv", &splits.test),
        ] {
            part.write_csv(&self.out(name))?;
            println!("wrote {name}: {} points in {} dimensions", part.n(), part.d());
        }
        Ok(())
    }

    fn learn_codebook(&self) -> lcc::Result<()> {
        let data = Dataset::read_csv(&self.input(&self.config.paths.data, "unlabeled.csv"))?;
        let dict = self.config.dict_config(self.config.coding, CodebookMode::RidgeRegularized, self.config.learning.lambda_ridge);
        let learned = learn(data.points(), &dict)?;
        learned.codebook.save(&self.out("codebook.json"))?;
        learned.codebook.write_csv(&self.out("codebook.csv"))?;
        write_json(&self.out("objective_history.json"), &learned.history)?;
        println!(
            "learned {} anchors; objective {} -> {}",
            learned.codebook.size(),
            learned.history.first().map_or(String::from("-"), |v| fmt_f64(*v)),
            learned.history.last().map_or(String::from("-"), |v| fmt_f64(*v)),
        );
        Ok(())
    }

    fn codebook(&self) -> lcc::Result<Codebook> {
        Codebook::load(&self.input(&self.config.paths.codebook, "codebook.json"))
    }

    fn encode(&self) -> lcc::Result<()> {
        let codebook = self.codebook()?;
        let paths = &self.config.paths;
        for (input, default, output) in [
            (&paths.train_data, "train.csv", "codes.jsonl"),
            (&paths.test_data, "test.csv", "test_codes.jsonl"),
        ] {
            let path = self.input(input, default);
            if input.is_none() && !path.exists() && output == "test_codes.jsonl" {
                continue;
            }
            let data = Dataset::read_csv(&path)?;
            let codes = encode_dataset(data.points(), &codebook, &self.config.coding)?;
            write_json_lines(&self.out(output), &codes)?;
            let nnz = codes.iter().map(Code::nnz).sum::<usize>() as f64 / codes.len().max(1) as f64;
            println!("encoded {} points from {}; mean nnz {nnz:.3}", codes.len(), path.display());
        }
        Ok(())
    }

    fn codes(&self, configured: &Option<PathBuf>, default: &str) -> lcc::Result<Vec<Code>> {
        read_json_lines(&self.input(configured, default))
    }

    fn model(&self) -> lcc::Result<LinearModel> {
        LinearModel::load(&self.input(&self.config.paths.model, "model.json"))
    }

    fn train(&self) -> lcc::Result<()> {
        let data = Dataset::read_csv(&self.input(&self.config.paths.train_data, "train.csv"))?;
        let codes = self.codes(&self.config.paths.codes, "codes.jsonl")?;
        if codes.len() != data.n() {
            return Err(LccError::DimensionMismatch { expected: data.n(), found: codes.len() });
        }
        let lambda = self.config.lambda;
        let model = match (self.config.loss, data.real_targets(), data.labels()) {
            (Some(loss), _, Some(labels)) => train_classifier(&codes, labels, lambda, loss)?,
            (None, Some(y), _) => train_ridge(&codes, y, lambda)?,
            (None, None, Some(labels)) => {
                let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
                train_ridge(&codes, &y, lambda)?
            }
            (Some(_), _, None) => return Err(LccError::InvalidConfig("a classification loss needs integer labels".into())),
            (None, None, None) => return Err(LccError::Malformed("training data has no targets".into())),
        };
        model.save(&self.out("model.json"))?;
        println!("trained {} model with lambda {lambda}", if model.is_classifier() { "one-vs-all" } else { "ridge" });
        Ok(())
    }

    fn predict(&self) -> lcc::Result<()> {
        let model = self.model()?;
        let codes = self.codes(&self.config.paths.test_codes, "test_codes.jsonl")?;
        let mut text = String::from("prediction\n");
        if model.is_classifier() {
            for label in predict_labels(&model, &codes)? {
                text.push_str(&format!("{label}\n"));
            }
        } else {
            for value in predict_values(&model, &codes)? {
                text.push_str(&fmt_f64(value));
                text.push('\n');
            }
        }
        let path = self.config.paths.predictions.clone().unwrap_or_else(|| self.out("predictions.csv"));
        std::fs::write(&path, text)?;
        println!("wrote {} predictions to {}", codes.len(), path.display());
        Ok(())
    }

    fn eval(&self) -> lcc::Result<()> {
        let model = self.model()?;
        let data = Dataset::read_csv(&self.input(&self.config.paths.test_data, "test.csv"))?;
        let codes = self.codes(&self.config.paths.test_codes, "test_codes.jsonl")?;
        if codes.len() != data.n() {
            return Err(LccError::DimensionMismatch { expected: data.n(), found: codes.len() });
        }
        let metrics = if model.is_classifier() {
            let labels = data.labels().ok_or_else(|| LccError::Malformed("test data has no labels".into()))?;
            let predicted = predict_labels(&model, &codes)?;
            // A zeroed model ties every score and predicts the lowest class.
            let lowest = vec![model.classes[0]; labels.len()];
            Metrics::Classification { error_rate: error_rate(&predicted, labels)?, baseline_error_rate: error_rate(&lowest, labels)? }
        } else {
            let y: Vec<f64> = match (data.real_targets(), data.labels()) {
                (Some(y), _) => y.to_vec(),
                (None, Some(l)) => l.iter().map(|&v| f64::from(v)).collect(),
                (None, None) => return Err(LccError::Malformed("test data has no targets".into())),
            };
            let predicted = predict_values(&model, &codes)?;
            Metrics::Regression { rmse: rmse(&predicted, &y)?, baseline_rmse: rmse(&vec![0.0; y.len()], &y)? }
        };
        write_json(&self.out("metrics.json"), &metrics)?;
        match metrics {
            Metrics::Regression { rmse, baseline_rmse } => println!("rmse {rmse:.6} (zero predictor {baseline_rmse:.6})"),
            Metrics::Classification { error_rate, baseline_error_rate } => {
                println!("error rate {error_rate:.6} (constant predictor {baseline_error_rate:.6})")
            }
        }
        Ok(())
    }

    fn diagnose_locality(&self) -> lcc::Result<()> {
        let data = Dataset::read_csv(&self.input(&self.config.paths.train_data, "train.csv"))?;
        let codebook = self.codebook()?;
        let codes = self.codes(&self.config.paths.codes, "codes.jsonl")?;
        let report = locality_report(data.points(), &codebook, &codes)?;
        write_locality(&self.out, "locality", &report)
    }

    fn cover_verify(&self) -> lcc::Result<()> {
        let setup = &self.config.cover;
        let results = run_cover(setup)?;
        write_json(&self.out("cover_report.json"), &results)?;
        let finest = setup.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
        let data = match &self.config.paths.data {
            Some(path) => Dataset::read_csv(path)?,
            None => gen_unit_circle(setup.n_points)?,
        };
        let cover = ManifoldCover::build(data.points(), finest, setup.m)?;
        let path = self.config.paths.cover.clone().unwrap_or_else(|| self.out("cover.json"));
        cover.save(&path)?;
        for r in &results.reports {
            println!("epsilon {}: {} anchors, bounds hold: {}", fmt_f64(r.epsilon), r.anchor_count, r.all_hold());
        }
        println!("Q slope {:.4}; all codes sum to one: {}", results.q_slope, results.all_sum_to_one);
        Ok(())
    }

    fn run_experiment(&self) -> lcc::Result<()> {
        let output = run_experiment(&self.config)?;
        write_json(&self.out("results.json"), &output.results)?;
        for (encoder, report) in &output.locality_reports {
            write_locality(&self.out, &format!("locality_{encoder}"), report)?;
        }
        if let Some(sr) = &output.results.swissroll {
            for m in &sr.methods {
                println!("{:<15} test rmse {:.6}", m.method.name(), m.test_rmse);
            }
            println!("{:<15} test rmse {:.6} (k = {})", "kernel-smoothing", sr.kernel_smoothing.test_rmse, sr.kernel_smoothing.best_k);
        }
        if let Some(mn) = &output.results.mnist {
            for c in &mn.classifiers {
                println!("{:<15} test error {:.4}", c.features, c.test_error);
            }
        }
        if let Some(cv) = &output.results.cover {
            println!("Q slope {:.4}; all codes sum to one: {}", cv.q_slope, cv.all_sum_to_one);
        }
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum Metrics {
    Regression { rmse: f64, baseline_rmse: f64 },
    Classification { error_rate: f64, baseline_error_rate: f64 },
}

fn write_locality(out: &Path, stem: &str, report: &lcc::LocalityReport) -> lcc::Result<()> {
    report.write_csv(&out.join(format!("{stem}.csv")))?;
    report.write_histogram_csv(&out.join(format!("{stem}_hist.csv")))?;
    println!("wrote {stem}.csv and {stem}_hist.csv");
    Ok(())
}
