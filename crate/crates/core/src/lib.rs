//! Local coordinate coding.
//!
//! Points are expressed as sparse combinations of nearby anchor points;
//! a nonlinear function on the data manifold is then learned as a linear
//! function of the codes.
//!
//! * [`datagen`]: Swiss-roll generator, MNIST IDX reader, seeded splits
//! * [`coder`]: locality-weighted and plain sparse encoders
//! * [`codebook`]: anchor learning by alternating minimisation
//! * [`diagnostics`]: localization measure, linearization bound, locality reports
//! * [`cover`]: constructive manifold coding from an ε-net and tangent frames
//! * [`learner`]: ridge regression and one-vs-all classifiers on codes, kernel smoothing
//! * [`experiment`]: end-to-end pipelines driven by a JSON config

pub mod codebook;
pub mod coder;
pub mod cover;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod learner;

pub use codebook::{learn, rectify_signs, update_codebook, DictLearnConfig, InitMethod};
pub use coder::{coding_norm, encode_dataset, encode_lcc, encode_sparse, reconstruct, Code, Codebook, CodebookMode, CodingConfig};
pub use cover::{construct_code, greedy_cover, tangent_frame, verify_bounds, ManifoldCover};
pub use datagen::{gen_swiss_roll, gen_unit_circle, read_idx, split, Dataset, SwissRollSpec, Targets};
pub use diagnostics::{linearization_gap, localization_measure, locality_report, LocalityReport, SmoothnessSpec};
pub use error::{LccError, Result};
pub use learner::{kernel_smooth, train_classifier, train_ridge, LinearModel, Loss};
