//! Chemometric model building for QSAR descriptor tables: preprocessing,
//! rational train/test splitting, descriptor subset search, MLR/PCR/PLS
//! regression and the usual internal, external and randomization checks.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod fixtures;
pub mod pipeline;
pub mod preprocess;
pub mod regress;
pub mod select;
pub mod split;
pub mod validate;

pub use data::{ActivityKind, Dataset, DescriptorTable, Membership, PredictionRow};
pub use error::{QsarError, Result};
pub use fixtures::{audit_reference_tables, load_fixture, AuditReport, FixtureModel};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineOutcome, Stage};
pub use preprocess::{autoscale, preprocess, PreprocessConfig, PreprocessReport, ScalingParams};
pub use regress::{predict, FitSpec, Fitter, LinearModel, Method};
pub use select::{sa_select, Objective, SaConfig, SaOutcome};
pub use split::{calibrate_dissimilarity, sphere_exclusion_split, SeedRule, SplitResult};
pub use validate::{loo_q2, randomization_test, validate_model, RandomizationReport, ValidationReport};
