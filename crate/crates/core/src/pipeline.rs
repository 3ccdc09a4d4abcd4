//! End-to-end model building: load, preprocess, split, select, fit,
//! validate, randomize and write every artifact to one directory.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{format_full, load_dataset, residual_table, write_prediction_rows, ActivityKind, Dataset};
use crate::error::{QsarError, Result};
use crate::preprocess::{
    preprocess, PreprocessConfig, PreprocessReport, DEFAULT_CONSTANT_TOLERANCE, DEFAULT_CORRELATION_THRESHOLD,
};
use crate::regress::{select_components, FitSpec, Fitter, LinearModel, Method};
use crate::select::{sa_select, Objective, SaConfig, SaTrace};
use crate::split::{calibrate_dissimilarity, sphere_exclusion_split, SeedRule, SplitResult};
use crate::validate::{contributions, randomization_test, validate_model, Contribution, ValidationReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Test-set fraction used when neither a dissimilarity nor a target size is given.
pub const DEFAULT_TEST_FRACTION: f64 = 10.0 / 28.0;

/// Component count used while searching descriptor subsets when none is fixed.
pub const SEARCH_COMPONENTS: usize = 3;

fn default_activity_column() -> String {
    "pIC50".into()
}
fn default_constant_tolerance() -> f64 {
    DEFAULT_CONSTANT_TOLERANCE
}
fn default_correlation_threshold() -> f64 {
    DEFAULT_CORRELATION_THRESHOLD
}
fn default_method() -> Method {
    Method::Pls
}
fn default_max_components() -> usize {
    5
}
fn default_subset_size() -> usize {
    SaConfig::default().subset_size
}
fn default_initial_temperature() -> f64 {
    SaConfig::default().initial_temperature
}
fn default_cooling_factor() -> f64 {
    SaConfig::default().cooling_factor
}
fn default_steps_per_temperature() -> usize {
    SaConfig::default().steps_per_temperature
}
fn default_min_temperature() -> f64 {
    SaConfig::default().min_temperature
}
fn default_permutations() -> usize {
    crate::validate::DEFAULT_PERMUTATIONS
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("qsar_out")
}
fn default_seed() -> u64 {
    42
}

/// Flat configuration. Only `input` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    #[serde(default = "default_activity_column")]
    pub activity_column: String,
    #[serde(default)]
    pub activity_kind: ActivityKind,
    #[serde(default = "default_constant_tolerance")]
    pub constant_tolerance: f64,
    #[serde(default = "default_correlation_threshold")]
    pub correlation_threshold: f64,
    /// Sphere-exclusion dissimilarity; takes precedence over `target_test_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissimilarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_test_size: Option<usize>,
    #[serde(default)]
    pub seed_rule: SeedRule,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Fixed component count for PCR/PLS; chosen by LOO q² when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_components: Option<usize>,
    #[serde(default = "default_max_components")]
    pub max_components: usize,
    #[serde(default = "default_subset_size")]
    pub subset_size: usize,
    #[serde(default = "default_initial_temperature")]
    pub sa_initial_temperature: f64,
    #[serde(default = "default_cooling_factor")]
    pub sa_cooling_factor: f64,
    #[serde(default = "default_steps_per_temperature")]
    pub sa_steps_per_temperature: usize,
    #[serde(default = "default_min_temperature")]
    pub sa_min_temperature: f64,
    #[serde(default)]
    pub sa_objective: Objective,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            activity_column: default_activity_column(),
            activity_kind: ActivityKind::default(),
            constant_tolerance: default_constant_tolerance(),
            correlation_threshold: default_correlation_threshold(),
            dissimilarity: None,
            target_test_size: None,
            seed_rule: SeedRule::default(),
            method: default_method(),
            n_components: None,
            max_components: default_max_components(),
            subset_size: default_subset_size(),
            sa_initial_temperature: default_initial_temperature(),
            sa_cooling_factor: default_cooling_factor(),
            sa_steps_per_temperature: default_steps_per_temperature(),
            sa_min_temperature: default_min_temperature(),
            sa_objective: Objective::default(),
            permutations: default_permutations(),
            out_dir: default_out_dir(),
            seed: default_seed(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| QsarError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| QsarError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QsarError::Serialization(e.to_string()))
    }

    /// SHA-256 of the serialized configuration with the output directory
    /// blanked, so the same analysis hashes identically wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        Ok(sha256_hex(&c.to_toml()?))
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            constant_tolerance: self.constant_tolerance,
            correlation_threshold: self.correlation_threshold,
        }
    }

    pub fn sa_config(&self) -> SaConfig {
        SaConfig {
            subset_size: self.subset_size,
            initial_temperature: self.sa_initial_temperature,
            cooling_factor: self.sa_cooling_factor,
            steps_per_temperature: self.sa_steps_per_temperature,
            min_temperature: self.sa_min_temperature,
            seed: self.seed,
            objective: self.sa_objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Preprocess,
    Split,
    Select,
    Fit,
    Validate,
    Randomize,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::Select => "select",
            Stage::Fit => "fit",
            Stage::Validate => "validate",
            Stage::Randomize => "randomize",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: QsarError,
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// File names written by [`run_pipeline`].
pub const OUTPUT_FILES: [&str; 8] = [
    "model.json",
    "report.txt",
    "report.csv",
    "predictions.csv",
    "obs_vs_pred.csv",
    "sa_trace.csv",
    "split.csv",
    "preprocess_report.txt",
];

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub config_hash: String,
    pub preprocess: PreprocessReport,
    pub split: SplitResult,
    pub selected: Vec<String>,
    pub sa_trace: Option<SaTrace>,
    pub model: LinearModel,
    pub report: ValidationReport,
    pub contributions: Vec<Contribution>,
    pub written: Vec<PathBuf>,
}

/// Default test size for `n` molecules, the 10-of-28 proportion.
pub fn default_test_size(n: usize) -> usize {
    ((n as f64 * DEFAULT_TEST_FRACTION).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Run every stage and write all artifacts to `config.out_dir`.
///
/// Artifacts are rendered in memory first; nothing is written unless every
/// stage succeeds, and a failed write removes the files already written.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineOutcome, PipelineError> {
    let config_hash = config.hash().at(Stage::Load)?;
    let raw = load_dataset(&config.input, &config.activity_column, config.activity_kind).at(Stage::Load)?;
    info!("loaded {} molecules x {} descriptors", raw.n(), raw.m());

    let (ds, pre_report) = preprocess(&raw, &config.preprocess_config()).at(Stage::Preprocess)?;
    info!("{} descriptors after preprocessing", ds.m());

    let split = match config.dissimilarity {
        Some(d) => sphere_exclusion_split(&ds, d, config.seed_rule),
        None => {
            let target = config.target_test_size.unwrap_or_else(|| default_test_size(ds.n()));
            calibrate_dissimilarity(&ds, target, config.seed_rule).map(|c| c.split)
        }
    }
    .at(Stage::Split)?;
    let train = ds.select_rows(&split.train_indices);
    let test = ds.select_rows(&split.test_indices);
    info!(
        "split at dissimilarity {}: {} train / {} test",
        split.dissimilarity,
        train.n(),
        test.n()
    );

    let search_spec = FitSpec {
        method: config.method,
        n_components: match config.method {
            Method::Mlr => 0,
            _ => config
                .n_components
                .unwrap_or(SEARCH_COMPONENTS.min(config.max_components))
                .min(config.subset_size.min(train.m())),
        },
    };
    let (selected, sa_trace) = if train.m() > config.subset_size {
        let outcome = sa_select(&train, &search_spec, &config.sa_config()).at(Stage::Select)?;
        info!("selected {:?} (objective {:.4})", outcome.selected, outcome.objective);
        (outcome.selected, Some(outcome.trace))
    } else {
        info!("{} descriptors available, subset search skipped", train.m());
        (train.descriptor_names().to_vec(), None)
    };
    let train = train.select_named(&selected).at(Stage::Select)?;
    let test = test.select_named(&selected).at(Stage::Select)?;

    let spec = match (config.method, config.n_components) {
        (Method::Mlr, _) => FitSpec::mlr(),
        (method, Some(k)) => FitSpec {
            method,
            n_components: k,
        },
        (method, None) => FitSpec {
            method,
            n_components: select_components(&train, method, config.max_components).at(Stage::Fit)?,
        },
    };
    let model = spec.fit(&train).at(Stage::Fit)?;

    let test_opt = (test.n() > 0).then_some(&test);
    let (_, mut report) = validate_model(&train, test_opt, &spec, None).at(Stage::Validate)?;
    let contribs = contributions(&model, train.table()).at(Stage::Validate)?;

    if config.permutations > 0 {
        let rnd = randomization_test(&train, &spec, config.permutations, config.seed).at(Stage::Randomize)?;
        report.randomization = Some(rnd);
    }

    let ctx = ReportContext {
        config,
        config_hash: &config_hash,
        raw_shape: (raw.n(), raw.m()),
        preprocess: &pre_report,
        split: &split,
        model: &model,
        report: &report,
        contributions: &contribs,
    };
    let files = render_outputs(&ctx, &ds, &train, &test, sa_trace.as_ref()).at(Stage::Report)?;
    let written = write_outputs(&config.out_dir, &files).at(Stage::Report)?;

    Ok(PipelineOutcome {
        config_hash,
        preprocess: pre_report,
        split,
        selected,
        sa_trace,
        model,
        report,
        contributions: contribs,
        written,
    })
}

struct ReportContext<'a> {
    config: &'a PipelineConfig,
    config_hash: &'a str,
    raw_shape: (usize, usize),
    preprocess: &'a PreprocessReport,
    split: &'a SplitResult,
    model: &'a LinearModel,
    report: &'a ValidationReport,
    contributions: &'a [Contribution],
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Provenance lines shared by every report.
pub fn report_header(config_hash: &str) -> String {
    format!("# qsar {VERSION}\n# config sha256 {config_hash}\n")
}

fn timestamp_line() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# generated at unix time {secs}\n")
}

/// `descriptor,coefficient` equation text, e.g. `pIC50 = 1.2 - 0.3 x`.
pub fn equation(model: &LinearModel) -> String {
    let mut s = format!("pIC50 = {:.4}", model.intercept);
    for (name, b) in model.descriptor_names.iter().zip(&model.coefficients) {
        let sign = if *b < 0.0 { '-' } else { '+' };
        let _ = write!(s, " {sign} {} ({name})", format_coef(b.abs()));
    }
    s
}

fn format_coef(v: f64) -> String {
    if v != 0.0 && v < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

fn render_report_text(ctx: &ReportContext) -> String {
    let mut s = timestamp_line();
    s.push_str(&report_header(ctx.config_hash));
    let c = ctx.config;
    let _ = writeln!(s, "input: {}", c.input.display());
    let _ = writeln!(
        s,
        "activities: pIC50 = 6 - log10(IC50 / µM), read as {} from column '{}'",
        c.activity_kind, c.activity_column
    );
    let _ = writeln!(
        s,
        "molecules: {}, descriptors read: {}, after preprocessing: {}",
        ctx.raw_shape.0,
        ctx.raw_shape.1,
        ctx.preprocess.kept.len()
    );
    let _ = writeln!(
        s,
        "split: dissimilarity {:.6} (radius {:.6}), {} train / {} test",
        ctx.split.dissimilarity,
        ctx.split.radius_used,
        ctx.split.train_indices.len(),
        ctx.split.test_indices.len()
    );
    let m = ctx.model;
    let _ = writeln!(s, "method: {}, components: {}", m.method, m.n_components);
    let _ = writeln!(s, "descriptors: {}", m.descriptor_names.join(", "));
    let _ = writeln!(s, "equation: {}", equation(m));
    s.push_str("\ncontributions (%):\n");
    for ct in ctx.contributions {
        let _ = writeln!(s, "  {:<32}{:>8.2}", ct.descriptor, ct.percent);
    }
    s.push_str("\nstatistics:\n");
    s.push_str(&ctx.report.to_text());
    s
}

fn render_report_csv(ctx: &ReportContext) -> String {
    let mut s = report_header(ctx.config_hash);
    s.push_str(&ctx.report.to_csv());
    s
}

fn render_outputs(
    ctx: &ReportContext,
    ds: &Dataset,
    train: &Dataset,
    test: &Dataset,
    trace: Option<&SaTrace>,
) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let model = ctx.model;
    let x_all = ds.table().columns_by_name(&model.descriptor_names)?;
    let pred = model.predict_matrix(&x_all)?;
    let membership = ctx.split.membership(ds.n());
    let rows = residual_table(ds.y().as_slice(), pred.as_slice(), ds.ids(), &membership)?;
    debug_assert_eq!(train.n() + test.n(), ds.n());

    let mut predictions = Vec::new();
    write_prediction_rows(&rows, &mut predictions)?;

    let mut obs_vs_pred = String::from("molecule_id,observed,predicted,membership\n");
    for r in &rows {
        let _ = writeln!(
            obs_vs_pred,
            "{},{},{},{}",
            r.molecule_id,
            format_full(r.observed),
            format_full(r.predicted),
            r.membership
        );
    }

    let mut trace_csv = Vec::new();
    match trace {
        Some(t) => t.write_csv(&mut trace_csv)?,
        None => SaTrace::default().write_csv(&mut trace_csv)?,
    }

    let mut split_csv = Vec::new();
    ctx.split.write_csv(ds, &mut split_csv)?;

    let mut pre_text = report_header(ctx.config_hash);
    pre_text.push_str(&ctx.preprocess.to_text());

    Ok(vec![
        ("model.json", model.to_json()?.into_bytes()),
        ("report.txt", render_report_text(ctx).into_bytes()),
        ("report.csv", render_report_csv(ctx).into_bytes()),
        ("predictions.csv", predictions),
        ("obs_vs_pred.csv", obs_vs_pred.into_bytes()),
        ("sa_trace.csv", trace_csv),
        ("split.csv", split_csv),
        ("preprocess_report.txt", pre_text.into_bytes()),
    ])
}

fn write_outputs(dir: &Path, files: &[(&'static str, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| QsarError::io(dir, e))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(QsarError::io(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Number of planted informative descriptors in [`demo_dataset`].
pub const DEMO_INFORMATIVE: usize = 4;

/// Synthetic 28-molecule set with a planted linear signal on `d1..d4`,
/// eleven noise descriptors, one constant column and one near-duplicate of
/// `d1` for the preprocessing stage to remove.
pub fn demo_dataset(seed: u64) -> Dataset {
    let n = 28;
    let noise = 11;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DEMO_INFORMATIVE + noise;
    let base = DMatrix::from_fn(n, m, |_, _| round4(rng.random_range(-2.0..2.0)));
    let weights = [0.9, -0.7, 0.5, -0.4];
    let y = DVector::from_fn(n, |i, _| {
        let signal: f64 = (0..DEMO_INFORMATIVE).map(|j| weights[j] * base[(i, j)]).sum();
        round4(5.0 + signal + 0.1 * rng.random_range(-1.0..1.0))
    });
    let mut x = base.clone().insert_columns(m, 2, 0.0);
    for i in 0..n {
        x[(i, m)] = 1.0;
        x[(i, m + 1)] = round4(base[(i, 0)] * 1.01 + 0.001 * rng.random_range(-1.0..1.0));
    }
    let mut names: Vec<String> = (1..=m).map(|j| format!("d{j}")).collect();
    names.push("const".into());
    names.push("d1_dup".into());
    let ids = (1..=n).map(|i| format!("mol{i:02}")).collect();
    Dataset::new(ids, names, x, y, ActivityKind::Pic50).expect("demo dataset is well formed")
}

/// Four descriptors with `d4 = d1 + d2 - d3` exactly. Pairwise correlations
/// stay below the filter threshold, so the dependency survives preprocessing
/// and MLR fails at the fit stage.
pub fn rank_deficient_demo(seed: u64) -> Dataset {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, 4, |_, _| round4(rng.random_range(-2.0..2.0)));
    for i in 0..n {
        x[(i, 3)] = x[(i, 0)] + x[(i, 1)] - x[(i, 2)];
    }
    let y = DVector::from_fn(n, |i, _| {
        round4(5.0 + x[(i, 0)] - 0.5 * x[(i, 1)] + 0.1 * rng.random_range(-1.0..1.0))
    });
    let names = (1..=4).map(|j| format!("d{j}")).collect();
    let ids = (1..=n).map(|i| format!("mol{i:02}")).collect();
    Dataset::new(ids, names, x, y, ActivityKind::Pic50).expect("demo dataset is well formed")
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Seed used for the bundled `data/demo.csv`.
pub const DEMO_SEED: u64 = 2024;
/// Seed used for the bundled `data/rank_deficient.csv`.
pub const RANK_DEFICIENT_SEED: u64 = 7;
