use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use qsar_core::data::{load_dataset, load_descriptor_table, ActivityKind, Dataset};
use qsar_core::pipeline::{report_header, sha256_hex};
use qsar_core::preprocess::{DEFAULT_CONSTANT_TOLERANCE, DEFAULT_CORRELATION_THRESHOLD};
use qsar_core::regress::select_components;
use qsar_core::validate::contributions;
use qsar_core::{
    audit_reference_tables, calibrate_dissimilarity, load_fixture, predict, preprocess, randomization_test,
    run_pipeline, sa_select, sphere_exclusion_split, validate_model, FitSpec, Fitter, LinearModel, Method,
    PipelineConfig, PipelineError, PreprocessConfig, QsarError, SaConfig, SeedRule,
};

const OUT_DIR_ENV: &str = "QSAR_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "qsar",
    version,
    about = "Build and validate MLR/PCR/PLS QSAR models from descriptor tables"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drop constant and cross-correlated descriptors.
    Preprocess(PreprocessArgs),
    /// Sphere-exclusion train/test split.
    Split(SplitArgs),
    /// Fit a model, optionally after annealing-based descriptor selection.
    Train(TrainArgs),
    /// Internal (LOO) and external statistics for a saved model.
    Validate(ValidateArgs),
    /// Y-scrambling test for a saved model.
    Randomize(RandomizeArgs),
    /// Predict activities with a saved or bundled model.
    Predict(PredictArgs),
    /// Recompute the arithmetic of the bundled reference tables.
    Audit(OutArgs),
    /// Run every stage from one configuration.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    #[arg(long, env = OUT_DIR_ENV, default_value = "qsar_out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "pIC50")]
    activity_col: String,
    /// pic50 or ic50_micromolar.
    #[arg(long, default_value = "pic50")]
    activity_kind: ActivityKind,
}

impl DataArgs {
    fn load(&self) -> qsar_core::Result<Dataset> {
        load_dataset(&self.input, &self.activity_col, self.activity_kind)
    }
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_CONSTANT_TOLERANCE)]
    constant_tol: f64,
    #[arg(long, default_value_t = DEFAULT_CORRELATION_THRESHOLD)]
    corr_threshold: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "target_test")]
    dissimilarity: Option<f64>,
    /// Calibrate the dissimilarity to reach this many test molecules.
    #[arg(long)]
    target_test: Option<usize>,
    /// max_activity or first.
    #[arg(long, default_value = "max_activity")]
    seed_rule: SeedRule,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "pls")]
    method: Method,
    /// PCR/PLS components; chosen by LOO q² when omitted.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, default_value_t = 5)]
    max_components: usize,
    /// Select this many descriptors by simulated annealing first.
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training set the model was fitted on.
    #[command(flatten)]
    data: DataArgs,
    /// External test set.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Also run a randomization test with this many permutations.
    #[arg(long, default_value_t = 0)]
    permutations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct RandomizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = qsar_core::validate::DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false, args = ["fixture", "model"])]
struct PredictArgs {
    /// PLS-Eq5, MLR-Eq6 or PCR-Eq7.
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Descriptor table: id column, then descriptor columns.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    activity_col: Option<String>,
    #[arg(long)]
    activity_kind: Option<ActivityKind>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, conflicts_with = "target_test")]
    dissimilarity: Option<f64>,
    #[arg(long)]
    target_test: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Cause chain joined with ": ", skipping causes the previous message already quotes.
fn error_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.exit_code() as u8;
        }
        if let Some(q) = cause.downcast_ref::<QsarError>() {
            return q.exit_code() as u8;
        }
    }
    1
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Randomize(a) => cmd_randomize(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Run(a) => cmd_run(a),
    }
}

/// Hash of the parsed arguments with the output directory left out.
fn args_hash(args: &impl std::fmt::Debug, out_dir: &Path) -> String {
    let text = format!("{args:?}").replace(&format!("{out_dir:?}"), "\"\"");
    sha256_hex(&text)
}

fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn cmd_preprocess(a: PreprocessArgs) -> anyhow::Result<()> {
    let ds = a.data.load()?;
    let cfg = PreprocessConfig {
        constant_tolerance: a.constant_tol,
        correlation_threshold: a.corr_threshold,
    };
    let (clean, report) = preprocess(&ds, &cfg)?;
    let mut csv = Vec::new();
    clean.write_csv(&mut csv)?;
    let dir = &a.out.out_dir;
    let mut text = report_header(&args_hash(&a, dir));
    text.push_str(&report.to_text());
    print!("{}", report.to_text());
    write_out(dir, "preprocessed.csv", csv)?;
    write_out(dir, "preprocess_report.txt", text)?;
    Ok(())
}

fn cmd_split(a: SplitArgs) -> anyhow::Result<()> {
    let ds = a.data.load()?;
    let split = match (a.dissimilarity, a.target_test) {
        (Some(d), _) => sphere_exclusion_split(&ds, d, a.seed_rule)?,
        (None, Some(t)) => calibrate_dissimilarity(&ds, t, a.seed_rule)?.split,
        (None, None) => bail!(QsarError::Config("give --dissimilarity or --target-test".into())),
    };
    println!(
        "dissimilarity {} (radius {}): {} train / {} test",
        split.dissimilarity,
        split.radius_used,
        split.train_indices.len(),
        split.test_indices.len()
    );
    let (train_range, test_range) = split.activity_ranges(&ds);
    for (label, r) in [("train", train_range), ("test", test_range)] {
        if let Some(r) = r {
            println!("{label} activity range {:.4} .. {:.4}", r.min, r.max);
        }
    }
    let mut split_csv = Vec::new();
    split.write_csv(&ds, &mut split_csv)?;
    let mut train = Vec::new();
    ds.select_rows(&split.train_indices).write_csv(&mut train)?;
    let mut test = Vec::new();
    ds.select_rows(&split.test_indices).write_csv(&mut test)?;
    let dir = &a.out.out_dir;
    write_out(dir, "split.csv", split_csv)?;
    write_out(dir, "train.csv", train)?;
    write_out(dir, "test.csv", test)?;
    Ok(())
}

fn component_spec(ds: &Dataset, method: Method, components: Option<usize>, max: usize) -> qsar_core::Result<FitSpec> {
    Ok(match (method, components) {
        (Method::Mlr, _) => FitSpec::mlr(),
        (method, Some(k)) => FitSpec {
            method,
            n_components: k,
        },
        (method, None) => FitSpec {
            method,
            n_components: select_components(ds, method, max)?,
        },
    })
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut ds = a.data.load()?;
    if let Some(k) = a.subset_size {
        let search = FitSpec {
            method: a.method,
            n_components: match a.method {
                Method::Mlr => 0,
                _ => a.components.unwrap_or(qsar_core::pipeline::SEARCH_COMPONENTS).min(k),
            },
        };
        let cfg = SaConfig {
            subset_size: k,
            seed: a.seed,
            ..SaConfig::default()
        };
        let outcome = sa_select(&ds, &search, &cfg)?;
        info!("annealing objective {:.4}", outcome.objective);
        println!("selected: {}", outcome.selected.join(", "));
        ds = ds.select_named(&outcome.selected)?;
    }
    let spec = component_spec(&ds, a.method, a.components, a.max_components)?;
    let model = spec.fit(&ds)?;
    println!("{}", qsar_core::pipeline::equation(&model));
    if let Some(fit) = &model.train_fit {
        println!("r² {:.4}, DF {}", fit.r2, fit.df);
    }
    write_out(&a.out.out_dir, "model.json", model.to_json()?)?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<LinearModel> {
    let text = fs::read_to_string(path).map_err(|e| QsarError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(LinearModel::from_json(&text)?)
}

fn spec_of(model: &LinearModel) -> FitSpec {
    FitSpec {
        method: model.method,
        n_components: model.n_components,
    }
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let train = a.data.load()?.select_named(&model.descriptor_names)?;
    let test = match &a.test {
        Some(p) => {
            Some(load_dataset(p, &a.data.activity_col, a.data.activity_kind)?.select_named(&model.descriptor_names)?)
        }
        None => None,
    };
    let rnd = (a.permutations > 0).then_some((a.permutations, a.seed));
    let (refit, report) = validate_model(&train, test.as_ref(), &spec_of(&model), rnd)?;
    let mut text = report_header(&args_hash(&a, &a.out.out_dir));
    text.push_str(&report.to_text());
    text.push_str("contributions (%):\n");
    for c in contributions(&refit, train.table())? {
        let _ = writeln!(text, "  {:<32}{:>8.2}", c.descriptor, c.percent);
    }
    print!("{}", report.to_text());
    let mut csv = report_header(&args_hash(&a, &a.out.out_dir));
    csv.push_str(&report.to_csv());
    write_out(&a.out.out_dir, "report.txt", text)?;
    write_out(&a.out.out_dir, "report.csv", csv)?;
    Ok(())
}

fn cmd_randomize(a: RandomizeArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let train = a.data.load()?.select_named(&model.descriptor_names)?;
    let r = randomization_test(&train, &spec_of(&model), a.permutations, a.seed)?;
    let mut csv = report_header(&args_hash(&a, &a.out.out_dir));
    csv.push_str("permutation,r2,q2\n");
    for (i, (r2, q2)) in r.permuted_r2.iter().zip(&r.permuted_q2).enumerate() {
        let _ = writeln!(csv, "{},{},{}", i + 1, r2, q2);
    }
    println!("true r² {:.4}, q² {:.4}", r.true_r2, r.true_q2);
    println!("best_ran_r² {:.5}, best_ran_q² {:.5}", r.best_ran_r2, r.best_ran_q2);
    println!(
        "Zscore_ran_r² {:.5} (α {:.5}, {})",
        r.z_r2, r.alpha_r2.tail, r.alpha_r2.bound
    );
    println!(
        "Zscore_ran_q² {:.5} (α {:.5}, {})",
        r.z_q2, r.alpha_q2.tail, r.alpha_q2.bound
    );
    if r.n_failed > 0 {
        println!("{} permuted fits failed and were excluded", r.n_failed);
    }
    write_out(&a.out.out_dir, "randomization.csv", csv)?;
    write_out(&a.out.out_dir, "randomization.json", serde_json::to_string_pretty(&r)?)?;
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let model = match (&a.fixture, &a.model) {
        (Some(label), _) => load_fixture(label)?.model,
        (None, Some(p)) => load_model(p)?,
        (None, None) => unreachable!("clap enforces one model source"),
    };
    let table = load_descriptor_table(&a.input)?;
    let pred = predict(&model, &table)?;
    let mut out = String::from("id");
    for n in table.names() {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",predicted_pIC50\n");
    for (i, id) in table.ids().iter().enumerate() {
        out.push_str(id);
        for j in 0..table.m() {
            let _ = write!(out, ",{}", table.x()[(i, j)]);
        }
        let _ = writeln!(out, ",{}", pred[i]);
    }
    write_out(&a.out.out_dir, "predicted.csv", out)?;
    Ok(())
}

fn cmd_audit(a: OutArgs) -> anyhow::Result<()> {
    let report = audit_reference_tables();
    print!("{}", report.to_text());
    write_out(&a.out_dir, "audit.csv", report.to_csv())?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> anyhow::Result<()> {
    let mut cfg = match (&a.config, &a.input) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(input)) => PipelineConfig::new(input),
        (None, None) => bail!(QsarError::Config("give --config or --input".into())),
    };
    if let Some(v) = a.input {
        cfg.input = v;
    }
    if let Some(v) = a.activity_col {
        cfg.activity_column = v;
    }
    if let Some(v) = a.activity_kind {
        cfg.activity_kind = v;
    }
    if let Some(v) = a.method {
        cfg.method = v;
    }
    if let Some(v) = a.components {
        cfg.n_components = Some(v);
    }
    if let Some(v) = a.subset_size {
        cfg.subset_size = v;
    }
    if let Some(v) = a.dissimilarity {
        cfg.dissimilarity = Some(v);
        cfg.target_test_size = None;
    }
    if let Some(v) = a.target_test {
        cfg.target_test_size = Some(v);
        cfg.dissimilarity = None;
    }
    if let Some(v) = a.permutations {
        cfg.permutations = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.out_dir {
        cfg.out_dir = v;
    }
    let outcome = run_pipeline(&cfg)?;
    println!("{}", qsar_core::pipeline::equation(&outcome.model));
    print!("{}", outcome.report.to_text());
    for p in &outcome.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
