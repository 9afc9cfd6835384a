//! Command-line front end: `simulate`, `estimate`, and `weights`.
//!
//! Flag resolution order is command-line flag, then config-file entry, then
//! (for the seed) the `CFB_SEED` environment variable, then the built-in
//! default. Every output file starts with `#`-prefixed comment lines echoing
//! the tool version and the fully resolved configuration; the data body
//! below them is byte-stable across reruns at any parallelism.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::balancing::BalanceCriterion;
use crate::data::{load_csv, ColumnKind, CsvSchema};
use crate::error::{CfbError, Result};
use crate::estimators::{Augmentation, Method};
use crate::pipeline::{Analysis, GridSpec, PipelineConfig};
use crate::simulation::{run_study, StudyPlan};

pub const SEED_ENV_VAR: &str = "CFB_SEED";

#[derive(Parser)]
#[command(
    name = "cfb",
    version,
    about = "Balancing-weight estimation of conditional treatment effect curves"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated synthetic study and write a metrics table.
    Simulate(SimulateArgs),
    /// Estimate an effect curve from a CSV data file.
    Estimate(EstimateArgs),
    /// Solve and export balancing weights with solver diagnostics.
    Weights(WeightsArgs),
}

#[derive(Args)]
struct CommonTuning {
    /// Optional key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Smoothing bandwidth in scaled units (default: reference rule).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Balance-term penalty level (default: log(N)-scaled rule).
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight-variability penalty level (default: log(N)-scaled rule).
    #[arg(long)]
    lambda2: Option<f64>,
    /// Quadrature points per conditioning dimension.
    #[arg(long)]
    q: Option<usize>,
    /// Relative eigenvalue truncation tolerance for the Gram factorization.
    #[arg(long)]
    tol_rel: Option<f64>,
    /// Cap on the retained Gram rank.
    #[arg(long)]
    r_max: Option<usize>,
    /// Subgradient iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial subgradient step size.
    #[arg(long)]
    step0: Option<f64>,
    /// Relative objective-improvement tolerance for the stall criterion.
    #[arg(long)]
    tol_obj: Option<f64>,
    /// Relative eigengap below which the top eigenvalue counts as tied.
    #[arg(long)]
    eig_tie_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate fan-out.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Comma-separated setting ids from 1..=4.
    #[arg(long)]
    setting: Option<String>,
    /// Sample size per replicate.
    #[arg(long)]
    n: Option<usize>,
    /// Number of replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods: proposed, ate-rkhs, ipw, reg.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated augmentations: none, lm, krr.
    #[arg(long)]
    augment: Option<String>,
    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-replicate curves CSV path.
    #[arg(long)]
    curves_out: Option<PathBuf>,
    /// Integration grid as min:max:points (default: per-replicate quantile rule).
    #[arg(long)]
    ise_grid: Option<String>,
    #[command(flatten)]
    tuning: CommonTuning,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Treatment column name (values in {0,1}).
    #[arg(long)]
    treatment: Option<String>,
    /// Outcome column name.
    #[arg(long)]
    outcome: Option<String>,
    /// Comma-separated conditioning column names (subset of covariates).
    #[arg(long)]
    v_cols: Option<String>,
    /// Comma-separated covariate column names, in model order.
    #[arg(long)]
    covariates: Option<String>,
    /// Comma-separated kinds per covariate: continuous or binary
    /// (default: columns with only 0/1 values are binary).
    #[arg(long)]
    kinds: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimator: proposed, ate-rkhs, ipw, reg.
    #[arg(long)]
    method: Option<String>,
    /// Augmentation: none, lm, krr.
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Curve CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: CommonTuning,
}

#[derive(Args)]
struct WeightsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Balance criterion: proposed or ate-rkhs.
    #[arg(long)]
    method: Option<String>,
    /// Weights CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: CommonTuning,
}

/// Key=value file entries; `#` lines and blanks are skipped.
struct ConfigFile {
    map: HashMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CfbError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CfbError::InvalidConfig(format!(
                        "config line {} is not key=value: `{line}`",
                        lineno + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { map })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }
}

/// Tracks the post-precedence value of every knob for the output header.
#[derive(Default)]
struct Resolved {
    entries: BTreeMap<String, String>,
}

impl Resolved {
    fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn header(&self, command: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cfb {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# command={command}");
        for (k, v) in &self.entries {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| CfbError::InvalidConfig(format!("cannot parse --{key} value `{raw}`")))
}

/// flag > config file > default.
fn resolve<T: std::str::FromStr + std::fmt::Display + Clone>(
    key: &str,
    flag: Option<T>,
    file: &ConfigFile,
    default: T,
    resolved: &mut Resolved,
) -> Result<T> {
    let value = match flag {
        Some(v) => v,
        None => match file.get(key) {
            Some(raw) => parse_as(key, raw)?,
            None => default,
        },
    };
    resolved.record(key, &value);
    Ok(value)
}

/// Same as [`resolve`] but without a default; absent stays absent.
fn resolve_opt<T: std::str::FromStr + std::fmt::Display + Clone>(
    key: &str,
    flag: Option<T>,
    file: &ConfigFile,
    resolved: &mut Resolved,
) -> Result<Option<T>> {
    let value = match flag {
        Some(v) => Some(v),
        None => match file.get(key) {
            Some(raw) => Some(parse_as(key, raw)?),
            None => None,
        },
    };
    match &value {
        Some(v) => resolved.record(key, v),
        None => resolved.record(key, "auto"),
    }
    Ok(value)
}

fn resolve_seed(
    flag: Option<u64>,
    file: &ConfigFile,
    resolved: &mut Resolved,
) -> Result<u64> {
    let value = match flag {
        Some(v) => v,
        None => match file.get("seed") {
            Some(raw) => parse_as("seed", raw)?,
            None => match std::env::var(SEED_ENV_VAR) {
                Ok(raw) => parse_as("seed", &raw)?,
                Err(_) => 0,
            },
        },
    };
    resolved.record("seed", value);
    Ok(value)
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
}

fn resolve_tuning(
    tuning: &CommonTuning,
    file: &ConfigFile,
    resolved: &mut Resolved,
) -> Result<(PipelineConfig, u64, usize)> {
    let mut config = PipelineConfig::default();
    config.bandwidth = resolve_opt("bandwidth", tuning.bandwidth, file, resolved)?;
    config.lambda1 = resolve_opt("lambda1", tuning.lambda1, file, resolved)?;
    config.lambda2 = resolve_opt("lambda2", tuning.lambda2, file, resolved)?;
    config.quadrature_points = resolve("q", tuning.q, file, config.quadrature_points, resolved)?;
    config.tol_rel = resolve("tol_rel", tuning.tol_rel, file, config.tol_rel, resolved)?;
    config.r_max = resolve_opt("r_max", tuning.r_max, file, resolved)?;
    config.max_iters = resolve("max_iters", tuning.max_iters, file, config.max_iters, resolved)?;
    config.step0 = resolve("step0", tuning.step0, file, config.step0, resolved)?;
    config.tol_obj = resolve("tol_obj", tuning.tol_obj, file, config.tol_obj, resolved)?;
    config.eig_tie_tol = resolve(
        "eig_tie_tol",
        tuning.eig_tie_tol,
        file,
        config.eig_tie_tol,
        resolved,
    )?;
    let seed = resolve_seed(tuning.seed, file, resolved)?;
    let parallelism = resolve(
        "parallelism",
        tuning.parallelism,
        file,
        default_parallelism(),
        resolved,
    )?;
    Ok((config, seed, parallelism))
}

fn split_list(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_methods(raw: &str) -> Result<Vec<Method>> {
    split_list(raw).iter().map(|s| Method::parse(s)).collect()
}

fn parse_augmentations(raw: &str) -> Result<Vec<Augmentation>> {
    split_list(raw)
        .iter()
        .map(|s| Augmentation::parse(s))
        .collect()
}

fn parse_settings(raw: &str) -> Result<Vec<u8>> {
    split_list(raw)
        .iter()
        .map(|s| parse_as::<u8>("setting", s))
        .collect()
}

fn parse_kinds(raw: &str) -> Result<Vec<ColumnKind>> {
    split_list(raw)
        .iter()
        .map(|s| match s.as_str() {
            "continuous" => Ok(ColumnKind::Continuous),
            "binary" => Ok(ColumnKind::Binary),
            other => Err(CfbError::InvalidConfig(format!(
                "unknown column kind `{other}` in --kinds (expected continuous or binary)"
            ))),
        })
        .collect()
}

fn parse_ise_grid(raw: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(CfbError::InvalidConfig(format!(
            "--ise-grid expects min:max:points, got `{raw}`"
        )));
    }
    Ok(GridSpec::Explicit {
        min: parse_as("ise-grid", parts[0])?,
        max: parse_as("ise-grid", parts[1])?,
        points: parse_as("ise-grid", parts[2])?,
    })
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| CfbError::InvalidConfig(format!("missing required flag --{flag}")))
}

fn write_output(path: &Path, header: &str, body: &str) -> Result<()> {
    let mut contents = String::with_capacity(header.len() + body.len());
    contents.push_str(header);
    contents.push_str(body);
    std::fs::write(path, contents).map_err(|e| CfbError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn float_cell(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let file = ConfigFile::load(args.tuning.config.as_deref())?;
    let mut resolved = Resolved::default();
    let (pipeline, seed, parallelism) = resolve_tuning(&args.tuning, &file, &mut resolved)?;

    let settings_raw = resolve(
        "setting",
        args.setting.clone(),
        &file,
        "1".to_string(),
        &mut resolved,
    )?;
    let n = resolve("n", args.n, &file, 100usize, &mut resolved)?;
    let reps = resolve("reps", args.reps, &file, 100usize, &mut resolved)?;
    let methods_raw = resolve(
        "methods",
        args.methods.clone(),
        &file,
        "proposed".to_string(),
        &mut resolved,
    )?;
    let augment_raw = resolve(
        "augment",
        args.augment.clone(),
        &file,
        "none".to_string(),
        &mut resolved,
    )?;
    let ise_grid_raw = resolve_opt("ise_grid", args.ise_grid.clone(), &file, &mut resolved)?;
    let out = require(
        args.out
            .clone()
            .or_else(|| file.get("out").map(PathBuf::from)),
        "out",
    )?;
    resolved.record("out", out.display());
    let curves_out = args
        .curves_out
        .clone()
        .or_else(|| file.get("curves_out").map(PathBuf::from));
    if let Some(p) = &curves_out {
        resolved.record("curves_out", p.display());
    }

    let plan = StudyPlan {
        settings: parse_settings(&settings_raw)?,
        methods: parse_methods(&methods_raw)?,
        augmentations: parse_augmentations(&augment_raw)?,
        n,
        n_reps: reps,
        seed,
        parallelism,
        pipeline,
        ise_grid: match &ise_grid_raw {
            Some(raw) => parse_ise_grid(raw)?,
            None => GridSpec::default(),
        },
        keep_curves: curves_out.is_some(),
    };
    plan.validate()?;

    let output = run_study(&plan)?;
    for failure in &output.failures {
        eprintln!("warning: {failure}");
    }

    let mut body = String::from("setting,method,augmentation,aise,aise_se,meise,n_reps,n_effective\n");
    for row in &output.rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{}",
            row.setting,
            row.method.as_str(),
            row.augmentation.as_str(),
            float_cell(row.aise),
            float_cell(row.aise_se),
            float_cell(row.meise),
            row.n_reps,
            row.n_effective
        );
    }
    write_output(&out, &resolved.header("simulate"), &body)?;

    if let Some(curves_path) = &curves_out {
        let mut body = String::from("setting,replicate,method,augmentation,v,estimate\n");
        for record in &output.curves {
            for (v, est) in record.grid.iter().zip(&record.estimate) {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    record.setting,
                    record.replicate,
                    record.method.as_str(),
                    record.augmentation.as_str(),
                    float_cell(*v),
                    float_cell(*est)
                );
            }
        }
        write_output(curves_path, &resolved.header("simulate"), &body)?;
    }
    Ok(())
}

fn resolve_data(
    args: &DataArgs,
    file: &ConfigFile,
    resolved: &mut Resolved,
) -> Result<(PathBuf, CsvSchema)> {
    let data = require(
        args.data
            .clone()
            .or_else(|| file.get("data").map(PathBuf::from)),
        "data",
    )?;
    resolved.record("data", data.display());
    let treatment = require(
        args.treatment
            .clone()
            .or_else(|| file.get("treatment").map(String::from)),
        "treatment",
    )?;
    resolved.record("treatment", &treatment);
    let outcome = require(
        args.outcome
            .clone()
            .or_else(|| file.get("outcome").map(String::from)),
        "outcome",
    )?;
    resolved.record("outcome", &outcome);
    let v_cols_raw = require(
        args.v_cols
            .clone()
            .or_else(|| file.get("v_cols").map(String::from)),
        "v-cols",
    )?;
    resolved.record("v_cols", &v_cols_raw);
    let covariates_raw = require(
        args.covariates
            .clone()
            .or_else(|| file.get("covariates").map(String::from)),
        "covariates",
    )?;
    resolved.record("covariates", &covariates_raw);
    let kinds_raw = args
        .kinds
        .clone()
        .or_else(|| file.get("kinds").map(String::from));
    resolved.record("kinds", kinds_raw.as_deref().unwrap_or("auto"));

    let schema = CsvSchema {
        treatment_col: treatment,
        outcome_col: outcome,
        v_cols: split_list(&v_cols_raw),
        covariate_cols: split_list(&covariates_raw),
        kinds: match kinds_raw {
            Some(raw) => Some(parse_kinds(&raw)?),
            None => None,
        },
    };
    Ok((data, schema))
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let file = ConfigFile::load(args.tuning.config.as_deref())?;
    let mut resolved = Resolved::default();
    let (pipeline, _seed, _parallelism) = resolve_tuning(&args.tuning, &file, &mut resolved)?;
    let (data_path, schema) = resolve_data(&args.data, &file, &mut resolved)?;

    let method_raw = resolve(
        "method",
        args.method.clone(),
        &file,
        "proposed".to_string(),
        &mut resolved,
    )?;
    let augment_raw = resolve(
        "augment",
        args.augment.clone(),
        &file,
        "none".to_string(),
        &mut resolved,
    )?;
    let grid_min = resolve_opt("grid_min", args.grid_min, &file, &mut resolved)?;
    let grid_max = resolve_opt("grid_max", args.grid_max, &file, &mut resolved)?;
    let grid_points = resolve("grid_points", args.grid_points, &file, 100usize, &mut resolved)?;
    let out = require(
        args.out
            .clone()
            .or_else(|| file.get("out").map(PathBuf::from)),
        "out",
    )?;
    resolved.record("out", out.display());

    let method = Method::parse(&method_raw)?;
    let augmentation = Augmentation::parse(&augment_raw)?;
    let grid_spec = match (grid_min, grid_max) {
        (Some(min), Some(max)) => GridSpec::Explicit {
            min,
            max,
            points: grid_points,
        },
        (None, None) => GridSpec::Quantiles {
            points: grid_points,
        },
        _ => {
            return Err(CfbError::InvalidConfig(
                "--grid-min and --grid-max must be given together".into(),
            ))
        }
    };

    let ds = load_csv(&data_path, &schema)?;
    let mut analysis = Analysis::new(&ds, pipeline)?;
    let grid = analysis.grid(grid_spec)?;
    let output = analysis.curve(method, augmentation, &grid)?;
    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!(
        "# bandwidth={} rank={}",
        analysis.bandwidth(),
        analysis.factorization().rank()
    );

    let mut body = String::from("v,estimate\n");
    for (v, est) in output.curve.grid.iter().zip(&output.curve.estimate) {
        let _ = writeln!(body, "{},{}", float_cell(*v), float_cell(*est));
    }
    write_output(&out, &resolved.header("estimate"), &body)
}

fn run_weights(args: &WeightsArgs) -> Result<()> {
    let file = ConfigFile::load(args.tuning.config.as_deref())?;
    let mut resolved = Resolved::default();
    let (pipeline, _seed, _parallelism) = resolve_tuning(&args.tuning, &file, &mut resolved)?;
    let (data_path, schema) = resolve_data(&args.data, &file, &mut resolved)?;
    let method_raw = resolve(
        "method",
        args.method.clone(),
        &file,
        "proposed".to_string(),
        &mut resolved,
    )?;
    let out = require(
        args.out
            .clone()
            .or_else(|| file.get("out").map(PathBuf::from)),
        "out",
    )?;
    resolved.record("out", out.display());

    let criterion = match Method::parse(&method_raw)? {
        Method::Proposed => BalanceCriterion::Smoothed,
        Method::AteRkhs => BalanceCriterion::MarginalLimit,
        other => {
            return Err(CfbError::InvalidConfig(format!(
                "--method {} does not produce balancing weights",
                other.as_str()
            )))
        }
    };

    let ds = load_csv(&data_path, &schema)?;
    let mut analysis = Analysis::new(&ds, pipeline)?;
    let (wt, wc) = analysis.weights(criterion)?;

    for (arm, solved) in [("treated", &wt), ("control", &wc)] {
        let best = solved
            .objective_trace
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        eprintln!(
            "# arm={arm} iterations={} converged={} objective={} eigengap={}",
            solved.iterations, solved.converged, best, solved.final_eigengap
        );
    }

    let mut body = String::from("index,arm,weight\n");
    for i in 0..ds.n() {
        let (arm, weight) = if ds.is_treated(i) {
            ("treated", wt.w[i])
        } else {
            ("control", wc.w[i])
        };
        let _ = writeln!(body, "{i},{arm},{}", float_cell(weight));
    }
    write_output(&out, &resolved.header("weights"), &body)
}

fn exit_code_for(err: &CfbError) -> i32 {
    match err {
        CfbError::InvalidConfig(_)
        | CfbError::MissingColumn(_)
        | CfbError::NonBinaryTreatment { .. }
        | CfbError::MissingValue { .. }
        | CfbError::MalformedNumber { .. }
        | CfbError::ConstantColumn(_)
        | CfbError::InvalidDataset(_)
        | CfbError::Io { .. }
        | CfbError::Csv { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the selected command, returning the process exit
/// code: 0 success, 1 runtime failure, 2 usage or config error.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports usage problems with exit code 2 and help/version
            // requests with 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Weights(args) => run_weights(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
