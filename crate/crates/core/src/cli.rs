//! The `ecoinf` command-line tool.
//!
//! Exit codes: 0 success, 2 invalid input or failed computation, 3 the fit
//! diverged, 64 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{self, split_dev, split_indices, LabeledDataset};
use crate::diagnostics::{self, SearchMode, SeparationOutcome, DEFAULT_SEPARATION_CAP};
use crate::error::{Error, Result};
use crate::evaluate::{self, format_auc};
use crate::likelihood::{DEFAULT_ENUMERATION_CAP, DEFAULT_PHI2_FLOOR};
use crate::model_io::{Model, ModelFile};
use crate::neuralnet::{fit_neural, NeuralFitConfig};
use crate::optimize::{self, FitConfig, FitReport, Method, ObjectiveKind};
use crate::simulate::{self, BetaSpec, CovariateScheme, SimConfig, VoterCount};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Offset added to `--seed` for the holdout split shared by `fit` and `evaluate`.
const HOLDOUT_SEED_OFFSET: u64 = 2;
/// Offset added to `--seed` for the neural development split.
const DEV_SEED_OFFSET: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "ecoinf", version, about = "Individual-level models fit from aggregate counts")]
#[command(args_override_self = true)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of `key = value` lines supplying defaults for long flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an election with known coefficients.
    Simulate(SimulateArgs),
    /// Fit a model from voter covariates and precinct counts.
    Fit(FitArgs),
    /// Write per-voter probabilities.
    Predict(PredictArgs),
    /// Score a model against individual labels.
    Evaluate(EvaluateArgs),
    /// Separation and curvature diagnostics.
    Diagnose {
        #[command(subcommand)]
        which: Diagnose,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scheme {
    Iid,
    Shifted,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    precincts: u64,
    /// Voters per precinct, `N` or `MIN-MAX`.
    #[arg(long, default_value = "100", value_parser = parse_voter_count)]
    voters: VoterCount,
    /// Covariates per voter, intercept excluded.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    covariates: u64,
    /// True coefficients, intercept first (default: uniform on [-1, 1]).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Scheme::Shifted)]
    scheme: Scheme,
    /// Precinct shift scale, one value or one per covariate.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    shift_scale: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum FitMethod {
    Gauss,
    GaussBt,
    GaussBtExact,
    Neural,
    AggregateLr,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: FitMethod,
    #[arg(long)]
    voters: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Fit report to write (default: `<out>.report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total iterations of the logit schedules.
    #[arg(long, default_value_t = 120)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    iters_phase1: usize,
    #[arg(long, default_value_t = 10)]
    iters_phase3: usize,
    /// Step size (default 2e-5, or 2e-6 for neural).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PHI2_FLOOR)]
    phi2_floor: f64,
    #[arg(long, default_value_t = 10)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,100,150,200")]
    checkpoints: Vec<usize>,
    /// Precincts held out for neural checkpoint selection.
    #[arg(long, default_value_t = 40)]
    dev_precincts: usize,
    /// Precincts excluded from training; `evaluate` with the same seed and
    /// count scores only these.
    #[arg(long)]
    holdout_precincts: Option<usize>,
    /// Keep covariates on their raw scale.
    #[arg(long)]
    no_standardize: bool,
    /// Record the training time in the model file.
    #[arg(long)]
    stamp: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    voters: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    voters: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score only the precincts that `fit --holdout-precincts` left out.
    #[arg(long)]
    holdout_precincts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Diagnose {
    /// Search for a separation certificate.
    Separation(SeparationArgs),
    /// Eigenvalues of the exact Hessian.
    Hessian(HessianArgs),
    /// Curvature at the true coefficients as the precinct count grows.
    Concavity(ConcavityArgs),
}

#[derive(Debug, Args)]
struct SeparationArgs {
    #[arg(long)]
    voters: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    /// Largest number of subset combinations searched exhaustively.
    #[arg(long, default_value_t = DEFAULT_SEPARATION_CAP)]
    cap: f64,
    /// Fall back to direction ranking above the cap.
    #[arg(long)]
    heuristic: bool,
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct HessianArgs {
    #[arg(long)]
    voters: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    /// Coefficients on the raw design, intercept first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "model", required_unless_present = "model")]
    beta: Option<Vec<f64>>,
    /// Logit model file; its standardization is replayed.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ConcavityArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,50,200,500")]
    ns: Vec<usize>,
    #[arg(long, default_value = "4-10", value_parser = parse_voter_count)]
    voters: VoterCount,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    covariates: u64,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    shift_scale: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    /// CSV destination (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_voter_count(s: &str) -> std::result::Result<VoterCount, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{s}` is not N or MIN-MAX"));
    let count = match s.split_once('-') {
        Some((a, b)) => VoterCount::Range { min: num(a)?, max: num(b)? },
        None => VoterCount::Fixed(num(s)?),
    };
    match count {
        VoterCount::Fixed(0) => Err("precincts need at least one voter".into()),
        VoterCount::Range { min, max } if min == 0 || min > max => Err(format!("invalid range `{s}`")),
        c => Ok(c),
    }
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Turns the `key = value` lines of a config file into long flags.
fn config_flags(path: &Path) -> std::result::Result<Vec<OsString>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Lib(Error::io(path, e)))?;
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!(
                "{} line {}: expected `key = value`",
                path.display(),
                i + 1
            )));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        match value {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            v => {
                flags.push(format!("--{key}").into());
                flags.push(v.into());
            }
        }
    }
    Ok(flags)
}

const SUBCOMMANDS: [&str; 5] = ["simulate", "fit", "predict", "evaluate", "diagnose"];

/// Inserts config-file flags right after the command path so that explicit
/// flags, which come later, win.
fn with_config(args: Vec<OsString>, cli: &Cli) -> std::result::Result<Vec<OsString>, Failure> {
    let Some(path) = &cli.config else {
        return Ok(args);
    };
    let flags = config_flags(path)?;
    let mut at = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
        .map_or(args.len(), |i| i + 1);
    if matches!(cli.command, Command::Diagnose { .. }) {
        at += 1;
    }
    let mut out = args[..at.min(args.len())].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[at.min(args.len())..]);
    Ok(out)
}

fn parse(args: Vec<OsString>) -> std::result::Result<Cli, i32> {
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            EXIT_USAGE
        } else {
            EXIT_OK
        }
    })
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString>>) -> i32 {
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(args.clone()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let cli = match with_config(args, &cli) {
        Ok(a) if cli.config.is_some() => match parse(a) {
            Ok(c) => c,
            Err(code) => return code,
        },
        Ok(_) => cli,
        Err(f) => return report_failure(f),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return report_failure(Failure::Usage(format!("cannot start thread pool: {e}"))),
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> i32 {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Failure::Lib(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn dispatch(cmd: Command) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Diagnose { which } => match which {
            Diagnose::Separation(a) => separation_cmd(a),
            Diagnose::Hessian(a) => hessian_cmd(a),
            Diagnose::Concavity(a) => concavity_cmd(a),
        },
    }
    .map_err(Failure::from)
}

fn simulate_cmd(a: SimulateArgs) -> Result<i32> {
    let cfg = SimConfig {
        n_precincts: a.precincts as usize,
        voters_per_precinct: a.voters,
        p: a.covariates as usize,
        beta_true: a.beta.map_or(BetaSpec::Random, BetaSpec::Given),
        covariate_scheme: match a.scheme {
            Scheme::Iid => CovariateScheme::IidNormal,
            Scheme::Shifted => CovariateScheme::PrecinctShiftedNormal,
        },
        precinct_shift_scale: a.shift_scale,
        seed: a.seed,
    };
    let sim = simulate::simulate(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    simulate::write_simulation(&sim, &cfg, &a.out)?;
    println!(
        "wrote {} precincts, {} voters to {}",
        sim.data.data().len(),
        sim.data.data().n_voters(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn default_report_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".report.json");
    out.with_file_name(name)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn kind_label(kind: ObjectiveKind) -> &'static str {
    match kind {
        ObjectiveKind::Approx => "gaussian approximation",
        ObjectiveKind::Exact => "exact log-likelihood",
        ObjectiveKind::Surrogate => "aggregate surrogate",
    }
}

fn fit_cmd(a: FitArgs) -> Result<i32> {
    let started = Instant::now();
    let mut data = data::load_dataset(&a.voters, &a.counts, !a.no_standardize)?;
    if let Some(k) = a.holdout_precincts {
        let (train, _) = split_indices(data.len(), k, a.seed.wrapping_add(HOLDOUT_SEED_OFFSET))?;
        data = data.subset(&train);
    }
    let names = data.feature_names().to_vec();
    let std = data.standardization().clone();
    let (mut file, mut report): (ModelFile, FitReport) = if a.method == FitMethod::Neural {
        let cfg = NeuralFitConfig {
            hidden: a.hidden,
            lr: a.lr.unwrap_or(2e-6),
            restarts: a.restarts,
            checkpoints: a.checkpoints,
            seed: a.seed,
            phi2_floor: a.phi2_floor,
        };
        let (train, dev) = split_dev(&data, a.dev_precincts, a.seed.wrapping_add(DEV_SEED_OFFSET))?;
        let (model, report) = fit_neural(&train, &dev, &cfg)?;
        (ModelFile::neural(&model, &names, &std, serde_json::to_value(&cfg)?), report)
    } else {
        let method = match a.method {
            FitMethod::Gauss => Method::Gauss,
            FitMethod::GaussBt => Method::GaussBt,
            FitMethod::GaussBtExact => Method::GaussBtExact,
            FitMethod::AggregateLr => Method::AggregateLr,
            FitMethod::Neural => unreachable!(),
        };
        let cfg = FitConfig {
            method,
            iters_total: a.iters,
            iters_phase1: a.iters_phase1,
            iters_phase3: a.iters_phase3,
            lr: a.lr.unwrap_or(2e-5),
            phi2_floor: a.phi2_floor,
            seed: a.seed,
            ..FitConfig::default()
        };
        let (model, report) = optimize::fit(&data, &cfg)?;
        (
            ModelFile::logit(method.name(), &model, &names, &std, serde_json::to_value(&cfg)?),
            report,
        )
    };
    if a.stamp {
        file.set_trained_at(Some(chrono::Utc::now().to_rfc3339()));
    }
    report.wall_time = started.elapsed();
    file.save(&a.out)?;
    write_json(&a.report.clone().unwrap_or_else(|| default_report_path(&a.out)), &report)?;
    match report.final_objective {
        Some(v) => println!("final objective ({}): {v:.6}", kind_label(report.final_objective_kind)),
        None => println!("final objective ({}): unavailable", kind_label(report.final_objective_kind)),
    }
    println!("wall time: {:.3}s", report.wall_time.as_secs_f64());
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    if report.diverged {
        eprintln!("error: the fit diverged");
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> Result<(ModelFile, Model)> {
    let file = ModelFile::load(path)?;
    let model = file.model()?;
    Ok((file, model))
}

fn predict_cmd(a: PredictArgs) -> Result<i32> {
    let (file, model) = load_model(&a.model)?;
    let data = data::load_voters_with(&a.voters, file.standardization())?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?);
    let io = |e| Error::io(&a.out, e);
    writeln!(w, "precinct_id,voter_id,prob").map_err(io)?;
    for pr in data.precincts() {
        let probs = evaluate::ProbabilityModel::voter_probs(&model, pr)?;
        for (vid, p) in pr.voter_ids().iter().zip(probs) {
            writeln!(w, "{},{},{}", pr.id(), vid, p).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(EXIT_OK)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<i32> {
    let (file, model) = load_model(&a.model)?;
    let data = data::load_dataset_with(&a.voters, &a.counts, file.standardization())?;
    let labels = data::read_labels(&a.labels, &data)?;
    let mut labeled = LabeledDataset::new(data, labels)?;
    if let Some(k) = a.holdout_precincts {
        let (_, holdout) = split_indices(labeled.data().len(), k, a.seed.wrapping_add(HOLDOUT_SEED_OFFSET))?;
        labeled = labeled.subset(&holdout);
    }
    let report = evaluate::evaluate_run(&model, &labeled)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("method: {}", file.method());
        println!("{}", format_auc(report.auc));
        println!("aggregate SSE: {:.4}", report.aggregate_sse);
        println!("voters: {}, precincts: {}", report.n_voters, report.n_precincts);
    }
    Ok(EXIT_OK)
}

fn mode_label(mode: SearchMode) -> &'static str {
    match mode {
        SearchMode::Exhaustive => "exhaustive",
        SearchMode::Heuristic => "heuristic",
    }
}

fn separation_cmd(a: SeparationArgs) -> Result<i32> {
    let data = data::load_dataset(&a.voters, &a.counts, false)?;
    let outcome = diagnostics::detect_separation(&data, a.cap, a.heuristic, a.seed)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&outcome)?);
        return Ok(EXIT_OK);
    }
    match &outcome {
        SeparationOutcome::Certificate { mode, certificate } => {
            println!("separation certificate found ({} search)", mode_label(*mode));
            let dir: Vec<String> = certificate.direction.iter().map(|v| v.to_string()).collect();
            println!("direction ({}): {}", data.feature_names().join(","), dir.join(","));
            println!("margin: {}", certificate.margin);
            for (pr, subset) in data.precincts().iter().zip(&certificate.subsets) {
                let ids: Vec<&str> = subset.iter().map(|&j| pr.voter_ids()[j].as_str()).collect();
                println!("precinct {}: {}", pr.id(), ids.join(","));
            }
        }
        SeparationOutcome::NoneFound { mode, candidates } => {
            println!(
                "none found: no separation certificate among {candidates} candidates ({} search)",
                mode_label(*mode)
            );
        }
    }
    Ok(EXIT_OK)
}

fn hessian_cmd(a: HessianArgs) -> Result<i32> {
    let (data, beta) = match (&a.model, a.beta) {
        (Some(path), _) => {
            let (file, model) = load_model(path)?;
            let Model::Logit(m) = model else {
                return Err(Error::Validation("the Hessian probe needs a logit model".into()));
            };
            let data = data::load_dataset_with(&a.voters, &a.counts, file.standardization())?;
            (data, m.beta().iter().copied().collect())
        }
        (None, Some(beta)) => (data::load_dataset(&a.voters, &a.counts, false)?, beta),
        (None, None) => unreachable!("clap requires one of --beta and --model"),
    };
    if beta.len() != data.dim() {
        return Err(Error::Validation(format!(
            "{} coefficients for {} design columns",
            beta.len(),
            data.dim()
        )));
    }
    let probe = diagnostics::hessian_probe(&data, &beta, a.cap)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&probe)?);
    } else {
        let eig: Vec<String> = probe.eigenvalues.iter().map(|v| format!("{v:.6e}")).collect();
        println!("eigenvalues: {}", eig.join(","));
        println!("max eigenvalue: {:.6e}", probe.max_eig);
        println!("negative semidefinite: {}", probe.is_nsd);
    }
    Ok(EXIT_OK)
}

fn concavity_cmd(a: ConcavityArgs) -> Result<i32> {
    let base = SimConfig {
        n_precincts: 1,
        voters_per_precinct: a.voters,
        p: a.covariates as usize,
        beta_true: BetaSpec::Random,
        covariate_scheme: CovariateScheme::PrecinctShiftedNormal,
        precinct_shift_scale: a.shift_scale,
        seed: a.seed,
    };
    let rows = diagnostics::asymptotic_concavity_experiment(&base, &a.ns, a.cap)?;
    match &a.out {
        Some(path) => {
            let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            diagnostics::write_concavity_csv(&rows, &mut f).map_err(|e| Error::io(path, e))?;
        }
        None => {
            let stdout = std::io::stdout();
            diagnostics::write_concavity_csv(&rows, &mut stdout.lock()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(EXIT_OK)
}
