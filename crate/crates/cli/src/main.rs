//! `relsub` command line: estimation, simulation studies, censoring sweeps,
//! probability exports, MTTF reports and synthetic data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use relsub::datagen::generate;
use relsub::estimators::{full_mle, EstimateReport, EstimatorSpec, Method};
use relsub::harness::config::{parse_f64_list, GenSpec, KeyValues, SimConfig};
use relsub::harness::io::{ingest_csv, write_csv};
use relsub::harness::mttf::mttf_report;
use relsub::harness::probs::{export_prob_histogram, histogram_csv, ProbKind};
use relsub::harness::sim::{run_simulation, write_outputs};
use relsub::harness::sweep::{sweep_censoring, sweep_csv};
use relsub::rng::{self, Stage};
use relsub::uncertainty::confidence_interval;
use relsub::{Dataset, Error, ModelKind, OptimizerConfig, ParamVector, Result};

#[derive(Parser)]
#[command(name = "relsub", version, about = "Optimal subsampling for censored, left-truncated lifetime data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator and print a JSON report.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo study from a key=value config file.
    Simulate(SimulateArgs),
    /// Repeat a study over target censoring rates.
    SweepAlpha(SweepArgs),
    /// Export subsampling probabilities and their histogram.
    Probs(ProbsArgs),
    /// Fit an estimator and report the mean time to failure.
    Mttf(EstimateArgs),
    /// Generate a synthetic dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// exponential, weibull or glfp.
    #[arg(long)]
    model: ModelKind,
    /// Early-failure proportion of the GLFP model.
    #[arg(long)]
    mixing: Option<f64>,
}

impl ModelArgs {
    fn kind(&self) -> Result<ModelKind> {
        match self.mixing {
            Some(p) => self.model.with_mixing(p),
            None => Ok(self.model),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with header t,censored,t_trunc.
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    data: Option<PathBuf>,
    /// Key=value file describing synthetic data to generate.
    #[arg(long)]
    generate: Option<PathBuf>,
    /// Factor applied to every time read from --data.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// full, uniform, rds or rdcs.
    #[arg(long, default_value = "rds")]
    method: Method,
    #[arg(short = 'r', long = "r", default_value_t = 1000)]
    r: usize,
    #[arg(long, default_value_t = 400)]
    r0: usize,
    #[arg(long, default_value_t = 0.1)]
    xi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Drop the gamma = r/n terms from the covariance estimate.
    #[arg(long)]
    no_gamma: bool,
    /// Include wall-clock time in the output.
    #[arg(long)]
    timing: bool,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads (default from the config; 0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fix_dataset: bool,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated target censoring rates.
    #[arg(long)]
    alphas: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ProbsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// rds, rdcs or aopt.
    #[arg(long, default_value = "rds")]
    kind: ProbKind,
    /// Parameter at which to evaluate; default is the full-data MLE.
    #[arg(long)]
    theta: Option<String>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Key=value file with model, params, n, windows or alpha.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Generates data from a key=value file, with `model` filling in a missing
/// model key. The probe and the data use streams derived from `seed`.
fn generate_from_file(path: &Path, model: Option<ModelKind>, seed: u64) -> Result<Dataset> {
    let mut kv = KeyValues::parse(&read_text(path)?)?;
    if let Some(m) = model {
        if kv.raw("model").is_none() {
            kv.set("model", m.tag());
            if let ModelKind::Glfp { mixing } = m {
                kv.set("mixing", mixing.to_string());
            }
        }
    }
    let spec = GenSpec::from_kv(&mut kv)?;
    kv.finish()?;
    if let Some(m) = model {
        if spec.true_params.model() != m {
            return Err(Error::InvalidConfig(format!(
                "--model {} does not match the model in {}",
                m.tag(),
                path.display()
            )));
        }
    }
    let mut cfg = spec.resolve(rng::derive_seed(seed, &[Stage::Probe as u64]))?;
    cfg.seed = rng::derive_seed(seed, &[Stage::Data as u64]);
    generate(&cfg)
}

fn load_data(args: &DataArgs, model: ModelKind, seed: u64) -> Result<Dataset> {
    match (&args.data, &args.generate) {
        (Some(p), _) => ingest_csv(p, args.time_scale),
        (None, Some(g)) => generate_from_file(g, Some(model), seed),
        (None, None) => Err(Error::InvalidConfig("give --data or --generate".into())),
    }
}

fn fit(args: &EstimateArgs) -> Result<(Dataset, EstimateReport)> {
    let model = args.model.kind()?;
    let dataset = load_data(&args.data, model, args.seed)?;
    let spec = EstimatorSpec {
        method: args.method,
        r: args.r,
        r0: args.r0,
        xi: args.xi,
        optimizer: OptimizerConfig::default(),
        include_gamma: !args.no_gamma,
    };
    let mut stream = rng::stream(args.seed, &[Stage::Estimator as u64]);
    let report = spec.run(&dataset, model, &mut stream)?;
    Ok((dataset, report))
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let (dataset, report) = fit(args)?;
    let mut v = serde_json::to_value(&report)?;
    let obj = v.as_object_mut().expect("report serializes to an object");
    if !args.timing {
        obj.remove("wall_time");
    }
    let ci = match &report.cov {
        Some(cov) => Some(confidence_interval(&report.theta_tilde, cov, args.level)?),
        None => None,
    };
    obj.insert("params".into(), json!(report.theta_tilde.model().param_names()));
    obj.insert("ci".into(), json!(ci));
    obj.insert("level".into(), json!(args.level));
    obj.insert("n".into(), json!(dataset.n()));
    obj.insert("n_uncensored".into(), json!(dataset.n0()));
    obj.insert("seed".into(), json!(args.seed));
    emit(args.out.as_deref(), &pretty(&v)?)
}

fn mttf(args: &EstimateArgs) -> Result<()> {
    let (_, report) = fit(args)?;
    let scale = if args.data.data.is_some() { args.data.time_scale } else { 1.0 };
    let rep = mttf_report(&report, args.seed, scale)?;
    emit(args.out.as_deref(), &pretty(&rep)?)
}

fn load_config(path: &Path) -> Result<SimConfig> {
    let base = path.parent().unwrap_or(Path::new("."));
    SimConfig::from_text(&read_text(path)?, base)
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.fix_dataset |= args.fix_dataset;
    cfg.record_time |= args.timing;
    let result = run_simulation(&cfg)?;
    write_outputs(&result, &args.out_dir)
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let alphas = parse_f64_list(&args.alphas)?;
    let points = sweep_censoring(&cfg, &alphas)?;
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("sweep.csv"), sweep_csv(&points))?;
    fs::write(args.out_dir.join("sweep.json"), pretty(&points)?)?;
    Ok(())
}

fn probs(args: &ProbsArgs) -> Result<()> {
    let model = args.model.kind()?;
    let dataset = load_data(&args.data, model, args.seed)?;
    let theta = match &args.theta {
        Some(s) => ParamVector::new(model, &parse_f64_list(s)?)?,
        None => {
            let rep = full_mle(&dataset, model, &OptimizerConfig::default())?;
            if !rep.converged {
                return Err(Error::DidNotConverge { iterations: rep.iterations, grad_norm: rep.grad_norm });
            }
            rep.theta_tilde
        }
    };
    let (units, hist) = export_prob_histogram(&dataset, &theta, args.kind, args.bins)?;
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("probs.csv"), units)?;
    fs::write(args.out_dir.join("histogram.csv"), histogram_csv(&hist))?;
    let summary = json!({ "theta": theta.values(), "histogram": hist });
    fs::write(args.out_dir.join("histogram.json"), pretty(&summary)?)?;
    Ok(())
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let dataset = generate_from_file(&args.config, None, args.seed)?;
    let mut buf = Vec::new();
    write_csv(&dataset, &mut buf)?;
    emit(args.out.as_deref(), &String::from_utf8(buf).expect("CSV is ASCII"))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::SweepAlpha(a) => sweep(a),
        Command::Probs(a) => probs(a),
        Command::Mttf(a) => mttf(a),
        Command::GenData(a) => gen_data(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

