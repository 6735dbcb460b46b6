use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use warpgp::gp::Dataset;
use warpgp::harness::data::{load_dataset, load_features, load_labels, write_dataset};
use warpgp::harness::persist::SavedModel;
use warpgp::harness::report::write_report;
use warpgp::harness::{generate_synthetic, run_experiment, ExperimentConfig, HarnessError, ModelChoice, SynthSpec};
use warpgp::kernels::{KernelFamily, KernelParams, KernelSpec};
use warpgp::optimize::OptimizeConfig;
use warpgp::quadrature::QuadratureRule;
use warpgp::warping::{Warp, WarpSpec};

/// Warped Gaussian process regression for quality estimation.
#[derive(Parser)]
#[command(name = "warpgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated experiment over a kernel x warp grid.
    Run(RunArgs),
    /// Fit one model on the full dataset and dump its hyperparameters.
    Fit(FitArgs),
    /// Score a feature file with a previously fitted model.
    Predict(PredictArgs),
    /// Generate a synthetic dataset from a GP prior.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Whitespace-separated feature rows.
    #[arg(long)]
    features: PathBuf,
    /// One label per line.
    #[arg(long)]
    labels: PathBuf,
    /// Sentence lengths; labels are divided by these.
    #[arg(long)]
    lengths: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, HarnessError> {
        load_dataset(&self.features, &self.labels, self.lengths.as_deref())
    }
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OptArgs {
    fn config(&self) -> OptimizeConfig {
        OptimizeConfig {
            restarts: self.restarts,
            max_iters: self.max_iters,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    /// Asymmetric linear loss weights, e.g. "3,1/3".
    #[arg(long, default_value = "3,1/3", allow_hyphen_values = true)]
    al_weights: String,
    /// Linex loss weights.
    #[arg(long, default_value = "-0.75,0.75", allow_hyphen_values = true)]
    linex_weights: String,
    #[arg(long, default_value_t = 50)]
    quad_order: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated kernels: eq, matern32, matern52.
    #[arg(long, default_value = "eq,matern32,matern52")]
    kernel: String,
    /// Comma-separated warps: none, log, tanh1, tanh2, tanh3.
    #[arg(long, default_value = "none,log,tanh1,tanh2,tanh3")]
    warp: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    opt: OptArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    out: PathBuf,
    /// Suppress per-fold progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "matern52")]
    kernel: String,
    #[arg(long, default_value = "none")]
    warp: String,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Training data the model was fitted on.
    #[command(flatten)]
    data: DataArgs,
    /// model.json written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test_features: PathBuf,
    /// Optional labels for the test rows; adds log densities.
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Comma-separated quantile levels in (0, 1).
    #[arg(long, default_value = "0.1,0.5,0.9")]
    quantiles: String,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value = "eq")]
    kernel: String,
    /// Labels are the inverse of this warp applied to the GP draw: none or log.
    #[arg(long, default_value = "none")]
    warp: String,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn usage(msg: String) -> HarnessError {
    HarnessError::Usage(msg)
}

/// Parses "3,1/3,-0.75" style lists.
fn parse_weights(s: &str, what: &str) -> Result<Vec<f64>, HarnessError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v = match t.split_once('/') {
                Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
                None => t.parse::<f64>().ok(),
            };
            v.filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("{what}: cannot parse '{t}'")))
        })
        .collect()
}

fn parse_kernels(s: &str) -> Result<Vec<KernelFamily>, HarnessError> {
    s.split(',').map(|t| KernelFamily::parse(t).map_err(|e| usage(e.to_string()))).collect()
}

fn parse_warps(s: &str) -> Result<Vec<WarpSpec>, HarnessError> {
    s.split(',').map(|t| WarpSpec::parse(t).map_err(|e| usage(e.to_string()))).collect()
}

fn single<T: Copy>(v: Vec<T>, what: &str) -> Result<T, HarnessError> {
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(usage(format!("expected exactly one {what}"))),
    }
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let config = ExperimentConfig {
        models: ModelChoice::grid(&parse_kernels(&args.kernel)?, &parse_warps(&args.warp)?),
        folds: args.folds,
        optimizer: args.opt.config(),
        al_weights: parse_weights(&args.weights.al_weights, "--al-weights")?,
        linex_weights: parse_weights(&args.weights.linex_weights, "--linex-weights")?,
        quad_order: args.weights.quad_order,
        seed: args.opt.seed,
        verbose: !args.quiet,
        ..Default::default()
    };
    config.validate()?;
    let dataset = args.data.load()?;
    match run_experiment(&dataset, &config) {
        Ok(report) => write_report(&args.out, &report),
        Err(HarnessError::FoldFailures { message, report }) => {
            write_report(&args.out, &report)?;
            Err(HarnessError::Numeric(message))
        }
        Err(e) => Err(e),
    }
}

fn fit(args: FitArgs) -> Result<(), HarnessError> {
    let choice = ModelChoice::new(
        single(parse_kernels(&args.kernel)?, "kernel")?,
        single(parse_warps(&args.warp)?, "warp")?,
    );
    let optimizer = args.opt.config();
    optimizer.validate()?;
    let dataset = args.data.load()?;
    let (saved, _) = SavedModel::fit(&dataset, choice, &optimizer, ExperimentConfig::default().label_floor)?;
    fs::create_dir_all(&args.out)?;
    saved.save(&args.out.join("model.json"))
}

fn predict(args: PredictArgs) -> Result<(), HarnessError> {
    let al = parse_weights(&args.weights.al_weights, "--al-weights")?;
    let linex = parse_weights(&args.weights.linex_weights, "--linex-weights")?;
    let quantiles = parse_weights(&args.quantiles, "--quantiles")?;
    if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(usage(format!("quantile levels must lie in (0, 1), got {q}")));
    }
    let rule = QuadratureRule::gauss_hermite(args.weights.quad_order)?;
    let saved = SavedModel::load(&args.model)?;
    let model = saved.rebuild(&args.data.load()?)?;
    let rows = load_features(&args.test_features)?;
    let labels = args.test_labels.as_deref().map(load_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != rows.len() {
            return Err(HarnessError::Data(format!(
                "row count mismatch: {} test rows, {} test labels",
                rows.len(),
                l.len()
            )));
        }
    }
    let dists = saved.predict(&model, &rows)?;

    let mut header = vec!["index".to_string(), "median".into(), "mean".into(), "variance".into()];
    header.extend(quantiles.iter().map(|q| format!("q{q}")));
    header.extend(al.iter().map(|w| format!("al_{w}")));
    header.extend(linex.iter().map(|w| format!("linex_{w}")));
    if labels.is_some() {
        header.extend(["label".into(), "log_density".into()]);
    }
    let mut out = header.join(",");
    out.push('\n');
    for (i, d) in dists.iter().enumerate() {
        let (mean, var) = d.mean_and_variance(&rule)?;
        let mut cells = vec![i as f64, d.median()?, mean, var];
        for q in &quantiles {
            cells.push(d.quantile(*q)?);
        }
        for w in &al {
            cells.push(d.bayes_estimate_al(*w)?);
        }
        for w in &linex {
            cells.push(d.bayes_estimate_linex(*w, &rule)?);
        }
        if let Some(l) = &labels {
            let (y, _) = saved.preprocessing.labels(&[l[i]]);
            cells.extend([l[i], d.log_density(y[0])]);
        }
        let line: Vec<String> = cells.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("predictions.csv"), out)?;
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), HarnessError> {
    let warp = match single(parse_warps(&args.warp)?, "warp")? {
        WarpSpec::Identity => Warp::identity(),
        WarpSpec::Log => Warp::log(),
        other => return Err(usage(format!("synthetic labels support warps none and log, got {}", other.name()))),
    };
    if args.n == 0 || args.dim == 0 {
        return Err(usage("--n and --dim must be positive".into()));
    }
    let spec = SynthSpec {
        kernel: KernelSpec::isotropic(single(parse_kernels(&args.kernel)?, "kernel")?),
        kernel_params: KernelParams::new(args.variance, vec![args.lengthscale]),
        noise_variance: args.noise,
        warp,
    };
    let dataset = generate_synthetic(args.n, args.dim, &spec, args.seed)?;
    write_dataset(&args.out, &dataset)
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run(a) => run(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let out = match &cli.command {
        Command::Run(a) if !a.quiet => Some(a.out.display().to_string()),
        _ => None,
    };
    match dispatch(cli.command) {
        Ok(()) => {
            if let Some(out) = out {
                eprintln!("report written to {out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
