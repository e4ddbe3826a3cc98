use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kfunmix::datamodel::{load_matrix_csv, save_matrix_csv, DatasetBundle, EndmemberMatrix};
use kfunmix::metrics::{load_metrics_csv, save_metrics_csv, MetricRecord};
use kfunmix::pipeline::{
    run_experiment, save_summary_csv, summarize, timing_quantiles, BaselineConfig, InitMethod, McrInit,
    PipelineConfig, Updater,
};
use kfunmix::protocols::{protocol_p1, protocol_p2, AcquisitionOrder, P2Config};
use kfunmix::synthdata::{generate, SynthConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "kfunmix", version, about = "Online spectral unmixing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Write an acquisition order for a dataset.
    Order {
        #[command(subcommand)]
        protocol: OrderCommand,
    },
    /// Stream a dataset through the online unmixer and write its trace.
    Run(RunArgs),
    /// Average replicate traces per time index.
    Eval(EvalArgs),
    /// Time the per-spectrum update.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    l: usize,
    #[arg(long)]
    k: usize,
    /// Use `inf` to disable noise.
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    /// One value for all endmembers or a comma-separated list of K values.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    alpha: Vec<f64>,
    #[arg(long)]
    purity_cap: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Do not plant one exactly pure pixel per endmember.
    #[arg(long)]
    no_pure: bool,
    /// Rescale intensities so that the noise variance equals this value.
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum OrderCommand {
    /// Every spectrum, raw order or shuffled.
    P1 {
        #[arg(long)]
        dataset: PathBuf,
        /// Shuffle with this seed; raw order when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Essential spectra from phasor-plot hull peeling.
    P2 {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 340)]
        n_ess: usize,
        #[arg(long, default_value_t = 50)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum UpdaterArg {
    Kalman,
    Rls,
    Dl,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    Vca,
    McrAls,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum McrInitArg {
    Pca,
    Vca,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Acquisition order CSV; raw order when omitted.
    #[arg(long)]
    order: Option<PathBuf>,
    /// Number of endmembers; taken from the dataset when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 30)]
    p: usize,
    #[arg(long, default_value_t = 87.0)]
    eta: f64,
    /// Number of harmonics, overriding `--eta`.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma_v2: f64,
    /// Observation noise variance; estimated from the first P spectra when omitted.
    #[arg(long)]
    sigma_e2: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 50)]
    admm_iters: usize,
    #[arg(long, value_enum, default_value_t = UpdaterArg::Kalman)]
    updater: UpdaterArg,
    /// Forgetting factor of the RLS updater.
    #[arg(long, default_value_t = 0.99)]
    lambda: f64,
    /// Initial endmembers (L×K CSV) instead of VCA.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    eval_stride: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long = "baseline", value_enum)]
    baselines: Vec<BaselineArg>,
    #[arg(long, default_value_t = 20)]
    baseline_stride: usize,
    #[arg(long, default_value_t = 60)]
    mcr_iters: usize,
    #[arg(long, value_enum, default_value_t = McrInitArg::Vca)]
    mcr_init: McrInitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    DatasetBundle::load_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_order(path: Option<&Path>, n: usize) -> Result<AcquisitionOrder> {
    Ok(match path {
        Some(p) => AcquisitionOrder::load_csv(p, n).with_context(|| format!("loading order {}", p.display()))?,
        None => protocol_p1(n, None)?,
    })
}

fn pipeline_config(args: &PipelineArgs, dataset: &DatasetBundle) -> Result<PipelineConfig> {
    let k = match (args.k, dataset.n_endmembers()) {
        (Some(k), _) => k,
        (None, Some(k)) => k,
        (None, None) => bail!("the dataset has no ground truth; pass --k"),
    };
    let mut config = PipelineConfig::new(k);
    config.n_regressors = args.p;
    config.eta = args.eta;
    config.m_override = args.m;
    config.sigma_v2 = args.sigma_v2;
    config.sigma_e2_override = args.sigma_e2;
    config.rho = args.rho;
    config.admm_iters = args.admm_iters;
    config.updater = match args.updater {
        UpdaterArg::Kalman => Updater::Kalman,
        UpdaterArg::Rls => Updater::Rls(args.lambda),
        UpdaterArg::Dl => Updater::Dl,
    };
    if let Some(path) = &args.init {
        let s = load_matrix_csv(path).with_context(|| format!("loading init {}", path.display()))?;
        config.init = InitMethod::Provided(EndmemberMatrix::new(s)?);
    }
    config.seed = args.seed;
    config.eval_stride = args.eval_stride;
    config.validate()?;
    Ok(config)
}

/// `trace.csv` → `trace.<suffix>.csv`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut config = SynthConfig::new(args.n, args.l, args.k, args.seed);
    config.snr_db = args.snr_db;
    config.dirichlet_alpha = match args.alpha.len() {
        1 => vec![args.alpha[0]; args.k],
        _ => args.alpha,
    };
    config.purity_cap = args.purity_cap;
    config.plant_pure = !args.no_pure && args.purity_cap.is_none_or(|c| c >= 1.0);
    config.target_noise_variance = args.noise_variance;
    let bundle = generate(&config)?;
    bundle.save_dir(&args.out)?;
    log::info!("wrote {} spectra to {}", args.n, args.out.display());
    Ok(())
}

fn order(cmd: OrderCommand) -> Result<()> {
    match cmd {
        OrderCommand::P1 { dataset, seed, out } => {
            let d = load_dataset(&dataset)?;
            protocol_p1(d.spectra.n_pixels(), seed)?.save_csv(&out)?;
        }
        OrderCommand::P2 {
            dataset,
            n_ess,
            clusters,
            seed,
            out,
        } => {
            let d = load_dataset(&dataset)?;
            let config = P2Config {
                n_essential: n_ess,
                n_clusters: clusters,
                seed,
            };
            protocol_p2(&d.spectra, &config)?.save_csv(&out)?;
        }
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let dataset = load_dataset(&args.pipeline.dataset)?;
    let order = load_order(args.pipeline.order.as_deref(), dataset.spectra.n_pixels())?;
    let mut config = pipeline_config(&args.pipeline, &dataset)?;
    config.baselines = BaselineConfig {
        vca: args.baselines.contains(&BaselineArg::Vca),
        mcr_als: args.baselines.contains(&BaselineArg::McrAls),
        stride: args.baseline_stride,
        mcr_iters: args.mcr_iters,
        mcr_init: match args.mcr_init {
            McrInitArg::Pca => McrInit::Pca,
            McrInitArg::Vca => McrInit::Vca,
        },
    };
    config.validate()?;
    let trace = run_experiment(&dataset, &order, &config)?;
    log::info!(
        "M = {}, sigma_e2 = {:.6}",
        trace.snapshot.n_harmonics,
        trace.snapshot.sigma_e2
    );
    save_metrics_csv(&trace.records, &args.out)?;
    save_matrix_csv(trace.final_endmembers.values(), &sibling(&args.out, "endmembers"))?;
    for b in &trace.baselines {
        save_metrics_csv(&b.records, &sibling(&args.out, &b.name))?;
    }
    if let Some(failure) = trace.aborted {
        let err = if failure.numerical {
            kfunmix::Error::Numerical(format!("stream aborted at t={}: {}", failure.t, failure.message))
        } else {
            kfunmix::Error::InvalidData(format!("stream aborted at t={}: {}", failure.t, failure.message))
        };
        return Err(err.into());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let traces = args
        .traces
        .iter()
        .map(|p| load_metrics_csv(p).with_context(|| format!("loading trace {}", p.display())))
        .collect::<Result<Vec<Vec<MetricRecord>>>>()?;
    save_summary_csv(&summarize(&traces), &args.out)?;
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let dataset = load_dataset(&args.pipeline.dataset)?;
    let order = load_order(args.pipeline.order.as_deref(), dataset.spectra.n_pixels())?;
    let mut config = pipeline_config(&args.pipeline, &dataset)?;
    config.eval_stride = usize::MAX / 2;
    let mut all = Vec::new();
    for rep in 0..args.reps {
        let trace = run_experiment(&dataset, &order, &config)?;
        let (median, p95) = timing_quantiles(&trace.step_wall_ms).unwrap_or((f64::NAN, f64::NAN));
        println!("rep {rep}: {} steps, median {median:.4} ms, p95 {p95:.4} ms", trace.step_wall_ms.len());
        all.extend(trace.step_wall_ms);
    }
    let (median, p95) = timing_quantiles(&all).unwrap_or((f64::NAN, f64::NAN));
    println!("all: {} steps, median {median:.4} ms, p95 {p95:.4} ms", all.len());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<kfunmix::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Order { protocol } => order(protocol),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
