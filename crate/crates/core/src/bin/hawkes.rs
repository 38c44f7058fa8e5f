//! `hawkes`: simulate networks, test edges, run calibration experiments and
//! prepare recorded spike trains. Unit ids are 1-based on the command line.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use hawkes_core::harness::io::{ingest_events, read_dense_csv, read_truth_csv, write_dense_csv, write_truth_csv};
use hawkes_core::harness::{run_experiment, write_metrics_csv, ExperimentConfig};
use hawkes_core::inference::{self, InferenceConfig};
use hawkes_core::model::{check_assumptions, integrated_process, AssumptionReport, HawkesModel, KernelSpec, DEFAULT_SIGMA_FLOOR};
use hawkes_core::simulator::{make_structure, permute_trains, simulate};
use hawkes_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hawkes", version, about = "Linear Hawkes network simulation and connectivity inference")]
struct Cli {
    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one spike matrix from the configured structure.
    Simulate(SimulateArgs),
    /// De-correlated score test of H0: beta_{row, cols} = 0.
    Test(TestArgs),
    /// Same as `test --ci`.
    Ci(TestArgs),
    /// Monte-Carlo type-I error, power and coverage over T_list.
    Experiment(ExperimentArgs),
    /// Bin (unit_id, event_time) rows onto the unit grid.
    Ingest(IngestArgs),
    /// Independently permute the time indices of every unit.
    Permute(PermuteArgs),
    /// Report the stationarity and boundedness diagnostics of a model.
    CheckAssumptions(CheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Spike matrix output (dense CSV).
    #[arg(long)]
    out: PathBuf,
    /// Truth CSV output; defaults to `<out stem>_truth.csv`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of recorded steps; defaults to the largest entry of T_list.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct TestArgs {
    /// Dense CSV spike matrix.
    #[arg(long)]
    spikes: PathBuf,
    /// Target unit i.
    #[arg(long)]
    row: usize,
    /// Tested source units, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    cols: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_FLOOR)]
    sigma_floor: f64,
    #[arg(long, default_value_t = 1.0)]
    decay_rate: f64,
    #[arg(long, default_value_t = 5)]
    n_folds: usize,
    #[arg(long, default_value_t = 0.5)]
    min_train_frac: f64,
    /// Drop the intercept from the variance predictor.
    #[arg(long)]
    sigma_without_intercept: bool,
    /// Also build the one-step confidence region.
    #[arg(long)]
    ci: bool,
    /// Use the true support from `--truth` for the nuisance fits.
    #[arg(long, requires = "truth")]
    oracle: bool,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Recorded with the result; the pipeline itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the JSON line here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma_floor: Option<f64>,
    /// Add the oracle comparator rows.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Event CSV with `unit_id,event_time` rows.
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Time units per grid step.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct PermuteArgs {
    #[arg(long)]
    spikes: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Experiment config whose structure is checked.
    #[arg(long, conflicts_with = "truth", required_unless_present = "truth")]
    config: Option<PathBuf>,
    /// Truth CSV of coefficients, as an alternative to `--config`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    decay_rate: f64,
    /// Spike matrix used to check the observed intensity range.
    #[arg(long)]
    spikes: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))
}

fn warn_assumptions(report: &AssumptionReport) {
    let names = ["1 (spectral norm)", "2 (flow bounds)", "3 (bounded intensity)", "4 (kernel)"];
    for (flag, name) in report.pass_flags.iter().zip(names) {
        if !flag {
            eprintln!("warning: Assumption {name} does not hold");
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let model = make_structure(&cfg.structure)?;
    let report = check_assumptions(&model, None)?;
    if let Some(err) = report.hard_failure() {
        return Err(err);
    }
    let steps = args.steps.unwrap_or(*cfg.t_list.last().unwrap());
    let seed = args.seed.unwrap_or(cfg.seed);
    let (spikes, state) = simulate(&model, &cfg.sim_config(steps, seed))?;
    let probe = check_assumptions(&model, Some(&spikes))?;
    warn_assumptions(&probe);
    if state.clip_count > 0 {
        eprintln!("warning: {} intensity evaluations clipped into the Bernoulli bounds", state.clip_count);
    }

    let truth = args.truth.unwrap_or_else(|| {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        args.out.with_file_name(format!("{stem}_truth.csv"))
    });
    let mut out = create(&args.out)?;
    write_dense_csv(&spikes, &mut out)?;
    out.flush()?;
    let mut out = create(&truth)?;
    write_truth_csv(&model.theta, &mut out)?;
    out.flush()?;
    Ok(())
}

fn to_zero_based(ids: &[usize], p: usize, what: &str) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&k| {
            if k == 0 || k > p {
                Err(Error::InvalidParameter(format!("{what} {k} outside 1..={p}")))
            } else {
                Ok(k - 1)
            }
        })
        .collect()
}

#[derive(Serialize)]
struct TestFlags<'a> {
    spikes: &'a Path,
    alpha: f64,
    sigma_floor: f64,
    decay_rate: f64,
    n_folds: usize,
    min_train_frac: f64,
    sigma_without_intercept: bool,
    ci: bool,
    oracle: bool,
    truth: Option<&'a Path>,
    seed: u64,
}

fn cmd_test(args: TestArgs, force_ci: bool) -> Result<()> {
    let ci = args.ci || force_ci;
    let spikes = read_dense_csv(open(&args.spikes)?)?;
    let p = spikes.units();
    let i = to_zero_based(&[args.row], p, "row")?[0];
    let cols = to_zero_based(&args.cols, p, "column")?;
    let kernel = KernelSpec::exponential(args.decay_rate);
    kernel.validate()?;
    let mut cfg = InferenceConfig {
        sigma_floor: args.sigma_floor,
        sigma_without_intercept: args.sigma_without_intercept,
        ..InferenceConfig::default()
    };
    cfg.cv.n_folds = args.n_folds;
    cfg.cv.min_train_frac = args.min_train_frac;
    cfg.validate()?;

    let x = integrated_process(&spikes, &kernel);
    for &j in &cols {
        if spikes.column_counts()[j] == 0 {
            return Err(Error::DegenerateDesign(format!(
                "unit {} has no events, so its scaled history column is constant",
                j + 1
            )));
        }
    }
    let (test_fit, fit) = if args.oracle {
        let theta = read_truth_csv(open(args.truth.as_deref().unwrap())?)?;
        if theta.nrows() != p {
            return Err(Error::Dimension(format!("truth has {} units, spikes have {p}", theta.nrows())));
        }
        let support = theta.mapv(|v| v != 0.0);
        let null = inference::oracle_null_nuisance(&spikes, &x, i, &cols, &support, &cfg)?;
        (Some(null), inference::oracle_nuisance(&spikes, &x, i, &cols, &support, &cfg)?)
    } else {
        (None, inference::fit_nuisance(&spikes, &x, i, &cols, &cfg)?)
    };
    let mut test = inference::score_test(test_fit.as_ref().unwrap_or(&fit), &spikes, &x, args.alpha)?;
    test.row += 1;
    test.cols.iter_mut().for_each(|c| *c += 1);
    let region = if ci {
        let mut r = inference::one_step_ci(&fit, &spikes, &x, args.alpha)?;
        r.row += 1;
        r.cols.iter_mut().for_each(|c| *c += 1);
        Some(r)
    } else {
        None
    };

    let flags = TestFlags {
        spikes: &args.spikes,
        alpha: args.alpha,
        sigma_floor: args.sigma_floor,
        decay_rate: args.decay_rate,
        n_folds: args.n_folds,
        min_train_frac: args.min_train_frac,
        sigma_without_intercept: args.sigma_without_intercept,
        ci,
        oracle: args.oracle,
        truth: args.truth.as_deref(),
        seed: args.seed,
    };
    let line = json!({
        "method": if args.oracle { "oracle" } else { "ds" },
        "score_test": test,
        "confidence_region": region,
        "lambda_step1": fit.row.penalty,
        "flags": flags,
    });
    let text = serde_json::to_string(&line)?;
    match &args.out {
        Some(path) => {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{text}")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(floor) = args.sigma_floor {
        cfg.sigma_floor = floor;
    }
    cfg.oracle |= args.oracle;
    cfg.validate()?;
    let model = make_structure(&cfg.structure)?;
    let report = check_assumptions(&model, None)?;
    if let Some(err) = report.hard_failure() {
        return Err(err);
    }
    let rows = run_experiment(&cfg)?;
    for row in rows.iter().filter(|r| r.n_failed > 0) {
        eprintln!(
            "warning: T = {} {}: {} tests failed numerically and were excluded",
            row.steps, row.method, row.n_failed
        );
    }
    let mut out = create(&args.out)?;
    write_metrics_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (spikes, report) = ingest_events(open(&args.events)?, args.bin_width, args.units, args.steps)?;
    if report.collision_rate > 0.01 {
        eprintln!(
            "warning: {} of {} events ({:.2}%) shared a bin and were collapsed; consider a smaller bin width",
            report.collisions,
            report.events,
            100.0 * report.collision_rate
        );
    }
    if report.out_of_range > 0 {
        eprintln!("warning: {} events fall after the last step and were dropped", report.out_of_range);
    }
    let mut out = create(&args.out)?;
    write_dense_csv(&spikes, &mut out)?;
    out.flush()?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_permute(args: PermuteArgs) -> Result<()> {
    let spikes = read_dense_csv(open(&args.spikes)?)?;
    let permuted = permute_trains(&spikes, args.seed);
    let mut out = create(&args.out)?;
    write_dense_csv(&permuted, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<()> {
    let model = match (&args.config, &args.truth) {
        (Some(path), _) => make_structure(&ExperimentConfig::load(path)?.structure)?,
        (None, Some(path)) => {
            let theta = read_truth_csv(open(path)?)?;
            let p = theta.nrows();
            HawkesModel::new(ndarray::Array1::from_elem(p, args.mu), theta, KernelSpec::exponential(args.decay_rate))?
        }
        (None, None) => unreachable!("clap requires one of --config and --truth"),
    };
    let probe = args.spikes.as_deref().map(|p| read_dense_csv(open(p)?)).transpose()?;
    if let Some(s) = &probe {
        if s.units() != model.units() {
            return Err(Error::Dimension(format!("probe has {} units, model has {}", s.units(), model.units())));
        }
    }
    let report = check_assumptions(&model, probe.as_ref())?;
    println!("{}", serde_json::to_string(&report)?);
    warn_assumptions(&report);
    match report.hard_failure() {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Test(a) => cmd_test(a, false),
        Command::Ci(a) => cmd_test(a, true),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Permute(a) => cmd_permute(a),
        Command::CheckAssumptions(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
