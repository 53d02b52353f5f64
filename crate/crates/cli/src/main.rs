use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use risknav::config::{ConfigError, RunConfig};
use risknav::conformal::{build_calibration_set, dataset_conditional_alpha, AlphaCertificate, CalibrationSummary};
use risknav::exec::{with_workers, Execution};
use risknav::gradcheck::{run_all, GradcheckConfig};
use risknav::sim::benchmark::{trial_environment, trial_seed};
use risknav::sim::trial::write_trajectory_csv;
use risknav::sim::{run_benchmark, run_trial, Method};

#[derive(Parser)]
#[command(name = "risknav", version, about = "Risk-aware navigation with calibrated obstacle ellipses and a feasibility-preserving safety filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the calibration set and report the inflation factor.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Run one closed-loop trial.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// proposed, uninflated or nofeasibility.
        #[arg(long, default_value = "proposed")]
        method: Method,
    },
    /// Paired benchmark over random environments.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated subset of methods.
        #[arg(long, visible_alias = "method", value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Worker threads (default: logical cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Finite-difference checks of the collision and volume gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
        /// Overrides both suite tolerances.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

enum Failure {
    Check(String),
    Config(String),
    Calibration(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) | Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Calibration(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    Ok(&cfg.out_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)
        .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

/// The configured inflation factor, or a fresh calibration.
fn delta(cfg: &RunConfig) -> Result<f64, Failure> {
    if let Some(d) = cfg.delta {
        return Ok(d);
    }
    let (_, res) = build_calibration_set(&cfg.calibration(), Execution::Sequential)
        .map_err(|e| Failure::Calibration(e.to_string()))?;
    log::info!("using calibrated delta = {:.4}", res.delta);
    Ok(res.delta)
}

#[derive(Serialize)]
struct CalibrationFile {
    #[serde(flatten)]
    summary: CalibrationSummary,
    /// Miscoverage certified with confidence 0.99 for this particular set.
    dataset_conditional: Option<AlphaCertificate>,
}

fn calibrate(cfg: &RunConfig) -> Result<(), Failure> {
    let mut cal = cfg.calibration();
    cal.seed = cfg.seed;
    let (_, res) = build_calibration_set(&cal, Execution::Sequential)
        .map_err(|e| Failure::Calibration(e.to_string()))?;
    let file = CalibrationFile {
        summary: res.summary(),
        dataset_conditional: dataset_conditional_alpha(res.n_cal, 1.0 - res.alpha, 0.01).ok(),
    };
    write_json(&out_dir(cfg)?.join("calibration.json"), &file)?;
    println!("delta = {:.6} (alpha = {}, n_cal = {})", res.delta, res.alpha, res.n_cal);
    Ok(())
}

fn simulate(cfg: &RunConfig, method: Method) -> Result<(), Failure> {
    let delta = delta(cfg)?;
    let env = trial_environment(&cfg.env(), cfg.seed, 0);
    let (outcome, rows) = run_trial(&env, method, &cfg.trial_params(), delta, trial_seed(cfg.seed, 0, method));
    let dir = out_dir(cfg)?;
    let stem = format!("{}_{}", cfg.seed, method);
    let csv_path = dir.join(format!("trial_{stem}.csv"));
    let f = File::create(&csv_path).map_err(|e| Failure::Io(format!("cannot write {}: {e}", csv_path.display())))?;
    write_trajectory_csv(&rows, BufWriter::new(f)).map_err(|e| Failure::Io(e.to_string()))?;
    write_json(&dir.join(format!("outcome_{stem}.json")), &outcome)?;
    let result = if outcome.success {
        "success"
    } else if outcome.collision {
        "collision"
    } else {
        "timeout"
    };
    println!(
        "seed {} {}: {} after {} steps, min true gamma {:.3}, min V {:.4}, infeasible steps {}, final distance {:.3}",
        cfg.seed, method, result, outcome.steps, outcome.min_true_gamma, outcome.min_volume, outcome.infeasible_steps, outcome.final_distance
    );
    Ok(())
}

fn benchmark(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.n_trials == 0 {
        return Err(Failure::Config("trials must be at least 1".into()));
    }
    let delta = delta(cfg)?;
    let report = with_workers(cfg.workers, || {
        run_benchmark(&cfg.env(), &cfg.trial_params(), delta, cfg.n_trials, &cfg.methods, cfg.seed, Execution::Parallel)
    });
    let dir = out_dir(cfg)?;
    write_json(&dir.join("benchmark.json"), &report)?;
    let csv_path = dir.join("benchmark.csv");
    let f = File::create(&csv_path).map_err(|e| Failure::Io(format!("cannot write {}: {e}", csv_path.display())))?;
    report.write_metrics_csv(BufWriter::new(f)).map_err(|e| Failure::Io(e.to_string()))?;
    print!("{}", report.table());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, instances: Option<usize>, tolerance: Option<f64>) -> Result<(), Failure> {
    let gc = GradcheckConfig {
        instances: instances.unwrap_or(cfg.gradcheck_instances),
        step: cfg.gradcheck_step,
        collision_tolerance: tolerance.unwrap_or(cfg.collision_tolerance),
        volume_tolerance: tolerance.unwrap_or(cfg.volume_tolerance),
        seed: cfg.seed,
    };
    if gc.instances == 0 {
        return Err(Failure::Config("instances must be at least 1".into()));
    }
    if !(gc.collision_tolerance > 0.0 && gc.volume_tolerance > 0.0) {
        return Err(Failure::Config("tolerance must be positive".into()));
    }
    let reports = run_all(&gc);
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient suites failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Calibrate { common } => calibrate(&load(&common)?),
        Command::Simulate { common, method } => simulate(&load(&common)?, method),
        Command::Benchmark { common, trials, methods, workers } => {
            let mut cfg = load(&common)?;
            if let Some(n) = trials {
                cfg.n_trials = n;
            }
            if let Some(m) = methods {
                cfg.methods = m;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            cfg.validate()?;
            benchmark(&cfg)
        }
        Command::Gradcheck { common, instances, tolerance } => gradcheck(&load(&common)?, instances, tolerance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("info,risknav::feasibility=error,risknav::qp=error"),
    )
    .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Check(m) | Failure::Config(m) | Failure::Calibration(m) | Failure::Io(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
