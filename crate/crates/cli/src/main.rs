use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use kdv_core::diagnostics::{default_window, energy_residual, fit_decay};
use kdv_core::experiment::{
    build_operator, expand_sweep, run_simulation, run_steering, run_sweep, summarize_operator, ExperimentConfig,
    FitReport,
};
use kdv_core::io::{self, RecordDump};
use kdv_core::KdvError;

/// KdV feedback stabilization and steering experiments.
#[derive(Parser)]
#[command(name = "kdvctl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Overrides the seed of random initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Concurrent sweep cells (defaults to the config, then the CPU count).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write trajectory.csv, report.json and record.json.
    Simulate,
    /// Synthesize a control from [steer] and replay it.
    Steer,
    /// Run the parameter grid in [sweep] and write summary.csv.
    Sweep,
    /// Build the operator in [operator] and dump its entries and spectrum.
    Operators,
    /// Recompute diagnostics for a stored run directory.
    Report {
        /// Directory holding record.json and report.json.
        #[arg(long)]
        run_dir: PathBuf,
        /// Fit window start.
        #[arg(long)]
        from: Option<f64>,
        /// Fit window end.
        #[arg(long)]
        to: Option<f64>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_STEERING: u8 = 4;

fn exit_code(e: &KdvError) -> u8 {
    match e {
        e if e.is_steering() => EXIT_STEERING,
        KdvError::Config(_)
        | KdvError::Parameter { .. }
        | KdvError::Dimension { .. }
        | KdvError::Usage(_)
        | KdvError::Json(_)
        | KdvError::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn config_text(cli: &Cli) -> Result<String, KdvError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| KdvError::Usage("--config is required".into()))?;
    std::fs::read_to_string(path).map_err(|e| KdvError::Config(format!("cannot read {}: {e}", path.display())))
}

fn load(cli: &Cli) -> Result<ExperimentConfig, KdvError> {
    let mut cfg = ExperimentConfig::from_toml_str(&config_text(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn simulate(cli: &Cli) -> Result<(), KdvError> {
    let cfg = load(cli)?;
    let out = run_simulation(&cfg)?;
    if let Some(fit) = &out.report.fit {
        println!("fitted rate {:.6} on [{}, {}]", fit.rate, fit.window.0, fit.window.1);
    }
    if let Some(e) = out.report.energy_residual {
        println!("energy residual {e:.3e}");
    }
    println!(
        "mass drift {:.3e}, relative L2^2 drift {:.3e}",
        out.report.conservation.mass_drift, out.report.conservation.l2_sq_drift
    );
    print_paths(&io::write_run(&cli.out_dir, &out)?);
    Ok(())
}

fn steer(cli: &Cli) -> Result<(), KdvError> {
    let cfg = load(cli)?;
    let out = run_steering(&cfg)?;
    println!(
        "{:?} steering over T = {}: replay error {:.3e} (relative {:.3e}), mass drift {:.3e}",
        out.report.mode, out.report.total_time, out.report.replay_error, out.report.relative_error, out.report.mass_drift
    );
    print_paths(&io::write_steer(&cli.out_dir, &out)?);
    Ok(())
}

fn sweep(cli: &Cli) -> Result<u8, KdvError> {
    let text = config_text(cli)?;
    let mut cells = expand_sweep(&text)?;
    if let Some(seed) = cli.seed {
        cells.iter_mut().for_each(|c| c.config.apply_seed(seed));
    }
    let base = ExperimentConfig::from_toml_str(&text)?;
    let workers = cli
        .workers
        .or(base.sweep.and_then(|s| s.workers))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    info!("running {} cells on {workers} workers", cells.len());
    let results = run_sweep(cells, workers)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    for r in &results {
        match &r.outcome {
            Ok(o) => println!(
                "{}: rate {}",
                r.cell,
                o.report.fit.as_ref().map_or("-".to_string(), |f| format!("{:.6}", f.rate))
            ),
            Err(e) => println!("{}: failed: {e}", r.cell),
        }
    }
    let summary = io::write_sweep(&cli.out_dir, &results)?;
    println!("wrote {}", summary.display());
    if failed == results.len() {
        eprintln!("error: all {failed} sweep cells failed");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}

fn operators(cli: &Cli) -> Result<(), KdvError> {
    let cfg = load(cli)?;
    let op = build_operator(&cfg)?;
    let summary = summarize_operator(&op)?;
    println!(
        "dim {}, eigenvalues in [{:.6e}, {:.6e}], condition {:.3e}",
        summary.dim, summary.min_eigenvalue, summary.max_eigenvalue, summary.condition
    );
    std::fs::create_dir_all(&cli.out_dir)?;
    let dump_path = cli.out_dir.join("operator.json");
    let summary_path = cli.out_dir.join("operator_summary.json");
    std::fs::write(&dump_path, serde_json::to_string(&op.to_dump())?)?;
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    print_paths(&[dump_path, summary_path]);
    Ok(())
}

fn report(run_dir: &Path, from: Option<f64>, to: Option<f64>) -> Result<(), KdvError> {
    let rec = io::read_json::<RecordDump>(&run_dir.join(io::RECORD_JSON))?.into_record()?;
    let (a, b) = default_window(&rec);
    let window = (from.unwrap_or(a), to.unwrap_or(b));
    let fit = fit_decay(&rec, 0.0, window).map(FitReport::from);
    let energy = energy_residual(&rec).ok();
    let out = serde_json::json!({
        "fit": fit.as_ref().ok(),
        "fit_error": fit.as_ref().err().map(|e| e.to_string()),
        "energy_residual": energy,
        "max_l2_increase": rec.max_l2_increase,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate => simulate(&cli).map(|_| 0),
        Command::Steer => steer(&cli).map(|_| 0),
        Command::Sweep => sweep(&cli),
        Command::Operators => operators(&cli).map(|_| 0),
        Command::Report { run_dir, from, to } => report(run_dir, *from, *to).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
