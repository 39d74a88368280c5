//! Command-line front end: scenario simulation, figure reproduction,
//! parameter sweeps, the identity-check battery, and the practical-stability
//! probe. Exit codes: 0 success, 2 config error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use averseek::scenario::{self, FigureId, HarnessError, ProbeConfig, ScenarioConfig, OUT_DIR_ENV};

#[derive(Parser)]
#[command(
    name = "averseek",
    version,
    about = "Global extremum seeking simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Output directory (default: $AVERSEEK_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent jobs for sweeps and probes.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    /// Seed override for the deterministic samplers.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplier on the verification thresholds.
    #[arg(long, default_value_t = 1.0)]
    tol: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario from a JSON config.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Reproduce a built-in figure bundle
    /// (fig2a, fig2b, fig3, fig4-center, fig4-right).
    Reproduce {
        figure: String,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run a scenario over a parameter grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run the identity-check battery.
    Verify {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run the practical-stability probe from a JSON config.
    Probe {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

fn out_dir(opts: &CommonOpts) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    // Die quietly when the output pipe closes early, like other unix tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { config, opts } => {
            let mut cfg = ScenarioConfig::from_file(&config)?;
            if let Some(seed) = opts.seed {
                cfg.seed = seed;
            }
            let artifacts = scenario::run_scenario(&cfg, &out_dir(&opts))?;
            for p in &artifacts.paths {
                println!("wrote {}", p.display());
            }
            println!(
                "terminal state at t = {:.6}:",
                artifacts.summary.terminal_time
            );
            for (k, v) in &artifacts.summary.terminal_state {
                println!("  {k} = {v:.6}");
            }
            Ok(())
        }
        Command::Reproduce { figure, opts } => {
            let id = FigureId::parse(&figure)?;
            let artifacts = scenario::reproduce_figure(id, &out_dir(&opts))?;
            for p in &artifacts.paths {
                println!("wrote {}", p.display());
            }
            for (k, v) in &artifacts.summary.metrics {
                println!("{k} = {v:.6}");
            }
            Ok(())
        }
        Command::Sweep { config, grid, opts } => {
            let base = ScenarioConfig::from_file(&config)?;
            let grid_text = std::fs::read_to_string(&grid).map_err(|e| {
                HarnessError::Config(format!("cannot read {}: {e}", grid.display()))
            })?;
            let points = scenario::parse_grid(&grid_text)?;
            let rows = scenario::sweep(&base, &points, opts.jobs)?;
            let dir = out_dir(&opts);
            let csv_path = dir.join("sweep_summary.csv");
            scenario::write_atomic(&csv_path, scenario::sweep_to_csv(&rows).as_bytes())?;
            let json_path = dir.join("sweep_summary.json");
            let body = serde_json::to_string_pretty(&rows)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            scenario::write_atomic(&json_path, body.as_bytes())?;
            println!("wrote {}", csv_path.display());
            println!("wrote {}", json_path.display());
            let failures = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} rows, {} failed", rows.len(), failures);
            if failures == rows.len() {
                return Err(HarnessError::Numerical("every sweep row failed".into()));
            }
            Ok(())
        }
        Command::Verify { opts } => {
            let checks = scenario::run_verify(opts.tol)?;
            let mut all_passed = true;
            for check in &checks {
                println!(
                    "{} {}: {:.3e} (threshold {:.3e})",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.value,
                    check.threshold
                );
                all_passed &= check.passed;
            }
            let dir = out_dir(&opts);
            let path = dir.join("verify_report.json");
            let body = serde_json::to_string_pretty(&checks)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            scenario::write_atomic(&path, body.as_bytes())?;
            println!("wrote {}", path.display());
            if all_passed {
                Ok(())
            } else {
                Err(HarnessError::Numerical(
                    "verification battery failed".into(),
                ))
            }
        }
        Command::Probe { config, opts } => {
            let mut cfg = ProbeConfig::from_file(&config)?;
            if let Some(seed) = opts.seed {
                cfg.seed = seed;
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.jobs.max(1))
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let report = pool.install(|| scenario::run_probe(&cfg))?;
            for row in &report.rows {
                let failures = row.runs.iter().filter(|r| !r.passed).count();
                println!(
                    "{} eps = {:<10} ({} of {} runs failed)",
                    if row.passed { "PASS" } else { "FAIL" },
                    row.eps,
                    failures,
                    row.runs.len()
                );
            }
            match report.eps_passed {
                Some(eps) => println!("largest passing eps: {eps}"),
                None => println!("no tested eps passed"),
            }
            if report.monotonicity_warning {
                println!("warning: a larger eps passed while a smaller one failed");
            }
            if let Some(env) = &report.envelope {
                println!(
                    "fitted envelope: C = {:.4}, lambda = {:.4}",
                    env.c, env.lambda
                );
            }
            let dir = out_dir(&opts);
            let path = dir.join("probe_report.json");
            let body = serde_json::to_string_pretty(&ProbeReportJson::from(&report))
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            scenario::write_atomic(&path, body.as_bytes())?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

/// Serialization shim for the probe report.
#[derive(serde::Serialize)]
struct ProbeReportJson {
    r: f64,
    delta: f64,
    eps_passed: Option<f64>,
    monotonicity_warning: bool,
    envelope: Option<(f64, f64)>,
    rows: Vec<ProbeRowJson>,
}

#[derive(serde::Serialize)]
struct ProbeRowJson {
    eps: f64,
    passed: bool,
    failed_runs: usize,
    total_runs: usize,
    worst_final_distance: f64,
}

impl From<&averseek::lyap::SgpuasReport> for ProbeReportJson {
    fn from(r: &averseek::lyap::SgpuasReport) -> Self {
        ProbeReportJson {
            r: r.r,
            delta: r.delta,
            eps_passed: r.eps_passed,
            monotonicity_warning: r.monotonicity_warning,
            envelope: r.envelope.map(|e| (e.c, e.lambda)),
            rows: r
                .rows
                .iter()
                .map(|row| ProbeRowJson {
                    eps: row.eps,
                    passed: row.passed,
                    failed_runs: row.runs.iter().filter(|x| !x.passed).count(),
                    total_runs: row.runs.len(),
                    worst_final_distance: row
                        .runs
                        .iter()
                        .map(|x| x.final_distance)
                        .fold(0.0, f64::max),
                })
                .collect(),
        }
    }
}
