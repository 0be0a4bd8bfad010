use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capsol", version, about = "Capacitary potentials and boundary blow-up solvers for -Δu + u^q = 0")]
struct Cli {
    /// Worker threads (default: CAPSOL_WORKERS or the core count)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario configuration file
    Run { config: PathBuf },
    /// Run a bundled suite: smoke, acceptance or borderline
    Suite { name: String },
    /// Emit a plot table from a run manifest:
    /// potential-terms, ratio-bands or wiener-trace
    Plot { manifest: PathBuf, what: String },
    /// Solve a single capacity program for an inline set description
    Capacity {
        /// Set description in the scenario [set] grammar, e.g. "ball 0 0 0 1"
        spec: String,
        #[arg(long, default_value_t = 4.0)]
        q: f64,
        #[arg(long, default_value_t = 48)]
        window: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn init_workers(explicit: Option<usize>) {
    let workers = explicit.or_else(|| {
        std::env::var("CAPSOL_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .ok();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers(cli.workers);
    let outcome = match cli.command {
        Command::Run { config } => capsol_cli::run_scenario(&config).map(|out| {
            for entry in &out.manifest.check_outcomes {
                println!("{:<28} {}", entry.name, entry.verdict);
            }
            println!("manifest: {}", out.manifest_path.display());
            out.any_fail
        }),
        Command::Suite { name } => capsol_cli::run_suite(&name).map(|out| {
            for entry in &out.manifest.check_outcomes {
                println!("{:<40} {}", entry.name, entry.verdict);
            }
            println!("manifest: {}", out.manifest_path.display());
            out.any_fail
        }),
        Command::Plot { manifest, what } => {
            capsol_cli::emit_plotdata(&manifest, &what).map(|path| {
                println!("wrote {}", path.display());
                false
            })
        }
        Command::Capacity { spec, q, window, tolerance } => (|| {
            let prims = capsol_cli::config::parse_set_line(1, &spec)
                .map_err(capsol_cli::RunError::Config)?;
            let mut rho = 0.0f64;
            for p in &prims {
                if !p.is_empty() {
                    rho = rho.max(p.circumradius([0.0; 3]));
                }
            }
            let set = capsol::SetSpec::new(prims, rho.max(1e-6)).map_err(|e| {
                capsol_cli::RunError::CheckSetup { check: "capacity".into(), message: e.to_string() }
            })?;
            let exp = capsol::Exponents::new(3, q).map_err(|e| {
                capsol_cli::RunError::CheckSetup { check: "capacity".into(), message: e.to_string() }
            })?;
            let grid = capsol::window_grid(window);
            let mask = capsol::rasterize(&set, &grid).map_err(|e| {
                capsol_cli::RunError::CheckSetup { check: "capacity".into(), message: e.to_string() }
            })?;
            let engine = capsol::CapacityEngine::new();
            let cfg = capsol::CapacityConfig::with_tolerance(tolerance);
            let result = engine.capacity(&mask, &exp, &cfg).map_err(|e| {
                capsol_cli::RunError::CheckSetup { check: "capacity".into(), message: e.to_string() }
            })?;
            println!(
                "capacity {:.6}  gap {:.2e}  iterations {}  converged {}",
                result.value, result.duality_gap, result.iterations, result.converged
            );
            Ok(false)
        })(),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
