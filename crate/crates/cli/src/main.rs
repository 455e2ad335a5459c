use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use scanmatch_core::bench::{run_benchmark, BenchConfig};
use scanmatch_core::sim::{run_mapping, write_outputs, MappingOptions, Scenario};
use scanmatch_core::Backend;

#[derive(Parser)]
#[command(
    name = "scanmatch",
    version,
    about = "2D scan matching benchmark and mapping simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendChoice {
    Residual,
    Graph,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SingleBackend {
    Residual,
    Graph,
}

impl From<SingleBackend> for Backend {
    fn from(b: SingleBackend) -> Backend {
        match b {
            SingleBackend::Residual => Backend::Residual,
            SingleBackend::Graph => Backend::Graph,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Seeded random matching trials on both backends.
    Bench {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, value_enum, default_value_t = BackendChoice::Both)]
        backend: BackendChoice,
        /// Relative cost-reduction tolerance.
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        #[arg(long, default_value_t = 100)]
        max_iterations: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        /// Also write a table of initial and estimated poses.
        #[arg(long)]
        dump_poses: Option<PathBuf>,
        /// Include the heading error in the reported RMSE.
        #[arg(long)]
        rmse_with_theta: bool,
    },
    /// Incremental mapping along a scripted path.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = SingleBackend::Residual)]
        backend: SingleBackend,
        /// Output prefix; writes `<prefix>_map.pgm` and `<prefix>_trajectory.csv`.
        #[arg(long, default_value = "sim")]
        out: String,
        /// Stop matching once the cumulative match time exceeds this budget.
        #[arg(long)]
        max_total_match_ms: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench {
            seed,
            trials,
            points,
            backend,
            tolerance,
            max_iterations,
            out,
            dump_poses,
            rmse_with_theta,
        } => {
            let backends = match backend {
                BackendChoice::Residual => vec![Backend::Residual],
                BackendChoice::Graph => vec![Backend::Graph],
                BackendChoice::Both => Backend::ALL.to_vec(),
            };
            let config = BenchConfig {
                seed,
                trials,
                points_per_cloud: points,
                backends,
                function_tolerance: tolerance,
                max_iterations,
                rmse_with_theta,
                ..BenchConfig::default()
            };
            let summary =
                run_benchmark(&config, &out, dump_poses.as_deref()).context("benchmark failed")?;
            print!("{summary}");
            println!("wrote {}", out.display());
        }
        Command::Sim {
            scenario,
            backend,
            out,
            max_total_match_ms,
        } => {
            let scenario = Scenario::load(&scenario)
                .with_context(|| format!("loading scenario {}", scenario.display()))?;
            let mut options = MappingOptions::new(backend.into());
            if let Some(ms) = max_total_match_ms {
                anyhow::ensure!(
                    ms >= 0.0 && ms.is_finite(),
                    "--max-total-match-ms must be >= 0"
                );
                options.max_total_match = Some(Duration::from_secs_f64(ms / 1000.0));
            }
            let run = run_mapping(&scenario, &options).context("mapping failed")?;
            let (map, traj) = write_outputs(&run, &out)?;
            let total_ms = run
                .cumulative_match_time_us()
                .last()
                .copied()
                .unwrap_or(0.0)
                / 1000.0;
            println!(
                "{} scans, {} matched, max pose error {:.6} m / {:.6} rad, total match time {:.3} ms",
                run.trajectory.len(),
                run.reports().count(),
                run.max_translation_error(),
                run.max_rotation_error(),
                total_ms
            );
            println!("wrote {} and {}", map.display(), traj.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
