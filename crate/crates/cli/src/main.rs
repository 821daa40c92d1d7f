use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tagplan::commands::{self, PlanOptions};
use tagplan::error::CliError;
use tagplan_core::sensing::MetricKind;
use tagplan_core::validation::TrajectoryKind;

#[derive(Parser)]
#[command(name = "tagplan", version, about = "Plan fiducial tag placements for UAV localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize tag placements for every phase of a project.
    Plan {
        project: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<MetricKind>,
        /// Ignore installation cost (placement weight zero).
        #[arg(long, visible_alias = "cost.w-plc-zero")]
        no_cost: bool,
        #[arg(long, default_value = "tagplan-out")]
        out: PathBuf,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Reuse or create a table of precomputed tag information.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Redraw the heatmaps of an existing plan.
    Render {
        plan: PathBuf,
        project: PathBuf,
        #[arg(long, default_value = "tagplan-out")]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run a built-in check: jacobian, crlb, oracle, rmse or monotonicity.
    Validate {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tiny")]
        instance: String,
        /// Number of seeds for the oracle and rmse checks.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Compare the localization error of two plans along test paths.
    Eval {
        project: PathBuf,
        plan_a: PathBuf,
        plan_b: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "cwk,lsa,spn")]
        trajectories: Vec<TrajectoryKind>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    match s {
        "trace" => Ok(MetricKind::Trace),
        "logdet" => Ok(MetricKind::Logdet),
        "mineig" => Ok(MetricKind::Mineig),
        other => Err(format!("unknown metric '{other}' (expected trace, logdet or mineig)")),
    }
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("TAGPLAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Input(format!("TAGPLAN_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    threads()?;
    match cli.command {
        Command::Plan {
            project,
            seed,
            metric,
            no_cost,
            out,
            max_iters,
            cache,
        } => {
            let opts = PlanOptions {
                seed,
                metric,
                no_cost,
                max_iters,
                cache,
            };
            let p = commands::run_plan(&project, &out, &opts)?;
            println!(
                "score {:.6} utility {:.6} cost {:.6} placements {} removals {} replacements {}",
                p.score,
                p.utility,
                p.cost,
                p.counts.placements(),
                p.counts.n_rmv,
                p.counts.n_rpl
            );
            for ph in &p.phases {
                println!("phase {}: {} tags, utility {:.6}", ph.phase, ph.active_tags, ph.utility);
            }
            println!("wrote {}", out.display());
        }
        Command::Render {
            plan,
            project,
            out,
            cache,
        } => {
            commands::run_render(&plan, &project, &out, cache.as_deref())?;
            println!("wrote {}", out.display());
        }
        Command::Validate {
            suite,
            seed,
            instance,
            seeds,
        } => commands::run_validate(&suite, seed, &instance, seeds)?,
        Command::Eval {
            project,
            plan_a,
            plan_b,
            trajectories,
            seeds,
        } => print!(
            "{}",
            commands::run_eval(&project, &plan_a, &plan_b, &trajectories, seeds)?
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
