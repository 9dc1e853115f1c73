//! Thin CLI over the library pipelines. Exit codes: 0 success (including a
//! no-safe-plan result, which is reported with a warning), 2 validation
//! error, 3 i/o error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use uncmap::harness::{cmd_eval, cmd_gen, cmd_losses, cmd_plan, cmd_scoremap, RunConfig};
use uncmap::Error;

#[derive(Parser)]
#[command(
    name = "uncmap",
    about = "Uncertainty-aware BEV score maps, trajectory scoring, and loss evaluation on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scene artifacts (truth grid, logit field, expert, candidates)
    Gen,
    /// Build and export the drivable score map
    Scoremap,
    /// Score, weight, and select among candidate trajectories
    Plan,
    /// Run the configured scenario sweep and report compliance metrics
    Eval,
    /// Evaluate the full objective and run gradient self-checks
    Losses,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Args)]
struct Overrides {
    /// Run configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the Monte-Carlo and scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Blend group entropy into the planner's map
    #[arg(long, global = true, value_enum)]
    uncertainty: Option<Toggle>,
    /// Augment plan selection with the lane penalty
    #[arg(long = "lane-reg", global = true, value_enum)]
    lane_reg: Option<Toggle>,
    /// Monte-Carlo sample count
    #[arg(long = "mc-samples", global = true)]
    mc_samples: Option<usize>,
    /// Non-drivable probability threshold
    #[arg(long = "tau-drive", global = true)]
    tau_drive: Option<f64>,
    /// Sharpness of the safety weighting
    #[arg(long, global = true)]
    beta: Option<f64>,
}

fn load_config(overrides: &Overrides) -> uncmap::Result<RunConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed_override = Some(seed);
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(u) = overrides.uncertainty {
        cfg.uncertainty = u.as_bool();
    }
    if let Some(l) = overrides.lane_reg {
        cfg.lane_reg = l.as_bool();
    }
    if let Some(t) = overrides.mc_samples {
        cfg.mc.num_samples = t;
    }
    if let Some(tau) = overrides.tau_drive {
        cfg.tau_drive = tau;
    }
    if let Some(beta) = overrides.beta {
        cfg.beta = beta;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> uncmap::Result<()> {
    let cfg = load_config(&cli.overrides)?;
    let summary = match cli.command {
        Command::Gen => cmd_gen(&cfg)?,
        Command::Scoremap => cmd_scoremap(&cfg)?,
        Command::Plan => {
            let (report, summary) = cmd_plan(&cfg)?;
            match report.chosen_index {
                Some(idx) => println!("chosen candidate: {idx}"),
                None => println!("chosen candidate: none"),
            }
            summary
        }
        Command::Eval => {
            let (report, summary) = cmd_eval(&cfg)?;
            println!(
                "scenarios: {}  dac_like: {:.4}  lk_like: {:.4}",
                report.scenarios.len(),
                report.aggregate.dac_like.mean,
                report.aggregate.lk_like.mean
            );
            summary
        }
        Command::Losses => {
            let (report, summary) = cmd_losses(&cfg)?;
            let failed: Vec<&str> = report
                .gradient_checks
                .iter()
                .filter(|(_, e)| !e.pass)
                .map(|(n, _)| n.as_str())
                .collect();
            println!(
                "total loss: {:.6}  gradient checks: {}",
                report.report.total,
                if failed.is_empty() {
                    "all pass".to_string()
                } else {
                    format!("FAILED {failed:?}")
                }
            );
            summary
        }
    };
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    for file in &summary.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    uncmap::configure_threads_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
