use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use terrain_fe::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "terrain-fe", version, about = "Terrain-adaptive dynamics experiment suite")]
struct Cli {
    /// Key-value experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the simulator on every scene and write the datasets.
    Collect,
    /// Train the basis set and the baseline for every seed.
    Train,
    /// Per-scene one-step error table.
    EvalOnestep,
    /// One-step error against the adaptation window length.
    EvalWindow,
    /// Accumulated error of open-loop rollouts on the held-out scenes.
    EvalRollout,
    /// Closed-loop planner trials through the obstacle world.
    Mission,
    /// Consolidate every output into report.json and per-figure CSVs.
    Report,
}

fn load(cli: &Cli) -> terrain_fe::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> terrain_fe::Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Collect => {
            let files = harness::cmd_collect(&cfg)?;
            println!("wrote {} datasets under {}", files.len(), cfg.out.join("data").display());
        }
        Command::Train => {
            for s in harness::cmd_train(&cfg)? {
                println!(
                    "seed {}: fenode {:.3e} -> {:.3e}, node {:.3e} -> {:.3e}",
                    s.seed, s.fe_first_train_mse, s.fe_last_train_mse, s.node_first_train_mse, s.node_last_train_mse
                );
            }
        }
        Command::EvalOnestep => {
            let r = harness::cmd_eval_onestep(&cfg)?;
            println!("{:>7} {:>14} {:>7} {:>11} {:>11} {:>11}", "theta", "role", "model", "median", "min", "max");
            for s in &r.summary {
                println!("{:>7.3} {:>14} {:>7} {:>11.3e} {:>11.3e} {:>11.3e}", s.theta, s.role, s.model, s.median, s.min, s.max);
            }
        }
        Command::EvalWindow => {
            let r = harness::cmd_eval_window(&cfg)?;
            println!("{:>6} {:>11} {:>11}", "n", "fenode", "node");
            for c in &r.curve {
                println!("{:>6} {:>11.3e} {:>11.3e}", c.window, c.fe_median, c.node_median);
            }
        }
        Command::EvalRollout => {
            let r = harness::cmd_eval_rollout(&cfg)?;
            for c in &r.curves {
                println!("theta {:.3} {:>7}: final accumulated MSE median {:.3e}", c.theta, c.model, c.median.last().unwrap());
            }
        }
        Command::Mission => {
            let r = harness::cmd_mission(&cfg)?;
            for t in &r.trials {
                println!(
                    "{:>7} trial {}: {} collisions, {}/{} waypoints{}",
                    t.model,
                    t.trial,
                    t.collisions,
                    t.waypoints_reached,
                    r.waypoints,
                    if t.diverged { ", diverged" } else { "" }
                );
            }
        }
        Command::Report => {
            let r = harness::cmd_report(&cfg)?;
            for c in &r.criteria {
                let verdict = match c.pass {
                    Some(true) => "pass",
                    Some(false) => "FAIL",
                    None => "n/a",
                };
                println!("{} {:<4} {}", c.id, verdict, c.name);
            }
            for m in &r.missing {
                println!("missing: {m}");
            }
            println!("status: {}", r.status);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
