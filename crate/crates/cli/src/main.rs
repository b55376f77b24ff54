use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixedlane_cli::commands::{cmd_adapt, cmd_eval, cmd_plant, cmd_plot, cmd_pretrain, load_config};
use mixedlane_cli::{CliError, PlantMode};

#[derive(Parser)]
#[command(name = "mixedlane", version, about = "Multi-lane traffic simulation with learned driving and a plant bridge")]
struct Cli {
    /// Run configuration (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train in simulation with parallel workers.
    Pretrain {
        #[arg(long)]
        frames: Option<usize>,
        /// Start from this checkpoint instead of random weights.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Adapt a checkpoint against the (perturbed) plant.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// none, inprocess, loopback or host:port of a plant process.
        #[arg(long, default_value = "inprocess")]
        plant: PlantMode,
    },
    /// Evaluate two checkpoints on common scenario seeds.
    Eval {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long, default_value = "none")]
        plant: PlantMode,
    },
    /// Render a trace CSV as a space-time SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Episode to draw; the longest by default.
        #[arg(long)]
        episode: Option<usize>,
        /// Defaults to the trace path with an `.svg` extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the plant over UDP.
    Plant {
        /// Address to bind; the config's bridge address by default.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Plot { trace, events, episode, output } = &cli.command {
        let output = output.clone().unwrap_or_else(|| trace.with_extension("svg"));
        let st = cmd_plot(trace, events.as_deref(), *episode, &output)?;
        println!(
            "{}: episode {}, {} vehicles, {} obstacles, {} collisions",
            output.display(),
            st.episode,
            st.worldlines.len(),
            st.obstacles.len(),
            st.collisions.len()
        );
        return Ok(());
    }
    let mut cfg = load_config(cli.config.as_deref(), cli.seed, cli.out)?;
    match cli.command {
        Command::Pretrain { frames, init } => {
            if let Some(f) = frames {
                cfg.train.total_frames = f;
            }
            let a = cmd_pretrain(&cfg, init.as_deref())?;
            println!("{} ({} updates), metrics in {}", a.checkpoint.display(), a.outcome.updates, a.metrics.display());
        }
        Command::Adapt { checkpoint, frames, plant } => {
            if let Some(f) = frames {
                cfg.train.adapt_frames = f;
            }
            let a = cmd_adapt(&cfg, &checkpoint, &plant)?;
            println!("{} ({} updates), metrics in {}", a.checkpoint.display(), a.outcome.updates, a.metrics.display());
        }
        Command::Eval { before, after, scenarios, plant } => {
            if let Some(s) = scenarios {
                cfg.eval.scenarios = s;
            }
            let r = cmd_eval(&cfg, &before, &after, &plant)?;
            if r.before.is_empty() {
                println!("no scenarios");
            } else {
                let (cb, ca) = r.median_collisions();
                let (rb, ra) = r.median_reward();
                println!("median collisions {cb} -> {ca} (sign test p = {:.4})", r.collisions.p_value);
                println!("median reward {rb:.3} -> {ra:.3} (sign test p = {:.4})", r.reward.p_value);
            }
        }
        Command::Plant { listen } => {
            std::io::stdout().flush()?;
            cmd_plant(&cfg, listen.as_deref())?;
        }
        Command::Plot { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
