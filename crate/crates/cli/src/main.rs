use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use evblur::simulator::{simulate, write_events, EventFormat};
use evblur::SimConfig;

mod correct;
mod response;
mod scene;

#[derive(Parser)]
#[command(name = "evblur", version, about = "Event camera simulation with bandwidth-limited pixels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a scene into an event stream.
    Simulate {
        /// TOML config with [pixel], [camera], [radiometry] and [sim] tables.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `bar:key=value,...` or `frames:<list file>`; the list file holds
        /// one `<timestamp> <image path>` pair per line.
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: EventFormat,
        /// Threshold the log radiance directly, without the pixel filter.
        #[arg(long)]
        infinite_bandwidth: bool,
        /// Overrides the threshold-noise seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the worker thread count from the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Dump step responses, Bode plots or bandwidth sweeps of the pixel model.
    Response {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `step:from=..,to=..,at=..,duration=..,dt=..`,
        /// `bode:l=..,fmin=..,fmax=..,points=..` or
        /// `sweep:lmin=..,lmax=..,points=..`.
        #[arg(long)]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a translated-gamma colour correction between renders and references.
    Correct {
        /// CSV `image,pixel,<channel>...` of predicted radiance.
        #[arg(long)]
        renders: PathBuf,
        /// CSV `image,pixel,gain_exposure,<channel>...` of reference radiance.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, scene, out, format, infinite_bandwidth, seed, threads } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.camera.seed = s;
            }
            if let Some(t) = threads {
                cfg.sim.threads = t;
            }
            cfg.sim.infinite_bandwidth |= infinite_bandwidth;
            let source = scene::parse(&scene)?;
            let stream = simulate(&source, &cfg.pixel, &cfg.camera, &cfg.radiometry, &cfg.sim)?;
            write_events(&out, &stream, format)?;
            eprintln!(
                "{} events from {}x{} pixels over {:.6} s -> {}",
                stream.events.len(),
                stream.header.width,
                stream.header.height,
                stream.header.duration,
                out.display()
            );
        }
        Command::Response { config, input, out } => {
            let cfg = load_config(config.as_ref())?;
            let text = response::run(&cfg, &input)?;
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Correct { renders, refs, out } => {
            let text = correct::run(&renders, &refs)?;
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}
