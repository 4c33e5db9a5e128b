use std::fmt::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use rtof_core::pipeline::Mode;
use rtof_core::synth::SynthConfig;
use rtof_core::Error;

use crate::commands;
use crate::config::{parse_toml, RunConfig};

#[derive(Parser)]
#[command(
    name = "rtof",
    version,
    about = "Refine lifted 3D human poses with camera and IMU evidence"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Camera and eight IMUs, per-frame noise.
    Default,
    /// Camera only, drifting depth errors.
    VisualOnly,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with synthesis settings; overrides the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        /// Sequence length in seconds.
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Process a dataset in one of the four modes.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the mode of the config file.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Output directory (default: the config file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print solver throughput.
        #[arg(long)]
        fps_report: bool,
        /// Also write a per-frame error table.
        #[arg(long)]
        per_frame_metrics: bool,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "missing-input" => 4,
        "parse" => 5,
        "io" => 6,
        "input" => 7,
        "numeric" => 8,
        _ => 1,
    }
}

/// Runs one subcommand and returns what it has to say on stdout.
pub fn execute(command: Command) -> rtof_core::Result<String> {
    let mut msg = String::new();
    match command {
        Command::Synth {
            out,
            config,
            preset,
            seed,
            seconds,
        } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => parse_toml::<SynthConfig>(&path)?,
                (None, Preset::Default) => SynthConfig::default(),
                (None, Preset::VisualOnly) => SynthConfig::visual_only(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = seconds {
                cfg.seconds = s;
            }
            let files = commands::synth(&out, &cfg)?;
            writeln!(msg, "wrote {} files to {}", files.len(), out.display()).unwrap();
        }
        Command::Run {
            config,
            mode,
            out,
            seed,
            fps_report,
            per_frame_metrics,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| config.parent().map(PathBuf::from).unwrap_or_default());
            let r = commands::run(&cfg, &out, per_frame_metrics)?;
            writeln!(
                msg,
                "mode {}: {} frames -> {}",
                cfg.mode,
                r.report.frames,
                r.output.display()
            )
            .unwrap();
            if let Some(m) = &r.report.metrics {
                msg.push_str(&m.to_text());
            }
            if fps_report {
                match (r.fragments_per_second, r.frames_per_second) {
                    (Some(frag), Some(frames)) => writeln!(
                        msg,
                        "throughput: {frag:.1} fragments/s, {frames:.1} frames/s (single core)"
                    )
                    .unwrap(),
                    _ => writeln!(msg, "throughput: no optimization in mode {}", cfg.mode).unwrap(),
                }
            }
        }
    }
    Ok(msg)
}
