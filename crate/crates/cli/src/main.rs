use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cuelens::PipelineConfig;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "cuelens",
    version,
    about = "Saliency-guided acoustic cue analysis for speech emotion models"
)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Precedence, lowest first: built-in
/// defaults, `--config`, `CUELENS_*` variables, `--set`, dedicated flags.
#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set segment.k=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Target sample rate in Hz.
    #[arg(long, global = true)]
    sample_rate: Option<u32>,

    /// Clip duration in seconds after trimming.
    #[arg(long, global = true)]
    duration: Option<f64>,

    /// Edge-silence threshold in dB below the loudest frame.
    #[arg(long, global = true)]
    trim_db: Option<f64>,

    /// Keep leading and trailing silence.
    #[arg(long, global = true)]
    no_trim: bool,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Global {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply_env(std::env::vars())?;
        self.apply_overrides(&mut cfg)?;
        Ok(cfg)
    }

    fn apply_overrides(&self, cfg: &mut PipelineConfig) -> Result<()> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v)
                .with_context(|| format!("--set {kv}"))?;
        }
        if let Some(sr) = self.sample_rate {
            cfg.audio.sample_rate = sr;
        }
        if let Some(d) = self.duration {
            cfg.audio.duration_s = d;
        }
        if let Some(t) = self.trim_db {
            cfg.audio.trim_db = t;
        }
        if self.no_trim {
            cfg.audio.trim = false;
        }
        cfg.validate()?;
        Ok(())
    }

    /// True when any option would change a configuration loaded elsewhere.
    pub fn overrides_config(&self) -> bool {
        self.config.is_some()
            || !self.set.is_empty()
            || self.sample_rate.is_some()
            || self.duration.is_some()
            || self.trim_db.is_some()
            || self.no_trim
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the log-Mel spectrogram of a wav file (SGM1).
    Spectrogram(commands::SpectrogramArgs),
    /// Compute an occlusion saliency map, or validate an imported one.
    Saliency(commands::SaliencyArgs),
    /// Select the top-k salient segments of a map, or draw random ones.
    Segment(commands::SegmentArgs),
    /// Measure the six voice cues over segments or the full clip (CUE1).
    Cues(commands::CuesArgs),
    /// Compare salient cues against a baseline for a finished run.
    Validate(commands::ValidateArgs),
    /// Render a statistics file as a table.
    Report(commands::ReportArgs),
    /// Run the whole pipeline over a labelled corpus.
    Run(commands::RunArgs),
    /// Write the synthetic test corpus.
    Synth(commands::SynthArgs),
    /// Print the resolved configuration.
    Config,
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Spectrogram(a) => commands::spectrogram(g.resolve()?, a),
        Command::Saliency(a) => commands::saliency(g.resolve()?, a),
        Command::Segment(a) => commands::segment(g.resolve()?, a),
        Command::Cues(a) => commands::cues(g.resolve()?, a),
        Command::Validate(a) => commands::validate(g.resolve()?, a),
        Command::Report(a) => commands::report(g.resolve()?, a),
        Command::Run(a) => commands::run(g, a),
        Command::Synth(a) => commands::synth(g.resolve()?, a),
        Command::Config => emit(None, &g.resolve()?.render()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
