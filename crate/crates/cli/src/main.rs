//! `swrn`: data preparation, training, inference, evaluation, quantization,
//! benchmarking, ablation and gradient self-checks for the sliding-window
//! recurrent super-resolution network.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "swrn", version, about = "x4 video super-resolution engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Downsample HR clips (one directory per clip) and write a manifest.
    Prepare {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Render synthetic HR clips with sub-pixel motion.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// moving_gradient, scrolling_text or bouncing_rect; cycles through
        /// all kinds when omitted.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// HR side length in pixels, a multiple of 4.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Super-resolve a directory of LR frames.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the checkpoint's INT8 section.
        #[arg(long)]
        quantized: bool,
    },
    /// PSNR report (CSV) over a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        quantized: bool,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate and attach an INT8 section to a checkpoint.
    Quantize {
        #[arg(long)]
        ckpt: PathBuf,
        /// Manifest file, clip directory, or directory of clip directories.
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host wall-clock latency per frame.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        /// LR frame size as HxW.
        #[arg(long, value_parser = commands::parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = swrn::bench::DEFAULT_WARMUPS)]
        warmups: usize,
    },
    /// Train every variant under one config and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference checks of all analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare { hr, out, scale } => commands::prepare(&hr, &out, scale),
        Command::Synth {
            out,
            kind,
            clips,
            frames,
            size,
            seed,
        } => commands::synth(&out, kind.as_deref(), clips, frames, size, seed),
        Command::Train { config } => commands::train(&config),
        Command::Infer {
            ckpt,
            input,
            out,
            quantized,
        } => commands::infer(&ckpt, &input, &out, quantized),
        Command::Eval {
            ckpt,
            manifest,
            quantized,
            out,
        } => commands::eval(&ckpt, &manifest, quantized, out.as_deref()),
        Command::Quantize { ckpt, calib, out } => commands::quantize(&ckpt, &calib, &out),
        Command::Bench {
            ckpt,
            size,
            runs,
            warmups,
        } => commands::bench(&ckpt, size, runs, warmups),
        Command::Ablate { config } => commands::ablate(&config),
        Command::Gradcheck { seed } => commands::gradcheck(seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
