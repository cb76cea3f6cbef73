use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wsrglow::audio::SampleFormat;
use wsrglow::cli;
use wsrglow::dsp::SnrConvention;

#[derive(Parser)]
#[command(name = "wsrglow", version, about = "Waveform-flow audio super-resolution pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Resample a directory of WAVs into paired hr/ and lr/ sets plus a manifest.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48000)]
        hr_rate: u32,
        #[arg(long)]
        ratio: usize,
    },
    /// Train a model; writes checkpoints, a CSV log and the effective config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Disable the STFT encoder (both magnitude and phase blocks).
        #[arg(long)]
        no_stft: bool,
        /// Keep the STFT encoder but drop the phase-embedding block.
        #[arg(long)]
        no_phase: bool,
        /// Keep the STFT encoder but drop the magnitude block.
        #[arg(long)]
        no_magnitude: bool,
        /// Disable the time-domain LR audio encoder.
        #[arg(long)]
        no_lr_encoder: bool,
        /// Override the config's iteration count.
        #[arg(long)]
        iters: Option<u64>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint (its embedded config wins).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve one LR file with a trained checkpoint.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variance of the base Gaussian (0 = deterministic).
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output sample format: float32 or pcm16.
        #[arg(long, default_value = "float32")]
        format: String,
    },
    /// Compare directories of reference and hypothesis WAVs (SNR, LSD).
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `paper` (approximation energy in the numerator) or `classic`.
        #[arg(long, default_value = "paper")]
        snr_convention: String,
    },
    /// Run the verification battery (gradients, invertibility, oracles).
    Selftest,
    /// Render a WAV's log-magnitude spectrogram to a P5 graymap.
    Spectrogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> wsrglow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Prepare { input, out, hr_rate, ratio } => cli::cmd_prepare(&input, &out, hr_rate, ratio),
        Cmd::Train {
            config,
            data,
            out,
            no_stft,
            no_phase,
            no_magnitude,
            no_lr_encoder,
            iters,
            seed,
            resume,
        } => {
            let overrides = cli::TrainOverrides {
                no_stft,
                no_phase,
                no_magnitude,
                no_lr_encoder,
                iters,
                seed,
            };
            cli::cmd_train(config.as_deref(), &data, &out, &overrides, resume.as_deref())
        }
        Cmd::Infer { ckpt, input, out, temperature, seed, format } => {
            let format = match format.as_str() {
                "float32" => SampleFormat::Float32,
                "pcm16" => SampleFormat::Pcm16,
                other => {
                    return Err(wsrglow::Error::Config(format!(
                        "format must be float32 or pcm16, got {other:?}"
                    )))
                }
            };
            cli::cmd_infer(&ckpt, &input, &out, temperature, seed, format)
        }
        Cmd::Eval { reference, hyp, out, snr_convention } => {
            let convention: SnrConvention = snr_convention.parse()?;
            cli::cmd_eval(&reference, &hyp, &out, convention)
        }
        Cmd::Selftest => cli::cmd_selftest(),
        Cmd::Spectrogram { input, out } => cli::cmd_spectrogram(&input, &out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
