//! Waveform evaluation metrics: signal-to-noise ratio and log-spectral
//! distance.

use crate::audio::Waveform;
use crate::dsp::fft::stft;
use crate::error::{Error, Result};

pub const LSD_FRAME: usize = 2048;
pub const LSD_EPS: f64 = 1e-10;

/// Which operand goes in the SNR numerator. `Paper` puts the approximation's
/// energy there; `Classic` the reference's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrConvention {
    #[default]
    Paper,
    Classic,
}

impl std::str::FromStr for SnrConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(SnrConvention::Paper),
            "classic" => Ok(SnrConvention::Classic),
            other => Err(Error::Config(format!(
                "snr_convention must be `paper` or `classic`, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for SnrConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SnrConvention::Paper => "paper",
            SnrConvention::Classic => "classic",
        })
    }
}

/// SNR in dB. Returns +inf when the signals are identical and -inf when the
/// numerator energy is zero while the signals differ.
pub fn snr(x_ref: &Waveform, y_approx: &Waveform, convention: SnrConvention) -> Result<f64> {
    if x_ref.len() != y_approx.len() {
        return Err(Error::Dsp(format!(
            "snr length mismatch: reference {} vs approximation {}",
            x_ref.len(),
            y_approx.len()
        )));
    }
    if x_ref.sample_rate != y_approx.sample_rate {
        return Err(Error::Dsp(format!(
            "snr sample-rate mismatch: {} vs {}",
            x_ref.sample_rate, y_approx.sample_rate
        )));
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&x, &y) in x_ref.samples.iter().zip(&y_approx.samples) {
        let (x, y) = (x as f64, y as f64);
        let signal = match convention {
            SnrConvention::Paper => y,
            SnrConvention::Classic => x,
        };
        num += signal * signal;
        den += (x - y) * (x - y);
    }
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    if num == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (num / den).log10())
}

/// Log-spectral distance over non-overlapping 2048-sample rectangular frames:
/// X = log10(|S|^2 + eps), LSD = mean over frames of the RMS bin difference.
/// Both signals must have equal length, at least one frame, and be padded by
/// the caller to a multiple of 2048.
pub fn lsd(x_ref: &Waveform, y_approx: &Waveform) -> Result<f64> {
    if x_ref.len() != y_approx.len() {
        return Err(Error::Dsp(format!(
            "lsd length mismatch: reference {} vs approximation {}",
            x_ref.len(),
            y_approx.len()
        )));
    }
    if x_ref.len() < LSD_FRAME {
        return Err(Error::Dsp(format!(
            "lsd needs at least {} samples, got {}",
            LSD_FRAME,
            x_ref.len()
        )));
    }
    let sx = stft(&x_ref.samples, LSD_FRAME, LSD_FRAME)?;
    let sy = stft(&y_approx.samples, LSD_FRAME, LSD_FRAME)?;
    let bins = sx.bins();
    let mut total = 0.0f64;
    for (fx, fy) in sx.frames.iter().zip(&sy.frames) {
        let mut acc = 0.0f64;
        for b in 0..bins {
            let px = (fx[b].norm_sqr() + LSD_EPS).log10();
            let py = (fy[b].norm_sqr() + LSD_EPS).log10();
            let d = py - px;
            acc += d * d;
        }
        total += (acc / bins as f64).sqrt();
    }
    Ok(total / sx.num_frames() as f64)
}

/// Zero-pads a clone of `w` up to the next multiple of the LSD frame.
pub fn pad_for_lsd(w: &Waveform) -> Waveform {
    let len = w.len().max(LSD_FRAME);
    let padded = len.div_ceil(LSD_FRAME) * LSD_FRAME;
    let mut samples = w.samples.clone();
    samples.resize(padded, 0.0);
    Waveform::new(samples, w.sample_rate)
}
