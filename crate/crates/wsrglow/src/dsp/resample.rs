//! Polyphase rational resampler: upsample by p, filter with a linear-phase
//! Kaiser-windowed sinc low-pass, downsample by q. The prototype has
//! 32 taps per polyphase branch plus a shared center tap (length
//! 32*max(p,q) + 1), which keeps the group delay an integer number of
//! upsampled samples so the output is exactly time-aligned with the input.

use crate::audio::Waveform;
use crate::error::{Error, Result};

const TAPS_PER_PHASE: usize = 32;
const KAISER_BETA: f64 = 14.0;
const MAX_FACTOR: u32 = 64;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (series expansion).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = x * x / 4.0;
    for k in 1..64 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass with unit DC gain (before the `gain` factor),
/// centered at `(n_taps-1)/2`. `cutoff` is in rad/sample of the design rate.
pub fn kaiser_lowpass(n_taps: usize, beta: f64, cutoff: f64, gain: f64) -> Vec<f64> {
    let center = (n_taps - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(beta);
    (0..n_taps)
        .map(|n| {
            let m = n as f64 - center;
            let sinc = if m == 0.0 {
                cutoff / std::f64::consts::PI
            } else {
                (cutoff * m).sin() / (std::f64::consts::PI * m)
            };
            let frac = 2.0 * n as f64 / (n_taps - 1) as f64 - 1.0;
            let window = bessel_i0(beta * (1.0 - frac * frac).max(0.0).sqrt()) / i0_beta;
            gain * sinc * window
        })
        .collect()
}

/// Rational resampling to `target_rate`. The rate ratio must reduce to p/q
/// with p, q <= 64. Ratio 1 is the identity. Output length is
/// floor(len * p / q) and the result is time-aligned with the input.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Dsp("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let g = gcd(target_rate, w.sample_rate);
    let p = target_rate / g;
    let q = w.sample_rate / g;
    if p > MAX_FACTOR || q > MAX_FACTOR {
        return Err(Error::Dsp(format!(
            "resampling ratio {}/{} exceeds the supported factor {}",
            p, q, MAX_FACTOR
        )));
    }
    let p = p as usize;
    let q = q as usize;

    let branch = p.max(q);
    let n_taps = TAPS_PER_PHASE * branch + 1;
    let cutoff = 0.9 * std::f64::consts::PI / branch as f64;
    // Upsampling by p scales the spectrum by 1/p; the filter restores it.
    let h = kaiser_lowpass(n_taps, KAISER_BETA, cutoff, p as f64);
    let delay = (n_taps - 1) / 2;

    let out_len = w.samples.len() * p / q;
    let mut out = Vec::with_capacity(out_len);
    for k in 0..out_len {
        // Position on the upsampled grid, already compensated for group delay.
        let i = k * q + delay;
        // Only taps with (i - n) divisible by p hit a real input sample.
        let n0 = i % p;
        let mut acc = 0.0f64;
        let mut n = n0;
        let mut j = (i - n0) / p;
        loop {
            if n >= n_taps {
                break;
            }
            if j < w.samples.len() {
                acc += h[n] * w.samples[j] as f64;
            }
            if j == 0 {
                break;
            }
            n += p;
            j -= 1;
        }
        out.push(acc as f32);
    }
    Ok(Waveform::new(out, target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
        let samples = (0..len)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect();
        Waveform::new(samples, rate)
    }

    /// Fades the first and last `n` samples so a finite sine does not splatter
    /// energy across the spectrum at its cut points.
    fn fade(w: &mut Waveform, n: usize) {
        let len = w.samples.len();
        for i in 0..n.min(len) {
            let g = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / n as f64).cos();
            w.samples[i] *= g as f32;
            w.samples[len - 1 - i] *= g as f32;
        }
    }

    #[test]
    fn same_rate_is_identity() {
        let w = sine(440.0, 48000, 512);
        let r = resample(&w, 48000).unwrap();
        assert_eq!(r.samples, w.samples);
    }

    #[test]
    fn oversized_ratio_is_rejected() {
        let w = sine(100.0, 48000, 64);
        assert!(resample(&w, 48013).is_err());
    }

    #[test]
    fn out_of_band_sine_is_suppressed() {
        // 10 kHz is above the 6 kHz Nyquist of the 12 kHz target.
        let mut w = sine(10_000.0, 48000, 9600);
        fade(&mut w, 480);
        let r = resample(&w, 12000).unwrap();
        let rms = (r.samples.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / r.samples.len() as f64)
            .sqrt();
        let dbfs = 20.0 * (rms + 1e-30).log10();
        assert!(dbfs <= -60.0, "residual {dbfs} dBFS");
    }

    #[test]
    fn passband_sine_amplitude_preserved() {
        let mut w = sine(1000.0, 48000, 9600);
        fade(&mut w, 480);
        let r = resample(&w, 24000).unwrap();
        // Least-squares sine fit on the steady-state interior.
        let rate = 24000.0;
        let lo = 1200;
        let hi = r.samples.len() - 1200;
        let (mut ss, mut sc, mut cc, mut sy, mut cy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in lo..hi {
            let ph = 2.0 * std::f64::consts::PI * 1000.0 * i as f64 / rate;
            let (s, c) = (ph.sin(), ph.cos());
            let y = r.samples[i] as f64;
            ss += s * s;
            sc += s * c;
            cc += c * c;
            sy += s * y;
            cy += c * y;
        }
        let det = ss * cc - sc * sc;
        let a = (sy * cc - cy * sc) / det;
        let b = (cy * ss - sy * sc) / det;
        let amp = (a * a + b * b).sqrt();
        let db = 20.0 * amp.log10();
        assert!(db.abs() <= 0.5, "amplitude {amp} ({db} dB)");
    }

    #[test]
    fn nyquist_respecting_sine_keeps_frequency() {
        // Zero-crossing count scales with length; compare per second.
        let w = sine(2000.0, 48000, 48000);
        let r = resample(&w, 16000).unwrap();
        let crossings = |s: &[f32]| {
            s.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count()
        };
        let inner = &r.samples[800..r.samples.len() - 800];
        let per_sec = crossings(inner) as f64 * 16000.0 / inner.len() as f64;
        assert!((per_sec - 4000.0).abs() <= 4000.0 * 0.01, "crossings/s {per_sec}");
    }

    #[test]
    fn down_then_up_stays_time_aligned() {
        let mut w = sine(1000.0, 48000, 9600);
        fade(&mut w, 480);
        let down = resample(&w, 24000).unwrap();
        let up = resample(&down, 48000).unwrap();
        let lo = 1000;
        let hi = w.samples.len().min(up.samples.len()) - 1000;
        let num: f64 = (lo..hi).map(|i| (w.samples[i] as f64).powi(2)).sum();
        let den: f64 = (lo..hi)
            .map(|i| (w.samples[i] as f64 - up.samples[i] as f64).powi(2))
            .sum();
        let snr = 10.0 * (num / den).log10();
        assert!(snr > 60.0, "down-up SNR {snr} dB");
    }

    #[test]
    fn output_length_is_floor_len_p_over_q() {
        let w = Waveform::new(vec![0.0; 1001], 48000);
        assert_eq!(resample(&w, 12000).unwrap().len(), 250);
        assert_eq!(resample(&w, 24000).unwrap().len(), 500);
        let w2 = Waveform::new(vec![0.0; 100], 12000);
        assert_eq!(resample(&w2, 48000).unwrap().len(), 400);
    }

    #[test]
    fn dc_gain_is_unity() {
        let w = Waveform::new(vec![0.5; 4000], 48000);
        let r = resample(&w, 16000).unwrap();
        let mid = r.len() / 2;
        assert_relative_eq!(r.samples[mid] as f64, 0.5, max_relative = 2e-3);
    }
}
