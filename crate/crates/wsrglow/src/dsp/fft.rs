//! Radix-2 FFT and the short-time Fourier transform with a rectangular
//! window. Frame `f`, bin `b` of the STFT is the plain DFT
//! `sum_n x[f*hop + n] * exp(-2*pi*i*b*n/frame)` over one frame; only the
//! one-sided bins `0..=frame/2` are kept.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One-sided complex spectrogram: `frames[f][b]` for `b` in `0..=frame_size/2`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum {
    pub frames: Vec<Vec<Complex64>>,
    pub frame_size: usize,
    pub hop: usize,
}

impl ComplexSpectrum {
    pub fn bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// In-place iterative radix-2 FFT (forward, unnormalized).
pub fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
                w *= wlen;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// STFT with rectangular window. `frame_size` must be a power of two and the
/// signal length a multiple of `hop`; padding is the caller's job. Frames are
/// taken while they fit entirely inside the signal.
pub fn stft(x: &[f32], frame_size: usize, hop: usize) -> Result<ComplexSpectrum> {
    if !frame_size.is_power_of_two() || frame_size == 0 {
        return Err(Error::Dsp(format!("frame_size {frame_size} must be a power of two")));
    }
    if hop == 0 {
        return Err(Error::Dsp("hop must be positive".into()));
    }
    if x.len() % hop != 0 {
        return Err(Error::Dsp(format!(
            "signal length {} is not a multiple of hop {} (pad first)",
            x.len(),
            hop
        )));
    }
    let bins = frame_size / 2 + 1;
    let num_frames = if x.len() >= frame_size { (x.len() - frame_size) / hop + 1 } else { 0 };
    let mut frames = Vec::with_capacity(num_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
    for f in 0..num_frames {
        let start = f * hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(x[start + n] as f64, 0.0);
        }
        fft_in_place(&mut buf);
        frames.push(buf[..bins].to_vec());
    }
    Ok(ComplexSpectrum { frames, frame_size, hop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|b| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * b as f64 * i as f64 / n as f64;
                    acc += Complex64::new(ang.cos(), ang.sin()) * v;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf);
        let oracle = naive_dft(&x);
        for (a, b) in buf.iter().zip(&oracle) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-10);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_signal_gives_zero_spectrum() {
        let s = stft(&[0.0; 32], 8, 8).unwrap();
        assert_eq!(s.num_frames(), 4);
        for f in &s.frames {
            assert!(f.iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn constant_signal_concentrates_in_bin_zero() {
        let s = stft(&[1.0; 8], 8, 8).unwrap();
        assert_eq!(s.num_frames(), 1);
        assert_relative_eq!(s.frames[0][0].re, 8.0, epsilon = 1e-12);
        assert_relative_eq!(s.frames[0][0].im, 0.0, epsilon = 1e-12);
        for b in 1..=4 {
            assert!(s.frames[0][b].norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = [0.0f32; 8];
        x[0] = 1.0;
        let s = stft(&x, 8, 8).unwrap();
        for b in 0..=4 {
            assert_relative_eq!(s.frames[0][b].re, 1.0, epsilon = 1e-12);
            assert_relative_eq!(s.frames[0][b].im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn length_not_multiple_of_hop_errors() {
        assert!(stft(&[0.0; 9], 8, 8).is_err());
    }

    #[test]
    fn parseval_for_one_frame() {
        // Two-sided spectral energy equals frame_size times time energy.
        let x: Vec<f32> = (0..64).map(|i| ((i as f32) * 0.37).sin() * 0.8).collect();
        let mut buf: Vec<Complex64> =
            x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        fft_in_place(&mut buf);
        let spec_energy: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
        let time_energy: f64 = x.iter().map(|&v| (v as f64) * (v as f64)).sum();
        assert_relative_eq!(spec_energy, 64.0 * time_energy, max_relative = 1e-6);
    }

    #[test]
    fn hop_smaller_than_frame_counts_frames_correctly() {
        // L=640, frame=512, hop=128 -> (640-512)/128 + 1 = 2 frames.
        let s = stft(&vec![0.25; 640], 512, 128).unwrap();
        assert_eq!(s.num_frames(), 2);
    }
}
