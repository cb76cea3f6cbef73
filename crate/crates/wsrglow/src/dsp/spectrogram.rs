//! Log-magnitude spectrogram rendering to a portable graymap (P5).

use std::path::Path;

use crate::audio::Waveform;
use crate::dsp::fft::stft;
use crate::error::{Error, Result};

pub const SPEC_FRAME: usize = 512;
pub const SPEC_HOP: usize = 128;

/// 8-bit grayscale image, row-major from the top row down.
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// dB-scaled log-magnitude spectrogram normalized per image to [0, 255],
/// frequency increasing upward (row 0 is the highest bin). Input is padded
/// internally as needed.
pub fn spectrogram_image(w: &Waveform) -> Result<GrayImage> {
    if w.is_empty() {
        return Err(Error::Dsp("spectrogram of empty waveform".into()));
    }
    let mut samples = w.samples.clone();
    let padded = samples.len().max(SPEC_FRAME).div_ceil(SPEC_HOP) * SPEC_HOP;
    samples.resize(padded, 0.0);
    let spec = stft(&samples, SPEC_FRAME, SPEC_HOP)?;

    let bins = spec.bins();
    let width = spec.num_frames();
    let mut db = vec![0.0f64; width * bins];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (f, frame) in spec.frames.iter().enumerate() {
        for (b, c) in frame.iter().enumerate() {
            let v = 10.0 * (c.norm_sqr() + 1e-10).log10();
            db[f * bins + b] = v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }

    let mut pixels = vec![0u8; width * bins];
    let range = hi - lo;
    for row in 0..bins {
        let bin = bins - 1 - row; // highest frequency at the top
        for col in 0..width {
            let v = db[col * bins + bin];
            let px = if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 };
            pixels[row * width + col] = px;
        }
    }
    Ok(GrayImage { width, height: bins, pixels })
}

/// Writes the image as a binary PGM (P5).
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_renders_uniform_zero() {
        let w = Waveform::new(vec![0.0; 2048], 48000);
        let img = spectrogram_image(&w).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn pure_tone_lights_a_single_band() {
        let rate = 48000u32;
        let freq = 6000.0;
        let w = Waveform::new(
            (0..8192)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32)
                .collect(),
            rate,
        );
        let img = spectrogram_image(&w).unwrap();
        // Column-mean brightness per row; the tone bin should dominate.
        let row_mean: Vec<f64> = (0..img.height)
            .map(|r| {
                (0..img.width).map(|c| img.pixels[r * img.width + c] as f64).sum::<f64>()
                    / img.width as f64
            })
            .collect();
        let brightest = row_mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // bin = freq/rate * frame; row = bins-1-bin.
        let expect_bin = (freq / rate as f64 * SPEC_FRAME as f64).round() as usize;
        let expect_row = img.height - 1 - expect_bin;
        assert!(
            (brightest as isize - expect_row as isize).abs() <= 1,
            "brightest row {brightest}, expected {expect_row}"
        );
    }

    #[test]
    fn band_limited_audio_has_dark_upper_half() {
        // A low tone leaves the upper half of the spectrogram near the floor.
        let rate = 48000u32;
        let w = Waveform::new(
            (0..8192)
                .map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / rate as f64).sin() as f32)
                .collect(),
            rate,
        );
        let img = spectrogram_image(&w).unwrap();
        let half = img.height / 2;
        let upper: f64 = img.pixels[..half * img.width].iter().map(|&p| p as f64).sum();
        let lower: f64 = img.pixels[half * img.width..].iter().map(|&p| p as f64).sum();
        assert!(upper < lower * 0.5, "upper {upper} lower {lower}");
    }

    #[test]
    fn pgm_header_is_wellformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        let img = GrayImage { width: 3, height: 2, pixels: vec![0, 128, 255, 1, 2, 3] };
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 1, 2, 3]);
    }
}
