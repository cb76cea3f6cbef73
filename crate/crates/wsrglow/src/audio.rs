//! WAV file reading/writing and waveform segmentation. Only canonical
//! RIFF/WAVE little-endian PCM16 and IEEE float32 are handled; chunks beyond
//! fmt/data are ignored on read and omitted on write.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio. Samples are expected in [-1, 1]; loading clamps and counts
/// violations rather than failing.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Clamps all samples into [-1, 1] in place, returning how many moved.
    pub fn clamp_unit(&mut self) -> usize {
        let mut moved = 0;
        for s in &mut self.samples {
            let c = s.clamp(-1.0, 1.0);
            if c != *s {
                *s = c;
                moved += 1;
            }
        }
        moved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// A decoded file plus load diagnostics.
#[derive(Debug)]
pub struct LoadedWav {
    pub waveform: Waveform,
    /// Samples clamped into [-1, 1] on load (possible for float32 input).
    pub clamped: usize,
}

fn rd_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn rd_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a RIFF/WAVE file; multi-channel input is mono-mixed by arithmetic
/// mean, PCM16 sample v maps to v/32768.
pub fn read_wav(path: &Path) -> Result<LoadedWav> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::wav(path, "not a RIFF/WAVE file"));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::wav(path, format!("chunk {:?} truncated", String::from_utf8_lossy(id))));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::wav(path, "fmt chunk too short"));
                }
                let codec = rd_u16(&bytes, body_start);
                let channels = rd_u16(&bytes, body_start + 2);
                let rate = rd_u32(&bytes, body_start + 4);
                let bits = rd_u16(&bytes, body_start + 14);
                fmt = Some((codec, channels, rate, bits));
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {} // ignore everything else
        }
        pos = body_start + size + (size & 1); // chunks are word-aligned
    }

    let (codec, channels, rate, bits) =
        fmt.ok_or_else(|| Error::wav(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::wav(path, "missing data chunk"))?;
    if channels == 0 {
        return Err(Error::wav(path, "zero channels"));
    }
    if rate == 0 {
        return Err(Error::wav(path, "zero sample rate"));
    }

    let ch = channels as usize;
    let mut samples: Vec<f32>;
    match (codec, bits) {
        (1, 16) => {
            if data.len() % (2 * ch) != 0 {
                return Err(Error::wav(path, "pcm16 data size not a whole number of frames"));
            }
            let frames = data.len() / (2 * ch);
            samples = Vec::with_capacity(frames);
            for f in 0..frames {
                let mut acc = 0.0f64;
                for c in 0..ch {
                    let at = (f * ch + c) * 2;
                    let v = i16::from_le_bytes([data[at], data[at + 1]]);
                    acc += v as f64 / 32768.0;
                }
                samples.push((acc / ch as f64) as f32);
            }
        }
        (3, 32) => {
            if data.len() % (4 * ch) != 0 {
                return Err(Error::wav(path, "float32 data size not a whole number of frames"));
            }
            let frames = data.len() / (4 * ch);
            samples = Vec::with_capacity(frames);
            for f in 0..frames {
                let mut acc = 0.0f64;
                for c in 0..ch {
                    let at = (f * ch + c) * 4;
                    let v = f32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]]);
                    if !v.is_finite() {
                        return Err(Error::wav(path, format!("non-finite sample in frame {f}")));
                    }
                    acc += v as f64;
                }
                samples.push((acc / ch as f64) as f32);
            }
        }
        (codec, bits) => {
            return Err(Error::wav(path, format!("unsupported codec {codec} / {bits}-bit")));
        }
    }

    let mut waveform = Waveform::new(samples, rate);
    let clamped = waveform.clamp_unit();
    Ok(LoadedWav { waveform, clamped })
}

/// pcm16 quantization: round-half-away-from-zero of v*32767, clamped to
/// [-32768, 32767].
pub fn pcm16_of(v: f32) -> i16 {
    let scaled = (v as f64 * 32767.0).abs().floor() + if (v as f64 * 32767.0).abs().fract() >= 0.5 { 1.0 } else { 0.0 };
    let signed = if v < 0.0 { -scaled } else { scaled };
    signed.clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono WAV file in the requested format.
pub fn write_wav(w: &Waveform, path: &Path, format: SampleFormat) -> Result<()> {
    let (codec, bits, body): (u16, u16, Vec<u8>) = match format {
        SampleFormat::Pcm16 => {
            let mut body = Vec::with_capacity(w.samples.len() * 2);
            for &s in &w.samples {
                body.extend_from_slice(&pcm16_of(s).to_le_bytes());
            }
            (1, 16, body)
        }
        SampleFormat::Float32 => {
            let mut body = Vec::with_capacity(w.samples.len() * 4);
            for &s in &w.samples {
                body.extend_from_slice(&s.to_le_bytes());
            }
            (3, 32, body)
        }
    };

    let block_align = (bits / 8) as u32;
    let mut out = Vec::with_capacity(44 + body.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + body.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&codec.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    if body.len() % 2 == 1 {
        out.push(0);
    }

    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Consecutive windows starting at 0, hop, 2*hop, ...; a final partial window
/// is discarded. A signal shorter than `seg_len` yields no segments.
pub fn segment(w: &Waveform, seg_len: usize, hop: usize) -> Vec<Waveform> {
    assert!(seg_len >= hop && hop >= 1, "need seg_len >= hop >= 1");
    let mut out = Vec::new();
    let mut start = 0;
    while start + seg_len <= w.samples.len() {
        out.push(Waveform::new(w.samples[start..start + seg_len].to_vec(), w.sample_rate));
        start += hop;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn pcm16_scale_rules() {
        assert_eq!(pcm16_of(0.0), 0);
        assert_eq!(pcm16_of(1.0), 32767);
        assert_eq!(pcm16_of(-1.0), -32767);
        assert_eq!(pcm16_of(0.5), 16384); // round(0.5 * 32767) = round(16383.5)
    }

    #[test]
    fn pcm16_read_scale() {
        // -32768 -> -1.0, 0 -> 0.0, 32767 -> 32767/32768 by construction.
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let mut body = Vec::new();
        for v in [-32768i16, 0, 32767] {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = Vec::new();
        file.extend_from_slice(b"RIFF");
        file.extend_from_slice(&(36 + body.len() as u32).to_le_bytes());
        file.extend_from_slice(b"WAVEfmt ");
        file.extend_from_slice(&16u32.to_le_bytes());
        file.extend_from_slice(&1u16.to_le_bytes());
        file.extend_from_slice(&1u16.to_le_bytes());
        file.extend_from_slice(&8000u32.to_le_bytes());
        file.extend_from_slice(&16000u32.to_le_bytes());
        file.extend_from_slice(&2u16.to_le_bytes());
        file.extend_from_slice(&16u16.to_le_bytes());
        file.extend_from_slice(b"data");
        file.extend_from_slice(&(body.len() as u32).to_le_bytes());
        file.extend_from_slice(&body);
        std::fs::write(&path, file).unwrap();

        let loaded = read_wav(&path).unwrap();
        assert_eq!(loaded.waveform.samples, vec![-1.0, 0.0, 32767.0 / 32768.0]);
        assert_eq!(loaded.waveform.sample_rate, 8000);
        assert_eq!(loaded.clamped, 0);
    }

    #[test]
    fn float32_round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let w = Waveform::new(vec![0.0, 0.25, -0.75, 1.0, -1.0, 0.123456], 48000);
        write_wav(&w, &path, SampleFormat::Float32).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.waveform.sample_rate, 48000);
        assert_eq!(r.waveform.samples.len(), w.samples.len());
        for (a, b) in r.waveform.samples.iter().zip(&w.samples) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn stereo_mixes_by_mean() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let mut body = Vec::new();
        for v in [0.5f32, -0.5, 1.0, 0.0] {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = Vec::new();
        file.extend_from_slice(b"RIFF");
        file.extend_from_slice(&(36 + body.len() as u32).to_le_bytes());
        file.extend_from_slice(b"WAVEfmt ");
        file.extend_from_slice(&16u32.to_le_bytes());
        file.extend_from_slice(&3u16.to_le_bytes());
        file.extend_from_slice(&2u16.to_le_bytes());
        file.extend_from_slice(&44100u32.to_le_bytes());
        file.extend_from_slice(&(44100u32 * 8).to_le_bytes());
        file.extend_from_slice(&8u16.to_le_bytes());
        file.extend_from_slice(&32u16.to_le_bytes());
        file.extend_from_slice(b"data");
        file.extend_from_slice(&(body.len() as u32).to_le_bytes());
        file.extend_from_slice(&body);
        std::fs::write(&path, file).unwrap();

        let r = read_wav(&path).unwrap();
        assert_eq!(r.waveform.samples, vec![0.0, 0.5]);
    }

    #[test]
    fn truncated_and_garbage_files_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFFxxxxWAVEdata\xff\xff\xff\xff").unwrap();
        assert!(read_wav(&path).is_err());
        std::fs::write(&path, b"not a wav at all").unwrap();
        assert!(read_wav(&path).is_err());
    }

    #[test]
    fn unsupported_codec_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("alaw.wav");
        let mut file = Vec::new();
        file.extend_from_slice(b"RIFF");
        file.extend_from_slice(&40u32.to_le_bytes());
        file.extend_from_slice(b"WAVEfmt ");
        file.extend_from_slice(&16u32.to_le_bytes());
        file.extend_from_slice(&6u16.to_le_bytes()); // a-law
        file.extend_from_slice(&1u16.to_le_bytes());
        file.extend_from_slice(&8000u32.to_le_bytes());
        file.extend_from_slice(&8000u32.to_le_bytes());
        file.extend_from_slice(&1u16.to_le_bytes());
        file.extend_from_slice(&8u16.to_le_bytes());
        file.extend_from_slice(b"data");
        file.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, file).unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("unsupported codec"), "{err}");
    }

    #[test]
    fn segment_window_arithmetic() {
        let w = Waveform::new(vec![0.0; 10], 8000);
        assert_eq!(segment(&w, 10, 10).len(), 1);
        let w20 = Waveform::new((0..20).map(|i| i as f32 / 32.0).collect(), 8000);
        let segs = segment(&w20, 8, 8);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].samples[0], 8.0 / 32.0);
        let w7 = Waveform::new(vec![0.0; 7], 8000);
        assert!(segment(&w7, 8, 8).is_empty());
    }

    proptest! {
        #[test]
        fn pcm16_round_trip_error_bound(samples in proptest::collection::vec(-1.0f32..=1.0, 1..64)) {
            // Exact worst case of the write/read scale pair is
            // (0.5 + |v|)/32768 <= 1.5/32768.
            let dir = tempdir().unwrap();
            let path = dir.path().join("rt.wav");
            let w = Waveform::new(samples.clone(), 16000);
            write_wav(&w, &path, SampleFormat::Pcm16).unwrap();
            let r = read_wav(&path).unwrap();
            for (a, b) in r.waveform.samples.iter().zip(&samples) {
                prop_assert!((a - b).abs() <= 1.5 / 32768.0 + 1e-9);
            }
        }

        #[test]
        fn float32_round_trip_identity(samples in proptest::collection::vec(-1.0f32..=1.0, 1..64)) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("rt32.wav");
            let w = Waveform::new(samples.clone(), 24000);
            write_wav(&w, &path, SampleFormat::Float32).unwrap();
            let r = read_wav(&path).unwrap();
            prop_assert_eq!(r.waveform.samples, samples);
        }
    }
}
