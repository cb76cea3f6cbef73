//! Conditioning encoders. The low-resolution waveform is encoded from the
//! time domain (mu-law codes to embeddings, grouped 8 per frame) and the
//! frequency domain (frame-8 STFT magnitudes plus embedded quantized phases),
//! concatenated along channels and repeated to the high-resolution frame rate.

use ndgrad::{Graph, ParamModule, Parameter, Tensor, Var};

use crate::audio::Waveform;
use crate::dsp::{codes_for, stft};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const GROUP: usize = 8;
pub const LR_EMBED_DIM: usize = 256;
pub const LR_BLOCK_CHANNELS: usize = GROUP * LR_EMBED_DIM; // 2048
pub const STFT_FRAME: usize = 8;
pub const STFT_BINS: usize = STFT_FRAME / 2 + 1; // 5
pub const PHASE_BINS: usize = 256;
pub const PHASE_EMBED_DIM: usize = 50;
pub const PHASE_BLOCK_CHANNELS: usize = STFT_BINS * PHASE_EMBED_DIM; // 250
pub const MAG_BLOCK_CHANNELS: usize = STFT_BINS; // 5

/// How the frame-8 spectrum is turned into channels. `Polar` feeds magnitudes
/// directly and embeds quantized phases; `Rectangular` feeds real parts
/// directly and embeds quantized imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StftMode {
    #[default]
    Polar,
    Rectangular,
}

impl std::str::FromStr for StftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polar" => Ok(StftMode::Polar),
            "rectangular" => Ok(StftMode::Rectangular),
            other => Err(Error::Config(format!(
                "stft_mode must be `polar` or `rectangular`, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for StftMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StftMode::Polar => "polar",
            StftMode::Rectangular => "rectangular",
        })
    }
}

/// Which condition blocks are active. `use_phase`/`use_magnitude` only apply
/// while `use_stft` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderFlags {
    pub use_lr: bool,
    pub use_stft: bool,
    pub use_phase: bool,
    pub use_magnitude: bool,
    pub stft_mode: StftMode,
}

impl Default for EncoderFlags {
    fn default() -> Self {
        EncoderFlags {
            use_lr: true,
            use_stft: true,
            use_phase: true,
            use_magnitude: true,
            stft_mode: StftMode::Polar,
        }
    }
}

impl EncoderFlags {
    pub fn magnitude_active(&self) -> bool {
        self.use_stft && self.use_magnitude
    }

    pub fn phase_active(&self) -> bool {
        self.use_stft && self.use_phase
    }

    /// Channel count of the assembled condition:
    /// 2048*[lr] + 5*[magnitude] + 250*[phase].
    pub fn cond_channels(&self) -> usize {
        let mut c = 0;
        if self.use_lr {
            c += LR_BLOCK_CHANNELS;
        }
        if self.magnitude_active() {
            c += MAG_BLOCK_CHANNELS;
        }
        if self.phase_active() {
            c += PHASE_BLOCK_CHANNELS;
        }
        c
    }
}

/// Time-domain encoder parameters: one embedding row per mu-law code.
#[derive(Debug, Clone)]
pub struct LrEncoderParams<T> {
    pub table: Parameter<T>,
}

/// Frequency-domain encoder parameters: one embedding row per phase bin.
#[derive(Debug, Clone)]
pub struct StftEncoderParams<T> {
    pub phase_table: Parameter<T>,
}

/// The assembled condition for one example, time-aligned to squeezed
/// high-resolution frames.
#[derive(Debug, Clone)]
pub struct ConditionEncoding<T> {
    pub channels: Tensor<T>,
    pub lr_rate: u32,
    pub ratio: usize,
}

impl<T: ndgrad::Scalar> ConditionEncoding<T> {
    pub fn cond_channels(&self) -> usize {
        self.channels.shape()[0]
    }

    pub fn hr_frames(&self) -> usize {
        self.channels.shape()[1]
    }
}

/// Produces `concat(H_LR, H_STFT)` from a low-resolution waveform.
#[derive(Debug, Clone)]
pub struct CondEncoder<T> {
    pub flags: EncoderFlags,
    pub lr: Option<LrEncoderParams<T>>,
    pub stft: Option<StftEncoderParams<T>>,
}

fn normal_tensor<T: ndgrad::Scalar>(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of_f64(rng.normal() * std))
}

impl<T: ndgrad::Scalar> CondEncoder<T> {
    /// Builds encoder parameters for the active blocks, N(0, 0.01^2) init.
    pub fn new(flags: EncoderFlags, rng: &mut Rng) -> Result<Self> {
        if flags.cond_channels() == 0 {
            return Err(Error::Encoder(
                "no condition blocks active; an unconditional model is not supported".into(),
            ));
        }
        let lr = flags.use_lr.then(|| LrEncoderParams {
            table: Parameter::new(
                "enc.lr.table",
                normal_tensor(vec![256, LR_EMBED_DIM], 0.01, rng),
            ),
        });
        let stft = flags.phase_active().then(|| StftEncoderParams {
            phase_table: Parameter::new(
                "enc.stft.phase_table",
                normal_tensor(vec![PHASE_BINS, PHASE_EMBED_DIM], 0.01, rng),
            ),
        });
        Ok(CondEncoder { flags, lr, stft })
    }

    pub fn cond_channels(&self) -> usize {
        self.flags.cond_channels()
    }

    fn check_input(lr: &Waveform) -> Result<()> {
        if lr.is_empty() {
            return Err(Error::Encoder("empty low-resolution input".into()));
        }
        if lr.len() % GROUP != 0 {
            return Err(Error::Encoder(format!(
                "low-resolution length {} is not a multiple of {GROUP} (pad first)",
                lr.len()
            )));
        }
        Ok(())
    }

    /// Time-domain block `[2048, L/8]`: per sample mu-law encode, quantize to
    /// 256 codes, embed to 256 dims; groups of 8 consecutive embeddings are
    /// flattened sample-major into the channel axis.
    pub fn encode_lr_graph(&self, g: &mut Graph<T>, lr: &Waveform) -> Result<Var> {
        Self::check_input(lr)?;
        let params = self
            .lr
            .as_ref()
            .ok_or_else(|| Error::Encoder("LR encoder not active".into()))?;
        let codes = codes_for(&lr.samples)?;
        let indices: Vec<usize> = codes.iter().map(|&c| c as usize).collect();
        let table = g.param(&params.table)?;
        let rows = g.embedding(table, &indices)?;
        Ok(g.group_channels(rows, GROUP)?)
    }

    /// Frequency-domain block `[255, L/8]` (or fewer channels under ablation):
    /// frame-8 rectangular STFT; magnitudes (or real parts) feed 5 direct
    /// channels, phases (or imaginary parts) are quantized to 256 bins and
    /// embedded to 50 dims per bin.
    pub fn encode_stft_graph(&self, g: &mut Graph<T>, lr: &Waveform) -> Result<Var> {
        let (mag, phase) = self.stft_blocks_graph(g, lr)?;
        match (mag, phase) {
            (Some(m), Some(p)) => Ok(g.concat_rows(m, p)?),
            (Some(m), None) => Ok(m),
            (None, Some(p)) => Ok(p),
            (None, None) => Err(Error::Encoder("STFT encoder not active".into())),
        }
    }

    fn stft_blocks_graph(
        &self,
        g: &mut Graph<T>,
        lr: &Waveform,
    ) -> Result<(Option<Var>, Option<Var>)> {
        Self::check_input(lr)?;
        if !self.flags.use_stft {
            return Ok((None, None));
        }
        let spec = stft(&lr.samples, STFT_FRAME, STFT_FRAME)?;
        let frames = spec.num_frames();

        let mut direct = vec![T::zero(); STFT_BINS * frames];
        let mut codes = Vec::with_capacity(frames * STFT_BINS);
        for (f, frame) in spec.frames.iter().enumerate() {
            for (b, c) in frame.iter().enumerate() {
                match self.flags.stft_mode {
                    StftMode::Polar => {
                        let mag = c.norm();
                        direct[b * frames + f] = T::of_f64(mag);
                        codes.push(if mag == 0.0 { 128 } else { phase_bin(c.im.atan2(c.re)) });
                    }
                    StftMode::Rectangular => {
                        direct[b * frames + f] = T::of_f64(c.re);
                        codes.push(imag_bin(c.im));
                    }
                }
            }
        }

        let mag_block = if self.flags.magnitude_active() {
            let t = Tensor::new(vec![STFT_BINS, frames], direct)?;
            Some(g.input(t))
        } else {
            None
        };
        let phase_block = if self.flags.phase_active() {
            let params = self
                .stft
                .as_ref()
                .ok_or_else(|| Error::Encoder("phase table missing".into()))?;
            let table = g.param(&params.phase_table)?;
            let rows = g.embedding(table, &codes)?;
            Some(g.group_channels(rows, STFT_BINS)?)
        } else {
            None
        };
        Ok((mag_block, phase_block))
    }

    /// Assembles the condition on a graph: active blocks concatenated as
    /// `[H_LR | magnitude | phase]`, then each frame repeated `r` times.
    pub fn build_condition_graph(&self, g: &mut Graph<T>, lr: &Waveform, r: usize) -> Result<Var> {
        if r != 2 && r != 4 {
            return Err(Error::Encoder(format!("upscale ratio must be 2 or 4, got {r}")));
        }
        Self::check_input(lr)?;

        let mut blocks: Vec<Var> = Vec::new();
        if self.flags.use_lr {
            blocks.push(self.encode_lr_graph(g, lr)?);
        }
        let (mag, phase) = self.stft_blocks_graph(g, lr)?;
        blocks.extend(mag);
        blocks.extend(phase);
        let mut it = blocks.into_iter();
        let mut cond = it
            .next()
            .ok_or_else(|| Error::Encoder("no condition blocks active".into()))?;
        for b in it {
            cond = g.concat_rows(cond, b)?;
        }
        Ok(g.repeat_cols(cond, r)?)
    }

    /// Plain-tensor condition for inference and evaluation.
    pub fn build_condition(&self, lr: &Waveform, r: usize) -> Result<ConditionEncoding<T>> {
        let mut g = Graph::new();
        let v = self.build_condition_graph(&mut g, lr, r)?;
        Ok(ConditionEncoding {
            channels: g.value(v).clone(),
            lr_rate: lr.sample_rate,
            ratio: r,
        })
    }

    /// Plain-tensor time-domain encoding, mainly for tests and diagnostics.
    pub fn encode_lr(&self, lr: &Waveform) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = self.encode_lr_graph(&mut g, lr)?;
        Ok(g.value(v).clone())
    }

    /// Plain-tensor frequency-domain encoding.
    pub fn encode_stft(&self, lr: &Waveform) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = self.encode_stft_graph(&mut g, lr)?;
        Ok(g.value(v).clone())
    }
}

impl<T: ndgrad::Scalar> ParamModule<T> for CondEncoder<T> {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        if let Some(lr) = &self.lr {
            f(&lr.table);
        }
        if let Some(stft) = &self.stft {
            f(&stft.phase_table);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        if let Some(lr) = &mut self.lr {
            f(&mut lr.table);
        }
        if let Some(stft) = &mut self.stft {
            f(&mut stft.phase_table);
        }
    }
}

/// Phase in (-pi, pi] to one of 256 uniform bins over [-pi, pi); pi wraps
/// to the -pi bin.
fn phase_bin(phi: f64) -> usize {
    let u = (phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * PHASE_BINS as f64;
    (u.floor() as i64).rem_euclid(PHASE_BINS as i64) as usize
}

/// Imaginary part in [-8, 8] to one of 256 uniform bins, clamped.
fn imag_bin(v: f64) -> usize {
    let u = ((v + 8.0) / 16.0 * 256.0).floor() as i64;
    u.clamp(0, 255) as usize
}
