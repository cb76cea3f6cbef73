//! Plain-text `key = value` run configuration. Every key has a default,
//! unknown keys are rejected, and the canonical text form is what checkpoint
//! files embed and run directories echo.

use crate::dsp::SnrConvention;
use crate::encoders::EncoderFlags;
use crate::error::{Error, Result};
use crate::flow::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // model
    pub n_flows: usize,
    pub wn_layers: usize,
    pub wn_channels: usize,
    pub kernel: usize,
    pub group: usize,
    pub base_sigma: f64,
    // encoders
    pub use_lr_encoder: bool,
    pub use_stft: bool,
    pub use_phase: bool,
    pub use_magnitude: bool,
    pub stft_mode: crate::encoders::StftMode,
    // data and optimization
    pub hr_rate: u32,
    pub ratio: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub max_hr_samples: usize,
    pub iters: u64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    /// 0 disables clipping.
    pub clip_grad_norm: f64,
    pub snr_convention: SnrConvention,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_flows: 12,
            wn_layers: 8,
            wn_channels: 256,
            kernel: 3,
            group: 8,
            base_sigma: 1.0,
            use_lr_encoder: true,
            use_stft: true,
            use_phase: true,
            use_magnitude: true,
            stft_mode: Default::default(),
            hr_rate: 48000,
            ratio: 2,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            batch: 12,
            max_hr_samples: 8192,
            iters: 1000,
            seed: 0,
            checkpoint_interval: 100,
            clip_grad_norm: 0.0,
            snr_convention: SnrConvention::Paper,
        }
    }
}

fn parse_val<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse value {v:?} for key {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("key {key} expects a boolean, got {other:?}"))),
    }
}

impl RunConfig {
    /// Parses the text format, starting from defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "n_flows" => cfg.n_flows = parse_val(key, value)?,
                "wn_layers" => cfg.wn_layers = parse_val(key, value)?,
                "wn_channels" => cfg.wn_channels = parse_val(key, value)?,
                "kernel" => cfg.kernel = parse_val(key, value)?,
                "group" => cfg.group = parse_val(key, value)?,
                "base_sigma" => cfg.base_sigma = parse_val(key, value)?,
                "use_lr_encoder" => cfg.use_lr_encoder = parse_bool(key, value)?,
                "use_stft" => cfg.use_stft = parse_bool(key, value)?,
                "use_phase" => cfg.use_phase = parse_bool(key, value)?,
                "use_magnitude" => cfg.use_magnitude = parse_bool(key, value)?,
                "stft_mode" => cfg.stft_mode = value.parse()?,
                "hr_rate" => cfg.hr_rate = parse_val(key, value)?,
                "ratio" => cfg.ratio = parse_val(key, value)?,
                "lr" => cfg.lr = parse_val(key, value)?,
                "beta1" => cfg.beta1 = parse_val(key, value)?,
                "beta2" => cfg.beta2 = parse_val(key, value)?,
                "eps" => cfg.eps = parse_val(key, value)?,
                "batch" => cfg.batch = parse_val(key, value)?,
                "max_hr_samples" => cfg.max_hr_samples = parse_val(key, value)?,
                "iters" => cfg.iters = parse_val(key, value)?,
                "seed" => cfg.seed = parse_val(key, value)?,
                "checkpoint_interval" => cfg.checkpoint_interval = parse_val(key, value)?,
                "clip_grad_norm" => cfg.clip_grad_norm = parse_val(key, value)?,
                "snr_convention" => cfg.snr_convention = value.parse()?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        format!(
            "n_flows = {}\n\
             wn_layers = {}\n\
             wn_channels = {}\n\
             kernel = {}\n\
             group = {}\n\
             base_sigma = {}\n\
             use_lr_encoder = {}\n\
             use_stft = {}\n\
             use_phase = {}\n\
             use_magnitude = {}\n\
             stft_mode = {}\n\
             hr_rate = {}\n\
             ratio = {}\n\
             lr = {}\n\
             beta1 = {}\n\
             beta2 = {}\n\
             eps = {}\n\
             batch = {}\n\
             max_hr_samples = {}\n\
             iters = {}\n\
             seed = {}\n\
             checkpoint_interval = {}\n\
             clip_grad_norm = {}\n\
             snr_convention = {}\n",
            self.n_flows,
            self.wn_layers,
            self.wn_channels,
            self.kernel,
            self.group,
            self.base_sigma,
            self.use_lr_encoder,
            self.use_stft,
            self.use_phase,
            self.use_magnitude,
            self.stft_mode,
            self.hr_rate,
            self.ratio,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.batch,
            self.max_hr_samples,
            self.iters,
            self.seed,
            self.checkpoint_interval,
            self.clip_grad_norm,
            self.snr_convention,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.group != 8 {
            return Err(Error::Config(format!(
                "group must be 8 (the encoder frame size), got {}",
                self.group
            )));
        }
        if self.ratio != 2 && self.ratio != 4 {
            return Err(Error::Config(format!("ratio must be 2 or 4, got {}", self.ratio)));
        }
        if self.hr_rate == 0 || self.hr_rate % self.ratio as u32 != 0 {
            return Err(Error::Config(format!(
                "hr_rate {} must be positive and divisible by ratio {}",
                self.hr_rate, self.ratio
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.segment_len() == 0 {
            return Err(Error::Config(format!(
                "max_hr_samples {} is below one group of {} samples",
                self.max_hr_samples,
                8 * self.ratio
            )));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1/beta2 must lie in [0, 1)".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        if self.clip_grad_norm < 0.0 {
            return Err(Error::Config("clip_grad_norm must be >= 0 (0 disables)".into()));
        }
        if self.encoder_flags().cond_channels() == 0 {
            return Err(Error::Config(
                "all encoder blocks disabled; the model must be conditioned on something".into(),
            ));
        }
        self.model_config().validate()
    }

    pub fn encoder_flags(&self) -> EncoderFlags {
        EncoderFlags {
            use_lr: self.use_lr_encoder,
            use_stft: self.use_stft,
            use_phase: self.use_phase,
            use_magnitude: self.use_magnitude,
            stft_mode: self.stft_mode,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_flows: self.n_flows,
            group: self.group,
            wn_layers: self.wn_layers,
            wn_channels: self.wn_channels,
            kernel: self.kernel,
            cond_channels: self.encoder_flags().cond_channels(),
            base_sigma: self.base_sigma,
        }
    }

    /// Largest multiple of `8 * ratio` that fits in `max_hr_samples`.
    pub fn segment_len(&self) -> usize {
        let unit = 8 * self.ratio;
        self.max_hr_samples / unit * unit
    }

    pub fn lr_rate(&self) -> u32 {
        self.hr_rate / self.ratio as u32
    }
}
