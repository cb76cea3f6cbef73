//! The conditional super-resolution model: condition encoders plus the
//! invertible flow, wired for waveform inputs.

use ndgrad::{Graph, ParamModule, Parameter, Tensor};

use crate::audio::Waveform;
use crate::config::RunConfig;
use crate::encoders::CondEncoder;
use crate::error::{Error, Result};
use crate::flow::{squeeze, FlowModel, FlowResult, FlowVars, SampleConfig};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct SrModel<T> {
    pub encoder: CondEncoder<T>,
    pub flow: FlowModel<T>,
    pub ratio: usize,
    pub hr_rate: u32,
}

fn cast_samples<T: ndgrad::Scalar>(samples: &[f32]) -> Vec<T> {
    samples.iter().map(|&v| T::of_f64(v as f64)).collect()
}

impl<T: ndgrad::Scalar> SrModel<T> {
    pub fn init(cfg: &RunConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let encoder = CondEncoder::new(cfg.encoder_flags(), rng)?;
        let flow = FlowModel::init(cfg.model_config(), rng)?;
        Ok(SrModel { encoder, flow, ratio: cfg.ratio, hr_rate: cfg.hr_rate })
    }

    pub fn lr_rate(&self) -> u32 {
        self.hr_rate / self.ratio as u32
    }

    fn check_pair(&self, hr: &Waveform, lr: &Waveform) -> Result<()> {
        if hr.sample_rate != self.hr_rate {
            return Err(Error::Flow(format!(
                "high-resolution rate {} does not match the model's {}",
                hr.sample_rate, self.hr_rate
            )));
        }
        if lr.sample_rate != self.lr_rate() {
            return Err(Error::Flow(format!(
                "low-resolution rate {} does not match the model's {}",
                lr.sample_rate,
                self.lr_rate()
            )));
        }
        if hr.len() != lr.len() * self.ratio {
            return Err(Error::Flow(format!(
                "length mismatch: hr {} != {} * lr {}",
                hr.len(),
                self.ratio,
                lr.len()
            )));
        }
        if lr.len() % 8 != 0 {
            return Err(Error::Flow(format!(
                "low-resolution length {} is not a multiple of 8 (pad first)",
                lr.len()
            )));
        }
        Ok(())
    }

    /// Builds the conditional NLL of `hr` given `lr` on a graph (training).
    pub fn nll_graph(&self, g: &mut Graph<T>, hr: &Waveform, lr: &Waveform) -> Result<FlowVars> {
        self.check_pair(hr, lr)?;
        let cond = self.encoder.build_condition_graph(g, lr, self.ratio)?;
        let x = g.input(squeeze(&cast_samples::<T>(&hr.samples), self.flow.cfg.group)?);
        self.flow.analyze_graph(g, x, cond)
    }

    /// Plain analysis (no tape) for evaluation and verification.
    pub fn analyze(&self, hr: &Waveform, lr: &Waveform) -> Result<FlowResult<T>> {
        self.check_pair(hr, lr)?;
        let cond = self.encoder.build_condition(lr, self.ratio)?;
        self.flow.analyze(&cast_samples::<T>(&hr.samples), &cond.channels)
    }

    /// Synthesizes high-resolution audio from a low-resolution input: pads
    /// the input to a multiple of 8, samples the flow in reverse, and trims
    /// to `ratio * lr.len()` at `ratio * lr.sample_rate`.
    pub fn synthesize(&self, lr: &Waveform, sc: &SampleConfig) -> Result<Waveform> {
        if lr.sample_rate != self.lr_rate() {
            return Err(Error::Flow(format!(
                "low-resolution rate {} does not match the model's {} (hr_rate {} / ratio {})",
                lr.sample_rate,
                self.lr_rate(),
                self.hr_rate,
                self.ratio
            )));
        }
        if lr.is_empty() {
            return Err(Error::Flow("empty low-resolution input".into()));
        }
        let orig_len = lr.len();
        let padded_len = orig_len.div_ceil(8) * 8;
        let mut padded = lr.samples.clone();
        padded.resize(padded_len, 0.0);
        let padded = Waveform::new(padded, lr.sample_rate);

        let cond = self.encoder.build_condition(&padded, self.ratio)?;
        let samples = self.flow.synthesize(&cond.channels, sc)?;
        let mut out: Vec<f32> = samples.iter().map(|v| v.as_f64() as f32).collect();
        out.truncate(self.ratio * orig_len);
        Ok(Waveform::new(out, self.hr_rate))
    }
}

impl<T: ndgrad::Scalar> ParamModule<T> for SrModel<T> {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.encoder.for_each_param(f);
        self.flow.for_each_param(f);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.encoder.for_each_param_mut(f);
        self.flow.for_each_param_mut(f);
    }
}

/// Deterministic list of (name, shape) pairs, the canonical parameter order.
pub fn param_manifest<T: ndgrad::Scalar, M: ParamModule<T>>(m: &M) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    m.for_each_param(&mut |p: &Parameter<T>| {
        out.push((p.name.clone(), p.value.shape().to_vec()));
    });
    out
}

/// Re-seeds every parameter tensor with uniform noise; used by tests that
/// need a non-degenerate model without running training.
pub fn randomize_model<T: ndgrad::Scalar>(model: &mut SrModel<T>, rng: &mut Rng, scale: f64) {
    model.flow.randomize(rng, scale);
    model.encoder.for_each_param_mut(&mut |p: &mut Parameter<T>| {
        for v in p.value.data_mut() {
            *v = T::of_f64(rng.normal() * 0.01);
        }
    });
}

/// Casts all parameters of a model into another precision, keeping structure.
pub fn cast_model<A: ndgrad::Scalar, B: ndgrad::Scalar>(
    src: &SrModel<A>,
    cfg: &RunConfig,
) -> Result<SrModel<B>> {
    let mut dst: SrModel<B> = SrModel::init(cfg, &mut Rng::from_seed(0))?;
    let mut values: std::collections::HashMap<String, Tensor<B>> = Default::default();
    src.for_each_param(&mut |p: &Parameter<A>| {
        values.insert(p.name.clone(), p.value.cast::<B>());
    });
    let mut missing = Vec::new();
    dst.for_each_param_mut(&mut |p: &mut Parameter<B>| {
        match values.remove(&p.name) {
            Some(v) if v.shape() == p.value.shape() => p.value = v,
            _ => missing.push(p.name.clone()),
        }
    });
    if !missing.is_empty() || !values.is_empty() {
        return Err(Error::Flow(format!(
            "model cast mismatch: missing {:?}, extra {:?}",
            missing,
            values.keys().collect::<Vec<_>>()
        )));
    }
    Ok(dst)
}
