//! The invertible model: squeeze into groups of 8, then a stack of flow
//! layers, each an invertible 1x1 channel mix followed by an affine coupling
//! whose scale/shift comes from a non-causal dilated gated-convolution
//! conditioner. Analysis (x -> z) accumulates the exact log-determinant for
//! the NLL; generation runs the stack in reverse.

use ndgrad::{raw, Graph, ParamModule, Parameter, Tensor, Var};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// |det W| below this aborts with a diagnostic instead of producing a
/// numerically meaningless inverse.
pub const DET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub n_flows: usize,
    pub group: usize,
    pub wn_layers: usize,
    pub wn_channels: usize,
    pub kernel: usize,
    pub cond_channels: usize,
    pub base_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_flows: 12,
            group: 8,
            wn_layers: 8,
            wn_channels: 256,
            kernel: 3,
            cond_channels: 2303,
            base_sigma: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group < 2 || self.group % 2 != 0 {
            return Err(Error::Flow(format!("group {} must be even and >= 2", self.group)));
        }
        if self.n_flows == 0 || self.wn_layers == 0 || self.wn_channels == 0 {
            return Err(Error::Flow("n_flows, wn_layers and wn_channels must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Flow(format!("kernel {} must be odd", self.kernel)));
        }
        if self.wn_layers > 16 {
            return Err(Error::Flow(format!("wn_layers {} too large (dilation overflow)", self.wn_layers)));
        }
        if self.cond_channels == 0 {
            return Err(Error::Flow("cond_channels must be positive".into()));
        }
        if !(self.base_sigma > 0.0) {
            return Err(Error::Flow(format!("base_sigma {} must be positive", self.base_sigma)));
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1usize << layer
    }
}

/// Sampling controls: `temperature` is the variance of the base Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { temperature: 1.0, seed: 0 }
    }
}

/// Analysis outcome for one example.
#[derive(Debug, Clone)]
pub struct FlowResult<T> {
    pub z: Tensor<T>,
    pub log_det: T,
    /// Per-layer log-det contributions in application order, for bookkeeping
    /// checks; their sum is `log_det`.
    pub log_det_terms: Vec<T>,
    pub nll: T,
    pub nll_per_dim: T,
}

/// Graph handles produced by [`FlowModel::analyze_graph`].
#[derive(Debug, Clone, Copy)]
pub struct FlowVars {
    pub z: Var,
    pub log_det: Var,
    pub nll: Var,
    pub nll_per_dim: Var,
}

/// `out[c, t] = x[group*t + c]`; volume-preserving regrouping.
pub fn squeeze<T: ndgrad::Scalar>(x: &[T], group: usize) -> Result<Tensor<T>> {
    if x.is_empty() || x.len() % group != 0 {
        return Err(Error::Flow(format!(
            "length {} is not a positive multiple of the group {}",
            x.len(),
            group
        )));
    }
    let t = x.len() / group;
    let mut data = vec![T::zero(); x.len()];
    for (i, &v) in x.iter().enumerate() {
        let (frame, c) = (i / group, i % group);
        data[c * t + frame] = v;
    }
    Tensor::new(vec![group, t], data).map_err(Into::into)
}

/// Exact inverse of [`squeeze`].
pub fn unsqueeze<T: ndgrad::Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (group, t) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![T::zero(); group * t];
    for c in 0..group {
        for frame in 0..t {
            out[frame * group + c] = x.data()[c * t + frame];
        }
    }
    out
}

#[derive(Debug, Clone)]
struct ConvParams<T> {
    weight: Parameter<T>,
    bias: Parameter<T>,
    dilation: usize,
}

impl<T: ndgrad::Scalar> ConvParams<T> {
    fn new(name: &str, c_in: usize, c_out: usize, k: usize, dilation: usize, rng: Option<&mut Rng>) -> Self {
        let weight = match rng {
            Some(rng) => {
                let bound = 1.0 / ((c_in * k) as f64).sqrt();
                Tensor::from_fn(vec![c_out, c_in, k], |_| T::of_f64(rng.uniform(-bound, bound)))
            }
            None => Tensor::zeros(vec![c_out, c_in, k]),
        };
        ConvParams {
            weight: Parameter::new(format!("{name}.w"), weight),
            bias: Parameter::new(format!("{name}.b"), Tensor::zeros(vec![c_out])),
            dilation,
        }
    }

    fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        let k = self.weight.value.shape()[1] * self.weight.value.shape()[2];
        let bound = scale / (k as f64).sqrt();
        for v in self.weight.value.data_mut() {
            *v = T::of_f64(rng.uniform(-bound, bound));
        }
        for v in self.bias.value.data_mut() {
            *v = T::of_f64(rng.uniform(-0.01, 0.01));
        }
    }

    fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        Ok(g.conv1d(x, w, b, self.dilation)?)
    }

    fn forward_plain(&self, x: &Tensor<T>) -> Tensor<T> {
        let (c_in, t) = (x.shape()[0], x.shape()[1]);
        let ws = self.weight.value.shape();
        let (c_out, k) = (ws[0], ws[2]);
        debug_assert_eq!(ws[1], c_in);
        let mut out = vec![T::zero(); c_out * t];
        raw::conv1d(
            x.data(),
            self.weight.value.data(),
            self.bias.value.data(),
            c_in,
            c_out,
            k,
            self.dilation,
            t,
            &mut out,
        );
        Tensor::new(vec![c_out, t], out).expect("conv output shape")
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone)]
struct WnLayer<T> {
    dilated: ConvParams<T>,
    cond: ConvParams<T>,
    res: ConvParams<T>,
    skip: ConvParams<T>,
}

/// The coupling conditioner: a non-causal WaveNet with gated-tanh units,
/// residual and skip connections, and a zero-initialized output projection so
/// every coupling starts as the identity.
#[derive(Debug, Clone)]
struct Conditioner<T> {
    start: ConvParams<T>,
    layers: Vec<WnLayer<T>>,
    end: ConvParams<T>,
    wn_channels: usize,
    group: usize,
}

impl<T: ndgrad::Scalar> Conditioner<T> {
    fn new(prefix: &str, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let wn = cfg.wn_channels;
        let half = cfg.group / 2;
        let start = ConvParams::new(&format!("{prefix}.start"), half, wn, 1, 1, Some(rng));
        let layers = (0..cfg.wn_layers)
            .map(|i| {
                let d = cfg.dilation(i);
                WnLayer {
                    dilated: ConvParams::new(
                        &format!("{prefix}.layer{i}.dilated"),
                        wn,
                        2 * wn,
                        cfg.kernel,
                        d,
                        Some(rng),
                    ),
                    cond: ConvParams::new(
                        &format!("{prefix}.layer{i}.cond"),
                        cfg.cond_channels,
                        2 * wn,
                        1,
                        1,
                        Some(rng),
                    ),
                    res: ConvParams::new(&format!("{prefix}.layer{i}.res"), wn, wn, 1, 1, Some(rng)),
                    skip: ConvParams::new(&format!("{prefix}.layer{i}.skip"), wn, wn, 1, 1, Some(rng)),
                }
            })
            .collect();
        // Zero-initialized: log_s = 0 and t = 0 until training moves it.
        let end = ConvParams::new(&format!("{prefix}.end"), wn, cfg.group, 1, 1, None);
        Conditioner { start, layers, end, wn_channels: wn, group: cfg.group }
    }

    fn forward_graph(&self, g: &mut Graph<T>, x_a: Var, cond: Var) -> Result<(Var, Var)> {
        let wn = self.wn_channels;
        let mut h = self.start.forward_graph(g, x_a)?;
        let mut skip: Option<Var> = None;
        for layer in &self.layers {
            let u_sig = layer.dilated.forward_graph(g, h)?;
            let u_cond = layer.cond.forward_graph(g, cond)?;
            let u = g.add(u_sig, u_cond)?;
            let ua = g.slice_rows(u, 0, wn)?;
            let ub = g.slice_rows(u, wn, 2 * wn)?;
            let ta = g.tanh(ua);
            let sb = g.sigmoid(ub);
            let gate = g.mul(ta, sb)?;
            let r = layer.res.forward_graph(g, gate)?;
            h = g.add(h, r)?;
            let s = layer.skip.forward_graph(g, gate)?;
            skip = Some(match skip {
                None => s,
                Some(acc) => g.add(acc, s)?,
            });
        }
        let out = self.end.forward_graph(g, skip.expect("at least one layer"))?;
        let half = self.group / 2;
        let log_s = g.slice_rows(out, 0, half)?;
        let t = g.slice_rows(out, half, self.group)?;
        Ok((log_s, t))
    }

    fn forward_plain(&self, x_a: &Tensor<T>, cond: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let wn = self.wn_channels;
        let t_len = x_a.shape()[1];
        let mut h = self.start.forward_plain(x_a);
        let mut skip: Option<Tensor<T>> = None;
        for layer in &self.layers {
            let u_sig = layer.dilated.forward_plain(&h);
            let u_cond = layer.cond.forward_plain(cond);
            let mut gate = vec![T::zero(); wn * t_len];
            for i in 0..wn * t_len {
                let a = u_sig.data()[i] + u_cond.data()[i];
                let b = u_sig.data()[wn * t_len + i] + u_cond.data()[wn * t_len + i];
                gate[i] = a.tanh() * (T::one() / (T::one() + (-b).exp()));
            }
            let gate = Tensor::new(vec![wn, t_len], gate).expect("gate shape");
            let r = layer.res.forward_plain(&gate);
            for (hv, rv) in h.data_mut().iter_mut().zip(r.data()) {
                *hv = *hv + *rv;
            }
            let s = layer.skip.forward_plain(&gate);
            skip = Some(match skip {
                None => s,
                Some(mut acc) => {
                    for (av, sv) in acc.data_mut().iter_mut().zip(s.data()) {
                        *av = *av + *sv;
                    }
                    acc
                }
            });
        }
        let out = self.end.forward_plain(&skip.expect("at least one layer"));
        let half = self.group / 2;
        let log_s =
            Tensor::new(vec![half, t_len], out.data()[..half * t_len].to_vec()).expect("log_s");
        let t =
            Tensor::new(vec![half, t_len], out.data()[half * t_len..].to_vec()).expect("t");
        (log_s, t)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.start.visit(f);
        for l in &self.layers {
            l.dilated.visit(f);
            l.cond.visit(f);
            l.res.visit(f);
            l.skip.visit(f);
        }
        self.end.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.start.visit_mut(f);
        for l in &mut self.layers {
            l.dilated.visit_mut(f);
            l.cond.visit_mut(f);
            l.res.visit_mut(f);
            l.skip.visit_mut(f);
        }
        self.end.visit_mut(f);
    }
}

/// One flow step: invertible channel mix then affine coupling.
#[derive(Debug, Clone)]
pub struct FlowLayer<T> {
    mix: Parameter<T>,
    wn: Conditioner<T>,
    group: usize,
}

/// Uniformly random signed permutation matrix. Orthonormal, and its LU
/// determinant is exactly +/-1 in floating point, so the initial model's
/// log-det bookkeeping is exactly zero.
fn signed_permutation<T: ndgrad::Scalar>(n: usize, rng: &mut Rng) -> Tensor<T> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        perm.swap(i, j);
    }
    let mut data = vec![T::zero(); n * n];
    for (row, &col) in perm.iter().enumerate() {
        let sign = if rng.below(2) == 0 { T::one() } else { -T::one() };
        data[row * n + col] = sign;
    }
    Tensor::new(vec![n, n], data).expect("permutation shape")
}

/// Random orthonormal matrix via Gram-Schmidt on a Gaussian matrix, built in
/// f64 and cast.
fn random_orthonormal<T: ndgrad::Scalar>(n: usize, rng: &mut Rng) -> Tensor<T> {
    let mut q: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
    for col in 0..n {
        for prev in 0..col {
            let dot: f64 = (0..n).map(|r| q[r * n + col] * q[r * n + prev]).sum();
            for r in 0..n {
                q[r * n + col] -= dot * q[r * n + prev];
            }
        }
        let norm: f64 = (0..n).map(|r| q[r * n + col] * q[r * n + col]).sum::<f64>().sqrt();
        if norm < 1e-9 {
            // Degenerate draw; replace with a unit vector and continue.
            for r in 0..n {
                q[r * n + col] = if r == col { 1.0 } else { 0.0 };
            }
        } else {
            for r in 0..n {
                q[r * n + col] /= norm;
            }
        }
    }
    Tensor::from_fn(vec![n, n], |i| T::of_f64(q[i]))
}

impl<T: ndgrad::Scalar> FlowLayer<T> {
    /// Channel mix in the analysis direction plus its log-det contribution
    /// `T * log|det W|`.
    pub fn invconv_analyze(&self, h: &Tensor<T>) -> Result<(Tensor<T>, T)> {
        let (c, t) = (h.shape()[0], h.shape()[1]);
        let ld = raw::logabsdet(self.mix.value.data(), c, DET_FLOOR)?;
        let mut out = vec![T::zero(); c * t];
        raw::matmul_ct(self.mix.value.data(), h.data(), None, c, c, t, &mut out);
        Ok((Tensor::new(vec![c, t], out)?, ld * T::of_f64(t as f64)))
    }

    /// Applies `W^{-1}` per frame; exact inverse of [`Self::invconv_analyze`].
    pub fn invconv_generate(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, t) = (h.shape()[0], h.shape()[1]);
        let inv = raw::invert(self.mix.value.data(), c, DET_FLOOR)?;
        let mut out = vec![T::zero(); c * t];
        raw::matmul_ct(&inv, h.data(), None, c, c, t, &mut out);
        Ok(Tensor::new(vec![c, t], out)?)
    }

    /// Affine coupling in the analysis direction plus its log-det
    /// contribution `sum(log_s)`.
    pub fn coupling_analyze(&self, h: &Tensor<T>, cond: &Tensor<T>) -> Result<(Tensor<T>, T)> {
        let (c, t) = (h.shape()[0], h.shape()[1]);
        let half = self.group / 2;
        let x_a = Tensor::new(vec![half, t], h.data()[..half * t].to_vec())?;
        let (log_s, shift) = self.wn.forward_plain(&x_a, cond);
        let mut out = h.data().to_vec();
        let mut contrib = T::zero();
        for i in 0..half * t {
            let ls = log_s.data()[i];
            contrib = contrib + ls;
            out[half * t + i] = ls.exp() * h.data()[half * t + i] + shift.data()[i];
        }
        Ok((Tensor::new(vec![c, t], out)?, contrib))
    }

    /// Recomputes (log_s, t) from the untouched half and solves the affine
    /// map: `x_b = (x_b' - t) / s`.
    pub fn coupling_generate(&self, h: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, t) = (h.shape()[0], h.shape()[1]);
        let half = self.group / 2;
        let x_a = Tensor::new(vec![half, t], h.data()[..half * t].to_vec())?;
        let (log_s, shift) = self.wn.forward_plain(&x_a, cond);
        let mut out = h.data().to_vec();
        for i in 0..half * t {
            out[half * t + i] =
                (h.data()[half * t + i] - shift.data()[i]) / log_s.data()[i].exp();
        }
        Ok(Tensor::new(vec![c, t], out)?)
    }
}

/// The full invertible stack.
#[derive(Debug, Clone)]
pub struct FlowModel<T> {
    pub cfg: ModelConfig,
    layers: Vec<FlowLayer<T>>,
}

impl<T: ndgrad::Scalar> FlowModel<T> {
    /// Training initialization: signed-permutation channel mixes (orthonormal
    /// with exactly representable determinant) and zero-initialized coupling
    /// outputs, so the whole flow starts as an isometry.
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.n_flows)
            .map(|i| FlowLayer {
                mix: Parameter::new(format!("flow{i}.mix"), signed_permutation(cfg.group, rng)),
                wn: Conditioner::new(&format!("flow{i}.wn"), &cfg, rng),
                group: cfg.group,
            })
            .collect();
        Ok(FlowModel { cfg, layers })
    }

    /// Re-randomizes every parameter to a non-degenerate configuration:
    /// dense orthonormal mixes and a nonzero output projection. Used by
    /// round-trip and sampling tests that need a non-identity flow.
    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        for layer in &mut self.layers {
            layer.mix.value = random_orthonormal(self.cfg.group, rng);
            layer.wn.start.randomize(rng, scale);
            for l in &mut layer.wn.layers {
                l.dilated.randomize(rng, scale);
                l.cond.randomize(rng, scale);
                l.res.randomize(rng, scale);
                l.skip.randomize(rng, scale);
            }
            layer.wn.end.randomize(rng, scale);
        }
    }

    pub fn layers(&self) -> &[FlowLayer<T>] {
        &self.layers
    }

    fn gaussian_const(&self, d: usize) -> f64 {
        let sigma = self.cfg.base_sigma;
        d as f64 * sigma.ln() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    fn check_cond(&self, t_frames: usize, cond_shape: &[usize]) -> Result<()> {
        if cond_shape.len() != 2
            || cond_shape[0] != self.cfg.cond_channels
            || cond_shape[1] != t_frames
        {
            return Err(Error::Flow(format!(
                "condition shape {:?} does not match [{}, {}]",
                cond_shape, self.cfg.cond_channels, t_frames
            )));
        }
        Ok(())
    }

    /// Analysis pass on a graph, for training: squeezed input `x [group, T]`,
    /// condition `[cond_channels, T]`.
    pub fn analyze_graph(&self, g: &mut Graph<T>, x: Var, cond: Var) -> Result<FlowVars> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 || xs[0] != self.cfg.group {
            return Err(Error::Flow(format!(
                "analyze input shape {:?} must be [{}, T]",
                xs, self.cfg.group
            )));
        }
        let t_frames = xs[1];
        self.check_cond(t_frames, g.value(cond).shape())?;

        let half = self.cfg.group / 2;
        let mut h = x;
        let mut log_det: Option<Var> = None;
        for layer in &self.layers {
            let w = g.param(&layer.mix)?;
            h = g.channel_mix(h, w)?;
            let ld = g.logdet(w, DET_FLOOR)?;
            let ld = g.mul_scalar(ld, T::of_f64(t_frames as f64));
            log_det = Some(match log_det {
                None => ld,
                Some(acc) => g.add(acc, ld)?,
            });

            let x_a = g.slice_rows(h, 0, half)?;
            let x_b = g.slice_rows(h, half, self.cfg.group)?;
            let (log_s, shift) = layer.wn.forward_graph(g, x_a, cond)?;
            let s = g.exp(log_s);
            let scaled = g.mul(s, x_b)?;
            let x_b2 = g.add(scaled, shift)?;
            h = g.concat_rows(x_a, x_b2)?;
            let lds = g.sum(log_s);
            log_det = Some(match log_det {
                None => lds,
                Some(acc) => g.add(acc, lds)?,
            });
        }
        let z = h;
        let log_det = log_det.expect("at least one flow layer");

        let d = self.cfg.group * t_frames;
        let zz = g.mul(z, z)?;
        let sum_z2 = g.sum(zz);
        let sigma = self.cfg.base_sigma;
        let quad = g.mul_scalar(sum_z2, T::of_f64(0.5 / (sigma * sigma)));
        let shifted = g.add_scalar(quad, T::of_f64(self.gaussian_const(d)));
        let neg_ld = g.neg(log_det);
        let nll = g.add(shifted, neg_ld)?;
        let nll_per_dim = g.mul_scalar(nll, T::of_f64(1.0 / d as f64));
        Ok(FlowVars { z, log_det, nll, nll_per_dim })
    }

    /// Analysis without a tape, for evaluation and verification.
    pub fn analyze(&self, samples: &[T], cond: &Tensor<T>) -> Result<FlowResult<T>> {
        let x = squeeze(samples, self.cfg.group)?;
        let t_frames = x.shape()[1];
        self.check_cond(t_frames, cond.shape())?;

        let mut h = x;
        let mut terms = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            let (mixed, ld_mix) = layer.invconv_analyze(&h)?;
            terms.push(ld_mix);
            let (coupled, ld_coup) = layer.coupling_analyze(&mixed, cond)?;
            terms.push(ld_coup);
            h = coupled;
        }
        let log_det = terms.iter().fold(T::zero(), |acc, &v| acc + v);
        let d = self.cfg.group * t_frames;
        let sum_z2 = h.sq_norm();
        let sigma = self.cfg.base_sigma;
        let nll = sum_z2 * T::of_f64(0.5 / (sigma * sigma)) + T::of_f64(self.gaussian_const(d))
            - log_det;
        let nll_per_dim = nll * T::of_f64(1.0 / d as f64);
        if !nll.is_finite() {
            return Err(Error::Flow(format!("non-finite NLL {nll}")));
        }
        Ok(FlowResult { z: h, log_det, log_det_terms: terms, nll, nll_per_dim })
    }

    /// Runs the stack in reverse from a latent `z [group, T]`.
    pub fn generate(&self, z: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let t_frames = z.shape()[1];
        self.check_cond(t_frames, cond.shape())?;
        let mut h = z.clone();
        for layer in self.layers.iter().rev() {
            h = layer.coupling_generate(&h, cond)?;
            h = layer.invconv_generate(&h)?;
        }
        Ok(h)
    }

    /// Draws `z` with per-element variance `sc.temperature` and inverts the
    /// flow. Returns raw samples clamped to [-1, 1]; the caller attaches the
    /// sample rate.
    pub fn synthesize(&self, cond: &Tensor<T>, sc: &SampleConfig) -> Result<Vec<T>> {
        if !(sc.temperature >= 0.0) || !sc.temperature.is_finite() {
            return Err(Error::Flow(format!("temperature {} must be finite and >= 0", sc.temperature)));
        }
        let t_frames = cond.shape()[1];
        let std = sc.temperature.sqrt();
        let mut rng = Rng::from_seed(sc.seed);
        let z = Tensor::from_fn(vec![self.cfg.group, t_frames], |_| {
            if std == 0.0 {
                T::zero()
            } else {
                T::of_f64(rng.normal() * std)
            }
        });
        let x = self.generate(&z, cond)?;
        let one = T::one();
        Ok(unsqueeze(&x)
            .into_iter()
            .map(|v| {
                if v > one {
                    one
                } else if v < -one {
                    -one
                } else {
                    v
                }
            })
            .collect())
    }
}

impl<T: ndgrad::Scalar> ParamModule<T> for FlowModel<T> {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for layer in &self.layers {
            f(&layer.mix);
            layer.wn.visit(f);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for layer in &mut self.layers {
            f(&mut layer.mix);
            layer.wn.visit_mut(f);
        }
    }
}
