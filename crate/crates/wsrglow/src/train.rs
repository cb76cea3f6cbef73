//! Maximum-likelihood training: segment sampling, Adam with bias correction,
//! the iteration loop, and CSV logging. Everything is deterministic given
//! (seed, dataset, config): batches come from the run RNG, batch gradients
//! are reduced in item order, and checkpoints carry the RNG state.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndgrad::{accumulate_grads, grad_norm, zero_grads, Graph, ParamModule, Parameter};

use crate::audio::Waveform;
use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::dsp::resample;
use crate::error::{Error, Result};
use crate::model::SrModel;
use crate::rng::Rng;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        AdamParams { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub m: HashMap<String, Vec<T>>,
    pub v: HashMap<String, Vec<T>>,
    pub step: u64,
    pub skipped: u64,
}

impl<T: ndgrad::Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { m: HashMap::new(), v: HashMap::new(), step: 0, skipped: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained non-finite values; parameters were left untouched.
    SkippedNonFinite,
}

/// One Adam update over all trainable parameters:
/// m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2,
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// `clip_grad_norm > 0` rescales gradients to that global norm first.
pub fn adam_step<T: ndgrad::Scalar, M: ParamModule<T>>(
    model: &mut M,
    state: &mut AdamState<T>,
    p: &AdamParams,
    clip_grad_norm: f64,
) -> StepOutcome {
    let mut finite = true;
    model.for_each_param(&mut |pa: &Parameter<T>| {
        if pa.trainable && !pa.grad.is_finite() {
            finite = false;
        }
    });
    if !finite {
        state.skipped += 1;
        return StepOutcome::SkippedNonFinite;
    }

    let mut scale = 1.0f64;
    if clip_grad_norm > 0.0 {
        let norm = grad_norm(model);
        if norm > clip_grad_norm {
            scale = clip_grad_norm / norm;
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - p.beta1.powi(t);
    let bias2 = 1.0 - p.beta2.powi(t);
    let (b1, b2) = (T::of_f64(p.beta1), T::of_f64(p.beta2));
    let one_m_b1 = T::of_f64(1.0 - p.beta1);
    let one_m_b2 = T::of_f64(1.0 - p.beta2);
    let scale_t = T::of_f64(scale);
    let lr = T::of_f64(p.lr);
    let eps = T::of_f64(p.eps);
    let inv_bias1 = T::of_f64(1.0 / bias1);
    let inv_bias2 = T::of_f64(1.0 / bias2);

    let (m_map, v_map) = (&mut state.m, &mut state.v);
    model.for_each_param_mut(&mut |pa: &mut Parameter<T>| {
        if !pa.trainable {
            return;
        }
        let n = pa.numel();
        let m = m_map.entry(pa.name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let v = v_map.entry(pa.name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let value = pa.value.data_mut();
        for i in 0..n {
            let g = pa.grad.data()[i] * scale_t;
            m[i] = b1 * m[i] + one_m_b1 * g;
            v[i] = b2 * v[i] + one_m_b2 * g * g;
            let m_hat = m[i] * inv_bias1;
            let v_hat = v[i] * inv_bias2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    });
    StepOutcome::Applied
}

/// Uniformly samples `batch` (hr_segment, lr) pairs: a clip long enough for
/// the configured segment, then a uniform start offset; the LR side is the
/// segment resampled down by `ratio` and clamped into [-1, 1].
pub fn make_batch(
    dataset: &[Waveform],
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<Vec<(Waveform, Waveform)>> {
    if dataset.is_empty() {
        return Err(Error::Train("dataset is empty".into()));
    }
    let seg_len = cfg.segment_len();
    let eligible: Vec<usize> =
        (0..dataset.len()).filter(|&i| dataset[i].len() >= seg_len).collect();
    if eligible.is_empty() {
        return Err(Error::Train(format!(
            "no clip is long enough for one segment; need at least {seg_len} samples"
        )));
    }
    let mut out = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let clip = &dataset[eligible[rng.below(eligible.len())]];
        if clip.sample_rate != cfg.hr_rate {
            return Err(Error::Train(format!(
                "dataset clip at {} Hz but hr_rate is {}",
                clip.sample_rate, cfg.hr_rate
            )));
        }
        let start = rng.below(clip.len() - seg_len + 1);
        let hr = Waveform::new(clip.samples[start..start + seg_len].to_vec(), cfg.hr_rate);
        let mut lr = resample(&hr, cfg.lr_rate())?;
        lr.clamp_unit();
        out.push((hr, lr));
    }
    Ok(out)
}

/// Forward/backward over one batch. Gradients are averaged into the model's
/// `grad` buffers (reduced in item order) and the mean nll/dim is returned.
/// With `threads > 1` items are processed on worker threads, one graph per
/// worker; the reduction order is unchanged, so results are identical.
pub fn batch_step(
    model: &mut SrModel<f32>,
    batch: &[(Waveform, Waveform)],
    threads: usize,
) -> Result<f64> {
    zero_grads(model);
    let scale = 1.0 / batch.len() as f32;

    if threads <= 1 || batch.len() <= 1 {
        let mut total = 0.0f64;
        for (hr, lr) in batch {
            let mut g = Graph::new();
            let vars = model.nll_graph(&mut g, hr, lr)?;
            g.backward(vars.nll_per_dim)?;
            total += g.value(vars.nll_per_dim).item() as f64;
            accumulate_grads(model, &g, scale);
        }
        return Ok(total / batch.len() as f64);
    }

    // One graph per worker; per-item gradient maps are folded in item order
    // afterwards, so the result matches the sequential path bit for bit.
    type ItemGrads = HashMap<String, Vec<f32>>;
    let shared: &SrModel<f32> = model;
    let results: Vec<Result<(f64, ItemGrads)>> = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(batch.len());
        let workers = threads.min(batch.len());
        for chunk_start in 0..workers {
            let items: Vec<usize> =
                (chunk_start..batch.len()).step_by(workers).collect();
            let batch_ref = &batch;
            handles.push(scope.spawn(move || {
                items
                    .into_iter()
                    .map(|i| {
                        let (hr, lr) = &batch_ref[i];
                        let mut g = Graph::new();
                        let vars = shared.nll_graph(&mut g, hr, lr)?;
                        g.backward(vars.nll_per_dim)?;
                        let nll = g.value(vars.nll_per_dim).item() as f64;
                        let mut grads: ItemGrads = HashMap::new();
                        shared.for_each_param(&mut |p: &Parameter<f32>| {
                            if let Some(gr) = g.grad_by_name(&p.name) {
                                grads.insert(p.name.clone(), gr.to_vec());
                            }
                        });
                        Ok((i, nll, grads))
                    })
                    .collect::<Vec<Result<(usize, f64, ItemGrads)>>>()
            }));
        }
        let mut slots: Vec<Option<(f64, ItemGrads)>> = (0..batch.len()).map(|_| None).collect();
        let mut first_err = None;
        for h in handles {
            for r in h.join().expect("worker panicked") {
                match r {
                    Ok((i, nll, g)) => slots[i] = Some((nll, g)),
                    Err(e) => first_err = first_err.or(Some(e)),
                }
            }
        }
        if let Some(e) = first_err {
            return vec![Err(e)];
        }
        slots.into_iter().map(|s| Ok(s.expect("slot filled"))).collect()
    });

    let mut total = 0.0f64;
    let mut folded: Vec<(f64, ItemGrads)> = Vec::with_capacity(batch.len());
    for r in results {
        folded.push(r?);
    }
    for (nll, grads) in &folded {
        total += nll;
        model.for_each_param_mut(&mut |p: &mut Parameter<f32>| {
            if let Some(g) = grads.get(&p.name) {
                for (dst, &src) in p.grad.data_mut().iter_mut().zip(g) {
                    *dst += src * scale;
                }
            }
        });
    }
    Ok(total / batch.len() as f64)
}

/// One CSV log record.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub iter: u64,
    pub nll_per_dim: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

impl LogRow {
    pub fn csv_header() -> &'static str {
        "iter,nll_per_dim,grad_norm,wall_ms"
    }

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.iter, self.nll_per_dim, self.grad_norm, self.wall_ms)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub last_checkpoint: Option<PathBuf>,
    pub skipped_steps: u64,
}

/// Runs iterations `start_iter..cfg.iters`: sample a batch, average the
/// per-example nll/dim gradients, Adam-update, log, and checkpoint every
/// `checkpoint_interval` iterations (and at the end) when `rundir` is given.
/// A non-finite loss aborts with the last good checkpoint path.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    dataset: &[Waveform],
    model: &mut SrModel<f32>,
    adam: &mut AdamState<f32>,
    rng: &mut Rng,
    cfg: &RunConfig,
    rundir: Option<&Path>,
    start_iter: u64,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let params = AdamParams::from_config(cfg);
    let threads = crate::worker_threads();
    let mut rows = Vec::new();
    let mut last_checkpoint: Option<PathBuf> = None;

    for iter in start_iter..cfg.iters {
        let t0 = Instant::now();
        let batch = make_batch(dataset, cfg, rng)?;
        let mean_nll = batch_step(model, &batch, threads)?;
        if !mean_nll.is_finite() {
            return Err(Error::NanLoss { iteration: iter, last_checkpoint });
        }
        let gnorm = grad_norm(model);
        adam_step(model, adam, &params, cfg.clip_grad_norm);

        let row = LogRow {
            iter,
            nll_per_dim: mean_nll,
            grad_norm: gnorm,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        on_row(&row);
        rows.push(row);

        if let Some(dir) = rundir {
            let done = iter + 1;
            if done % cfg.checkpoint_interval == 0 || done == cfg.iters {
                let path = dir.join(format!("ckpt_{done:08}.bin"));
                save_checkpoint(&path, model, adam, done, rng.state(), cfg)?;
                last_checkpoint = Some(path);
            }
        }
    }
    Ok(TrainOutcome { rows, last_checkpoint, skipped_steps: adam.skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndgrad::Tensor;

    struct One {
        p: Parameter<f64>,
    }

    impl ParamModule<f64> for One {
        fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
            f(&self.p);
        }
        fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.p);
        }
    }

    fn scalar_model(value: f64) -> One {
        One { p: Parameter::new("p", Tensor::new(vec![1], vec![value]).unwrap()) }
    }

    const P: AdamParams = AdamParams { lr: 1e-4, beta1: 0.9, beta2: 0.98, eps: 1e-8 };

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut m = scalar_model(0.7);
        let mut st = AdamState::new();
        assert_eq!(adam_step(&mut m, &mut st, &P, 0.0), StepOutcome::Applied);
        assert_eq!(m.p.value.data()[0], 0.7);
    }

    #[test]
    fn first_step_is_approximately_minus_lr() {
        // Bias correction makes m_hat = g and sqrt(v_hat) = |g| on step one,
        // so the update is -lr * g / (|g| + eps) ~= -lr for g = 0.5.
        let mut m = scalar_model(1.0);
        m.p.grad = Tensor::new(vec![1], vec![0.5]).unwrap();
        let mut st = AdamState::new();
        adam_step(&mut m, &mut st, &P, 0.0);
        let delta = m.p.value.data()[0] - 1.0;
        assert!((delta + P.lr).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn two_step_trace_matches_scalar_oracle() {
        // Hand-rolled two-iteration Adam with g = (1, 1).
        let (b1, b2, lr, eps) = (P.beta1, P.beta2, P.lr, P.eps);
        let mut m_o = 0.0;
        let mut v_o = 0.0;
        let mut p_o = 0.25f64;
        for t in 1..=2 {
            let g = 1.0;
            m_o = b1 * m_o + (1.0 - b1) * g;
            v_o = b2 * v_o + (1.0 - b2) * g * g;
            let mh = m_o / (1.0 - b1.powi(t));
            let vh = v_o / (1.0 - b2.powi(t));
            p_o -= lr * mh / (vh.sqrt() + eps);
        }

        let mut m = scalar_model(0.25);
        let mut st = AdamState::new();
        for _ in 0..2 {
            m.p.grad = Tensor::new(vec![1], vec![1.0]).unwrap();
            adam_step(&mut m, &mut st, &P, 0.0);
        }
        assert!((m.p.value.data()[0] - p_o).abs() < 1e-15);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn non_finite_gradient_skips_the_step() {
        let mut m = scalar_model(0.5);
        m.p.grad = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let mut st = AdamState::new();
        assert_eq!(adam_step(&mut m, &mut st, &P, 0.0), StepOutcome::SkippedNonFinite);
        assert_eq!(m.p.value.data()[0], 0.5);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_rescales_the_update_gradient() {
        let mut a = scalar_model(0.0);
        a.p.grad = Tensor::new(vec![1], vec![10.0]).unwrap();
        let mut st_a = AdamState::new();
        adam_step(&mut a, &mut st_a, &P, 1.0);

        let mut b = scalar_model(0.0);
        b.p.grad = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut st_b = AdamState::new();
        adam_step(&mut b, &mut st_b, &P, 0.0);

        // Clipped 10.0 behaves exactly like an unclipped 1.0.
        assert_eq!(a.p.value.data()[0], b.p.value.data()[0]);
    }

    fn batch_cfg() -> RunConfig {
        RunConfig {
            n_flows: 1,
            wn_layers: 1,
            wn_channels: 8,
            batch: 2,
            max_hr_samples: 64,
            ..Default::default()
        }
    }

    #[test]
    fn make_batch_shapes_and_determinism() {
        let cfg = batch_cfg();
        let mut rng = Rng::from_seed(9);
        let clip = Waveform::new(
            (0..48000).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect(),
            48000,
        );
        let batch = make_batch(&[clip.clone()], &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 2);
        for (hr, lr) in &batch {
            assert_eq!(hr.len(), cfg.segment_len());
            assert_eq!(lr.len(), cfg.segment_len() / cfg.ratio);
            assert_eq!(lr.sample_rate, cfg.lr_rate());
        }

        let mut rng2 = Rng::from_seed(9);
        let batch2 = make_batch(&[clip], &cfg, &mut rng2).unwrap();
        for ((h1, l1), (h2, l2)) in batch.iter().zip(&batch2) {
            assert_eq!(h1.samples, h2.samples);
            assert_eq!(l1.samples, l2.samples);
        }
    }

    #[test]
    fn make_batch_rejects_short_dataset() {
        let cfg = batch_cfg();
        let clip = Waveform::new(vec![0.0; 10], 48000);
        let err = make_batch(&[clip], &cfg, &mut Rng::from_seed(1)).unwrap_err();
        assert!(err.to_string().contains("at least"), "{err}");
    }

    #[test]
    fn zero_iterations_changes_nothing() {
        use crate::model::SrModel;
        let cfg = RunConfig { iters: 0, ..batch_cfg() };
        let mut rng = Rng::from_seed(2);
        let mut model: SrModel<f32> = SrModel::init(&cfg, &mut rng).unwrap();
        let before: Vec<u32> = {
            let mut v = Vec::new();
            model.for_each_param(&mut |p: &Parameter<f32>| {
                v.extend(p.value.data().iter().map(|x| x.to_bits()))
            });
            v
        };
        let clip = Waveform::new(vec![0.1; 4096], 48000);
        let mut adam = AdamState::new();
        let out = train_loop(&[clip], &mut model, &mut adam, &mut rng, &cfg, None, 0, |_| {})
            .unwrap();
        assert!(out.rows.is_empty());
        let mut after = Vec::new();
        model.for_each_param(&mut |p: &Parameter<f32>| {
            after.extend(p.value.data().iter().map(|x| x.to_bits()))
        });
        assert_eq!(before, after);
    }

    #[test]
    fn batch_step_is_invariant_to_thread_count() {
        use crate::model::{randomize_model, SrModel};
        let cfg = RunConfig { batch: 3, ..batch_cfg() };
        let mut rng = Rng::from_seed(31);
        let mut model: SrModel<f32> = SrModel::init(&cfg, &mut rng).unwrap();
        randomize_model(&mut model, &mut Rng::from_seed(32), 0.5);
        let clip = Waveform::new(
            (0..8192).map(|i| ((i % 53) as f32 / 53.0) - 0.5).collect(),
            48000,
        );
        let batch = make_batch(&[clip], &cfg, &mut Rng::from_seed(33)).unwrap();

        let grads_with = |threads: usize, model: &mut SrModel<f32>| -> (f64, Vec<u32>) {
            let nll = batch_step(model, &batch, threads).unwrap();
            let mut bits = Vec::new();
            model.for_each_param(&mut |p: &Parameter<f32>| {
                bits.extend(p.grad.data().iter().map(|x| x.to_bits()))
            });
            (nll, bits)
        };
        let (nll1, g1) = grads_with(1, &mut model);
        let (nll2, g2) = grads_with(2, &mut model);
        assert_eq!(nll1.to_bits(), nll2.to_bits());
        assert_eq!(g1, g2, "gradient reduction must be order-identical across thread counts");
    }

    #[test]
    fn segment_lengths_for_both_ratios() {
        let mut cfg = RunConfig::default();
        cfg.ratio = 4;
        cfg.max_hr_samples = 8192;
        assert_eq!(cfg.segment_len(), 8192);
        assert_eq!(cfg.segment_len() / cfg.ratio, 2048);
        cfg.ratio = 2;
        assert_eq!(cfg.segment_len(), 8192);
        assert_eq!(cfg.segment_len() / cfg.ratio, 4096);
    }
}
