//! Verification battery run by the `selftest` subcommand: gradient check,
//! invertibility, Jacobian log-det exactness, metric formula oracles, mu-law
//! chain and resampler sanity, all on tiny instances.

use ndgrad::{grad_check, GradCheckSettings, Graph};

use crate::audio::Waveform;
use crate::config::RunConfig;
use crate::dsp::{self, SnrConvention};
use crate::error::Result;
use crate::flow::squeeze;
use crate::model::{cast_model, randomize_model, SrModel};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn tiny_config() -> RunConfig {
    RunConfig {
        n_flows: 2,
        wn_layers: 2,
        wn_channels: 12,
        batch: 1,
        max_hr_samples: 128,
        iters: 0,
        ..Default::default()
    }
}

fn tiny_pair(cfg: &RunConfig, seed: u64) -> (Waveform, Waveform) {
    let mut rng = Rng::from_seed(seed);
    let hr = Waveform::new(
        (0..128).map(|_| rng.uniform(-0.7, 0.7) as f32).collect(),
        cfg.hr_rate,
    );
    let mut lr = dsp::resample(&hr, cfg.lr_rate()).unwrap();
    lr.clamp_unit();
    (hr, lr)
}

fn check_gradients() -> CheckResult {
    let cfg = tiny_config();
    let mut model: SrModel<f64> = match SrModel::init(&cfg, &mut Rng::from_seed(1)) {
        Ok(m) => m,
        Err(e) => return fail("gradient check", e.to_string()),
    };
    randomize_model(&mut model, &mut Rng::from_seed(2), 0.5);
    let (hr, lr) = tiny_pair(&cfg, 3);
    // The NLL is O(100) here; central differences need a step near the
    // cancellation-optimal (eps_f)^(1/3) or tiny gradient elements drown in
    // rounding noise.
    let settings = GradCheckSettings { eps: 1e-3, max_elems_per_param: 4, seed: 0 };
    let loss = |m: &SrModel<f64>, g: &mut Graph<f64>| {
        m.nll_graph(g, &hr, &lr)
            .map(|v| v.nll)
            .map_err(|e| ndgrad::Error::LossBuilder(e.to_string()))
    };
    match grad_check(&mut model, loss, &settings) {
        Ok(report) => CheckResult {
            name: "gradient check",
            pass: report.max_rel_err < 1e-4,
            detail: format!(
                "max rel err {:.3e} over {} probes",
                report.max_rel_err, report.elements_checked
            ),
        },
        Err(e) => fail("gradient check", e.to_string()),
    }
}

fn check_invertibility() -> CheckResult {
    let cfg = tiny_config();
    let mut worst = 0.0f32;
    for seed in 0..8u64 {
        let mut model: SrModel<f32> = match SrModel::init(&cfg, &mut Rng::from_seed(seed)) {
            Ok(m) => m,
            Err(e) => return fail("invertibility", e.to_string()),
        };
        randomize_model(&mut model, &mut Rng::from_seed(seed + 50), 0.8);
        let (hr, lr) = tiny_pair(&cfg, seed + 100);
        let cond = match model.encoder.build_condition(&lr, cfg.ratio) {
            Ok(c) => c,
            Err(e) => return fail("invertibility", e.to_string()),
        };
        let samples: Vec<f32> = hr.samples.clone();
        let res = match model.flow.analyze(&samples, &cond.channels) {
            Ok(r) => r,
            Err(e) => return fail("invertibility", e.to_string()),
        };
        let back = match model.flow.generate(&res.z, &cond.channels) {
            Ok(b) => b,
            Err(e) => return fail("invertibility", e.to_string()),
        };
        let orig = squeeze(&samples, 8).unwrap();
        for (a, b) in back.data().iter().zip(orig.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult {
        name: "invertibility",
        pass: worst < 1e-4,
        detail: format!("max round-trip error {worst:.3e} over 8 models"),
    }
}

/// Compares the accumulated analytic log-det against log|det| of the full
/// finite-difference Jacobian on a D=16 instance. `logdet_scale` exists as a
/// fault-injection hook: anything other than 1.0 must make the check fail.
pub fn jacobian_logdet_gap(logdet_scale: f64) -> Result<f64> {
    let cfg = RunConfig {
        n_flows: 2,
        wn_layers: 1,
        wn_channels: 8,
        batch: 1,
        max_hr_samples: 16,
        iters: 0,
        ..Default::default()
    };
    let mut model: SrModel<f64> = SrModel::init(&cfg, &mut Rng::from_seed(7))?;
    randomize_model(&mut model, &mut Rng::from_seed(8), 0.8);
    let mut rng = Rng::from_seed(9);
    let lr = Waveform::new((0..8).map(|_| rng.uniform(-0.5, 0.5) as f32).collect(), cfg.lr_rate());
    let cond = model.encoder.build_condition(&lr, cfg.ratio)?;
    let x0: Vec<f64> = (0..16).map(|_| rng.uniform(-0.8, 0.8)).collect();

    let base = model.flow.analyze(&x0, &cond.channels)?;
    let eps = 1e-6;
    let mut jac = vec![0.0f64; 16 * 16];
    for j in 0..16 {
        let mut xp = x0.clone();
        xp[j] += eps;
        let zp = model.flow.analyze(&xp, &cond.channels)?.z;
        let mut xm = x0.clone();
        xm[j] -= eps;
        let zm = model.flow.analyze(&xm, &cond.channels)?.z;
        for i in 0..16 {
            jac[i * 16 + j] = (zp.data()[i] - zm.data()[i]) / (2.0 * eps);
        }
    }
    let fd = ndgrad::raw::logabsdet(&jac, 16, 1e-300)?;
    Ok((base.log_det * logdet_scale - fd).abs())
}

fn check_jacobian() -> CheckResult {
    match jacobian_logdet_gap(1.0) {
        Ok(gap) => CheckResult {
            name: "jacobian log-det",
            pass: gap < 1e-3,
            detail: format!("|analytic - finite-difference| = {gap:.3e}"),
        },
        Err(e) => fail("jacobian log-det", e.to_string()),
    }
}

/// Direct-formula SNR, kept deliberately separate from the dsp path.
pub fn snr_oracle(x: &[f32], y: &[f32]) -> f64 {
    let num: f64 = y.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let den: f64 = x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    if den == 0.0 {
        return f64::INFINITY;
    }
    if num == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (num / den).log10()
}

/// Direct-formula LSD with a naive DFT, independent of the FFT route.
pub fn lsd_oracle(x: &[f32], y: &[f32]) -> f64 {
    let frame = 2048;
    let frames = x.len() / frame;
    let bins = frame / 2 + 1;
    let mut total = 0.0;
    for f in 0..frames {
        let mut acc = 0.0;
        for b in 0..bins {
            let power = |s: &[f32]| -> f64 {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for n in 0..frame {
                    let ang = -2.0 * std::f64::consts::PI * b as f64 * n as f64 / frame as f64;
                    re += s[f * frame + n] as f64 * ang.cos();
                    im += s[f * frame + n] as f64 * ang.sin();
                }
                re * re + im * im
            };
            let d = (power(y) + 1e-10).log10() - (power(x) + 1e-10).log10();
            acc += d * d;
        }
        total += (acc / bins as f64).sqrt();
    }
    total / frames as f64
}

fn check_metric_oracles() -> CheckResult {
    let mut rng = Rng::from_seed(21);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let x = Waveform::new((0..2048).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(), 48000);
        let y = Waveform::new(
            x.samples.iter().map(|&v| v * 0.8 + 0.05 * rng.uniform(-1.0, 1.0) as f32).collect(),
            48000,
        );
        let s = dsp::snr(&x, &y, SnrConvention::Paper).unwrap();
        worst = worst.max((s - snr_oracle(&x.samples, &y.samples)).abs());
        let l = dsp::lsd(&x, &y).unwrap();
        worst = worst.max((l - lsd_oracle(&x.samples, &y.samples)).abs());
    }
    CheckResult {
        name: "metric oracles",
        pass: worst < 1e-6,
        detail: format!("max |impl - direct formula| = {worst:.3e}"),
    }
}

fn check_mulaw_chain() -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..=20_000 {
        let x = -1.0 + 2.0 * i as f64 / 20_000.0;
        let code = dsp::sample_to_code(x).unwrap();
        let back = dsp::mulaw_decode(dsp::dequantize_256(code)).unwrap();
        worst = worst.max((back - x).abs());
    }
    let zero_ok = dsp::sample_to_code(0.0).unwrap() == 128
        && dsp::sample_to_code(1.0).unwrap() == 255
        && dsp::sample_to_code(-1.0).unwrap() == 0;
    CheckResult {
        name: "mu-law chain",
        pass: worst <= 0.04 && zero_ok,
        detail: format!("max chain error {worst:.4}"),
    }
}

fn check_parseval() -> CheckResult {
    let mut rng = Rng::from_seed(31);
    let x: Vec<f32> = (0..256).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    let mut buf: Vec<num_complex::Complex64> =
        x.iter().map(|&v| num_complex::Complex64::new(v as f64, 0.0)).collect();
    dsp::fft_in_place(&mut buf);
    let spec: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
    let time: f64 = x.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let rel = (spec - 256.0 * time).abs() / (256.0 * time);
    CheckResult {
        name: "parseval",
        pass: rel < 1e-6,
        detail: format!("relative energy gap {rel:.3e}"),
    }
}

fn check_resampler() -> CheckResult {
    let mut rng = Rng::from_seed(41);
    let w = Waveform::new((0..4096).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(), 48000);
    let same = dsp::resample(&w, 48000).unwrap();
    if same.samples != w.samples {
        return fail("resampler", "ratio-1 resample is not the identity".into());
    }
    // A 2 kHz sine survives 48k -> 16k with its zero-crossing rate intact.
    let sine = Waveform::new(
        (0..48000)
            .map(|i| (2.0 * std::f64::consts::PI * 2000.0 * i as f64 / 48000.0).sin() as f32)
            .collect(),
        48000,
    );
    let r = dsp::resample(&sine, 16000).unwrap();
    let inner = &r.samples[800..r.samples.len() - 800];
    let crossings = inner.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count();
    let per_sec = crossings as f64 * 16000.0 / inner.len() as f64;
    let ok = (per_sec - 4000.0).abs() <= 40.0;
    CheckResult {
        name: "resampler",
        pass: ok,
        detail: format!("identity ok; sine zero-crossings/s {per_sec:.1} (expect 4000)"),
    }
}

fn check_precision_consistency() -> CheckResult {
    // The f32 and f64 paths must agree on a tiny NLL to a few f32 ulps.
    let cfg = tiny_config();
    let mut model: SrModel<f32> = match SrModel::init(&cfg, &mut Rng::from_seed(51)) {
        Ok(m) => m,
        Err(e) => return fail("precision consistency", e.to_string()),
    };
    randomize_model(&mut model, &mut Rng::from_seed(52), 0.5);
    let double: SrModel<f64> = match cast_model(&model, &cfg) {
        Ok(m) => m,
        Err(e) => return fail("precision consistency", e.to_string()),
    };
    let (hr, lr) = tiny_pair(&cfg, 53);
    let a = match model.analyze(&hr, &lr) {
        Ok(r) => r.nll_per_dim as f64,
        Err(e) => return fail("precision consistency", e.to_string()),
    };
    let b = match double.analyze(&hr, &lr) {
        Ok(r) => r.nll_per_dim,
        Err(e) => return fail("precision consistency", e.to_string()),
    };
    let gap = (a - b).abs();
    CheckResult {
        name: "precision consistency",
        pass: gap < 1e-3,
        detail: format!("|f32 - f64| nll/dim = {gap:.3e}"),
    }
}

fn check_graph_matches_plain() -> CheckResult {
    let cfg = tiny_config();
    let mut model: SrModel<f32> = match SrModel::init(&cfg, &mut Rng::from_seed(61)) {
        Ok(m) => m,
        Err(e) => return fail("graph/plain agreement", e.to_string()),
    };
    randomize_model(&mut model, &mut Rng::from_seed(62), 0.5);
    let (hr, lr) = tiny_pair(&cfg, 63);
    let plain = match model.analyze(&hr, &lr) {
        Ok(r) => r,
        Err(e) => return fail("graph/plain agreement", e.to_string()),
    };
    let mut g = Graph::new();
    let vars = match model.nll_graph(&mut g, &hr, &lr) {
        Ok(v) => v,
        Err(e) => return fail("graph/plain agreement", e.to_string()),
    };
    let gap = (g.value(vars.nll).item() - plain.nll).abs();
    CheckResult {
        name: "graph/plain agreement",
        pass: gap <= 1e-4 * plain.nll.abs().max(1.0),
        detail: format!("|tape - plain| nll = {gap:.3e}"),
    }
}

fn fail(name: &'static str, detail: String) -> CheckResult {
    CheckResult { name, pass: false, detail }
}

/// Runs the whole battery. All checks run even if an early one fails.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_gradients(),
        check_invertibility(),
        check_jacobian(),
        check_metric_oracles(),
        check_mulaw_chain(),
        check_parseval(),
        check_resampler(),
        check_precision_consistency(),
        check_graph_matches_plain(),
    ]
}
