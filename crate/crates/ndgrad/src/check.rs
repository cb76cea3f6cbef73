//! Gradient verification against central finite differences. Runs in double
//! precision so the comparison isolates wiring mistakes from roundoff.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamModule, Parameter};

/// Settings for [`grad_check`]. `max_elems_per_param` caps how many elements
/// of each parameter tensor are probed with finite differences; tensors at or
/// below the cap are checked exhaustively, larger ones on a seeded random
/// subset. Every parameter tensor is always visited.
#[derive(Debug, Clone)]
pub struct GradCheckSettings {
    pub eps: f64,
    pub max_elems_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { eps: 1e-5, max_elems_per_param: usize::MAX, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over checked elements of |analytic - central| / max(|analytic|, |central|, 1e-12)
    pub max_rel_err: f64,
    /// (parameter name, flat element index, analytic, central) of the worst element
    pub worst: Option<(String, usize, f64, f64)>,
    pub elements_checked: usize,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn sample_indices(numel: usize, cap: usize, seed: u64) -> Vec<usize> {
    if numel <= cap {
        return (0..numel).collect();
    }
    let mut state = seed;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(cap);
    while out.len() < cap {
        let idx = (splitmix64(&mut state) % numel as u64) as usize;
        if seen.insert(idx) {
            out.push(idx);
        }
    }
    out.sort_unstable();
    out
}

fn adjust<M, T>(model: &mut M, name: &str, idx: usize, delta: f64)
where
    T: crate::Scalar,
    M: ParamModule<T>,
{
    model.for_each_param_mut(&mut |p: &mut Parameter<T>| {
        if p.name == name {
            let d = p.value.data_mut();
            d[idx] = T::of_f64(d[idx].as_f64() + delta);
        }
    });
}

/// Compares analytic gradients of a scalar loss against central finite
/// differences over the trainable parameters of `model`. `loss_fn` must
/// rebuild the loss from scratch on the graph it is handed (binding the
/// model's parameters with [`Graph::param`]) and be deterministic.
pub fn grad_check<M, F>(
    model: &mut M,
    mut loss_fn: F,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport>
where
    M: ParamModule<f64>,
    F: FnMut(&M, &mut Graph<f64>) -> Result<Var>,
{
    // Analytic pass.
    let mut graph = Graph::new();
    let loss = loss_fn(model, &mut graph)?;
    if graph.value(loss).numel() != 1 {
        return Err(Error::NonScalarLoss { shape: graph.value(loss).shape().to_vec() });
    }
    if !graph.value(loss).item().is_finite() {
        return Err(Error::NonFinite { what: "loss".to_string() });
    }
    graph.backward(loss)?;

    let mut analytic: HashMap<String, Vec<f64>> = HashMap::new();
    let mut plan: Vec<(String, usize)> = Vec::new();
    let mut bad_param: Option<String> = None;
    model.for_each_param(&mut |p| {
        if !p.trainable {
            return;
        }
        let g = graph
            .grad_by_name(&p.name)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; p.numel()]);
        if g.iter().any(|v| !v.is_finite()) && bad_param.is_none() {
            bad_param = Some(p.name.clone());
        }
        analytic.insert(p.name.clone(), g);
        plan.push((p.name.clone(), p.numel()));
    });
    if let Some(name) = bad_param {
        return Err(Error::NonFinite { what: format!("analytic gradient of {name}") });
    }
    drop(graph);

    let eval = |model: &M, loss_fn: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss_fn(model, &mut g)?;
        Ok(g.value(v).item())
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, elements_checked: 0 };
    for (ordinal, (name, numel)) in plan.iter().enumerate() {
        let indices =
            sample_indices(*numel, settings.max_elems_per_param, settings.seed ^ (ordinal as u64) << 17);
        for idx in indices {
            adjust(model, name, idx, settings.eps);
            let f_plus = eval(model, &mut loss_fn)?;
            adjust(model, name, idx, -2.0 * settings.eps);
            let f_minus = eval(model, &mut loss_fn)?;
            adjust(model, name, idx, settings.eps);

            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("finite-difference probe of {name}[{idx}]"),
                });
            }
            let central = (f_plus - f_minus) / (2.0 * settings.eps);
            let a = analytic[name][idx];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(1e-12);
            report.elements_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), idx, a, central));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    struct Quad {
        p: Parameter<f64>,
    }

    impl ParamModule<f64> for Quad {
        fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
            f(&self.p);
        }
        fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.p);
        }
    }

    fn quad_loss(m: &Quad, g: &mut Graph<f64>) -> crate::Result<Var> {
        let v = g.param(&m.p)?;
        let sq = g.mul(v, v)?;
        Ok(g.sum(sq))
    }

    #[test]
    fn quadratic_loss_is_exact_up_to_roundoff() {
        let mut m = Quad {
            p: Parameter::new("p", Tensor::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap()),
        };
        let report = grad_check(&mut m, quad_loss, &GradCheckSettings::default()).unwrap();
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
        assert_eq!(report.elements_checked, 3);
    }

    #[test]
    fn doubled_gradient_is_detected() {
        // The analytic pass (first call) sees the loss scaled by 2, the FD
        // probes see the unscaled loss, so the reported gradient is exactly
        // twice the truth.
        struct Liar {
            p: Parameter<f64>,
            first_call: std::cell::Cell<bool>,
        }
        impl ParamModule<f64> for Liar {
            fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
                f(&self.p);
            }
            fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
                f(&mut self.p);
            }
        }
        let mut m = Liar {
            p: Parameter::new("p", Tensor::new(vec![2], vec![1.0, -0.25]).unwrap()),
            first_call: std::cell::Cell::new(true),
        };
        let loss = |m: &Liar, g: &mut Graph<f64>| -> crate::Result<Var> {
            let v = g.param(&m.p)?;
            let sq = g.mul(v, v)?;
            let s = g.sum(sq);
            let scale = if m.first_call.replace(false) { 2.0 } else { 1.0 };
            Ok(g.mul_scalar(s, scale))
        };
        let report = grad_check(&mut m, loss, &GradCheckSettings::default()).unwrap();
        // |2g - g| / max(|2g|, |g|) = 1/2 per the error definition.
        assert!((report.max_rel_err - 0.5).abs() < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn sampling_caps_probe_count() {
        let mut m = Quad {
            p: Parameter::new("p", Tensor::new(vec![64], vec![0.1; 64]).unwrap()),
        };
        let settings = GradCheckSettings { max_elems_per_param: 8, ..Default::default() };
        let report = grad_check(&mut m, quad_loss, &settings).unwrap();
        assert_eq!(report.elements_checked, 8);
        assert!(report.max_rel_err < 1e-8);
    }
}
