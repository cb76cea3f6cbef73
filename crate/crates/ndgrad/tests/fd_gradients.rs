//! Finite-difference oracles for every registered op: analytic gradients of a
//! scalar functional of each op must match central differences within 1e-4
//! relative error on randomized small inputs.

use ndgrad::{grad_check, GradCheckSettings, Graph, ParamModule, Parameter, Result, Tensor, Var};
use proptest::prelude::*;

struct Bag {
    params: Vec<Parameter<f64>>,
}

impl ParamModule<f64> for Bag {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
        self.params.iter().for_each(|p| f(p));
    }
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
        self.params.iter_mut().for_each(|p| f(p));
    }
}

fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let numel: usize = shape.iter().product();
    proptest::collection::vec(-1.5f64..1.5, numel)
        .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
}

fn check(bag: &mut Bag, f: impl FnMut(&Bag, &mut Graph<f64>) -> Result<Var>) -> f64 {
    grad_check(bag, f, &GradCheckSettings::default())
        .expect("grad check ran")
        .max_rel_err
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conv1d_gradients_match_fd(
        x in tensor_strategy(vec![2, 7]),
        w in tensor_strategy(vec![3, 2, 3]),
        b in tensor_strategy(vec![3]),
        dilation in 1usize..3,
    ) {
        let mut bag = Bag { params: vec![
            Parameter::new("x", x),
            Parameter::new("w", w),
            Parameter::new("b", b),
        ]};
        let err = check(&mut bag, |m, g| {
            let x = g.param(&m.params[0])?;
            let w = g.param(&m.params[1])?;
            let b = g.param(&m.params[2])?;
            let y = g.conv1d(x, w, b, dilation)?;
            let t = g.tanh(y);
            Ok(g.sum(t))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn channel_mix_gradients_match_fd(
        x in tensor_strategy(vec![3, 4]),
        w in tensor_strategy(vec![3, 3]),
    ) {
        let mut bag = Bag { params: vec![Parameter::new("x", x), Parameter::new("w", w)] };
        let err = check(&mut bag, |m, g| {
            let x = g.param(&m.params[0])?;
            let w = g.param(&m.params[1])?;
            let y = g.channel_mix(x, w)?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn elementwise_chain_gradients_match_fd(a in tensor_strategy(vec![6]), b in tensor_strategy(vec![6])) {
        let mut bag = Bag { params: vec![Parameter::new("a", a), Parameter::new("b", b)] };
        let err = check(&mut bag, |m, g| {
            let a = g.param(&m.params[0])?;
            let b = g.param(&m.params[1])?;
            let ta = g.tanh(a);
            let sb = g.sigmoid(b);
            let gate = g.mul(ta, sb)?;
            let e = g.exp(gate);
            let neg = g.neg(e);
            let sum = g.add(gate, neg)?;
            let scaled = g.mul_scalar(sum, 0.7);
            let shifted = g.add_scalar(scaled, 0.3);
            Ok(g.sum(shifted))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn log_gradient_matches_fd(a in proptest::collection::vec(0.1f64..2.0, 5)) {
        let t = Tensor::new(vec![5], a).unwrap();
        let mut bag = Bag { params: vec![Parameter::new("a", t)] };
        let err = check(&mut bag, |m, g| {
            let a = g.param(&m.params[0])?;
            let l = g.log(a)?;
            Ok(g.sum(l))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn embedding_and_regroup_gradients_match_fd(
        table in tensor_strategy(vec![6, 3]),
        idx in proptest::collection::vec(0usize..6, 4),
    ) {
        let mut bag = Bag { params: vec![Parameter::new("table", table)] };
        let err = check(&mut bag, |m, g| {
            let t = g.param(&m.params[0])?;
            let rows = g.embedding(t, &idx)?;
            let grouped = g.group_channels(rows, 2)?;
            let rep = g.repeat_cols(grouped, 2)?;
            let act = g.tanh(rep);
            Ok(g.sum(act))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn slice_concat_gradients_match_fd(x in tensor_strategy(vec![4, 5])) {
        let mut bag = Bag { params: vec![Parameter::new("x", x)] };
        let err = check(&mut bag, |m, g| {
            let x = g.param(&m.params[0])?;
            let a = g.slice_rows(x, 0, 2)?;
            let b = g.slice_rows(x, 2, 4)?;
            let ta = g.tanh(a);
            let prod = g.mul(ta, b)?;
            let back = g.concat_rows(prod, a)?;
            Ok(g.sum(back))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn logdet_gradient_matches_fd(seedvals in proptest::collection::vec(-1.0f64..1.0, 16)) {
        // Shift the diagonal to keep the matrix comfortably nonsingular.
        let mut data = seedvals;
        for i in 0..4 {
            data[i * 4 + i] += 3.0;
        }
        let t = Tensor::new(vec![4, 4], data).unwrap();
        let mut bag = Bag { params: vec![Parameter::new("w", t)] };
        let err = check(&mut bag, |m, g| {
            let w = g.param(&m.params[0])?;
            let ld = g.logdet(w, 1e-9)?;
            Ok(g.mul_scalar(ld, 2.5))
        });
        prop_assert!(err < 1e-4, "max rel err {err}");
    }
}

#[test]
fn composed_conv_tanh_sum_matches_fd() {
    let x = Tensor::new(vec![1, 4], vec![0.4, -0.2, 0.9, 0.1]).unwrap();
    let w = Tensor::new(vec![1, 1, 3], vec![0.5, -0.3, 0.8]).unwrap();
    let b = Tensor::new(vec![1], vec![0.05]).unwrap();
    let mut bag = Bag {
        params: vec![Parameter::new("x", x), Parameter::new("w", w), Parameter::new("b", b)],
    };
    let report = grad_check(
        &mut bag,
        |m, g| {
            let x = g.param(&m.params[0])?;
            let w = g.param(&m.params[1])?;
            let b = g.param(&m.params[2])?;
            let y = g.conv1d(x, w, b, 1)?;
            let t = g.tanh(y);
            Ok(g.sum(t))
        },
        &GradCheckSettings::default(),
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-7, "rel err {}", report.max_rel_err);
}
