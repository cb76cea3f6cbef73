use crate::tensor::Tensor;
use crate::Scalar;

/// A named trainable tensor with gradient storage. Names must be unique
/// within a model; [`crate::Graph::param`] keys leaf binding on them.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter { name: name.into(), value, grad, trainable: true }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        let mut p = Self::new(name, value);
        p.trainable = false;
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Anything that owns a flat collection of parameters. Visit order must be
/// deterministic; optimizers and checkpoints rely on it.
pub trait ParamModule<T: Scalar> {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<T>));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));
}

/// Zeroes every gradient in the module.
pub fn zero_grads<T: Scalar, M: ParamModule<T>>(model: &mut M) {
    model.for_each_param_mut(&mut |p| p.zero_grad());
}

/// Global L2 norm over all gradients.
pub fn grad_norm<T: Scalar, M: ParamModule<T>>(model: &M) -> f64 {
    let mut acc = 0.0;
    model.for_each_param(&mut |p| {
        acc += p.grad.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
    });
    acc.sqrt()
}

/// Total number of parameter elements.
pub fn param_count<T: Scalar, M: ParamModule<T>>(model: &M) -> usize {
    let mut n = 0;
    model.for_each_param(&mut |p| n += p.numel());
    n
}

/// Pulls gradients computed by `graph` into the module's `grad` buffers,
/// scaled by `scale`, accumulating over calls. Parameters the loss never
/// reached are left as they are (zero after `zero_grads`).
pub fn accumulate_grads<T: Scalar, M: ParamModule<T>>(
    model: &mut M,
    graph: &crate::Graph<T>,
    scale: T,
) {
    model.for_each_param_mut(&mut |p| {
        if let Some(g) = graph.grad_by_name(&p.name) {
            for (dst, &src) in p.grad.data_mut().iter_mut().zip(g) {
                *dst = *dst + src * scale;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Two {
        a: Parameter<f64>,
        b: Parameter<f64>,
    }

    impl ParamModule<f64> for Two {
        fn for_each_param(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
            f(&self.a);
            f(&self.b);
        }
        fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.a);
            f(&mut self.b);
        }
    }

    #[test]
    fn grad_norm_sums_over_params() {
        let mut m = Two {
            a: Parameter::new("a", Tensor::zeros(vec![2])),
            b: Parameter::new("b", Tensor::zeros(vec![1])),
        };
        m.a.grad = Tensor::new(vec![2], vec![3.0, 0.0]).unwrap();
        m.b.grad = Tensor::new(vec![1], vec![4.0]).unwrap();
        assert_eq!(grad_norm(&m), 5.0);
        zero_grads(&mut m);
        assert_eq!(grad_norm(&m), 0.0);
    }
}
