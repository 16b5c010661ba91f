use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1, Ix2};

use super::{join, uniform_fan_in, Module, Param, Visitor};
use crate::rng::Rng;

/// `y = x W^T + b` with `W` of shape `out x in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, bias: bool, rng: &mut Rng) -> Self {
        let weight = Param::new(uniform_fan_in(Ix2(fan_out, fan_in), fan_in, rng));
        let bias = bias.then(|| Param::new(uniform_fan_in(Ix1(fan_out), fan_in, rng)));
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            weight: Param::new(Array2::<f64>::zeros((fan_out, fan_in))),
            bias: bias.then(|| Param::new(Array1::<f64>::zeros(fan_out))),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.v2().t());
        if let Some(b) = &self.bias {
            y += &b.v1();
        }
        y
    }

    /// Accumulate parameter gradients and return `dL/dx`.
    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.backward_params(x, dy);
        dy.dot(&self.weight.v2())
    }

    /// Accumulate parameter gradients only.
    pub fn backward_params(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut self.weight.g2());
        if let Some(b) = &mut self.bias {
            let mut g = b.g1();
            g += &dy.sum_axis(Axis(0));
        }
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central, rel_err};
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn forward_is_affine() {
        let mut l = Linear::zeros(2, 1, true);
        l.weight.value = array![[2.0, -1.0]].into_dyn();
        l.bias.as_mut().unwrap().value = array![0.5].into_dyn();
        let y = l.forward(array![[1.0, 3.0]].view());
        assert_eq!(y, array![[-0.5]]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(9);
        let mut l = Linear::new(4, 3, true, &mut rng);
        let x = uniform_fan_in(Ix2(5, 4), 1, &mut rng);
        let w = uniform_fan_in(Ix2(5, 3), 1, &mut rng);
        let dx = l.backward(x.view(), w.view());
        let loss = |l: &Linear, x: &Array2<f64>| (l.forward(x.view()) * &w).sum();
        for (i, j) in [(0, 0), (2, 3), (1, 2)] {
            let mut probe = l.clone();
            let fd = central(
                |v| {
                    probe.weight.value[[i, j]] = v;
                    loss(&probe, &x)
                },
                l.weight.value[[i, j]],
                1e-6,
            );
            assert!(rel_err(fd, l.weight.grad[[i, j]], 1e-8) < 1e-6);
        }
        for (i, j) in [(0, 1), (4, 3)] {
            let fd = central(
                |v| {
                    let mut xx = x.clone();
                    xx[[i, j]] = v;
                    loss(&l, &xx)
                },
                x[[i, j]],
                1e-6,
            );
            assert!(rel_err(fd, dx[[i, j]], 1e-8) < 1e-6);
        }
        let b = l.bias.as_ref().unwrap();
        assert!((b.grad[[1]] - w.column(1).sum()).abs() < 1e-12);
    }
}
