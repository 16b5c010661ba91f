use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Ix2};

use super::{join, orthogonal, uniform_fan_in, Module, Param, Visitor};
use crate::rng::Rng;

/// LSTM cell with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    /// `4H x E`
    pub w_ih: Param,
    /// `4H x H`
    pub w_hh: Param,
    /// `4H`
    pub bias: Param,
}

/// Everything one step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl LstmCell {
    /// Input weights use fan-in uniform init, each recurrent gate block is
    /// orthogonal, forget-gate bias starts at 1.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w_ih = uniform_fan_in(Ix2(4 * hidden, input), input, rng);
        let mut w_hh = Array2::<f64>::zeros((4 * hidden, hidden));
        for gate in 0..4 {
            w_hh.slice_mut(s![gate * hidden..(gate + 1) * hidden, ..])
                .assign(&orthogonal(hidden, rng));
        }
        let mut bias = Array1::<f64>::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            w_ih: Param::new(w_ih),
            w_hh: Param::new(w_hh),
            bias: Param::new(bias),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.value.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.value.shape()[1]
    }

    pub fn step(&self, x: ArrayView2<f64>, h: ArrayView2<f64>, c: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, LstmStep) {
        let hd = self.hidden();
        let mut gates = x.dot(&self.w_ih.v2().t());
        general_mat_mul(1.0, &h, &self.w_hh.v2().t(), 1.0, &mut gates);
        gates += &self.bias.v1();
        let i = gates.slice(s![.., 0..hd]).mapv(sigmoid);
        let f = gates.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = gates.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = gates.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
        let c_new = &f * &c + &i * &g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o * &tanh_c;
        let cache = LstmStep {
            x: x.to_owned(),
            h_prev: h.to_owned(),
            c_prev: c.to_owned(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        (h_new, c_new, cache)
    }

    /// Returns `(dx, dh_prev, dc_prev)` given gradients w.r.t. the step's
    /// new hidden and cell states.
    pub fn step_backward(
        &mut self,
        cache: &LstmStep,
        dh: ArrayView2<f64>,
        dc: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let hd = self.hidden();
        let n = dh.nrows();
        let d_o = &dh * &cache.tanh_c;
        let dc_total = &dc + &(&dh * &cache.o * cache.tanh_c.mapv(|t| 1.0 - t * t));
        let d_i = &dc_total * &cache.g;
        let d_g = &dc_total * &cache.i;
        let d_f = &dc_total * &cache.c_prev;
        let dc_prev = &dc_total * &cache.f;

        let mut dgates = Array2::<f64>::zeros((n, 4 * hd));
        dgates
            .slice_mut(s![.., 0..hd])
            .assign(&(&d_i * &cache.i.mapv(|v| v * (1.0 - v))));
        dgates
            .slice_mut(s![.., hd..2 * hd])
            .assign(&(&d_f * &cache.f.mapv(|v| v * (1.0 - v))));
        dgates
            .slice_mut(s![.., 2 * hd..3 * hd])
            .assign(&(&d_g * &cache.g.mapv(|v| 1.0 - v * v)));
        dgates
            .slice_mut(s![.., 3 * hd..4 * hd])
            .assign(&(&d_o * &cache.o.mapv(|v| v * (1.0 - v))));

        general_mat_mul(1.0, &dgates.t(), &cache.x, 1.0, &mut self.w_ih.g2());
        general_mat_mul(1.0, &dgates.t(), &cache.h_prev, 1.0, &mut self.w_hh.g2());
        {
            let mut gb = self.bias.g1();
            gb += &dgates.sum_axis(Axis(0));
        }
        let dx = dgates.dot(&self.w_ih.v2());
        let dh_prev = dgates.dot(&self.w_hh.v2());
        (dx, dh_prev, dc_prev)
    }
}

impl Module for LstmCell {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "w_ih"), &mut self.w_ih);
        v.param(&join(prefix, "w_hh"), &mut self.w_hh);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central, rel_err};
    use crate::rng::seeded;

    /// Two unrolled steps with a linear read-out of both hidden states.
    fn unrolled_loss(cell: &LstmCell, xs: &[Array2<f64>], h0: &Array2<f64>, w: &[Array2<f64>]) -> f64 {
        let mut h = h0.clone();
        let mut c = Array2::zeros(h0.raw_dim());
        let mut loss = 0.0;
        for (x, wt) in xs.iter().zip(w) {
            let (h2, c2, _) = cell.step(x.view(), h.view(), c.view());
            loss += (&h2 * wt).sum() + 0.5 * (&c2 * wt).sum();
            h = h2;
            c = c2;
        }
        loss
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = seeded(21);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        let xs: Vec<_> = (0..2).map(|_| uniform_fan_in(Ix2(2, 3), 1, &mut rng)).collect();
        let w: Vec<_> = (0..2).map(|_| uniform_fan_in(Ix2(2, 4), 1, &mut rng)).collect();
        let h0 = uniform_fan_in(Ix2(2, 4), 1, &mut rng);

        let mut caches = Vec::new();
        let (mut h, mut c) = (h0.clone(), Array2::zeros((2, 4)));
        for x in &xs {
            let (h2, c2, cache) = cell.step(x.view(), h.view(), c.view());
            caches.push(cache);
            h = h2;
            c = c2;
        }
        let mut dh = Array2::<f64>::zeros((2, 4));
        let mut dc = Array2::<f64>::zeros((2, 4));
        let mut dxs = vec![];
        for t in (0..2).rev() {
            let dh_t = &dh + &w[t];
            let dc_t = &dc + &(&w[t] * 0.5);
            let (dx, dhp, dcp) = cell.step_backward(&caches[t], dh_t.view(), dc_t.view());
            dxs.push(dx);
            dh = dhp;
            dc = dcp;
        }
        dxs.reverse();

        for idx in [[0, 0], [5, 2], [13, 1], [15, 0]] {
            let mut probe = cell.clone();
            let fd = central(
                |v| {
                    probe.w_ih.value[idx] = v;
                    unrolled_loss(&probe, &xs, &h0, &w)
                },
                cell.w_ih.value[idx],
                1e-6,
            );
            assert!(rel_err(fd, cell.w_ih.grad[idx], 1e-8) < 1e-6);
        }
        for idx in [[1, 1], [9, 3], [14, 0]] {
            let mut probe = cell.clone();
            let fd = central(
                |v| {
                    probe.w_hh.value[idx] = v;
                    unrolled_loss(&probe, &xs, &h0, &w)
                },
                cell.w_hh.value[idx],
                1e-6,
            );
            assert!(rel_err(fd, cell.w_hh.grad[idx], 1e-8) < 1e-6);
        }
        let fd = central(
            |v| {
                let mut xx = xs.clone();
                xx[0][[1, 2]] = v;
                unrolled_loss(&cell, &xx, &h0, &w)
            },
            xs[0][[1, 2]],
            1e-6,
        );
        assert!(rel_err(fd, dxs[0][[1, 2]], 1e-8) < 1e-6);
        let fd = central(
            |v| {
                let mut hh = h0.clone();
                hh[[0, 3]] = v;
                unrolled_loss(&cell, &xs, &hh, &w)
            },
            h0[[0, 3]],
            1e-6,
        );
        assert!(rel_err(fd, dh[[0, 3]], 1e-8) < 1e-6);
    }
}
