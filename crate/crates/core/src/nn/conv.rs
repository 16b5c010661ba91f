use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis, Ix1, Ix4};

use super::{join, uniform_fan_in, Module, Param, Visitor};
use crate::par;
use crate::rng::Rng;

// Items per partial gradient sum; fixed so the summation order never
// depends on the number of worker threads.
const GRAD_CHUNK: usize = 4;

/// 2-D convolution over NCHW tensors, lowered to im2col + GEMM per image.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn im2col(&self, x: &[f64]) -> Array2<f64> {
        let (k, ho, wo) = (self.k, self.ho, self.wo);
        let mut cols = Array2::<f64>::zeros((self.cin * k * k, ho * wo));
        let out = cols.as_slice_mut().unwrap();
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut out[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: ArrayView2<f64>, dx: &mut [f64]) {
        let (k, ho, wo) = (self.k, self.ho, self.wo);
        let cols = cols.as_standard_layout();
        let src_all = cols.as_slice().unwrap();
        for c in 0..self.cin {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &src_all[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, bias: bool, rng: &mut Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            weight: Param::new(uniform_fan_in(Ix4(cout, cin, kernel, kernel), fan_in, rng)),
            bias: bias.then(|| Param::new(uniform_fan_in(Ix1(cout), fan_in, rng))),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let (ho, wo) = self.out_hw(h, w);
        Geometry {
            cin: self.in_channels(),
            h,
            w,
            k: self.kernel(),
            stride: self.stride,
            pad: self.pad,
            ho,
            wo,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let cout = self.out_channels();
        let rest = self.weight.value.len() / cout;
        self.weight
            .value
            .view()
            .into_shape_with_order((cout, rest))
            .expect("contiguous weights")
    }

    pub fn forward(&self, x: ArrayView4<f64>) -> Array4<f64> {
        let (n, cin, h, w) = x.dim();
        assert_eq!(cin, self.in_channels(), "conv input channels");
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let g = self.geometry(h, w);
        let cout = self.out_channels();
        let wm = self.weight_matrix();
        let per = cin * h * w;
        let outs = par::map_range(n, |i| {
            let cols = g.im2col(&xs[i * per..(i + 1) * per]);
            let mut y = wm.dot(&cols);
            if let Some(b) = &self.bias {
                y += &b.v1().insert_axis(Axis(1));
            }
            y
        });
        let mut out = Array4::<f64>::zeros((n, cout, g.ho, g.wo));
        let plane = cout * g.ho * g.wo;
        let dst = out.as_slice_mut().unwrap();
        for (i, y) in outs.iter().enumerate() {
            dst[i * plane..(i + 1) * plane].copy_from_slice(y.as_slice().unwrap());
        }
        out
    }

    /// Accumulate weight gradients; returns `dL/dx` when `input_grad` is set.
    pub fn backward(&mut self, x: ArrayView4<f64>, dy: ArrayView4<f64>, input_grad: bool) -> Option<Array4<f64>> {
        let (n, cin, h, w) = x.dim();
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let dys = dy.as_slice().unwrap();
        let g = self.geometry(h, w);
        let cout = self.out_channels();
        let wm = self.weight_matrix();
        let ckk = wm.ncols();
        let (per_in, per_out) = (cin * h * w, cout * g.ho * g.wo);
        let n_chunks = n.div_ceil(GRAD_CHUNK);
        let partials = par::map_range(n_chunks, |c| {
            let mut dw = Array2::<f64>::zeros((cout, ckk));
            let mut db = Array1::<f64>::zeros(cout);
            let mut dx = input_grad.then(|| vec![0.0; per_in * GRAD_CHUNK]);
            for (slot, i) in (c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n)).enumerate() {
                let cols = g.im2col(&xs[i * per_in..(i + 1) * per_in]);
                let dyi = ArrayView2::from_shape((cout, g.ho * g.wo), &dys[i * per_out..(i + 1) * per_out]).unwrap();
                general_mat_mul(1.0, &dyi, &cols.t(), 1.0, &mut dw);
                db += &dyi.sum_axis(Axis(1));
                if let Some(dx) = dx.as_mut() {
                    let dcols = wm.t().dot(&dyi);
                    g.col2im(dcols.view(), &mut dx[slot * per_in..(slot + 1) * per_in]);
                }
            }
            (dw, db, dx)
        });
        let mut dx_full = input_grad.then(|| Array4::<f64>::zeros((n, cin, h, w)));
        for (c, (dw, db, dx)) in partials.into_iter().enumerate() {
            let mut gw = self.weight.grad.view_mut().into_shape_with_order((cout, ckk)).unwrap();
            gw += &dw;
            if let Some(b) = &mut self.bias {
                let mut gb = b.g1();
                gb += &db;
            }
            if let (Some(full), Some(dx)) = (dx_full.as_mut(), dx) {
                let start = c * GRAD_CHUNK;
                let count = (n - start).min(GRAD_CHUNK);
                let dst = full.as_slice_mut().unwrap();
                dst[start * per_in..(start + count) * per_in].copy_from_slice(&dx[..count * per_in]);
            }
        }
        dx_full
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2;

#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn forward(&self, x: ArrayView4<f64>) -> (Array4<f64>, PoolCache) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = (h / 2, w / 2);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f64>::zeros((n, c, ho, wo));
        let mut argmax = vec![0usize; n * c * ho * wo];
        let o = out.as_slice_mut().unwrap();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    let oi = p * ho * wo + oy * wo + ox;
                    o[oi] = xs[best];
                    argmax[oi] = best;
                }
            }
        }
        (out, PoolCache { argmax, in_dim: (n, c, h, w) })
    }

    pub fn backward(&self, cache: &PoolCache, dy: ArrayView4<f64>) -> Array4<f64> {
        let mut dx = Array4::<f64>::zeros(cache.in_dim);
        let d = dx.as_slice_mut().unwrap();
        for (g, &idx) in dy.iter().zip(&cache.argmax) {
            d[idx] += g;
        }
        dx
    }
}

/// Mean over the spatial axes: `N x C x H x W -> N x C`.
pub fn avg_pool_global(x: ArrayView4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    x.into_owned()
        .into_shape_with_order((n, c, h * w))
        .unwrap()
        .mean_axis(Axis(2))
        .unwrap()
}

pub fn avg_pool_global_backward(dy: ArrayView2<f64>, (n, c, h, w): (usize, usize, usize, usize)) -> Array4<f64> {
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(i, j, _, _)| dy[[i, j]] * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central, rel_err};
    use crate::rng::seeded;
    use ndarray::array;

    /// Direct nested-loop convolution, independent of im2col.
    fn naive_conv(conv: &Conv2d, x: &Array4<f64>) -> Array4<f64> {
        let (n, cin, h, w) = x.dim();
        let (ho, wo) = conv.out_hw(h, w);
        let k = conv.weight.value.shape()[2];
        let cout = conv.out_channels();
        let wt = conv.weight.v4();
        Array4::from_shape_fn((n, cout, ho, wo), |(i, o, oy, ox)| {
            let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value[[o]]);
            for c in 0..cin {
                for ki in 0..k {
                    for kj in 0..k {
                        let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                        let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            s += wt[[o, c, ki, kj]] * x[[i, c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = seeded(1);
        for (stride, pad) in [(1, 1), (2, 0), (1, 0)] {
            let conv = Conv2d::new(3, 4, 3, stride, pad, true, &mut rng);
            let x = uniform_fan_in(Ix4(2, 3, 6, 5), 1, &mut rng);
            let a = conv.forward(x.view());
            let b = naive_conv(&conv, &x);
            assert_eq!(a.dim(), b.dim());
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(2);
        let mut conv = Conv2d::new(2, 3, 3, 1, 1, true, &mut rng);
        let x = uniform_fan_in(Ix4(5, 2, 4, 4), 1, &mut rng);
        let w = uniform_fan_in(Ix4(5, 3, 4, 4), 1, &mut rng);
        let dx = conv.backward(x.view(), w.view(), true).unwrap();
        for idx in [[0, 0, 0, 0], [1, 1, 2, 0], [2, 0, 1, 2]] {
            let mut probe = conv.clone();
            let fd = central(
                |v| {
                    probe.weight.value[idx] = v;
                    (probe.forward(x.view()) * &w).sum()
                },
                conv.weight.value[idx],
                1e-6,
            );
            assert!(rel_err(fd, conv.weight.grad[idx], 1e-8) < 1e-6);
        }
        for idx in [[0, 0, 0, 0], [4, 1, 3, 3], [2, 1, 1, 2]] {
            let fd = central(
                |v| {
                    let mut xx = x.clone();
                    xx[idx] = v;
                    (conv.forward(xx.view()) * &w).sum()
                },
                x[idx],
                1e-6,
            );
            assert!(rel_err(fd, dx[idx], 1e-8) < 1e-6);
        }
        let fd = central(
            |v| {
                let mut probe = conv.clone();
                probe.bias.as_mut().unwrap().value[[2]] = v;
                (probe.forward(x.view()) * &w).sum()
            },
            conv.bias.as_ref().unwrap().value[[2]],
            1e-6,
        );
        assert!(rel_err(fd, conv.bias.as_ref().unwrap().grad[[2]], 1e-8) < 1e-6);
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let x = array![[[[1.0, 5.0], [3.0, 2.0]]]];
        let (y, cache) = MaxPool2.forward(x.view());
        assert_eq!(y, array![[[[5.0]]]]);
        let dx = MaxPool2.backward(&cache, array![[[[2.0]]]].view());
        assert_eq!(dx, array![[[[0.0, 2.0], [0.0, 0.0]]]]);
    }

    #[test]
    fn global_pool_round_trip() {
        let x = array![[[[1.0, 2.0], [3.0, 6.0]]]];
        assert_eq!(avg_pool_global(x.view()), array![[3.0]]);
        let dx = avg_pool_global_backward(array![[4.0]].view(), (1, 1, 2, 2));
        assert_eq!(dx, array![[[[1.0, 1.0], [1.0, 1.0]]]]);
    }
}
