//! Minimal layers with hand-written backward passes.
//!
//! Every layer keeps its parameters as [`Param`]s (value plus accumulated
//! gradient). `forward` returns the output together with whatever the
//! matching `backward` needs; `backward` accumulates into the parameter
//! gradients and returns the gradient w.r.t. the layer input. Parameter
//! traversal for optimisers, hashing and checkpoints goes through
//! [`Module::visit`].

mod batchnorm;
mod checkpoint;
mod conv;
mod linear;
mod lstm;
mod ops;
mod optim;

pub use batchnorm::{BatchNorm, BnCache};
pub use checkpoint::Checkpoint;
pub use conv::{avg_pool_global, avg_pool_global_backward, Conv2d, MaxPool2, PoolCache};
pub use linear::Linear;
pub use lstm::{LstmCell, LstmStep};
pub use ops::{relu, relu_backward, softmax_rows, softmax_rows_backward};
pub use optim::{Adam, AdamConfig};

use ndarray::{Array, ArrayD, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut1, ArrayViewMut2, ArrayViewMut4, Dimension, Ix1, Ix2, Ix4};
use rand::Rng as _;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new<D: Dimension>(value: Array<f64, D>) -> Self {
        let value = value.into_dyn().as_standard_layout().into_owned();
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn v1(&self) -> ArrayView1<'_, f64> {
        self.value.view().into_dimensionality::<Ix1>().expect("rank-1 parameter")
    }

    pub fn v2(&self) -> ArrayView2<'_, f64> {
        self.value.view().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn v4(&self) -> ArrayView4<'_, f64> {
        self.value.view().into_dimensionality::<Ix4>().expect("rank-4 parameter")
    }

    pub fn v2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.value.view_mut().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn g1(&mut self) -> ArrayViewMut1<'_, f64> {
        self.grad.view_mut().into_dimensionality::<Ix1>().expect("rank-1 parameter")
    }

    pub fn g2(&mut self) -> ArrayViewMut2<'_, f64> {
        self.grad.view_mut().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn g4(&mut self) -> ArrayViewMut4<'_, f64> {
        self.grad.view_mut().into_dimensionality::<Ix4>().expect("rank-4 parameter")
    }
}

/// Receives every parameter and buffer of a module tree.
pub trait Visitor {
    fn param(&mut self, name: &str, p: &mut Param);
    fn buffer(&mut self, _name: &str, _b: &mut ArrayD<f64>) {}
}

pub trait Module {
    /// Visit parameters then buffers, in a fixed order, with names prefixed
    /// by `prefix`.
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

struct ParamFn<F>(F);

impl<F: FnMut(&str, &mut Param)> Visitor for ParamFn<F> {
    fn param(&mut self, name: &str, p: &mut Param) {
        (self.0)(name, p)
    }
}

pub fn for_each_param<M: Module + ?Sized>(m: &mut M, f: impl FnMut(&str, &mut Param)) {
    m.visit("", &mut ParamFn(f));
}

pub fn zero_grads<M: Module + ?Sized>(m: &mut M) {
    for_each_param(m, |_, p| p.zero_grad());
}

pub fn grad_norm<M: Module + ?Sized>(m: &mut M) -> f64 {
    let mut s = 0.0;
    for_each_param(m, |_, p| s += p.grad.iter().map(|g| g * g).sum::<f64>());
    s.sqrt()
}

pub fn param_count<M: Module + ?Sized>(m: &mut M) -> usize {
    let mut n = 0;
    for_each_param(m, |_, p| n += p.value.len());
    n
}

struct Hasher(Sha256);

impl Visitor for Hasher {
    fn param(&mut self, name: &str, p: &mut Param) {
        self.feed(name, &p.value);
    }
    fn buffer(&mut self, name: &str, b: &mut ArrayD<f64>) {
        self.feed(name, b);
    }
}

impl Hasher {
    fn feed(&mut self, name: &str, a: &ArrayD<f64>) {
        self.0.update(name.as_bytes());
        for d in a.shape() {
            self.0.update((*d as u64).to_le_bytes());
        }
        for v in a.iter() {
            self.0.update(v.to_le_bytes());
        }
    }
}

/// SHA-256 over names, shapes and values of all parameters and buffers.
pub fn param_hash<M: Module + ?Sized>(m: &mut M) -> String {
    let mut h = Hasher(Sha256::new());
    m.visit("", &mut h);
    hex::encode(h.0.finalize())
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<D: Dimension>(shape: D, fan_in: usize, rng: &mut Rng) -> Array<f64, D> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

/// A random `n x n` orthogonal matrix (Gram-Schmidt on Gaussian rows).
pub fn orthogonal(n: usize, rng: &mut Rng) -> ndarray::Array2<f64> {
    loop {
        let mut m = ndarray::Array2::<f64>::from_shape_simple_fn((n, n), || rng.sample(StandardNormal));
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let d = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-d, &rj);
            }
            let norm = m.row(i).dot(&m.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return m;
        }
    }
}
