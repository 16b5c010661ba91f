use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView2, ArrayView4, Axis, Ix1};

use super::{join, Module, Param, Visitor};

/// Batch normalisation over the leading (batch) axis of a `N x C` matrix,
/// or over `N, H, W` of an NCHW tensor.
///
/// Training mode normalises with batch statistics and updates running
/// averages (`momentum` 0.1, unbiased variance); eval mode uses the running
/// averages and leaves them untouched.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array1::<f64>::ones(channels)),
            beta: Param::new(Array1::<f64>::zeros(channels)),
            running_mean: Array1::<f64>::zeros(channels).into_dyn(),
            running_var: Array1::<f64>::ones(channels).into_dyn(),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn rm(&self) -> ndarray::ArrayView1<'_, f64> {
        self.running_mean.view().into_dimensionality::<Ix1>().unwrap()
    }

    fn rv(&self) -> ndarray::ArrayView1<'_, f64> {
        self.running_var.view().into_dimensionality::<Ix1>().unwrap()
    }

    pub fn forward(&mut self, x: ArrayView2<f64>, train: bool) -> (Array2<f64>, BnCache) {
        let n = x.nrows();
        let (mean, inv_std) = if train {
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &x - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            let unbiased = if n > 1 {
                &var * (n as f64 / (n as f64 - 1.0))
            } else {
                var.clone()
            };
            let m = self.momentum;
            let new_mean = &self.rm() * (1.0 - m) + &mean * m;
            let new_var = &self.rv() * (1.0 - m) + &unbiased * m;
            self.running_mean = new_mean.into_dyn();
            self.running_var = new_var.into_dyn();
            (mean, var.mapv(|v| 1.0 / (v + self.eps).sqrt()))
        } else {
            (
                self.rm().to_owned(),
                self.rv().mapv(|v| 1.0 / (v + self.eps).sqrt()),
            )
        };
        let xhat = (&x - &mean) * &inv_std;
        let y = &xhat * &self.gamma.v1() + self.beta.v1();
        (y, BnCache { xhat, inv_std, train })
    }

    pub fn backward(&mut self, cache: &BnCache, dy: ArrayView2<f64>) -> Array2<f64> {
        let n = dy.nrows() as f64;
        let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        {
            let mut g = self.gamma.g1();
            g += &dgamma;
        }
        {
            let mut g = self.beta.g1();
            g += &dbeta;
        }
        let dxhat = &dy * &self.gamma.v1();
        if cache.train {
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let mut dx = &dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
            dx *= &(&cache.inv_std / n);
            dx
        } else {
            dxhat * &cache.inv_std
        }
    }

    /// NCHW variant: channels are axis 1.
    pub fn forward_nchw(&mut self, x: ArrayView4<f64>, train: bool) -> (Array4<f64>, BnCache) {
        let rows = nchw_to_rows(x);
        let (y, cache) = self.forward(rows.view(), train);
        (rows_to_nchw(y, x.dim()), cache)
    }

    pub fn backward_nchw(&mut self, cache: &BnCache, dy: ArrayView4<f64>) -> Array4<f64> {
        let rows = nchw_to_rows(dy);
        let dx = self.backward(cache, rows.view());
        rows_to_nchw(dx, dy.dim())
    }
}

fn nchw_to_rows(x: ArrayView4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let p = x.permuted_axes([0, 2, 3, 1]);
    let std = p.as_standard_layout();
    std.into_owned().into_shape_with_order((n * h * w, c)).unwrap()
}

fn rows_to_nchw(rows: Array2<f64>, (n, c, h, w): (usize, usize, usize, usize)) -> Array4<f64> {
    let a = rows.into_shape_with_order((n, h, w, c)).unwrap();
    a.permuted_axes([0, 3, 1, 2]).as_standard_layout().into_owned()
}

impl Module for BatchNorm {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "gamma"), &mut self.gamma);
        v.param(&join(prefix, "beta"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}
