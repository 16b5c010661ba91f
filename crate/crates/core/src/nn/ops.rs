use ndarray::{Array2, ArrayView2, Axis, Zip};

/// Row-wise softmax.
pub fn softmax_rows(z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Pull `dy` back through a row-wise softmax with outputs `y`.
pub fn softmax_rows_backward(y: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let dots = (&y * &dy).sum_axis(Axis(1));
    let mut dz = Array2::zeros(y.raw_dim());
    Zip::indexed(&mut dz).for_each(|(i, j), d| *d = y[[i, j]] * (dy[[i, j]] - dots[i]));
    dz
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<D: ndarray::Dimension>(
    out: &ndarray::Array<f64, D>,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0
        }
    });
    dx
}
