//! Layer normalization over the feature axis of a token matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{join_name, Param, ParamSet};

const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        LayerNorm {
            gamma: Param::new(ndarray::ArrayD::from_elem(
                ndarray::IxDyn(&[features]),
                1.0,
            )),
            beta: Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[features]))),
        }
    }

    fn gamma_view(&self) -> ArrayView1<'_, f64> {
        self.gamma
            .value
            .view()
            .into_dimensionality()
            .expect("gamma rank 1")
    }

    fn beta_view(&self) -> ArrayView1<'_, f64> {
        self.beta
            .value
            .view()
            .into_dimensionality()
            .expect("beta rank 1")
    }

    /// Normalizes each row of `(n, d)` to zero mean and unit variance,
    /// then applies the learned affine map.
    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let gamma = self.gamma_view();
        let beta = self.beta_view();
        let mut y = Array2::zeros(x.raw_dim());
        for (row, mut out) in x.axis_iter(Axis(0)).zip(y.axis_iter_mut(Axis(0))) {
            let mean = row.sum() / d;
            let var = row.mapv(|v| (v - mean) * (v - mean)).sum() / d;
            let inv = 1.0 / (var + EPS).sqrt();
            for j in 0..row.len() {
                out[j] = (row[j] - mean) * inv * gamma[j] + beta[j];
            }
        }
        y
    }

    /// Accumulates affine-parameter gradients and returns the input
    /// gradient.
    pub fn backward(&mut self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let gamma = self.gamma_view().to_owned();
        let mut dgamma = Array1::<f64>::zeros(x.ncols());
        let mut dbeta = Array1::<f64>::zeros(x.ncols());
        let mut dx = Array2::zeros(x.raw_dim());
        for ((row, dyr), mut dxr) in x
            .axis_iter(Axis(0))
            .zip(dy.axis_iter(Axis(0)))
            .zip(dx.axis_iter_mut(Axis(0)))
        {
            let mean = row.sum() / d;
            let var = row.mapv(|v| (v - mean) * (v - mean)).sum() / d;
            let inv = 1.0 / (var + EPS).sqrt();
            let xhat = row.mapv(|v| (v - mean) * inv);
            for j in 0..row.len() {
                dgamma[j] += dyr[j] * xhat[j];
                dbeta[j] += dyr[j];
            }
            let dxhat: Array1<f64> = (0..row.len()).map(|j| dyr[j] * gamma[j]).collect();
            let sum_dxhat = dxhat.sum();
            let sum_dxhat_xhat = (&dxhat * &xhat).sum();
            for j in 0..row.len() {
                dxr[j] = inv / d * (d * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
            }
        }
        self.gamma.grad += &dgamma.into_dyn();
        self.beta.grad += &dbeta.into_dyn();
        dx
    }
}

impl ParamSet for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_name(prefix, "gamma"), &mut self.gamma);
        f(&join_name(prefix, "beta"), &mut self.beta);
    }
}
