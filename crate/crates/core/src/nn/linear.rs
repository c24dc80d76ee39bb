//! Fully connected layer, applied to vectors or row-wise to matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{init, join_name, Param, ParamSet};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // (out, in)
    pub bias: Param,   // (out)
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: Param::new(init::kaiming_uniform(
                rng,
                &[out_features, in_features],
                in_features,
            )),
            bias: Param::new(init::bias_uniform(rng, out_features, in_features)),
        }
    }

    fn weight_view(&self) -> ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_dimensionality()
            .expect("linear weight is rank 2")
    }

    fn bias_view(&self) -> ArrayView1<'_, f64> {
        self.bias
            .value
            .view()
            .into_dimensionality()
            .expect("linear bias is rank 1")
    }

    pub fn forward(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.weight_view().dot(x) + self.bias_view()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &ArrayView1<f64>, dy: &ArrayView1<f64>) -> Array1<f64> {
        let dw = dy
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &dy.to_owned().into_dyn();
        self.weight_view().t().dot(dy)
    }

    /// Row-wise application: input `(n, in)` to output `(n, out)`.
    pub fn forward_rows(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight_view().t());
        y += &self.bias_view();
        y
    }

    /// Row-wise backward; accumulates parameter gradients and returns
    /// the input gradient.
    pub fn backward_rows(&mut self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>) -> Array2<f64> {
        let dw = dy.t().dot(x);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &dy.sum_axis(Axis(0)).into_dyn();
        dy.dot(&self.weight_view())
    }
}

impl ParamSet for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}
