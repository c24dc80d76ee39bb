//! 2-d convolution via im2col plus matrix multiply, and its transpose.
//!
//! The three linear maps of a convolution (forward, gradient to input,
//! gradient to weight) are exposed as free functions on plain arrays;
//! the layer structs wrap them with owned parameters. The transposed
//! convolution reuses the same three kernels with the forward and
//! input-gradient roles swapped, so one set of primitives serves both.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, ArrayView4, Axis};
use rand_chacha::ChaCha8Rng;

use super::{init, join_name, Param, ParamSet};

/// Output spatial size of a convolution (floor semantics).
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(stride > 0, "stride must be positive");
    assert!(
        input + 2 * padding >= kernel,
        "kernel {kernel} larger than padded input {}",
        input + 2 * padding
    );
    (input + 2 * padding - kernel) / stride + 1
}

/// Unfolds image patches into a `(c * kh * kw, oh * ow)` matrix.
/// Out-of-bounds taps read as zero.
fn im2col(
    x: &ArrayView3<f64>,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (kh, kw) = kernel;
    let oh = conv_out_len(h, kh, stride, padding);
    let ow = conv_out_len(w, kw, stride, padding);
    let mut cols = Array2::<f64>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch matrix back into image layout; the adjoint of
/// `im2col`.
fn col2im(
    cols: &Array2<f64>,
    out_dim: (usize, usize, usize),
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Array3<f64> {
    let (c, h, w) = out_dim;
    let (kh, kw) = kernel;
    let oh = conv_out_len(h, kh, stride, padding);
    let ow = conv_out_len(w, kw, stride, padding);
    assert_eq!(cols.dim(), (c * kh * kw, oh * ow), "col2im shape mismatch");
    let mut x = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

/// `y[o] = sum_{c,ky,kx} w[o,c,ky,kx] * x[c, .., ..] + b[o]`
pub fn conv2d_forward(
    x: &ArrayView3<f64>,
    w: &ArrayView4<f64>,
    b: &Array1<f64>,
    stride: usize,
    padding: usize,
) -> Array3<f64> {
    let (oc, ic, kh, kw) = w.dim();
    let (c, h, wd) = x.dim();
    assert_eq!(c, ic, "input has {c} channels, weight expects {ic}");
    assert_eq!(b.len(), oc, "bias length");
    let oh = conv_out_len(h, kh, stride, padding);
    let ow = conv_out_len(wd, kw, stride, padding);
    let cols = im2col(x, (kh, kw), stride, padding);
    let w_mat = w
        .to_shape((oc, ic * kh * kw))
        .expect("contiguous conv weight")
        .to_owned();
    let mut y_mat = w_mat.dot(&cols);
    for (mut row, &bo) in y_mat.axis_iter_mut(Axis(0)).zip(b.iter()) {
        row.mapv_inplace(|v| v + bo);
    }
    y_mat
        .into_shape_with_order((oc, oh, ow))
        .expect("output reshape")
}

/// Gradient of the convolution output with respect to its input.
pub fn conv2d_backward_input(
    dy: &ArrayView3<f64>,
    w: &ArrayView4<f64>,
    input_dim: (usize, usize, usize),
    stride: usize,
    padding: usize,
) -> Array3<f64> {
    let (oc, ic, kh, kw) = w.dim();
    let (c, h, wd) = input_dim;
    assert_eq!(c, ic, "input-gradient channel mismatch");
    let oh = conv_out_len(h, kh, stride, padding);
    let ow = conv_out_len(wd, kw, stride, padding);
    assert_eq!(dy.dim(), (oc, oh, ow), "output-gradient shape mismatch");
    let dy_mat = dy
        .to_shape((oc, oh * ow))
        .expect("contiguous output gradient")
        .to_owned();
    let w_mat = w
        .to_shape((oc, ic * kh * kw))
        .expect("contiguous conv weight")
        .to_owned();
    let dcols = w_mat.t().dot(&dy_mat);
    col2im(&dcols, input_dim, (kh, kw), stride, padding)
}

/// Gradients of the convolution output with respect to weight and bias.
pub fn conv2d_backward_weight(
    x: &ArrayView3<f64>,
    dy: &ArrayView3<f64>,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> (Array4<f64>, Array1<f64>) {
    let (ic, h, w) = x.dim();
    let (kh, kw) = kernel;
    let (oc, oh, ow) = dy.dim();
    assert_eq!(oh, conv_out_len(h, kh, stride, padding), "height mismatch");
    assert_eq!(ow, conv_out_len(w, kw, stride, padding), "width mismatch");
    let cols = im2col(x, kernel, stride, padding);
    let dy_mat = dy
        .to_shape((oc, oh * ow))
        .expect("contiguous output gradient")
        .to_owned();
    let dw_mat = dy_mat.dot(&cols.t());
    let dw = dw_mat
        .into_shape_with_order((oc, ic, kh, kw))
        .expect("weight reshape");
    let db = dy_mat.sum_axis(Axis(1));
    (dw, db)
}

/// Standard convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::new(init::kaiming_uniform(
                rng,
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
            )),
            bias: Param::new(init::bias_uniform(rng, out_channels, fan_in)),
            stride,
            padding,
        }
    }

    fn weight_view(&self) -> ArrayView4<'_, f64> {
        self.weight
            .value
            .view()
            .into_dimensionality()
            .expect("conv weight is rank 4")
    }

    fn bias_vec(&self) -> Array1<f64> {
        self.bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("conv bias is rank 1")
            .to_owned()
    }

    pub fn forward(&self, x: &ArrayView3<f64>) -> Array3<f64> {
        conv2d_forward(x, &self.weight_view(), &self.bias_vec(), self.stride, self.padding)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &ArrayView3<f64>, dy: &ArrayView3<f64>) -> Array3<f64> {
        let (_, _, kh, kw) = self.weight_view().dim();
        let (dw, db) = conv2d_backward_weight(x, dy, (kh, kw), self.stride, self.padding);
        let dx = conv2d_backward_input(dy, &self.weight_view(), x.dim(), self.stride, self.padding);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &db.into_dyn();
        dx
    }
}

impl ParamSet for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution (learned upsampling). With kernel 4, stride 2
/// and padding 1 the spatial size exactly doubles.
///
/// The weight tensor is stored in convolution orientation
/// `(in_channels, out_channels, kh, kw)`: the forward pass is the
/// convolution's input-gradient map, and the two backward passes fall
/// out of the same pair of primitives with roles exchanged.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        ConvTranspose2d {
            weight: Param::new(init::kaiming_uniform(
                rng,
                &[in_channels, out_channels, kernel, kernel],
                fan_in,
            )),
            bias: Param::new(init::bias_uniform(rng, out_channels, fan_in)),
            stride,
            padding,
        }
    }

    fn weight_view(&self) -> ArrayView4<'_, f64> {
        self.weight
            .value
            .view()
            .into_dimensionality()
            .expect("transposed-conv weight is rank 4")
    }

    pub fn out_dim(&self, input: (usize, usize, usize)) -> (usize, usize, usize) {
        let (_, oc, kh, kw) = self.weight_view().dim();
        let (_, h, w) = input;
        (
            oc,
            (h - 1) * self.stride + kh - 2 * self.padding,
            (w - 1) * self.stride + kw - 2 * self.padding,
        )
    }

    pub fn forward(&self, x: &ArrayView3<f64>) -> Array3<f64> {
        let out = self.out_dim(x.dim());
        let mut y = conv2d_backward_input(x, &self.weight_view(), out, self.stride, self.padding);
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias rank");
        for (mut plane, &bo) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            plane.mapv_inplace(|v| v + bo);
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &ArrayView3<f64>, dy: &ArrayView3<f64>) -> Array3<f64> {
        let (ic, _, kh, kw) = self.weight_view().dim();
        let zero_bias = Array1::<f64>::zeros(ic);
        let dx = conv2d_forward(dy, &self.weight_view(), &zero_bias, self.stride, self.padding);
        // Weight gradient of the adjoint map: the output gradient takes
        // the convolution-input role and x takes the output role.
        let (dw, _) = conv2d_backward_weight(dy, x, (kh, kw), self.stride, self.padding);
        self.weight.grad += &dw.into_dyn();
        let db = dy.sum_axis(Axis(2)).sum_axis(Axis(1));
        self.bias.grad += &db.into_dyn();
        dx
    }
}

impl ParamSet for ConvTranspose2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}
