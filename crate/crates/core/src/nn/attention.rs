//! Multi-head self-attention and a pre-norm transformer block.
//!
//! Operates on a token matrix `(n, d)`. Backward passes consume the
//! caches produced by the corresponding `forward_cached` call, so a
//! training step is forward once, backward once, no hidden state.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::act;
use super::linear::Linear;
use super::norm::LayerNorm;
use super::{join_name, Param, ParamSet};

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

/// Intermediates needed to backpropagate through one attention call.
pub struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "heads must divide dim");
        MultiHeadAttention {
            wq: Linear::new(rng, dim, dim),
            wk: Linear::new(rng, dim, dim),
            wv: Linear::new(rng, dim, dim),
            wo: Linear::new(rng, dim, dim),
            heads,
        }
    }

    pub fn forward_cached(&self, x: &ArrayView2<f64>) -> (Array2<f64>, AttnCache) {
        let (n, d) = x.dim();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.wq.forward_rows(x);
        let k = self.wk.forward_rows(x);
        let v = self.wv.forward_rows(x);
        let mut concat = Array2::<f64>::zeros((n, d));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let mut a = Array2::<f64>::zeros((n, n));
            for (row, mut out) in scores.axis_iter(Axis(0)).zip(a.axis_iter_mut(Axis(0))) {
                out.assign(&act::softmax(&row));
            }
            concat.slice_mut(cols).assign(&a.dot(&vh));
            attn.push(a);
        }
        let y = self.wo.forward_rows(&concat.view());
        (y, AttnCache { q, k, v, attn, concat })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &mut self,
        x: &ArrayView2<f64>,
        cache: &AttnCache,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        let (n, d) = x.dim();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let dconcat = self.wo.backward_rows(&cache.concat.view(), dy);
        let mut dq = Array2::<f64>::zeros((n, d));
        let mut dkm = Array2::<f64>::zeros((n, d));
        let mut dv = Array2::<f64>::zeros((n, d));
        for h in 0..self.heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let a = &cache.attn[h];
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let dout = dconcat.slice(cols);
            let da = dout.dot(&vh.t());
            dv.slice_mut(cols).assign(&a.t().dot(&dout));
            // Softmax backward per row of the attention matrix.
            let mut dscores = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                let arow = a.row(i);
                let darow = da.row(i);
                let dot: f64 = arow.iter().zip(darow.iter()).map(|(p, g)| p * g).sum();
                for j in 0..n {
                    dscores[[i, j]] = arow[j] * (darow[j] - dot);
                }
            }
            dq.slice_mut(cols).assign(&(dscores.dot(&kh) * scale));
            dkm.slice_mut(cols).assign(&(dscores.t().dot(&qh) * scale));
        }
        let mut dx = self.wq.backward_rows(x, &dq.view());
        dx += &self.wk.backward_rows(x, &dkm.view());
        dx += &self.wv.backward_rows(x, &dv.view());
        dx
    }
}

impl ParamSet for MultiHeadAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.wq.visit_params(&join_name(prefix, "wq"), f);
        self.wk.visit_params(&join_name(prefix, "wk"), f);
        self.wv.visit_params(&join_name(prefix, "wv"), f);
        self.wo.visit_params(&join_name(prefix, "wo"), f);
    }
}

/// Pre-norm transformer block: attention and a two-layer MLP, each
/// behind layer normalization with a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    ln1_out: Array2<f64>,
    attn: AttnCache,
    mid: Array2<f64>,
    ln2_out: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl TransformerBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, mlp_hidden: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(rng, dim, mlp_hidden),
            fc2: Linear::new(rng, mlp_hidden, dim),
        }
    }

    pub fn forward_cached(&self, x: &ArrayView2<f64>) -> (Array2<f64>, BlockCache) {
        let ln1_out = self.ln1.forward(x);
        let (attn_out, attn) = self.attn.forward_cached(&ln1_out.view());
        let mid = x + &attn_out;
        let ln2_out = self.ln2.forward(&mid.view());
        let hidden_pre = self.fc1.forward_rows(&ln2_out.view());
        let hidden = act::relu(&hidden_pre);
        let mlp_out = self.fc2.forward_rows(&hidden.view());
        let y = &mid + &mlp_out;
        (
            y,
            BlockCache {
                ln1_out,
                attn,
                mid,
                ln2_out,
                hidden_pre,
                hidden,
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &mut self,
        x: &ArrayView2<f64>,
        cache: &BlockCache,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        let dhidden = self.fc2.backward_rows(&cache.hidden.view(), dy);
        let dhidden_pre = act::relu_backward(&cache.hidden_pre, &dhidden);
        let dln2_out = self.fc1.backward_rows(&cache.ln2_out.view(), &dhidden_pre.view());
        let mut dmid = self.ln2.backward(&cache.mid.view(), &dln2_out.view());
        dmid += dy;
        let dln1_out = self.attn.backward(&cache.ln1_out.view(), &cache.attn, &dmid.view());
        let mut dx = self.ln1.backward(x, &dln1_out.view());
        dx += &dmid;
        dx
    }
}

impl ParamSet for TransformerBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit_params(&join_name(prefix, "ln1"), f);
        self.attn.visit_params(&join_name(prefix, "attn"), f);
        self.ln2.visit_params(&join_name(prefix, "ln2"), f);
        self.fc1.visit_params(&join_name(prefix, "fc1"), f);
        self.fc2.visit_params(&join_name(prefix, "fc2"), f);
    }
}

/// Learned additive positional embedding for a fixed token count.
#[derive(Debug, Clone)]
pub struct PositionalEmbedding {
    pub table: Param,
}

impl PositionalEmbedding {
    pub fn new(tokens: usize, dim: usize) -> Self {
        PositionalEmbedding {
            table: Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[tokens, dim]))),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let table: ArrayView2<f64> = self
            .table
            .value
            .view()
            .into_dimensionality()
            .expect("embedding rank 2");
        x + &table
    }

    pub fn backward(&mut self, dy: &ArrayView2<f64>) {
        self.table.grad += &dy.to_owned().into_dyn();
    }
}

impl ParamSet for PositionalEmbedding {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_name(prefix, "table"), &mut self.table);
    }
}

/// Mean over tokens, the readout pooling for classification.
pub fn mean_pool(x: &ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty token matrix")
}

pub fn mean_pool_backward(dy: &Array1<f64>, tokens: usize) -> Array2<f64> {
    let scale = 1.0 / tokens as f64;
    let mut out = Array2::<f64>::zeros((tokens, dy.len()));
    for mut row in out.axis_iter_mut(Axis(0)) {
        row.assign(&(dy * scale));
    }
    out
}
