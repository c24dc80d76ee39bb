//! Image classifiers and the adapter layer the defense pipeline and
//! the attacks talk to.
//!
//! Two desk-scale architectures are provided: a strided CNN used as
//! the transfer surrogate and a patch-attention network used as the
//! protected target. Both expose logits through a common adapter
//! trait; white-box attacks additionally need the cross-entropy
//! gradient with respect to the input, which each model implements
//! analytically.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::act::{argmax_tie_lowest, cross_entropy, relu, relu_backward, softmax};
use crate::nn::adam::Adam;
use crate::nn::attention::{
    mean_pool, mean_pool_backward, BlockCache, PositionalEmbedding, TransformerBlock,
};
use crate::nn::conv::Conv2d;
use crate::nn::linear::Linear;
use crate::nn::{import_params, join_name, scale_grads, zero_grads, Param, ParamSet};
use crate::rng::substream;
use crate::sampling::GridSpec;

const CHECKPOINT_KIND: &str = "classifier";

/// Uniform classifier interface: raw logits plus derived scores.
pub trait ClassifierAdapter {
    fn num_classes(&self) -> usize;
    fn logits(&self, image: &Image) -> Result<Array1<f64>>;

    fn probs(&self, image: &Image) -> Result<Array1<f64>> {
        Ok(softmax(&self.logits(image)?.view()))
    }

    /// Predicted class; ties resolve to the lowest index.
    fn predict(&self, image: &Image) -> Result<usize> {
        Ok(argmax_tie_lowest(&self.logits(image)?.view()))
    }
}

/// A classifier that can report the cross-entropy gradient with
/// respect to its input, which is what gradient attacks consume.
pub trait DifferentiableTarget: ClassifierAdapter {
    /// Cross-entropy loss against `label` and its gradient with
    /// respect to the input image. Parameter gradients touched along
    /// the way are cleared before returning, so calls are safe outside
    /// a training step.
    fn loss_input_grad(&mut self, image: &Image, label: usize) -> Result<(f64, Image)>;
}

/// A classifier that can also accumulate parameter gradients, i.e. one
/// we can train here.
pub trait TrainableClassifier: ClassifierAdapter + ParamSet {
    /// Forward and backward for one labeled example; accumulates
    /// parameter gradients and reports the loss and whether the
    /// prediction was correct.
    fn train_example(&mut self, image: &Image, label: usize) -> Result<(f64, bool)>;
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::data(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Strided CNN (transfer surrogate)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmallCnnConfig {
    pub in_channels: usize,
    pub channels: [usize; 3],
    pub num_classes: usize,
    pub seed: u64,
}

/// Three stride-2 convolutions and a linear readout. Input spatial
/// size must be divisible by 8.
#[derive(Debug, Clone)]
pub struct SmallCnn {
    pub cfg: SmallCnnConfig,
    pub grid: GridSpec,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    fc: Linear,
}

struct CnnCache {
    x: Image,
    p1: Array3<f64>,
    a1: Array3<f64>,
    p2: Array3<f64>,
    a2: Array3<f64>,
    p3: Array3<f64>,
    a3: Array3<f64>,
    flat: Array1<f64>,
}

impl SmallCnn {
    pub fn new(cfg: SmallCnnConfig, grid: GridSpec) -> Result<Self> {
        if cfg.num_classes < 2 {
            return Err(Error::config("classifier needs at least two classes"));
        }
        if cfg.in_channels == 0 || cfg.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("channel counts must be positive"));
        }
        if grid.image_height % 8 != 0 || grid.image_width % 8 != 0 {
            return Err(Error::config(format!(
                "cnn downsamples three times; image {}x{} must be divisible by 8",
                grid.image_height, grid.image_width
            )));
        }
        let [c1, c2, c3] = cfg.channels;
        let mut rng = substream(cfg.seed, 0xC1, 0);
        let flat = c3 * (grid.image_height / 8) * (grid.image_width / 8);
        Ok(SmallCnn {
            cfg,
            grid,
            conv1: Conv2d::new(&mut rng, cfg.in_channels, c1, 3, 2, 1),
            conv2: Conv2d::new(&mut rng, c1, c2, 3, 2, 1),
            conv3: Conv2d::new(&mut rng, c2, c3, 3, 2, 1),
            fc: Linear::new(&mut rng, flat, cfg.num_classes),
        })
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let want = (
            self.cfg.in_channels,
            self.grid.image_height,
            self.grid.image_width,
        );
        if image.dim() != want {
            return Err(Error::bounds(format!(
                "classifier input has shape {:?}, expected {want:?}",
                image.dim()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, image: &Image) -> Result<(Array1<f64>, CnnCache)> {
        self.check_input(image)?;
        let p1 = self.conv1.forward(&image.view());
        let a1 = relu(&p1);
        let p2 = self.conv2.forward(&a1.view());
        let a2 = relu(&p2);
        let p3 = self.conv3.forward(&a2.view());
        let a3 = relu(&p3);
        let flat = Array1::from_iter(a3.iter().cloned());
        let logits = self.fc.forward(&flat.view());
        Ok((
            logits,
            CnnCache {
                x: image.clone(),
                p1,
                a1,
                p2,
                a2,
                p3,
                a3,
                flat,
            },
        ))
    }

    /// Full backward; accumulates parameter gradients and returns the
    /// input gradient.
    fn backward(&mut self, cache: &CnnCache, dlogits: &Array1<f64>) -> Image {
        let dflat = self.fc.backward(&cache.flat.view(), &dlogits.view());
        let da3 = Array3::from_shape_vec(cache.a3.raw_dim(), dflat.to_vec())
            .expect("flatten roundtrip");
        let dp3 = relu_backward(&cache.p3, &da3);
        let da2 = self.conv3.backward(&cache.a2.view(), &dp3.view());
        let dp2 = relu_backward(&cache.p2, &da2);
        let da1 = self.conv2.backward(&cache.a1.view(), &dp2.view());
        let dp1 = relu_backward(&cache.p1, &da1);
        self.conv1.backward(&cache.x.view(), &dp1.view())
    }
}

impl ClassifierAdapter for SmallCnn {
    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn logits(&self, image: &Image) -> Result<Array1<f64>> {
        Ok(self.forward_cached(image)?.0)
    }
}

impl DifferentiableTarget for SmallCnn {
    fn loss_input_grad(&mut self, image: &Image, label: usize) -> Result<(f64, Image)> {
        check_label(label, self.cfg.num_classes)?;
        let (logits, cache) = self.forward_cached(image)?;
        let (loss, dlogits) = cross_entropy(&logits.view(), label);
        let dx = self.backward(&cache, &dlogits);
        zero_grads(self);
        Ok((loss, dx))
    }
}

impl TrainableClassifier for SmallCnn {
    fn train_example(&mut self, image: &Image, label: usize) -> Result<(f64, bool)> {
        check_label(label, self.cfg.num_classes)?;
        let (logits, cache) = self.forward_cached(image)?;
        let (loss, dlogits) = cross_entropy(&logits.view(), label);
        self.backward(&cache, &dlogits);
        Ok((loss, argmax_tie_lowest(&logits.view()) == label))
    }
}

impl ParamSet for SmallCnn {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&join_name(prefix, "conv1"), f);
        self.conv2.visit_params(&join_name(prefix, "conv2"), f);
        self.conv3.visit_params(&join_name(prefix, "conv3"), f);
        self.fc.visit_params(&join_name(prefix, "fc"), f);
    }
}

// ---------------------------------------------------------------------------
// Patch-attention network (protected target)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatchAttentionConfig {
    pub in_channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub num_classes: usize,
    pub seed: u64,
}

/// Patch embedding, learned positions, a short stack of pre-norm
/// transformer blocks, mean pooling, linear readout.
#[derive(Debug, Clone)]
pub struct PatchAttention {
    pub cfg: PatchAttentionConfig,
    pub grid: GridSpec,
    embed: Linear,
    pos: PositionalEmbedding,
    blocks: Vec<TransformerBlock>,
    head: Linear,
}

struct AttnNetCache {
    patches: Array2<f64>,
    embedded: Array2<f64>,
    block_in: Vec<Array2<f64>>,
    block_caches: Vec<BlockCache>,
    pooled: Array1<f64>,
}

impl PatchAttention {
    pub fn new(cfg: PatchAttentionConfig, grid: GridSpec) -> Result<Self> {
        if cfg.num_classes < 2 {
            return Err(Error::config("classifier needs at least two classes"));
        }
        if cfg.patch == 0
            || grid.image_height % cfg.patch != 0
            || grid.image_width % cfg.patch != 0
        {
            return Err(Error::config(format!(
                "patch size {} must divide image {}x{}",
                cfg.patch, grid.image_height, grid.image_width
            )));
        }
        if cfg.heads == 0 || cfg.dim % cfg.heads != 0 {
            return Err(Error::config(format!(
                "head count {} must divide embedding dim {}",
                cfg.heads, cfg.dim
            )));
        }
        if cfg.blocks == 0 {
            return Err(Error::config("attention network needs at least one block"));
        }
        let tokens = (grid.image_height / cfg.patch) * (grid.image_width / cfg.patch);
        let patch_len = cfg.in_channels * cfg.patch * cfg.patch;
        let mut rng = substream(cfg.seed, 0xC2, 0);
        let blocks = (0..cfg.blocks)
            .map(|_| TransformerBlock::new(&mut rng, cfg.dim, cfg.heads, 2 * cfg.dim))
            .collect();
        Ok(PatchAttention {
            cfg,
            grid,
            embed: Linear::new(&mut rng, patch_len, cfg.dim),
            pos: PositionalEmbedding::new(tokens, cfg.dim),
            blocks,
            head: Linear::new(&mut rng, cfg.dim, cfg.num_classes),
        })
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let want = (
            self.cfg.in_channels,
            self.grid.image_height,
            self.grid.image_width,
        );
        if image.dim() != want {
            return Err(Error::bounds(format!(
                "classifier input has shape {:?}, expected {want:?}",
                image.dim()
            )));
        }
        Ok(())
    }

    /// Rearranges the image into a `(tokens, c * p * p)` matrix,
    /// row-major over the patch grid.
    fn patchify(&self, image: &Image) -> Array2<f64> {
        let p = self.cfg.patch;
        let (c, h, w) = image.dim();
        let (gh, gw) = (h / p, w / p);
        let mut out = Array2::<f64>::zeros((gh * gw, c * p * p));
        for gy in 0..gh {
            for gx in 0..gw {
                let token = gy * gw + gx;
                for ch in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            out[[token, (ch * p + py) * p + px]] =
                                image[[ch, gy * p + py, gx * p + px]];
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of `patchify`.
    fn unpatchify(&self, d: &Array2<f64>) -> Image {
        let p = self.cfg.patch;
        let (c, h, w) = (
            self.cfg.in_channels,
            self.grid.image_height,
            self.grid.image_width,
        );
        let (gh, gw) = (h / p, w / p);
        let mut out = Image::zeros((c, h, w));
        for gy in 0..gh {
            for gx in 0..gw {
                let token = gy * gw + gx;
                for ch in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            out[[ch, gy * p + py, gx * p + px]] =
                                d[[token, (ch * p + py) * p + px]];
                        }
                    }
                }
            }
        }
        out
    }

    fn forward_cached(&self, image: &Image) -> Result<(Array1<f64>, AttnNetCache)> {
        self.check_input(image)?;
        let patches = self.patchify(image);
        let embedded = self.pos.forward(&self.embed.forward_rows(&patches.view()).view());
        let mut block_in = Vec::with_capacity(self.blocks.len());
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut cur = embedded.clone();
        for block in &self.blocks {
            block_in.push(cur.clone());
            let (next, cache) = block.forward_cached(&cur.view());
            block_caches.push(cache);
            cur = next;
        }
        let pooled = mean_pool(&cur.view());
        let logits = self.head.forward(&pooled.view());
        Ok((
            logits,
            AttnNetCache {
                patches,
                embedded,
                block_in,
                block_caches,
                pooled,
            },
        ))
    }

    fn backward(&mut self, cache: &AttnNetCache, dlogits: &Array1<f64>) -> Image {
        let dpool = self.head.backward(&cache.pooled.view(), &dlogits.view());
        let tokens = cache.embedded.nrows();
        let mut dcur = mean_pool_backward(&dpool, tokens);
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            dcur = block.backward(
                &cache.block_in[i].view(),
                &cache.block_caches[i],
                &dcur.view(),
            );
        }
        self.pos.backward(&dcur.view());
        let dpatches = self.embed.backward_rows(&cache.patches.view(), &dcur.view());
        self.unpatchify(&dpatches)
    }
}

impl ClassifierAdapter for PatchAttention {
    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn logits(&self, image: &Image) -> Result<Array1<f64>> {
        Ok(self.forward_cached(image)?.0)
    }
}

impl DifferentiableTarget for PatchAttention {
    fn loss_input_grad(&mut self, image: &Image, label: usize) -> Result<(f64, Image)> {
        check_label(label, self.cfg.num_classes)?;
        let (logits, cache) = self.forward_cached(image)?;
        let (loss, dlogits) = cross_entropy(&logits.view(), label);
        let dx = self.backward(&cache, &dlogits);
        zero_grads(self);
        Ok((loss, dx))
    }
}

impl TrainableClassifier for PatchAttention {
    fn train_example(&mut self, image: &Image, label: usize) -> Result<(f64, bool)> {
        check_label(label, self.cfg.num_classes)?;
        let (logits, cache) = self.forward_cached(image)?;
        let (loss, dlogits) = cross_entropy(&logits.view(), label);
        self.backward(&cache, &dlogits);
        Ok((loss, argmax_tie_lowest(&logits.view()) == label))
    }
}

impl ParamSet for PatchAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.embed.visit_params(&join_name(prefix, "embed"), f);
        self.pos.visit_params(&join_name(prefix, "pos"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&join_name(prefix, &format!("block{i}")), f);
        }
        self.head.visit_params(&join_name(prefix, "head"), f);
    }
}

// ---------------------------------------------------------------------------
// Architecture-tagged checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ClassifierSpec {
    SmallCnn(SmallCnnConfig),
    PatchAttention(PatchAttentionConfig),
}

/// Either classifier architecture behind one concrete type, so the
/// pipeline can load whichever a checkpoint holds.
#[derive(Debug, Clone)]
pub enum AnyClassifier {
    Cnn(SmallCnn),
    Attention(PatchAttention),
}

impl AnyClassifier {
    pub fn spec(&self) -> ClassifierSpec {
        match self {
            AnyClassifier::Cnn(m) => ClassifierSpec::SmallCnn(m.cfg),
            AnyClassifier::Attention(m) => ClassifierSpec::PatchAttention(m.cfg),
        }
    }

    pub fn build(spec: ClassifierSpec, grid: GridSpec) -> Result<Self> {
        Ok(match spec {
            ClassifierSpec::SmallCnn(cfg) => AnyClassifier::Cnn(SmallCnn::new(cfg, grid)?),
            ClassifierSpec::PatchAttention(cfg) => {
                AnyClassifier::Attention(PatchAttention::new(cfg, grid)?)
            }
        })
    }

    pub fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let spec = self.spec();
        let grid = match self {
            AnyClassifier::Cnn(m) => m.grid,
            AnyClassifier::Attention(m) => m.grid,
        };
        let params = crate::nn::export_params(self);
        Checkpoint::new(CHECKPOINT_KIND, grid, &spec, params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, grid: &GridSpec) -> Result<Self> {
        ckpt.validate(CHECKPOINT_KIND, grid)?;
        let spec: ClassifierSpec = ckpt.config_as()?;
        let mut model = AnyClassifier::build(spec, *grid)?;
        import_params(&mut model, ckpt.params.clone())?;
        Ok(model)
    }
}

impl ClassifierAdapter for AnyClassifier {
    fn num_classes(&self) -> usize {
        match self {
            AnyClassifier::Cnn(m) => m.num_classes(),
            AnyClassifier::Attention(m) => m.num_classes(),
        }
    }

    fn logits(&self, image: &Image) -> Result<Array1<f64>> {
        match self {
            AnyClassifier::Cnn(m) => m.logits(image),
            AnyClassifier::Attention(m) => m.logits(image),
        }
    }
}

impl DifferentiableTarget for AnyClassifier {
    fn loss_input_grad(&mut self, image: &Image, label: usize) -> Result<(f64, Image)> {
        match self {
            AnyClassifier::Cnn(m) => m.loss_input_grad(image, label),
            AnyClassifier::Attention(m) => m.loss_input_grad(image, label),
        }
    }
}

impl TrainableClassifier for AnyClassifier {
    fn train_example(&mut self, image: &Image, label: usize) -> Result<(f64, bool)> {
        match self {
            AnyClassifier::Cnn(m) => m.train_example(image, label),
            AnyClassifier::Attention(m) => m.train_example(image, label),
        }
    }
}

impl ParamSet for AnyClassifier {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            AnyClassifier::Cnn(m) => m.visit_params(prefix, f),
            AnyClassifier::Attention(m) => m.visit_params(prefix, f),
        }
    }
}

// ---------------------------------------------------------------------------
// Supervised training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierEpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Minibatch cross-entropy training with Adam.
pub fn train_classifier<M: TrainableClassifier>(
    model: &mut M,
    images: &[Image],
    labels: &[usize],
    cfg: &ClassifierTrainConfig,
) -> Result<Vec<ClassifierEpochMetrics>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::data("classifier training set is empty"));
    }
    if images.len() != labels.len() {
        return Err(Error::data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let classes = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut substream(cfg.seed, 0xD0 + epoch as u64, 0));
        let mut sum_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            zero_grads(model);
            for &i in chunk {
                let (loss, ok) = model.train_example(&images[i], labels[i])?;
                sum_loss += loss;
                correct += ok as usize;
            }
            scale_grads(model, 1.0 / chunk.len() as f64);
            opt.step(model);
        }
        history.push(ClassifierEpochMetrics {
            epoch,
            mean_loss: sum_loss / images.len() as f64,
            accuracy: correct as f64 / images.len() as f64,
        });
    }
    Ok(history)
}
