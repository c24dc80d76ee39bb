//! Recurrent predictive reconstruction.
//!
//! A stack of three convolutional LSTM layers (with stride-2 conv
//! downsampling between them) accumulates evidence across glimpses;
//! a transposed-conv decoder maps the deepest hidden state back to a
//! full-resolution image after every glimpse. The deepest hidden state
//! is also the observation the saccade policy sees. Training unrolls
//! the recurrence over the glimpse sequence and backpropagates the
//! hybrid objective through time.

pub mod loss;
pub mod ssim;

use ndarray::{concatenate, s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::act::{relu, relu_backward, sigmoid, sigmoid_backward, tanh, tanh_backward};
use crate::nn::adam::Adam;
use crate::nn::conv::{Conv2d, ConvTranspose2d};
use crate::nn::{import_params, join_name, scale_grads, zero_grads, Param, ParamSet};
use crate::rng::substream;
use crate::sampling::{apply_mask, sample_mask, GridSpec, SampleConfig};

use loss::{hybrid_loss, BlendSchedule};

const CHECKPOINT_KIND: &str = "reconstructor";

/// Convolutional LSTM cell: all four gates come from one 3x3
/// convolution over the input concatenated with the previous hidden
/// state.
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub gates: Conv2d,
    pub in_channels: usize,
    pub hidden: usize,
}

/// Everything the cell backward pass needs from its forward pass.
pub struct LstmCache {
    xh: Array3<f64>,
    i: Array3<f64>,
    f: Array3<f64>,
    g: Array3<f64>,
    o: Array3<f64>,
    c_in: Array3<f64>,
    tanh_c: Array3<f64>,
    pub h_out: Array3<f64>,
}

impl ConvLstmCell {
    pub fn new(rng: &mut rand_chacha::ChaCha8Rng, in_channels: usize, hidden: usize) -> Self {
        let mut gates = Conv2d::new(rng, in_channels + hidden, 4 * hidden, 3, 1, 1);
        // Positive initial forget bias keeps early cell states alive.
        gates
            .bias
            .value
            .slice_mut(s![hidden..2 * hidden])
            .fill(1.0);
        ConvLstmCell {
            gates,
            in_channels,
            hidden,
        }
    }

    pub fn forward_cached(
        &self,
        x: &Array3<f64>,
        h: &Array3<f64>,
        c: &Array3<f64>,
    ) -> (Array3<f64>, Array3<f64>, LstmCache) {
        let xh = concatenate(Axis(0), &[x.view(), h.view()]).expect("stackable input and state");
        let z = self.gates.forward(&xh.view());
        let n = self.hidden;
        let i = sigmoid(&z.slice(s![..n, .., ..]).to_owned());
        let f = sigmoid(&z.slice(s![n..2 * n, .., ..]).to_owned());
        let g = tanh(&z.slice(s![2 * n..3 * n, .., ..]).to_owned());
        let o = sigmoid(&z.slice(s![3 * n..4 * n, .., ..]).to_owned());
        let c_out = &f * c + &i * &g;
        let tanh_c = tanh(&c_out);
        let h_out = &o * &tanh_c;
        (
            h_out.clone(),
            c_out,
            LstmCache {
                xh,
                i,
                f,
                g,
                o,
                c_in: c.clone(),
                tanh_c,
                h_out,
            },
        )
    }

    /// Accumulates gate-convolution gradients and returns the gradients
    /// for the cell input and the previous hidden and cell state.
    pub fn backward(
        &mut self,
        cache: &LstmCache,
        dh: &Array3<f64>,
        dc: &Array3<f64>,
    ) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
        let d_o = dh * &cache.tanh_c;
        let dc_total = dc + &tanh_backward(&cache.tanh_c, &(dh * &cache.o));
        let d_f = &dc_total * &cache.c_in;
        let dc_prev = &dc_total * &cache.f;
        let d_i = &dc_total * &cache.g;
        let d_g = &dc_total * &cache.i;
        let di_pre = sigmoid_backward(&cache.i, &d_i);
        let df_pre = sigmoid_backward(&cache.f, &d_f);
        let dg_pre = tanh_backward(&cache.g, &d_g);
        let do_pre = sigmoid_backward(&cache.o, &d_o);
        let dz = concatenate(
            Axis(0),
            &[di_pre.view(), df_pre.view(), dg_pre.view(), do_pre.view()],
        )
        .expect("gate gradients stack");
        let dxh = self.gates.backward(&cache.xh.view(), &dz.view());
        let dx = dxh.slice(s![..self.in_channels, .., ..]).to_owned();
        let dh_prev = dxh.slice(s![self.in_channels.., .., ..]).to_owned();
        (dx, dh_prev, dc_prev)
    }
}

impl ParamSet for ConvLstmCell {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.gates.visit_params(&join_name(prefix, "gates"), f);
    }
}

/// Reconstructor hyperparameters. `widths` are the hidden channel
/// counts of the three recurrent layers, shallow to deep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReconConfig {
    pub image_channels: usize,
    pub widths: [usize; 3],
    pub seed: u64,
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 {
            return Err(Error::config("reconstructor needs at least one image channel"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::config("recurrent layer widths must be positive"));
        }
        Ok(())
    }
}

/// Recurrent state carried across the glimpses of one image.
#[derive(Debug, Clone)]
pub struct ReconState {
    pub h1: Array3<f64>,
    pub c1: Array3<f64>,
    pub h2: Array3<f64>,
    pub c2: Array3<f64>,
    pub h3: Array3<f64>,
    pub c3: Array3<f64>,
    pub step: usize,
}

/// Gradient with respect to a `ReconState`, used while unrolling
/// backwards through time.
pub struct StateGrad {
    pub h1: Array3<f64>,
    pub c1: Array3<f64>,
    pub h2: Array3<f64>,
    pub c2: Array3<f64>,
    pub h3: Array3<f64>,
    pub c3: Array3<f64>,
}

/// Forward intermediates of one recurrent step, consumed by the
/// backward pass.
pub struct StepCache {
    lstm1: LstmCache,
    d1_pre: Array3<f64>,
    lstm2: LstmCache,
    d2_pre: Array3<f64>,
    lstm3: LstmCache,
    u1_pre: Array3<f64>,
    u1: Array3<f64>,
    u2_pre: Array3<f64>,
    u2: Array3<f64>,
    r_pre: Array3<f64>,
    r: Array3<f64>,
    g_out: Image,
}

/// Encoder-decoder reconstructor over a fixed glimpse grid.
#[derive(Debug, Clone)]
pub struct ReconModel {
    pub cfg: ReconConfig,
    pub grid: GridSpec,
    lstm1: ConvLstmCell,
    down1: Conv2d,
    lstm2: ConvLstmCell,
    down2: Conv2d,
    lstm3: ConvLstmCell,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    refine: Conv2d,
    head: Conv2d,
}

impl ReconModel {
    pub fn new(cfg: ReconConfig, grid: GridSpec) -> Result<Self> {
        cfg.validate()?;
        if grid.image_height % 4 != 0 || grid.image_width % 4 != 0 {
            return Err(Error::config(format!(
                "reconstructor downsamples twice; image {}x{} must be divisible by 4",
                grid.image_height, grid.image_width
            )));
        }
        let [w1, w2, w3] = cfg.widths;
        let c_in = cfg.image_channels + 1; // image plus retention mask
        let mut rng = substream(cfg.seed, 0xE1, 0);
        Ok(ReconModel {
            cfg,
            grid,
            lstm1: ConvLstmCell::new(&mut rng, c_in, w1),
            down1: Conv2d::new(&mut rng, w1, w1, 3, 2, 1),
            lstm2: ConvLstmCell::new(&mut rng, w1, w2),
            down2: Conv2d::new(&mut rng, w2, w2, 3, 2, 1),
            lstm3: ConvLstmCell::new(&mut rng, w2, w3),
            up1: ConvTranspose2d::new(&mut rng, w3, w2, 4, 2, 1),
            up2: ConvTranspose2d::new(&mut rng, w2, w1, 4, 2, 1),
            refine: Conv2d::new(&mut rng, w1, w1, 3, 1, 1),
            head: Conv2d::new(&mut rng, w1, cfg.image_channels, 3, 1, 1),
        })
    }

    /// Shape of the policy observation: the deepest hidden state.
    pub fn observation_dim(&self) -> (usize, usize, usize) {
        (
            self.cfg.widths[2],
            self.grid.image_height / 4,
            self.grid.image_width / 4,
        )
    }

    fn blank_state(&self) -> ReconState {
        let (h, w) = (self.grid.image_height, self.grid.image_width);
        let [w1, w2, w3] = self.cfg.widths;
        ReconState {
            h1: Array3::zeros((w1, h, w)),
            c1: Array3::zeros((w1, h, w)),
            h2: Array3::zeros((w2, h / 2, w / 2)),
            c2: Array3::zeros((w2, h / 2, w / 2)),
            h3: Array3::zeros((w3, h / 4, w / 4)),
            c3: Array3::zeros((w3, h / 4, w / 4)),
            step: 0,
        }
    }

    /// Zeroed per-image states, one per batch element.
    pub fn init_state(&self, batch_size: usize) -> Result<Vec<ReconState>> {
        if batch_size == 0 {
            return Err(Error::config("state batch must be non-empty"));
        }
        Ok((0..batch_size).map(|_| self.blank_state()).collect())
    }

    pub fn zero_state_grad(&self) -> StateGrad {
        let s = self.blank_state();
        StateGrad {
            h1: s.h1,
            c1: s.c1,
            h2: s.h2,
            c2: s.c2,
            h3: s.h3,
            c3: s.c3,
        }
    }

    fn check_input(&self, input: &Image) -> Result<()> {
        let want = (
            self.cfg.image_channels + 1,
            self.grid.image_height,
            self.grid.image_width,
        );
        if input.dim() != want {
            return Err(Error::bounds(format!(
                "glimpse input has shape {:?}, reconstructor expects {want:?}",
                input.dim()
            )));
        }
        Ok(())
    }

    /// One recurrent step with the full backward cache.
    pub fn step_cached(
        &self,
        state: &ReconState,
        input: &Image,
    ) -> Result<(ReconState, Image, StepCache)> {
        self.check_input(input)?;
        let (h1, c1, lstm1) = self.lstm1.forward_cached(input, &state.h1, &state.c1);
        let d1_pre = self.down1.forward(&h1.view());
        let x2 = relu(&d1_pre);
        let (h2, c2, lstm2) = self.lstm2.forward_cached(&x2, &state.h2, &state.c2);
        let d2_pre = self.down2.forward(&h2.view());
        let x3 = relu(&d2_pre);
        let (h3, c3, lstm3) = self.lstm3.forward_cached(&x3, &state.h3, &state.c3);
        let u1_pre = self.up1.forward(&h3.view());
        let u1 = relu(&u1_pre);
        let u2_pre = self.up2.forward(&u1.view());
        let u2 = relu(&u2_pre);
        let r_pre = self.refine.forward(&u2.view());
        let r = relu(&r_pre);
        let head_pre = self.head.forward(&r.view());
        let g_out = sigmoid(&head_pre);
        let next = ReconState {
            h1,
            c1,
            h2,
            c2,
            h3,
            c3,
            step: state.step + 1,
        };
        let cache = StepCache {
            lstm1,
            d1_pre,
            lstm2,
            d2_pre,
            lstm3,
            u1_pre,
            u1,
            u2_pre,
            u2,
            r_pre,
            r,
            g_out: g_out.clone(),
        };
        Ok((next, g_out, cache))
    }

    /// One recurrent step: consumes a glimpse input, returns the next
    /// state and the current full-image reconstruction.
    pub fn step(&self, state: &ReconState, input: &Image) -> Result<(ReconState, Image)> {
        let (next, g, _) = self.step_cached(state, input)?;
        Ok((next, g))
    }

    /// Backward through one step. `d_recon` is the gradient on this
    /// step's reconstruction, `d_next` the gradient flowing back from
    /// the following step's state. Parameter gradients accumulate in
    /// place; the return value feeds the previous step.
    pub fn backward_step(
        &mut self,
        cache: &StepCache,
        d_recon: &Image,
        d_next: &StateGrad,
    ) -> StateGrad {
        let d_head_pre = sigmoid_backward(&cache.g_out, d_recon);
        let d_r = self.head.backward(&cache.r.view(), &d_head_pre.view());
        let d_r_pre = relu_backward(&cache.r_pre, &d_r);
        let d_u2 = self.refine.backward(&cache.u2.view(), &d_r_pre.view());
        let d_u2_pre = relu_backward(&cache.u2_pre, &d_u2);
        let d_u1 = self.up2.backward(&cache.u1.view(), &d_u2_pre.view());
        let d_u1_pre = relu_backward(&cache.u1_pre, &d_u1);
        let d_h3_dec = self.up1.backward(&cache.lstm3.h_out.view(), &d_u1_pre.view());

        let dh3 = &d_h3_dec + &d_next.h3;
        let (dx3, dh3_prev, dc3_prev) = self.lstm3.backward(&cache.lstm3, &dh3, &d_next.c3);
        let d_d2_pre = relu_backward(&cache.d2_pre, &dx3);
        let d_h2_dec = self.down2.backward(&cache.lstm2.h_out.view(), &d_d2_pre.view());

        let dh2 = &d_h2_dec + &d_next.h2;
        let (dx2, dh2_prev, dc2_prev) = self.lstm2.backward(&cache.lstm2, &dh2, &d_next.c2);
        let d_d1_pre = relu_backward(&cache.d1_pre, &dx2);
        let d_h1_dec = self.down1.backward(&cache.lstm1.h_out.view(), &d_d1_pre.view());

        let dh1 = &d_h1_dec + &d_next.h1;
        let (_dx1, dh1_prev, dc1_prev) = self.lstm1.backward(&cache.lstm1, &dh1, &d_next.c1);
        StateGrad {
            h1: dh1_prev,
            c1: dc1_prev,
            h2: dh2_prev,
            c2: dc2_prev,
            h3: dh3_prev,
            c3: dc3_prev,
        }
    }

    /// Runs the recurrence over a glimpse sequence, returning the
    /// reconstruction after every glimpse and the final state.
    pub fn rollout(&self, inputs: &[Image]) -> Result<(ReconState, Vec<Image>)> {
        if inputs.is_empty() {
            return Err(Error::config("rollout needs at least one glimpse"));
        }
        let mut state = self.blank_state();
        let mut recons = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (next, g) = self.step(&state, input)?;
            state = next;
            recons.push(g);
        }
        Ok((state, recons))
    }

    pub fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let params = crate::nn::export_params(self);
        Checkpoint::new(CHECKPOINT_KIND, self.grid, &self.cfg, params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, grid: &GridSpec) -> Result<Self> {
        ckpt.validate(CHECKPOINT_KIND, grid)?;
        let cfg: ReconConfig = ckpt.config_as()?;
        let mut model = ReconModel::new(cfg, *grid)?;
        import_params(&mut model, ckpt.params.clone())?;
        Ok(model)
    }
}

impl ParamSet for ReconModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lstm1.visit_params(&join_name(prefix, "lstm1"), f);
        self.down1.visit_params(&join_name(prefix, "down1"), f);
        self.lstm2.visit_params(&join_name(prefix, "lstm2"), f);
        self.down2.visit_params(&join_name(prefix, "down2"), f);
        self.lstm3.visit_params(&join_name(prefix, "lstm3"), f);
        self.up1.visit_params(&join_name(prefix, "up1"), f);
        self.up2.visit_params(&join_name(prefix, "up2"), f);
        self.refine.visit_params(&join_name(prefix, "refine"), f);
        self.head.visit_params(&join_name(prefix, "head"), f);
    }
}

/// Reconstructor training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub glimpses: usize,
    pub final_blend: f64,
    pub seed: u64,
}

impl ReconTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.glimpses == 0 {
            return Err(Error::config(
                "epochs, batch size and glimpse count must all be positive",
            ));
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

/// One line of training telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconEpochMetrics {
    pub epoch: usize,
    pub blend_weight: f64,
    pub mean_loss: f64,
    pub mean_mse_final: f64,
    pub mean_ssim_final: f64,
}

/// Trains the reconstructor on clean images with uniformly random
/// fovea positions, one independent mask per glimpse. Returns per-epoch
/// metrics; the model is updated in place.
pub fn train_reconstructor(
    model: &mut ReconModel,
    sample_cfg: &SampleConfig,
    images: &[Image],
    cfg: &ReconTrainConfig,
) -> Result<Vec<ReconEpochMetrics>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::data("reconstructor training set is empty"));
    }
    let grid = model.grid;
    let schedule = BlendSchedule::new(cfg.final_blend, cfg.epochs)?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let blend = schedule.weight_at(epoch);
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut substream(cfg.seed, 0xA0 + epoch as u64, 0));
        let (mut sum_loss, mut sum_mse, mut sum_ssim) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            zero_grads(model);
            for &i in chunk {
                let mut act_rng = substream(cfg.seed, 0xB000 + epoch as u64, i as u64);
                let image = &images[i];
                let mut state = model.blank_state();
                let mut caches = Vec::with_capacity(cfg.glimpses);
                let mut recons = Vec::with_capacity(cfg.glimpses);
                for t in 0..cfg.glimpses {
                    let fovea = act_rng.random_range(0..grid.num_actions());
                    let mask = sample_mask(
                        &grid,
                        fovea,
                        sample_cfg,
                        i as u64,
                        (epoch * cfg.glimpses + t) as u64,
                    )?;
                    let input = apply_mask(image, &mask)?.to_input();
                    let (next, g, cache) = model.step_cached(&state, &input)?;
                    state = next;
                    recons.push(g);
                    caches.push(cache);
                }
                let (terms, grads) = hybrid_loss(&recons, image, blend)?;
                let mut d_state = model.zero_state_grad();
                for t in (0..cfg.glimpses).rev() {
                    d_state = model.backward_step(&caches[t], &grads[t], &d_state);
                }
                sum_loss += terms.total;
                sum_mse += terms.mse[cfg.glimpses - 1];
                sum_ssim += terms.ssim[cfg.glimpses - 1];
            }
            scale_grads(model, 1.0 / chunk.len() as f64);
            opt.step(model);
        }
        let n = images.len() as f64;
        history.push(ReconEpochMetrics {
            epoch,
            blend_weight: blend,
            mean_loss: sum_loss / n,
            mean_mse_final: sum_mse / n,
            mean_ssim_final: sum_ssim / n,
        });
    }
    Ok(history)
}
