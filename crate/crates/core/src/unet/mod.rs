//! Encoder / latent-fusion / decoder network for patch temperature maps.
//!
//! The encoder downsamples the `S x S x 3` spatial patch through `depth`
//! blocks of two 3x3 convolutions, max pooling and dropout. The latent map
//! is flattened, concatenated with the flattened met window and passed
//! through a dense layer that restores the latent length. Each decoder
//! block upsamples with a stride-2 transposed convolution, concatenates the
//! matching pre-pool encoder activation, mixes with a stride-1 transposed
//! convolution and applies dropout. A 1x1 convolution produces the single
//! linear output channel.

mod checkpoint;
mod domain;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use domain::DomainPredictor;
pub use train::{evaluate, train, EpochRecord, TrainFailure, TrainHistory, Trainer};

use crate::datapipe::{NormalizationManifest, RasterGrid, Units, TARGET};
use crate::error::{bail, Result};
use crate::numerics::{GradTape, OptimizerKind, Padding, ParamId, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub input_size: usize,
    pub spatial_channels: usize,
    pub met_vars: usize,
    pub met_timesteps: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            spatial_channels: 3,
            met_vars: 5,
            met_timesteps: 3,
            depth: 3,
            base_channels: 32,
            kernel_size: 3,
            dropout_rate: 0.2,
            lr: 1e-5,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            bail!(Config, "depth must be in 1..=8, got {}", self.depth);
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            bail!(
                Config,
                "input_size {} is not divisible by 2^depth = {div}",
                self.input_size
            );
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            bail!(Config, "base_channels must be even and at least 2");
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            bail!(Config, "kernel_size must be odd");
        }
        if self.spatial_channels == 0 || self.met_vars == 0 || self.met_timesteps == 0 {
            bail!(Config, "channel, met variable and timestep counts must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            bail!(Config, "dropout_rate must be in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "lr must be positive and finite");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            bail!(Config, "batch_size and epochs must be at least 1");
        }
        Ok(())
    }

    pub fn met_len(&self) -> usize {
        self.met_vars * self.met_timesteps
    }

    pub fn latent_side(&self) -> usize {
        self.input_size >> self.depth
    }

    pub fn latent_channels(&self) -> usize {
        self.base_channels << (self.depth - 1)
    }

    pub fn latent_len(&self) -> usize {
        self.latent_side().pow(2) * self.latent_channels()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose { stride: usize },
    Dense,
}

/// One weight/bias pair of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub fan_in: usize,
    /// Init gain: sqrt(2) in front of a ReLU, 1 for linear layers.
    pub gain: f64,
}

impl LayerSpec {
    pub fn outputs(&self) -> usize {
        *self.weight_shape.last().expect("non-empty shape")
    }
}

/// Layers in parameter order: encoder convs, fusion dense, decoder
/// transposed convs, output conv.
pub fn layer_specs(cfg: &UNetConfig) -> Vec<LayerSpec> {
    let k = cfg.kernel_size;
    let relu = std::f64::consts::SQRT_2;
    let mut out = Vec::new();
    let conv = |name: String, c_in: usize, c_out: usize, kk: usize, gain: f64| LayerSpec {
        name,
        kind: LayerKind::Conv,
        weight_shape: vec![kk, kk, c_in, c_out],
        fan_in: kk * kk * c_in,
        gain,
    };
    let mut c_in = cfg.spatial_channels;
    for level in 0..cfg.depth {
        let width = cfg.base_channels << level;
        out.push(conv(format!("enc{level}.conv1"), c_in, width, k, relu));
        out.push(conv(format!("enc{level}.conv2"), width, width, k, relu));
        c_in = width;
    }
    let n_in = cfg.latent_len() + cfg.met_len();
    out.push(LayerSpec {
        name: "fusion".into(),
        kind: LayerKind::Dense,
        weight_shape: vec![n_in, cfg.latent_len()],
        fan_in: n_in,
        gain: 1.0,
    });
    let convt = |name: String, c_in: usize, c_out: usize, stride: usize| LayerSpec {
        name,
        kind: LayerKind::ConvTranspose { stride },
        weight_shape: vec![k, k, c_in, c_out],
        fan_in: (k * k * c_in).div_ceil(stride * stride),
        gain: relu,
    };
    let mut c = cfg.latent_channels();
    for j in 0..cfg.depth {
        let half = c / 2;
        out.push(convt(format!("dec{j}.up"), c, half, 2));
        // The skip from encoder level depth-1-j carries `c` channels.
        out.push(convt(format!("dec{j}.mix"), half + c, half, 1));
        c = half;
    }
    out.push(conv("out".into(), c, 1, 1, 1.0));
    out
}

/// The network's parameters plus the config that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel<T: Scalar = f32> {
    config: UNetConfig,
    layers: Vec<LayerSpec>,
    params: Vec<Tensor<T>>,
}

/// Builds a model with fan-in scaled normal weights and zero biases.
pub fn build_unet<R: Rng + ?Sized>(config: UNetConfig, rng: &mut R) -> Result<UNetModel<f32>> {
    UNetModel::build(config, rng)
}

impl<T: Scalar> UNetModel<T> {
    pub fn build<R: Rng + ?Sized>(config: UNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = layer_specs(&config);
        let mut params = Vec::with_capacity(layers.len() * 2);
        for l in &layers {
            let std = l.gain / (l.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let n: usize = l.weight_shape.iter().product();
            let w: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
            params.push(Tensor::new(l.weight_shape.clone(), w)?);
            params.push(Tensor::zeros(&[l.outputs()]));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let layers = layer_specs(&config);
        let params = layers
            .iter()
            .flat_map(|l| [Tensor::zeros(&l.weight_shape), Tensor::zeros(&[l.outputs()])])
            .collect();
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn from_params(config: UNetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        let shell = Self::zeros(config)?;
        if shell.params.len() != params.len() {
            bail!(Dimension, "expected {} parameter tensors, got {}", shell.params.len(), params.len());
        }
        for (name, (a, b)) in shell.param_names().iter().zip(shell.params.iter().zip(&params)) {
            if a.shape() != b.shape() {
                bail!(Dimension, "{name}: expected shape {:?}, got {:?}", a.shape(), b.shape());
            }
        }
        Ok(Self { params, ..shell })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// `<layer>.weight` / `<layer>.bias`, in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Brings inputs to `[N, S, S, C]` and `[N, met_len]`; reports whether
    /// the caller passed a single example.
    fn batch_inputs(&self, spatial: &Tensor<T>, met: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, bool)> {
        let c = &self.config;
        let (s, ch, ml) = (c.input_size, c.spatial_channels, c.met_len());
        let (n, single) = match *spatial.shape() {
            [h, w, cc] if h == s && w == s && cc == ch => (1, true),
            [n, h, w, cc] if h == s && w == s && cc == ch && n > 0 => (n, false),
            ref other => bail!(Dimension, "spatial input {other:?}, expected [{s}, {s}, {ch}] or batched"),
        };
        let met_ok = match *met.shape() {
            [t, v] if single => t * v == ml && t == c.met_timesteps,
            [m] if single => m == ml,
            [b, t, v] => b == n && t == c.met_timesteps && v == c.met_vars,
            [b, m] => !single && b == n && m == ml,
            _ => false,
        };
        if !met_ok {
            bail!(
                Dimension,
                "met input {:?} does not match {} examples of {}x{}",
                met.shape(),
                n,
                c.met_timesteps,
                c.met_vars
            );
        }
        if !spatial.is_finite() || !met.is_finite() {
            bail!(Data, "non-finite value in network input");
        }
        Ok((
            spatial.clone().reshape(&[n, s, s, ch])?,
            met.clone().reshape(&[n, ml])?,
            single,
        ))
    }

    /// Records the forward pass on `tape`; returns the `[N, S, S, 1]` output.
    fn record<R: Rng + ?Sized>(
        &self,
        tape: &mut GradTape<T>,
        spatial: Tensor<T>,
        met: Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let c = &self.config;
        let n = spatial.shape()[0];
        let p: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(ParamId(i), t.clone()))
            .collect();
        let w = |layer: usize| p[2 * layer];
        let b = |layer: usize| p[2 * layer + 1];
        let rate = c.dropout_rate;

        let mut x = tape.input(spatial);
        let met = tape.input(met);
        let mut skips = Vec::with_capacity(c.depth);
        for level in 0..c.depth {
            for conv in 0..2 {
                let l = 2 * level + conv;
                x = tape.conv2d(x, w(l), b(l), 1, Padding::Same)?;
                x = tape.relu(x);
            }
            skips.push(x);
            x = tape.max_pool2(x)?;
            x = tape.dropout(x, rate, rng, training)?;
        }

        let fusion = 2 * c.depth;
        x = tape.reshape(x, &[n, c.latent_len()])?;
        x = tape.concat_last(x, met)?;
        x = tape.dense(x, w(fusion), b(fusion))?;
        let side = c.latent_side();
        x = tape.reshape(x, &[n, side, side, c.latent_channels()])?;

        for j in 0..c.depth {
            let up = fusion + 1 + 2 * j;
            x = tape.conv2d_transpose(x, w(up), b(up), 2)?;
            x = tape.relu(x);
            x = tape.concat_last(x, skips[c.depth - 1 - j])?;
            x = tape.conv2d_transpose(x, w(up + 1), b(up + 1), 1)?;
            x = tape.relu(x);
            x = tape.dropout(x, rate, rng, training)?;
        }
        let out = fusion + 1 + 2 * c.depth;
        tape.conv2d(x, w(out), b(out), 1, Padding::Same)
    }

    /// Normalized prediction. Accepts one example (`[S, S, C]` with a
    /// `[T, V]` met window) or a batch (`[N, S, S, C]` with `[N, T, V]`).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        spatial: &Tensor<T>,
        met: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let (spatial, met, single) = self.batch_inputs(spatial, met)?;
        let n = spatial.shape()[0];
        let mut tape = GradTape::new();
        let out = self.record(&mut tape, spatial, met, training, rng)?;
        let s = self.config.input_size;
        let shape: &[usize] = if single { &[s, s, 1] } else { &[n, s, s, 1] };
        tape.value(out).clone().reshape(shape)
    }

    /// Inference forward pass (dropout off).
    pub fn predict(&self, spatial: &Tensor<T>, met: &Tensor<T>) -> Result<Tensor<T>> {
        // Dropout draws nothing when `training` is false.
        self.forward(spatial, met, false, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Mean squared error against `target` and its gradient for every
    /// parameter, in parameter order.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        spatial: &Tensor<T>,
        met: &Tensor<T>,
        target: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let (spatial, met, _) = self.batch_inputs(spatial, met)?;
        let n = spatial.shape()[0];
        let s = self.config.input_size;
        if target.len() != n * s * s {
            bail!(Dimension, "target {:?} does not match {n} outputs of {s}x{s}", target.shape());
        }
        let target = target.clone().reshape(&[n, s, s, 1])?;
        let mut tape = GradTape::new();
        let out = self.record(&mut tape, spatial, met, training, rng)?;
        let loss_value = crate::numerics::mse_loss(tape.value(out), &target)?;
        let t = tape.input(target);
        let loss = tape.mse(out, t)?;
        let grads = tape.backward(loss)?.into_params();
        let grads = (0..self.params.len())
            .map(|i| grads.get(&ParamId(i)).cloned().unwrap_or_else(|| Tensor::zeros(self.params[i].shape())))
            .collect();
        Ok((loss_value, grads))
    }
}

/// Prediction for one patch converted back to °C.
pub fn predict_denormalized(
    model: &UNetModel<f32>,
    spatial: &Tensor<f32>,
    met: &Tensor<f32>,
    manifest: &NormalizationManifest,
) -> Result<RasterGrid> {
    let range = *manifest.get(TARGET)?;
    let out = model.predict(spatial, met)?;
    let s = model.config().input_size;
    if out.len() != s * s {
        bail!(Dimension, "predict_denormalized takes a single example");
    }
    let values = out
        .data()
        .iter()
        .map(|&v| range.denormalize(v as f64) as f32)
        .collect();
    RasterGrid::new(s, s, Units::DegC, values)
}
