//! The resolution-invariant variational autoencoder.
//!
//! Encoder and decoder each stack `n_layers` of [residual block ->
//! learnable resize block]. The resize targets come from a [`ResizePlan`]
//! computed per call from the image spacing, so the latent grid is the same
//! for every input resolution and the decoder can emit any output grid.

use crate::autodiff::{Graph, Var};
use crate::error::{ensure, Result};
use crate::image::{ImageSample, Spacing};
use crate::nn::{Conv2d, ResBlock};
use crate::params::{ParamStore, Session};
use crate::resize::{compute_decode_plan, compute_resize_plan, Direction, ResizeBlock, ResizePlan};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub base_channels: usize,
    /// Channel multiplier per layer, finest first.
    pub channel_mults: Vec<usize>,
    pub latent_channels: usize,
    pub latent_grid: (usize, usize),
    /// Finest training spacing; the latent spacing is this times `2^n_layers`.
    pub highest_train_res: Spacing,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            latent_channels: 4,
            latent_grid: (16, 16),
            highest_train_res: Spacing::iso(1.0),
        }
    }
}

impl ModelConfig {
    /// Two-layer model on a 64x64 reference grid with a 16x16 latent, sized
    /// to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            base_channels: 8,
            channel_mults: vec![1, 2],
            latent_channels: 8,
            latent_grid: (16, 16),
            highest_train_res: Spacing::iso(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_layers >= 1, "n_layers must be at least 1");
        ensure!(
            self.channel_mults.len() == self.n_layers,
            "channel_mults has {} entries for {} layers",
            self.channel_mults.len(),
            self.n_layers
        );
        ensure!(
            self.base_channels >= 1 && self.latent_channels >= 1 && self.channel_mults.iter().all(|&m| m >= 1),
            "channel counts must be positive"
        );
        ensure!(
            self.latent_grid.0 >= 1 && self.latent_grid.1 >= 1,
            "latent grid must be at least 1x1"
        );
        ensure!(
            self.highest_train_res.is_valid(),
            "invalid reference spacing {:?}",
            self.highest_train_res
        );
        Ok(())
    }

    pub fn latent_res(&self) -> Spacing {
        self.highest_train_res.scale(f64::powi(2.0, self.n_layers as i32))
    }

    /// Image grid at the reference spacing (latent grid times `2^n_layers`).
    pub fn reference_size(&self) -> (usize, usize) {
        let f = 1usize << self.n_layers;
        (self.latent_grid.0 * f, self.latent_grid.1 * f)
    }

    fn channels(&self) -> Vec<usize> {
        self.channel_mults.iter().map(|m| m * self.base_channels).collect()
    }
}

/// Per-element Gaussian posterior on the latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

/// A sampled (and possibly noised) latent.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T> {
    pub z: Tensor<T>,
    pub source_resolution: Spacing,
    pub gamma_applied: f64,
}

#[derive(Clone, Debug)]
struct Stage {
    res: ResBlock,
    resize: ResizeBlock,
}

#[derive(Clone, Debug)]
struct Encoder {
    conv_in: Conv2d,
    stages: Vec<Stage>,
    mu: Conv2d,
    logvar: Conv2d,
}

#[derive(Clone, Debug)]
struct Decoder {
    conv_in: Conv2d,
    stages: Vec<Stage>,
    conv_out: Conv2d,
}

/// Parameter-name prefix of every encoder tensor.
pub const ENCODER_PREFIX: &str = "enc.";

/// Range the encoder's log-variance is clamped to. Without it a drifting
/// logvar head can overflow `exp` late in long runs.
pub const LOGVAR_RANGE: (f64, f64) = (-30.0, 20.0);

#[derive(Clone, Debug)]
pub struct ResolutionInvariantAe<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    encoder: Encoder,
    decoder: Decoder,
}

impl<T: Scalar> ResolutionInvariantAe<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let ch = config.channels();
        let n = config.n_layers;

        let mut stages = Vec::with_capacity(n);
        for k in 0..n {
            let cin = if k == 0 { ch[0] } else { ch[k - 1] };
            stages.push(Stage {
                res: ResBlock::new(&mut p, &mut rng, &format!("enc.layer{k}.res"), cin, ch[k])?,
                resize: ResizeBlock::new(&mut p, &mut rng, &format!("enc.layer{k}.resize"), ch[k])?,
            });
        }
        let encoder = Encoder {
            conv_in: Conv2d::new(&mut p, &mut rng, "enc.conv_in", 1, ch[0], 3)?,
            stages,
            mu: Conv2d::new(&mut p, &mut rng, "enc.mu", ch[n - 1], config.latent_channels, 1)?,
            logvar: Conv2d::new(&mut p, &mut rng, "enc.logvar", ch[n - 1], config.latent_channels, 1)?,
        };

        let mut stages = Vec::with_capacity(n);
        for k in 0..n {
            let cin = ch[n - k.max(1)];
            let cout = ch[n - 1 - k];
            stages.push(Stage {
                res: ResBlock::new(&mut p, &mut rng, &format!("dec.layer{k}.res"), cin, cout)?,
                resize: ResizeBlock::new(&mut p, &mut rng, &format!("dec.layer{k}.resize"), cout)?,
            });
        }
        let decoder = Decoder {
            conv_in: Conv2d::new(&mut p, &mut rng, "dec.conv_in", config.latent_channels, ch[n - 1], 3)?,
            stages,
            conv_out: Conv2d::new(&mut p, &mut rng, "dec.conv_out", ch[0], 1, 1)?,
        };
        Ok(Self {
            config,
            params: p,
            encoder,
            decoder,
        })
    }

    pub fn encode_plan(&self, size: (usize, usize), spacing: Spacing) -> Result<ResizePlan> {
        ensure!(
            spacing.at_least(self.config.highest_train_res),
            "input spacing {spacing:?} is finer than the reference resolution {:?}; \
             finer than reference resolution is out of the trained domain",
            self.config.highest_train_res
        );
        compute_resize_plan(
            size,
            spacing,
            self.config.latent_grid,
            self.config.latent_res(),
            self.config.n_layers,
        )
    }

    pub fn decode_plan(&self, size: (usize, usize), spacing: Spacing) -> Result<ResizePlan> {
        ensure!(
            spacing.at_least(self.config.highest_train_res),
            "target spacing {spacing:?} is finer than the reference resolution {:?}",
            self.config.highest_train_res
        );
        compute_decode_plan(
            self.config.latent_grid,
            self.config.latent_res(),
            size,
            spacing,
            self.config.n_layers,
        )
    }

    /// Records the encoder on `s` for a `[N, 1, H, W]` batch at `spacing`;
    /// returns `(mu, logvar)`.
    pub fn encode_var(&self, s: &mut Session<'_, T>, x: Var, spacing: Spacing) -> Result<(Var, Var)> {
        let (_, c, h, w) = s.graph.value(x).dims4()?;
        ensure!(c == 1, "encoder expects single-channel images, got {c} channels");
        let plan = self.encode_plan((h, w), spacing)?;
        self.encode_var_with_plan(s, x, &plan)
    }

    /// Encoder on an explicit layer plan. Plans that do not end on the
    /// configured latent grid give latents of a different size.
    pub fn encode_var_with_plan(&self, s: &mut Session<'_, T>, x: Var, plan: &ResizePlan) -> Result<(Var, Var)> {
        let (_, c, h, w) = s.graph.value(x).dims4()?;
        ensure!(c == 1, "encoder expects single-channel images, got {c} channels");
        ensure!(
            plan.direction == Direction::Encode && plan.n_layers() == self.config.n_layers && plan.layer_sizes[0] == (h, w),
            "plan {:?} does not fit a {h}x{w} input to a {}-layer encoder",
            plan.layer_sizes,
            self.config.n_layers
        );
        let mut h = self.encoder.conv_in.forward(s, x)?;
        for (stage, &target) in self.encoder.stages.iter().zip(&plan.layer_sizes[1..]) {
            h = stage.res.forward(s, h)?;
            h = stage.resize.forward(s, h, target)?;
        }
        let mu = self.encoder.mu.forward(s, h)?;
        let logvar = self.encoder.logvar.forward(s, h)?;
        let logvar = s.graph.clamp(logvar, T::lit(LOGVAR_RANGE.0), T::lit(LOGVAR_RANGE.1))?;
        Ok((mu, logvar))
    }

    /// Records the decoder on `s`, producing a `[N, 1, H', W']` image.
    pub fn decode_var(
        &self,
        s: &mut Session<'_, T>,
        z: Var,
        target_size: (usize, usize),
        target_res: Spacing,
    ) -> Result<Var> {
        let (_, c, h, w) = s.graph.value(z).dims4()?;
        ensure!(
            c == self.config.latent_channels && (h, w) == self.config.latent_grid,
            "latent has shape {:?}, expected {} channels on {:?}",
            s.graph.shape(z),
            self.config.latent_channels,
            self.config.latent_grid
        );
        let plan = self.decode_plan(target_size, target_res)?;
        let mut h = self.decoder.conv_in.forward(s, z)?;
        for (stage, &target) in self.decoder.stages.iter().zip(&plan.layer_sizes[1..]) {
            h = stage.res.forward(s, h)?;
            h = stage.resize.forward(s, h, target)?;
        }
        self.decoder.conv_out.forward(s, h)
    }

    pub fn encode(&self, image: &ImageSample<T>) -> Result<LatentDistribution<T>> {
        self.encode_batch(&image.pixels, image.spacing)
    }

    /// Encodes a `[N, 1, H, W]` batch sharing one spacing without recording gradients.
    pub fn encode_batch(&self, pixels: &Tensor<T>, spacing: Spacing) -> Result<LatentDistribution<T>> {
        pixels.check_finite("encoder input")?;
        let mut s = Session::inference(&self.params);
        let x = s.graph.constant(pixels.clone());
        let (mu, logvar) = self.encode_var(&mut s, x, spacing)?;
        Ok(LatentDistribution {
            mu: s.graph.value(mu).clone(),
            logvar: s.graph.value(logvar).clone(),
        })
    }

    pub fn encode_batch_with_plan(&self, pixels: &Tensor<T>, plan: &ResizePlan) -> Result<LatentDistribution<T>> {
        pixels.check_finite("encoder input")?;
        let mut s = Session::inference(&self.params);
        let x = s.graph.constant(pixels.clone());
        let (mu, logvar) = self.encode_var_with_plan(&mut s, x, plan)?;
        Ok(LatentDistribution {
            mu: s.graph.value(mu).clone(),
            logvar: s.graph.value(logvar).clone(),
        })
    }

    pub fn decode(&self, code: &LatentCode<T>, target_size: (usize, usize), target_res: Spacing) -> Result<Tensor<T>> {
        let mut s = Session::inference(&self.params);
        let z = s.graph.constant(code.z.clone());
        let y = self.decode_var(&mut s, z, target_size, target_res)?;
        Ok(s.graph.value(y).clone())
    }

    /// Checksum-style view of the encoder parameters, for freeze checks.
    pub fn encoder_params(&self) -> Vec<(String, Tensor<T>)> {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(ENCODER_PREFIX))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn standard_normal<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// `z = mu + exp(0.5 * logvar) * eps` recorded on `g` with a fixed `eps`.
pub fn reparameterize_var<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var> {
    let eps = g.constant(eps);
    let half = g.scalar_mul(logvar, T::lit(0.5))?;
    let std = g.exp(half)?;
    let noise = g.mul(std, eps)?;
    g.add(mu, noise)
}

/// Samples `z = mu + exp(0.5 * logvar) * eps` with `eps ~ N(0, 1)`.
pub fn reparameterize<T: Scalar, R: Rng>(
    dist: &LatentDistribution<T>,
    source_resolution: Spacing,
    rng: &mut R,
) -> Result<LatentCode<T>> {
    let eps: Tensor<T> = standard_normal(dist.mu.shape(), rng);
    let std = dist.logvar.map(|v| (v * T::lit(0.5)).exp());
    let z = dist
        .mu
        .zip_map(&std.zip_map(&eps, |s, e| s * e)?, |m, n| m + n)?;
    Ok(LatentCode {
        z,
        source_resolution,
        gamma_applied: 0.0,
    })
}
