use crate::data::degraded_size;
use crate::error::{ensure, Result};
use crate::image::{ImageSample, Spacing};
use crate::losses::{reference_only_loss, total_training_loss, Branches, LossReport, LossWeights};
use crate::model::{reparameterize_var, standard_normal, ResolutionInvariantAe};
use crate::optim::{Adam, AdamConfig};
use crate::params::Session;
use crate::resize::resize_tensor;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::uncertainty::{inject_noise_var, lookup_gamma, GammaTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which objective a run optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// HR and LR branches, latent consistency and noise injection.
    #[default]
    ResolutionInvariant,
    /// Reference-grid reconstruction only, as a conventional autoencoder.
    ReferenceOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// The learning rate follows a cosine from `lr` down to
    /// `lr * final_lr_ratio` at the last step; 1 keeps it constant.
    pub final_lr_ratio: f64,
    pub weights: LossWeights,
    /// Per-batch isotropic degradation factor is uniform in this range.
    pub lr_factor_range: (f64, f64),
    pub gamma_in_training: bool,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 8,
            seed: 0,
            lr: 1e-3,
            final_lr_ratio: 0.1,
            weights: LossWeights::default(),
            lr_factor_range: (1.0, 4.0),
            gamma_in_training: true,
            checkpoint_every: 0,
            objective: Objective::ResolutionInvariant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lr_factor_range;
        ensure!(self.steps >= 1, "steps must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive, got {}", self.lr);
        ensure!(
            self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0,
            "final_lr_ratio must be in (0, 1], got {}",
            self.final_lr_ratio
        );
        ensure!(
            lo >= 1.0 && hi >= lo && hi.is_finite(),
            "lr_factor_range must satisfy 1 <= min <= max, got {:?}",
            self.lr_factor_range
        );
        self.weights.validate()
    }

    /// Learning rate of the 0-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let progress = if self.steps > 1 { t as f64 / (self.steps - 1) as f64 } else { 0.0 };
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
        self.lr * (self.final_lr_ratio + (1.0 - self.final_lr_ratio) * cos)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

fn stack_batch<T: Scalar>(batch: &[&ImageSample<T>]) -> Result<(Tensor<T>, Spacing)> {
    ensure!(!batch.is_empty(), "empty training batch");
    let spacing = batch[0].spacing;
    ensure!(
        batch.iter().all(|b| b.spacing == spacing && b.size() == batch[0].size()),
        "training batch mixes sizes or spacings"
    );
    let pixels: Vec<&Tensor<T>> = batch.iter().map(|b| &b.pixels).collect();
    Ok((Tensor::stack(&pixels)?, spacing))
}

/// One optimizer step on a batch at the reference resolution.
pub fn train_step<T: Scalar>(
    batch: &[&ImageSample<T>],
    model: &mut ResolutionInvariantAe<T>,
    optimizer: &mut Adam<T>,
    table: &GammaTable,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    let (x_hr_t, spacing) = stack_batch(batch)?;
    let reference = model.config.highest_train_res;
    ensure!(
        spacing.at_least(reference) && reference.at_least(spacing),
        "training batch spacing {spacing} differs from the reference {reference}"
    );
    let (_, _, h, w) = x_hr_t.dims4()?;
    let size = (h, w);
    let mut s = Session::train(&model.params);
    let x_hr = s.graph.constant(x_hr_t.clone());
    let (hr_mu, hr_logvar) = model.encode_var(&mut s, x_hr, spacing)?;
    let eps = standard_normal(s.graph.shape(hr_mu), rng);
    let z_hr = reparameterize_var(&mut s.graph, hr_mu, hr_logvar, eps)?;
    let hr_to_hr = model.decode_var(&mut s, z_hr, size, spacing)?;

    let (loss, report) = match config.objective {
        Objective::ReferenceOnly => reference_only_loss(
            &mut s.graph,
            x_hr,
            hr_to_hr,
            hr_mu,
            hr_logvar,
            &config.weights,
            1.0,
        )?,
        Objective::ResolutionInvariant => {
            let (lo, hi) = config.lr_factor_range;
            let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let lr_size = degraded_size(size, factor);
            let lr_spacing = Spacing::new(
                spacing.y * h as f64 / lr_size.0 as f64,
                spacing.x * w as f64 / lr_size.1 as f64,
            );
            let x_lr = s.graph.constant(resize_tensor(&x_hr_t, lr_size)?);
            let (lr_mu, lr_logvar) = model.encode_var(&mut s, x_lr, lr_spacing)?;
            let eps = standard_normal(s.graph.shape(lr_mu), rng);
            let mut z_lr = reparameterize_var(&mut s.graph, lr_mu, lr_logvar, eps)?;
            let noise = standard_normal(s.graph.shape(lr_mu), rng);
            if config.gamma_in_training {
                z_lr = inject_noise_var(&mut s.graph, z_lr, lookup_gamma(table, lr_spacing), noise)?;
            }
            let lr_to_lr = model.decode_var(&mut s, z_lr, lr_size, lr_spacing)?;
            let lr_to_hr = model.decode_var(&mut s, z_lr, size, spacing)?;
            let branches = Branches {
                x_hr,
                x_lr,
                hr_to_hr,
                lr_to_lr,
                lr_to_hr,
                hr_mu,
                hr_logvar,
                lr_mu,
                lr_logvar,
            };
            total_training_loss(&mut s.graph, &branches, &config.weights, 1.0)?
        }
    };
    let grads = s.backward(loss)?;
    drop(s);
    optimizer.step(&mut model.params, &grads)?;
    Ok(report)
}

/// Model, optimizer and sampling state of one run.
pub struct Trainer<T> {
    pub model: ResolutionInvariantAe<T>,
    pub optimizer: Adam<T>,
    pub table: GammaTable,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ResolutionInvariantAe<T>, table: GammaTable, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&model.params, config.adam());
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            optimizer,
            table,
            config,
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// Draws the next batch from reshuffled passes over the corpus.
    fn next_batch<'c>(&mut self, corpus: &'c [ImageSample<T>]) -> Vec<&'c ImageSample<T>> {
        (0..self.config.batch_size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..corpus.len()).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                &corpus[self.order[self.cursor - 1]]
            })
            .collect()
    }

    pub fn step(&mut self, corpus: &[ImageSample<T>]) -> Result<LossReport> {
        ensure!(!corpus.is_empty(), "training corpus is empty");
        let batch = self.next_batch(corpus);
        self.optimizer.config.lr = self.config.lr_at(self.optimizer.steps_taken() as usize);
        train_step(
            &batch,
            &mut self.model,
            &mut self.optimizer,
            &self.table,
            &self.config,
            &mut self.rng,
        )
    }
}

/// Runs `config.steps` steps. `on_step` sees the 1-based step number, its
/// report and the current model, e.g. for logging and checkpoints.
pub fn train<T, F>(
    model: ResolutionInvariantAe<T>,
    table: GammaTable,
    corpus: &[ImageSample<T>],
    config: TrainConfig,
    mut on_step: F,
) -> Result<(ResolutionInvariantAe<T>, Vec<LossReport>)>
where
    T: Scalar,
    F: FnMut(usize, &LossReport, &ResolutionInvariantAe<T>) -> Result<()>,
{
    let mut trainer = Trainer::new(model, table, config)?;
    let mut log = Vec::with_capacity(trainer.config.steps);
    for step in 1..=trainer.config.steps {
        let report = trainer.step(corpus)?;
        on_step(step, &report, &trainer.model)?;
        log.push(report);
    }
    Ok((trainer.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::model::ModelConfig;

    fn toy() -> (ResolutionInvariantAe<f64>, Vec<ImageSample<f64>>, GammaTable) {
        let cfg = ModelConfig {
            base_channels: 4,
            channel_mults: vec![1, 1, 2],
            latent_channels: 2,
            latent_grid: (2, 2),
            ..ModelConfig::default()
        };
        let model = ResolutionInvariantAe::new(cfg, 0).unwrap();
        let data = SyntheticConfig {
            size: 16,
            ..SyntheticConfig::default()
        };
        let imgs = generate_synthetic(&data, 4)
            .unwrap()
            .into_iter()
            .map(|l| l.image)
            .collect();
        let table = GammaTable::new(vec![(1.0, 0.0), (4.0, 0.5)], 4, Spacing::iso(1.0)).unwrap();
        (model, imgs, table)
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            lr_factor_range: (1.0, 1.4),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn unit_factor_range_is_well_formed() {
        let (mut model, imgs, table) = toy();
        let c = TrainConfig {
            lr_factor_range: (1.0, 1.0),
            ..cfg(1)
        };
        let mut opt = Adam::new(&model.params, c.adam());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<_> = imgs.iter().take(2).collect();
        let r = train_step(&batch, &mut model, &mut opt, &table, &c, &mut rng).unwrap();
        assert!(r.total.is_finite() && r.total > 0.0);
        assert!((r.recompute_total() - r.total).abs() < 1e-9 * r.total);
        // identical inputs: only the two independent posterior samples differ
        assert!((r.terms.lr_lr_l1 - r.terms.hr_hr_l1).abs() < 0.1);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig {
            lr: 2e-3,
            final_lr_ratio: 0.1,
            ..cfg(11)
        };
        assert_eq!(c.lr_at(0), 2e-3);
        assert!((c.lr_at(5) - 2e-3 * 0.55).abs() < 1e-15);
        assert!((c.lr_at(10) - 2e-4).abs() < 1e-15);
        let flat = TrainConfig { final_lr_ratio: 1.0, ..c };
        assert_eq!(flat.lr_at(7), 2e-3);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let run = || {
            let (model, imgs, table) = toy();
            train(model, table, &imgs, cfg(3), |_, _, _| Ok(())).unwrap()
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert!(a.params.iter().zip(b.params.iter()).all(|(x, y)| x == y));
    }

    #[test]
    fn baseline_objective_leaves_lr_terms_empty() {
        let (model, imgs, table) = toy();
        let c = TrainConfig {
            objective: Objective::ReferenceOnly,
            ..cfg(2)
        };
        let (_, log) = train(model, table, &imgs, c, |_, _, _| Ok(())).unwrap();
        assert!(log.iter().all(|r| r.terms.lr_hr_l1 == 0.0 && r.terms.latent == 0.0));
    }

    #[test]
    fn off_reference_batch_is_rejected() {
        let (mut model, imgs, table) = toy();
        let coarse = ImageSample::new(imgs[0].pixels.clone(), Spacing::iso(2.0)).unwrap();
        let mut opt = Adam::new(&model.params, AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(train_step(&[&coarse], &mut model, &mut opt, &table, &cfg(1), &mut rng).is_err());
    }

    #[test]
    fn rejects_bad_factor_range() {
        let c = TrainConfig {
            lr_factor_range: (0.5, 2.0),
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
