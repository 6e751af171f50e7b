use crate::error::{ensure, Result};
use crate::image::ImageSample;
use crate::metrics::auroc;
use crate::model::ResolutionInvariantAe;
use crate::nn::Conv2d;
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamStore, Session};
use crate::resize::fixed_factor_plan;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a frozen encoder maps images of any spacing to latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Spacing-aware plan onto the fixed latent grid.
    Planned,
    /// Halve every layer, so the latent grid shrinks with the input.
    FixedFactor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            hidden: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Posterior means of `images` under a frozen encoder, one `[1, C, h, w]`
/// tensor per image.
pub fn latent_features<T: Scalar>(
    model: &ResolutionInvariantAe<T>,
    images: &[ImageSample<T>],
    mode: EncoderMode,
) -> Result<Vec<Tensor<T>>> {
    const CHUNK: usize = 16;
    let mut out = Vec::with_capacity(images.len());
    let mut start = 0;
    while start < images.len() {
        let first = &images[start];
        let mut end = start + 1;
        while end < images.len()
            && end - start < CHUNK
            && images[end].size() == first.size()
            && images[end].spacing == first.spacing
        {
            end += 1;
        }
        let pixels: Vec<&Tensor<T>> = images[start..end].iter().map(|i| &i.pixels).collect();
        let batch = Tensor::stack(&pixels)?;
        let dist = match mode {
            EncoderMode::Planned => model.encode_batch(&batch, first.spacing)?,
            EncoderMode::FixedFactor => {
                let plan = fixed_factor_plan(first.size(), model.config.n_layers)?;
                model.encode_batch_with_plan(&batch, &plan)?
            }
        };
        for i in 0..end - start {
            out.push(dist.mu.batch_item(i)?);
        }
        start = end;
    }
    Ok(out)
}

/// Two 3x3 convolutions, global average pooling and a linear head.
#[derive(Clone, Debug)]
pub struct LatentClassifier<T> {
    pub params: ParamStore<T>,
    conv1: Conv2d,
    conv2: Conv2d,
    head: Conv2d,
}

impl<T: Scalar> LatentClassifier<T> {
    pub fn new(in_channels: usize, hidden: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        Ok(Self {
            conv1: Conv2d::new(&mut p, &mut rng, "cls.conv1", in_channels, hidden, 3)?,
            conv2: Conv2d::new(&mut p, &mut rng, "cls.conv2", hidden, hidden, 3)?,
            head: Conv2d::new(&mut p, &mut rng, "cls.head", hidden, n_classes, 1)?,
            params: p,
        })
    }

    fn logits(&self, s: &mut Session<'_, T>, x: Tensor<T>) -> Result<crate::autodiff::Var> {
        let x = s.graph.constant(x);
        let h = self.conv1.forward(s, x)?;
        let h = s.graph.silu(h)?;
        let h = self.conv2.forward(s, h)?;
        let h = s.graph.silu(h)?;
        let h = s.graph.global_avg_pool(h)?;
        self.head.forward(s, h)
    }

    /// Logit margin of class 1 over class 0 per latent.
    pub fn scores(&self, latents: &[Tensor<T>]) -> Result<Vec<f64>> {
        latents
            .iter()
            .map(|z| {
                let mut s = Session::inference(&self.params);
                let y = self.logits(&mut s, z.clone())?;
                let v = s.graph.value(y).data();
                Ok(v[1].as_f64() - v[0].as_f64())
            })
            .collect()
    }

    pub fn auroc(&self, latents: &[Tensor<T>], labels: &[usize]) -> Result<f64> {
        let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        auroc(&self.scores(latents)?, &positive)
    }
}

/// Trains a two-class classifier on cached latents with cross-entropy.
/// Latents of different spatial sizes may be mixed.
pub fn train_latent_classifier<T: Scalar>(
    latents: &[Tensor<T>],
    labels: &[usize],
    config: &ClassifierConfig,
) -> Result<LatentClassifier<T>> {
    ensure!(!latents.is_empty(), "classifier needs training latents");
    ensure!(latents.len() == labels.len(), "{} latents for {} labels", latents.len(), labels.len());
    ensure!(labels.iter().all(|&l| l < 2), "labels must be 0 or 1");
    ensure!(config.steps >= 1 && config.batch_size >= 1, "classifier steps and batch size must be positive");
    let channels = latents[0].shape()[1];
    let mut clf = LatentClassifier::new(channels, config.hidden, 2, config.seed)?;
    let mut opt = Adam::new(
        &clf.params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for _ in 0..config.steps {
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order = (0..latents.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            groups.entry(latents[i].shape().to_vec()).or_default().push(i);
        }
        let mut s = Session::train(&clf.params);
        let mut total = None;
        for idx in groups.values() {
            let items: Vec<&Tensor<T>> = idx.iter().map(|&i| &latents[i]).collect();
            let y = clf.logits(&mut s, Tensor::stack(&items)?)?;
            let group_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let ce = s.graph.cross_entropy(y, &group_labels)?;
            let w = T::lit(idx.len() as f64 / config.batch_size as f64);
            let ce = s.graph.scalar_mul(ce, w)?;
            total = Some(match total {
                Some(t) => s.graph.add(t, ce)?,
                None => ce,
            });
        }
        let grads = s.backward(total.expect("non-empty batch"))?;
        drop(s);
        opt.step(&mut clf.params, &grads)?;
    }
    Ok(clf)
}

/// AUROC for every (test resolution, training set) pair: rows test on HR
/// then LR, columns train on HR, LR and their union.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierGrid {
    pub cells: [[f64; 3]; 2],
}

impl ClassifierGrid {
    pub const TEST_ROWS: [&'static str; 2] = ["hr", "lr"];
    pub const TRAIN_COLS: [&'static str; 3] = ["hr", "lr", "mixed"];

    /// Mean over HR- and LR-trained classifiers of same- minus cross-resolution AUROC.
    pub fn cross_resolution_drop(&self) -> f64 {
        let c = &self.cells;
        ((c[0][0] - c[1][0]) + (c[1][1] - c[0][1])) / 2.0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("test,train,auroc\n");
        for (r, test) in Self::TEST_ROWS.iter().enumerate() {
            for (c, train) in Self::TRAIN_COLS.iter().enumerate() {
                s.push_str(&format!("{test},{train},{}\n", self.cells[r][c]));
            }
        }
        s
    }
}

/// Labeled images at two resolutions, split into train and test.
pub struct GridData<'a, T> {
    pub train_hr: &'a [ImageSample<T>],
    pub train_lr: &'a [ImageSample<T>],
    pub train_labels: &'a [usize],
    pub test_hr: &'a [ImageSample<T>],
    pub test_lr: &'a [ImageSample<T>],
    pub test_labels: &'a [usize],
}

/// Encodes every split with the frozen `model` and fills the 2x3 grid.
pub fn classifier_grid<T: Scalar>(
    model: &ResolutionInvariantAe<T>,
    mode: EncoderMode,
    data: &GridData<'_, T>,
    config: &ClassifierConfig,
) -> Result<ClassifierGrid> {
    let enc = |imgs| latent_features(model, imgs, mode);
    let (tr_hr, tr_lr) = (enc(data.train_hr)?, enc(data.train_lr)?);
    let (te_hr, te_lr) = (enc(data.test_hr)?, enc(data.test_lr)?);
    let mixed: Vec<Tensor<T>> = tr_hr.iter().chain(&tr_lr).cloned().collect();
    let mixed_labels: Vec<usize> = data.train_labels.iter().chain(data.train_labels).copied().collect();
    let train_sets = [
        (tr_hr, data.train_labels.to_vec()),
        (tr_lr, data.train_labels.to_vec()),
        (mixed, mixed_labels),
    ];
    let mut cells = [[0.0; 3]; 2];
    for (c, (z, y)) in train_sets.iter().enumerate() {
        let clf = train_latent_classifier(z, y, config)?;
        cells[0][c] = clf.auroc(&te_hr, data.test_labels)?;
        cells[1][c] = clf.auroc(&te_lr, data.test_labels)?;
    }
    Ok(ClassifierGrid { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Spacing;
    use crate::model::ModelConfig;

    #[test]
    fn separable_latents_are_learned() {
        // class 1 has a bright first channel
        let latents: Vec<Tensor<f64>> = (0..20)
            .map(|i| Tensor::from_fn(&[1, 2, 4, 4], |j| if j < 16 && i % 2 == 1 { 1.0 } else { 0.1 * (j % 3) as f64 }))
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let cfg = ClassifierConfig {
            steps: 100,
            batch_size: 8,
            ..ClassifierConfig::default()
        };
        let clf = train_latent_classifier(&latents, &labels, &cfg).unwrap();
        assert_eq!(clf.auroc(&latents, &labels).unwrap(), 1.0);
        assert!(clf.auroc(&latents, &[0; 20]).is_err());
    }

    #[test]
    fn encoder_is_untouched_and_modes_differ() {
        let cfg = ModelConfig {
            base_channels: 4,
            channel_mults: vec![1, 1, 1],
            latent_channels: 2,
            latent_grid: (4, 4),
            ..ModelConfig::default()
        };
        let model = ResolutionInvariantAe::<f64>::new(cfg, 0).unwrap();
        let before = model.encoder_params();
        let img = |size, sp| ImageSample::new(Tensor::from_fn(&[1, 1, size, size], |i| (i % 7) as f64 / 7.0), Spacing::iso(sp)).unwrap();
        let hr = vec![img(32, 1.0), img(32, 1.0)];
        let lr = vec![img(16, 2.0), img(16, 2.0)];
        let planned = latent_features(&model, &lr, EncoderMode::Planned).unwrap();
        let fixed = latent_features(&model, &lr, EncoderMode::FixedFactor).unwrap();
        assert_eq!(planned[0].shape(), &[1, 2, 4, 4]);
        assert_eq!(fixed[0].shape(), &[1, 2, 2, 2]);
        let data = GridData {
            train_hr: &hr,
            train_lr: &lr,
            train_labels: &[0, 1],
            test_hr: &hr,
            test_lr: &lr,
            test_labels: &[0, 1],
        };
        let c = ClassifierConfig {
            steps: 5,
            ..ClassifierConfig::default()
        };
        let grid = classifier_grid(&model, EncoderMode::FixedFactor, &data, &c).unwrap();
        assert_eq!(grid.to_csv().lines().count(), 7);
        assert_eq!(model.encoder_params(), before);
    }
}
