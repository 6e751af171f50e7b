//! Information-loss calibration and latent noise injection.
//!
//! The information lost by coarsening an image by a factor `f` is estimated
//! as the mean SSIM drop `1 - ssim(x, up(down(x, f)))` over a calibration
//! subset. At encode time that estimate `gamma` blends the latent with
//! standard-normal noise, `(1 - gamma) z + gamma eps`, so repeated decoding
//! of a coarse input spreads out where detail was lost.

use crate::autodiff::{Graph, Var};
use crate::data::degraded_size;
use crate::error::{ensure, Result};
use crate::image::{ImageSample, Spacing};
use crate::metrics::ssim;
use crate::model::{reparameterize, standard_normal, LatentDistribution, ResolutionInvariantAe};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Calibration subset size used when none is specified.
pub const DEFAULT_GAMMA_SAMPLES: usize = 20;
/// Degradation factors swept by default.
pub const DEFAULT_GAMMA_FACTORS: [f64; 6] = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
/// Stochastic decodes per super-resolved image.
pub const DEFAULT_MC_DRAWS: usize = 40;

/// Monotone map from degradation factor to information loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTable {
    pub entries: Vec<(f64, f64)>,
    pub n_samples_used: usize,
    pub reference_res: Spacing,
}

/// Pool-adjacent-violators fit of a non-decreasing sequence.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

impl GammaTable {
    pub fn new(mut entries: Vec<(f64, f64)>, n_samples_used: usize, reference_res: Spacing) -> Result<Self> {
        ensure!(!entries.is_empty(), "gamma table needs at least one entry");
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        ensure!(
            entries.windows(2).all(|w| w[0].0 < w[1].0),
            "gamma table factors must be distinct"
        );
        ensure!(
            entries.iter().all(|&(f, g)| f >= 1.0 && (0.0..=1.0).contains(&g)),
            "gamma table entries must have factor >= 1 and gamma in [0, 1]"
        );
        ensure!(
            entries.windows(2).all(|w| w[0].1 <= w[1].1),
            "gamma must be non-decreasing in factor"
        );
        Ok(Self {
            entries,
            n_samples_used,
            reference_res,
        })
    }

    /// Table with the given factors all mapping to zero.
    pub fn zero(reference_res: Spacing) -> Self {
        Self {
            entries: vec![(1.0, 0.0)],
            n_samples_used: 0,
            reference_res,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("factor,gamma\n");
        for (f, g) in &self.entries {
            s.push_str(&format!("{f},{g}\n"));
        }
        s
    }
}

/// Sweeps `factors` over `samples` (all at one reference spacing) and
/// returns the isotonic, clamped mean SSIM drop per factor.
pub fn estimate_gamma_table<T, F>(samples: &[ImageSample<T>], factors: &[f64], resize_fn: F) -> Result<GammaTable>
where
    T: Scalar,
    F: Fn(&Tensor<T>, (usize, usize)) -> Result<Tensor<T>>,
{
    ensure!(!samples.is_empty(), "gamma estimation needs at least one sample");
    ensure!(
        factors.contains(&1.0),
        "gamma factors must include 1.0, got {factors:?}"
    );
    ensure!(
        factors.iter().all(|f| f.is_finite() && *f >= 1.0),
        "gamma factors must be >= 1, got {factors:?}"
    );
    let reference_res = samples[0].spacing;
    ensure!(
        samples.iter().all(|s| s.spacing == reference_res),
        "gamma samples must share one spacing"
    );
    let mut sorted = factors.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut raw = Vec::with_capacity(sorted.len());
    for &f in &sorted {
        let mut drop = 0.0;
        for s in samples {
            let size = s.size();
            let low = resize_fn(&s.pixels, degraded_size(size, f))?;
            let back = resize_fn(&low, size)?;
            drop += 1.0 - ssim(&s.pixels, &back, 1.0)?;
        }
        raw.push((drop / samples.len() as f64).clamp(0.0, 1.0));
    }
    let fitted = isotonic(&raw);
    GammaTable::new(sorted.into_iter().zip(fitted).collect(), samples.len(), reference_res)
}

/// Geometric mean over axes of `input_res / reference_res`.
pub fn degradation_factor(input_res: Spacing, reference_res: Spacing) -> f64 {
    ((input_res.y / reference_res.y) * (input_res.x / reference_res.x)).sqrt()
}

/// Piecewise-linear lookup of gamma at the factor implied by `input_res`,
/// clamped to the table's end points.
pub fn lookup_gamma(table: &GammaTable, input_res: Spacing) -> f64 {
    let f = degradation_factor(input_res, table.reference_res);
    let e = &table.entries;
    if f <= e[0].0 {
        return e[0].1;
    }
    if f >= e[e.len() - 1].0 {
        return e[e.len() - 1].1;
    }
    let i = e.partition_point(|&(x, _)| x <= f);
    let ((x0, y0), (x1, y1)) = (e[i - 1], e[i]);
    if f == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (f - x0) / (x1 - x0)
}

/// `(1 - gamma) z + gamma eps` with `eps ~ N(0, 1)` drawn from `rng`.
/// At `gamma == 0` the result is `z` itself (the noise is still drawn).
pub fn inject_noise<T: Scalar, R: Rng>(z: &Tensor<T>, gamma: f64, rng: &mut R) -> Result<Tensor<T>> {
    ensure!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1], got {gamma}");
    let eps: Tensor<T> = standard_normal(z.shape(), rng);
    blend_noise(z, gamma, &eps)
}

/// [`inject_noise`] with an explicit noise tensor.
pub fn blend_noise<T: Scalar>(z: &Tensor<T>, gamma: f64, eps: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1], got {gamma}");
    if gamma == 0.0 {
        ensure!(z.shape() == eps.shape(), "noise shape mismatch");
        return Ok(z.clone());
    }
    let (keep, mix) = (T::lit(1.0 - gamma), T::lit(gamma));
    z.zip_map(eps, |a, e| keep * a + mix * e)
}

/// Graph version of [`blend_noise`]; gradients flow into `z` only.
pub fn inject_noise_var<T: Scalar>(g: &mut Graph<T>, z: Var, gamma: f64, eps: Tensor<T>) -> Result<Var> {
    ensure!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1], got {gamma}");
    if gamma == 0.0 {
        return Ok(z);
    }
    let kept = g.scalar_mul(z, T::lit(1.0 - gamma))?;
    let eps = g.constant(eps.map(|e| e * T::lit(gamma)));
    g.add(kept, eps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyResult<T> {
    pub mean_image: Tensor<T>,
    pub std_map: Tensor<T>,
    pub n_draws: usize,
}

impl<T: Scalar> UncertaintyResult<T> {
    pub fn mean_std(&self) -> f64 {
        self.std_map.mean().as_f64()
    }
}

/// Pixelwise mean and sample standard deviation (`n - 1`) of `[1, C, H, W]` draws.
pub fn pixel_statistics<T: Scalar>(draws: &[Tensor<T>]) -> Result<UncertaintyResult<T>> {
    ensure!(draws.len() >= 2, "need at least two draws, got {}", draws.len());
    let shape = draws[0].shape().to_vec();
    ensure!(
        draws.iter().all(|d| d.shape() == shape.as_slice()),
        "draws differ in shape"
    );
    let n = T::from_usize(draws.len()).unwrap();
    let numel = draws[0].numel();
    let mut mean = vec![T::zero(); numel];
    for d in draws {
        for (m, &v) in mean.iter_mut().zip(d.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); numel];
    for d in draws {
        for ((s, &v), &m) in var.iter_mut().zip(d.data()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / (n - T::one())).sqrt()).collect();
    Ok(UncertaintyResult {
        mean_image: Tensor::new(shape.clone(), mean)?,
        std_map: Tensor::new(shape, std)?,
        n_draws: draws.len(),
    })
}

/// Decodes `n_draws` stochastic samples of `dist` (a single-image posterior)
/// after blending each with noise of weight `gamma`.
///
/// Draw `d` uses its own random stream `(seed, d)`, so results do not depend
/// on how draws are grouped or ordered.
#[allow(clippy::too_many_arguments)]
pub fn mc_decode<T: Scalar>(
    model: &ResolutionInvariantAe<T>,
    dist: &LatentDistribution<T>,
    source_res: Spacing,
    gamma: f64,
    target_size: (usize, usize),
    target_res: Spacing,
    n_draws: usize,
    seed: u64,
) -> Result<UncertaintyResult<T>> {
    ensure!(n_draws >= 2, "n_draws must be at least 2, got {n_draws}");
    ensure!(dist.mu.shape()[0] == 1, "mc_decode expects one image");
    const CHUNK: usize = 8;
    let mut draws = Vec::with_capacity(n_draws);
    let mut start = 0;
    while start < n_draws {
        let end = (start + CHUNK).min(n_draws);
        let codes: Vec<Tensor<T>> = (start..end)
            .map(|d| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(d as u64);
                let code = reparameterize(dist, source_res, &mut rng)?;
                inject_noise(&code.z, gamma, &mut rng)
            })
            .collect::<Result<_>>()?;
        let batch = Tensor::stack(&codes.iter().collect::<Vec<_>>())?;
        let code = crate::model::LatentCode {
            z: batch,
            source_resolution: source_res,
            gamma_applied: gamma,
        };
        let out = model.decode(&code, target_size, target_res)?;
        for i in 0..end - start {
            draws.push(out.batch_item(i)?);
        }
        start = end;
    }
    pixel_statistics(&draws)
}

/// Super-resolves `image` to `target_size` at `target_res` `n_draws` times:
/// encode, sample, blend with noise at the table's gamma for the image's
/// spacing, decode. Returns the pixelwise mean and standard deviation.
pub fn mc_superresolve<T: Scalar>(
    image: &ImageSample<T>,
    model: &ResolutionInvariantAe<T>,
    table: &GammaTable,
    target_size: (usize, usize),
    target_res: Spacing,
    n_draws: usize,
    seed: u64,
) -> Result<UncertaintyResult<T>> {
    let dist = model.encode(image)?;
    let gamma = lookup_gamma(table, image.spacing);
    mc_decode(model, &dist, image.spacing, gamma, target_size, target_res, n_draws, seed)
}
