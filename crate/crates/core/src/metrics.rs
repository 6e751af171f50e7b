//! Image quality metrics (SSIM, PSNR) and the AUROC rank statistic.

use crate::autodiff::{Graph, Var};
use crate::error::{contract, ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fmt;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn blur<T: Scalar>(g: &mut Graph<T>, x: Var, row: Var, col: Var) -> Result<Var> {
    let h = g.conv2d(x, row, None, 0)?;
    g.conv2d(h, col, None, 0)
}

/// Mean windowed SSIM of two `[N, C, H, W]` batches, recorded on `g`.
///
/// Uses an 11x11 Gaussian window (sigma 1.5) over every fully contained
/// window position, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, dynamic_range: f64) -> Result<Var> {
    ensure!(
        dynamic_range > 0.0 && dynamic_range.is_finite(),
        "ssim dynamic range must be positive, got {dynamic_range}"
    );
    ensure!(
        g.shape(a) == g.shape(b),
        "ssim: shape mismatch {:?} vs {:?}",
        g.shape(a),
        g.shape(b)
    );
    let (n, c, h, w) = g.value(a).dims4()?;
    ensure!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
    );
    let (a, b) = if c == 1 {
        (a, b)
    } else {
        (g.reshape(a, &[n * c, 1, h, w])?, g.reshape(b, &[n * c, 1, h, w])?)
    };
    let taps: Vec<T> = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(T::lit).collect();
    let row = g.constant(Tensor::new(vec![1, 1, 1, SSIM_WINDOW], taps.clone())?);
    let col = g.constant(Tensor::new(vec![1, 1, SSIM_WINDOW, 1], taps)?);
    let c1 = T::lit((SSIM_K1 * dynamic_range).powi(2));
    let c2 = T::lit((SSIM_K2 * dynamic_range).powi(2));

    let mu_a = blur(g, a, row, col)?;
    let mu_b = blur(g, b, row, col)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = blur(g, aa, row, col)?;
    let e_bb = blur(g, bb, row, col)?;
    let e_ab = blur(g, ab, row, col)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let l_num = g.scalar_mul(mu_ab, T::lit(2.0))?;
    let l_num = g.add_scalar(l_num, c1)?;
    let l_den = g.add(mu_aa, mu_bb)?;
    let l_den = g.add_scalar(l_den, c1)?;
    let s_num = g.scalar_mul(cov, T::lit(2.0))?;
    let s_num = g.add_scalar(s_num, c2)?;
    let s_den = g.add(var_a, var_b)?;
    let s_den = g.add_scalar(s_den, c2)?;
    let num = g.mul(l_num, s_num)?;
    let den = g.mul(l_den, s_den)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

/// SSIM of two `H x W` images.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dynamic_range: f64) -> Result<f64> {
    let as4 = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match t.shape() {
            [h, w] => t.clone().reshape(&[1, 1, *h, *w]),
            [_, _, _, _] => Ok(t.clone()),
            s => Err(contract!("ssim expects an H x W image, got shape {s:?}")),
        }
    };
    let mut g = Graph::new();
    let av = g.constant(as4(a)?);
    let bv = g.constant(as4(b)?);
    let s = ssim_var(&mut g, av, bv, dynamic_range)?;
    Ok(g.value(s).item().as_f64())
}

/// Peak signal-to-noise ratio; identical inputs have no finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    /// Orders `Infinite` above every finite value.
    pub fn at_least(self, other: Psnr) -> bool {
        match (self, other) {
            (Psnr::Infinite, _) => true,
            (Psnr::Finite(_), Psnr::Infinite) => false,
            (Psnr::Finite(a), Psnr::Finite(b)) => a >= b,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure!(
        a.shape() == b.shape(),
        "shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(L^2 / MSE)`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dynamic_range: f64) -> Result<Psnr> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (dynamic_range * dynamic_range / m).log10())
    })
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
/// Zero when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    ensure!(x.len() == y.len(), "spearman: {} vs {} values", x.len(), y.len());
    ensure!(x.len() >= 2, "spearman needs at least two points");
    ensure!(
        x.iter().chain(y).all(|v| v.is_finite()),
        "spearman: values must be finite"
    );
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Area under the ROC curve via the normalized Mann-Whitney statistic;
/// tied scores contribute one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    ensure!(
        scores.len() == labels.len(),
        "auroc: {} scores for {} labels",
        scores.len(),
        labels.len()
    );
    ensure!(
        scores.iter().all(|s| s.is_finite()),
        "auroc: scores must be finite"
    );
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    ensure!(
        n_pos > 0 && n_neg > 0,
        "auroc needs both classes, got {n_pos} positives and {n_neg} negatives"
    );
    let ranks = average_ranks(scores);
    let rank_sum_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn identical_images_score_one() {
        let x = random(16, 20, 1);
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_match_closed_form() {
        let (mx, my) = (0.5, 0.6);
        let a = Tensor::full(&[16, 16], mx);
        let b = Tensor::full(&[16, 16], my);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        assert!((ssim(&a, &b, 1.0).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn too_small_for_window() {
        let x = random(10, 16, 0);
        assert!(matches!(ssim(&x, &x, 1.0), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn noise_lowers_ssim() {
        let x = random(24, 24, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = x.map(|v| v + rng.random_range(-0.17..0.17));
        let s = ssim(&x, &y, 1.0).unwrap();
        assert!(s < 1.0 && s > -1.0);
    }

    #[test]
    fn ssim_gradcheck_smallest_window() {
        for seed in 0..3 {
            let a = random(12, 12, seed).reshape(&[1, 1, 12, 12]).unwrap();
            let b = random(12, 12, seed + 100).reshape(&[1, 1, 12, 12]).unwrap();
            let r = gradcheck::check(&[a, b], |g, v| ssim_var(g, v[0], v[1], 1.0), 1e-5, 144).unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    #[test]
    fn psnr_of_constant_offset() {
        let a = Tensor::full(&[8, 8], 0.3);
        let b = Tensor::full(&[8, 8], 0.4);
        let p = psnr(&a, &b, 1.0).unwrap().db().unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr::Infinite);
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let a = random(9, 7, 5);
        let b = random(9, 7, 6);
        let mut acc = 0.0;
        for i in 0..63 {
            let d = a.data()[i] - b.data()[i];
            acc += d * d;
        }
        let want = 10.0 * (1.0 / (acc / 63.0)).log10();
        let got = psnr(&a, &b, 1.0).unwrap().db().unwrap();
        assert!((got - want).abs() < 1e-10);
    }

    /// Pairwise brute force: P(score_pos > score_neg) + 0.5 P(tie).
    fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        let scores = [0.9, 0.7, 0.4, 0.6, 0.3, 0.1];
        let labels = [true, true, true, false, false, false];
        let want = auroc_pairs(&scores, &labels);
        assert!((want - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(auroc(&scores, &labels).unwrap(), want);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    proptest! {
        #[test]
        fn auroc_equals_pairwise_count(
            data in proptest::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let got = auroc(&scores, &labels).unwrap();
            prop_assert!((got - auroc_pairs(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn ssim_is_symmetric_and_bounded(seed in 0u64..1000) {
            let a = random(13, 15, seed);
            let b = random(13, 15, seed ^ 0xdead);
            let ab = ssim(&a, &b, 1.0).unwrap();
            let ba = ssim(&b, &a, 1.0).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab.abs() <= 1.0);
        }
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(spearman(&[1.0, 1.0], &[2.0, 3.0]).unwrap(), 0.0);
        // ranks x = [1, 2.5, 2.5, 4], y = [1, 3, 2, 4]: centered cross sum 4.5, squares 4.5 and 5
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-15);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }
}
