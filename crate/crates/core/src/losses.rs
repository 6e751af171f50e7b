//! Training objective: L1 reconstruction, SSIM-based perceptual term, KL
//! regularization and latent consistency.

use crate::autodiff::{Graph, Var};
use crate::error::{ensure, Result};
use crate::metrics::ssim_var;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_rec_l1: f64,
    pub w_perc: f64,
    pub w_kl: f64,
    pub w_latent: f64,
    /// Reserved for an adversarial term; must stay 0 (no discriminator exists).
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rec_l1: 1.0,
            w_perc: 0.5,
            w_kl: 1e-6,
            w_latent: 0.5,
            w_adv: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_rec_l1, self.w_perc, self.w_kl, self.w_latent, self.w_adv];
        ensure!(
            all.iter().all(|w| w.is_finite() && *w >= 0.0),
            "loss weights must be finite and non-negative: {self:?}"
        );
        ensure!(self.w_adv == 0.0, "adversarial loss is not implemented; w_adv must be 0");
        Ok(())
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Mean over elements of `-0.5 (1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_loss<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let t = g.add_scalar(logvar, T::one())?;
    let t = g.sub(t, mu2)?;
    let t = g.sub(t, var)?;
    let t = g.mean(t)?;
    g.scalar_mul(t, T::lit(-0.5))
}

/// L1 distance between the latent means of two encodings of one image.
pub fn latent_consistency_loss<T: Scalar>(g: &mut Graph<T>, hr_mu: Var, lr_mu: Var) -> Result<Var> {
    ensure!(
        g.shape(hr_mu) == g.shape(lr_mu),
        "latent shapes differ ({:?} vs {:?}); the fixed latent grid is broken",
        g.shape(hr_mu),
        g.shape(lr_mu)
    );
    l1_loss(g, hr_mu, lr_mu)
}

/// `1 - SSIM`, the perceptual substitute.
pub fn ssim_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, dynamic_range: f64) -> Result<Var> {
    let s = ssim_var(g, a, b, dynamic_range)?;
    let neg = g.scalar_mul(s, -T::one())?;
    g.add_scalar(neg, T::one())
}

/// Graph nodes of one training step's three reconstruction branches and
/// two latent posteriors.
#[derive(Clone, Copy, Debug)]
pub struct Branches {
    pub x_hr: Var,
    pub x_lr: Var,
    pub hr_to_hr: Var,
    pub lr_to_lr: Var,
    pub lr_to_hr: Var,
    pub hr_mu: Var,
    pub hr_logvar: Var,
    pub lr_mu: Var,
    pub lr_logvar: Var,
}

/// Unweighted loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub hr_hr_l1: f64,
    pub hr_hr_perc: f64,
    pub lr_lr_l1: f64,
    pub lr_lr_perc: f64,
    pub lr_hr_l1: f64,
    pub lr_hr_perc: f64,
    pub latent: f64,
    pub kl_hr: f64,
    pub kl_lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "hr_hr_l1,hr_hr_perc,lr_lr_l1,lr_lr_perc,lr_hr_l1,lr_hr_perc,latent,kl_hr,kl_lr,total";

    /// Weighted sum of the terms, independent of the graph that produced `total`.
    pub fn recompute_total(&self) -> f64 {
        let t = &self.terms;
        let w = &self.weights;
        w.w_rec_l1 * (t.hr_hr_l1 + t.lr_lr_l1 + t.lr_hr_l1)
            + w.w_perc * (t.hr_hr_perc + t.lr_lr_perc + t.lr_hr_perc)
            + w.w_latent * t.latent
            + w.w_kl * (t.kl_hr + t.kl_lr) / 2.0
    }

    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            t.hr_hr_l1,
            t.hr_hr_perc,
            t.lr_lr_l1,
            t.lr_lr_perc,
            t.lr_hr_l1,
            t.lr_hr_perc,
            t.latent,
            t.kl_hr,
            t.kl_lr,
            self.total
        )
    }
}

/// Accumulates `sum weight_i * term_i` on the graph and the matching report.
struct Accumulator<T> {
    total: Option<Var>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Accumulator<T> {
    fn add(&mut self, g: &mut Graph<T>, term: Var, weight: f64) -> Result<f64> {
        let value = g.value(term).item().as_f64();
        let scaled = g.scalar_mul(term, T::lit(weight))?;
        self.total = Some(match self.total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
        Ok(value)
    }
}

fn reconstruction<T: Scalar>(
    g: &mut Graph<T>,
    acc: &mut Accumulator<T>,
    out: Var,
    target: Var,
    w: &LossWeights,
    dynamic_range: f64,
) -> Result<(f64, f64)> {
    let l1 = l1_loss(g, out, target)?;
    let perc = ssim_loss(g, out, target, dynamic_range)?;
    Ok((acc.add(g, l1, w.w_rec_l1)?, acc.add(g, perc, w.w_perc)?))
}

/// Full objective over the HR->HR, LR->LR and LR->HR branches, latent
/// consistency and the averaged KL of both posteriors.
pub fn total_training_loss<T: Scalar>(
    g: &mut Graph<T>,
    b: &Branches,
    weights: &LossWeights,
    dynamic_range: f64,
) -> Result<(Var, LossReport)> {
    weights.validate()?;
    let mut acc = Accumulator {
        total: None,
        _marker: std::marker::PhantomData,
    };
    let mut terms = LossTerms::default();
    (terms.hr_hr_l1, terms.hr_hr_perc) = reconstruction(g, &mut acc, b.hr_to_hr, b.x_hr, weights, dynamic_range)?;
    (terms.lr_lr_l1, terms.lr_lr_perc) = reconstruction(g, &mut acc, b.lr_to_lr, b.x_lr, weights, dynamic_range)?;
    (terms.lr_hr_l1, terms.lr_hr_perc) = reconstruction(g, &mut acc, b.lr_to_hr, b.x_hr, weights, dynamic_range)?;
    let latent = latent_consistency_loss(g, b.hr_mu, b.lr_mu)?;
    terms.latent = acc.add(g, latent, weights.w_latent)?;
    let kl_hr = kl_loss(g, b.hr_mu, b.hr_logvar)?;
    terms.kl_hr = acc.add(g, kl_hr, weights.w_kl / 2.0)?;
    let kl_lr = kl_loss(g, b.lr_mu, b.lr_logvar)?;
    terms.kl_lr = acc.add(g, kl_lr, weights.w_kl / 2.0)?;
    let total = acc.total.expect("at least one term");
    let report = LossReport {
        terms,
        weights: *weights,
        total: g.value(total).item().as_f64(),
    };
    Ok((total, report))
}

/// Objective of a conventional autoencoder trained on the reference grid
/// only: HR reconstruction plus KL. Unused terms report as zero.
pub fn reference_only_loss<T: Scalar>(
    g: &mut Graph<T>,
    x_hr: Var,
    hr_to_hr: Var,
    hr_mu: Var,
    hr_logvar: Var,
    weights: &LossWeights,
    dynamic_range: f64,
) -> Result<(Var, LossReport)> {
    weights.validate()?;
    let mut acc = Accumulator {
        total: None,
        _marker: std::marker::PhantomData,
    };
    let mut terms = LossTerms::default();
    (terms.hr_hr_l1, terms.hr_hr_perc) = reconstruction(g, &mut acc, hr_to_hr, x_hr, weights, dynamic_range)?;
    let kl = kl_loss(g, hr_mu, hr_logvar)?;
    terms.kl_hr = acc.add(g, kl, weights.w_kl)?;
    let total = acc.total.expect("at least one term");
    let mut w = *weights;
    w.w_kl *= 2.0; // report convention averages two KL terms
    let report = LossReport {
        terms,
        weights: w,
        total: g.value(total).item().as_f64(),
    };
    Ok((total, report))
}
