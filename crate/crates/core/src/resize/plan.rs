//! Per-layer size planning that pins the latent grid for any input resolution.

use crate::error::{contract, ensure, Result};
use crate::image::Spacing;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Encode,
    Decode,
}

/// Spatial sizes at every layer boundary of an `n`-layer encoder or decoder.
///
/// For an encode plan `layer_sizes[0]` is the image grid and
/// `layer_sizes[n]` the latent grid; a decode plan runs the other way.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResizePlan {
    pub direction: Direction,
    pub layer_sizes: Vec<(usize, usize)>,
    /// Real-valued per-layer factor `(latent_spacing / image_spacing)^(1/n)`, per axis.
    pub factor: (f64, f64),
}

impl ResizePlan {
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Realized per-layer scale factors (`>= 1` when shrinking toward the latent
    /// on encode or growing away from it on decode).
    pub fn per_layer_factors(&self) -> Vec<(f64, f64)> {
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (a, b) = match self.direction {
                    Direction::Encode => (w[0], w[1]),
                    Direction::Decode => (w[1], w[0]),
                };
                (a.0 as f64 / b.0 as f64, a.1 as f64 / b.1 as f64)
            })
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.layer_sizes.windows(2).all(|w| w[0] == w[1])
    }
}

/// Per-layer resampling factor for one axis: `(latent / image)^(1/n)`.
pub fn layer_factor(latent_spacing: f64, image_spacing: f64, n_layers: usize) -> f64 {
    (latent_spacing / image_spacing).powf(1.0 / n_layers as f64)
}

fn geometric_sizes(from: usize, to: usize, n: usize) -> Vec<usize> {
    let ratio = to as f64 / from as f64;
    (0..=n)
        .map(|k| {
            if k == n {
                to
            } else {
                (from as f64 * ratio.powf(k as f64 / n as f64)).round() as usize
            }
        })
        .collect()
}

/// Encode-direction plan from an image grid down to the latent grid.
pub fn compute_resize_plan(
    input_size: (usize, usize),
    input_res: Spacing,
    latent_size: (usize, usize),
    latent_res: Spacing,
    n_layers: usize,
) -> Result<ResizePlan> {
    ensure!(n_layers >= 1, "a resize plan needs at least one layer");
    ensure!(
        input_size.0 >= 1 && input_size.1 >= 1 && latent_size.0 >= 1 && latent_size.1 >= 1,
        "sizes must be positive: input {input_size:?}, latent {latent_size:?}"
    );
    ensure!(
        input_res.is_valid() && latent_res.is_valid(),
        "spacings must be positive: input {input_res:?}, latent {latent_res:?}"
    );
    ensure!(
        latent_res.at_least(input_res),
        "input spacing {input_res:?} is coarser than the latent spacing {latent_res:?}"
    );
    ensure!(
        latent_size.0 <= input_size.0 && latent_size.1 <= input_size.1,
        "latent grid {latent_size:?} is larger than the input grid {input_size:?}"
    );
    let rows = geometric_sizes(input_size.0, latent_size.0, n_layers);
    let cols = geometric_sizes(input_size.1, latent_size.1, n_layers);
    let layer_sizes: Vec<(usize, usize)> = rows.into_iter().zip(cols).collect();
    if let Some(k) = layer_sizes.iter().position(|&(h, w)| h == 0 || w == 0) {
        return Err(contract!(
            "layer {k} rounds to zero size; plan {layer_sizes:?}"
        ));
    }
    Ok(ResizePlan {
        direction: Direction::Encode,
        layer_sizes,
        factor: (
            layer_factor(latent_res.y, input_res.y, n_layers),
            layer_factor(latent_res.x, input_res.x, n_layers),
        ),
    })
}

/// Decode-direction plan from the latent grid up to a requested output grid.
pub fn compute_decode_plan(
    latent_size: (usize, usize),
    latent_res: Spacing,
    target_size: (usize, usize),
    target_res: Spacing,
    n_layers: usize,
) -> Result<ResizePlan> {
    let mut plan = compute_resize_plan(target_size, target_res, latent_size, latent_res, n_layers)?;
    plan.layer_sizes.reverse();
    plan.direction = Direction::Decode;
    Ok(plan)
}

/// Encode plan of a conventional encoder that halves every layer regardless
/// of the input spacing, so the latent grid shrinks with coarser inputs.
pub fn fixed_factor_plan(input_size: (usize, usize), n_layers: usize) -> Result<ResizePlan> {
    ensure!(n_layers >= 1, "a resize plan needs at least one layer");
    let halve = |s: usize, k: usize| ((s as f64 / 2f64.powi(k as i32)).round() as usize).max(1);
    Ok(ResizePlan {
        direction: Direction::Encode,
        layer_sizes: (0..=n_layers)
            .map(|k| (halve(input_size.0, k), halve(input_size.1, k)))
            .collect(),
        factor: (2.0, 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn factor_for_twice_coarser_input() {
        // latent 8 mm, image 2 mm, three layers
        let d = layer_factor(8.0, 2.0, 3);
        assert!((d - 4f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((d - 1.5874).abs() < 1e-3);
    }

    #[test]
    fn classical_factor_two() {
        assert!((layer_factor(8.0, 1.0, 3) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sizes_follow_rounded_geometric_schedule() {
        // oracle: round(64 * 0.25^(k/3)) = 64, 40.3, 25.4, 16
        let plan = compute_resize_plan((64, 64), Spacing::iso(2.0), (16, 16), Spacing::iso(8.0), 3).unwrap();
        let rows: Vec<usize> = plan.layer_sizes.iter().map(|s| s.0).collect();
        assert_eq!(rows, vec![64, 40, 25, 16]);
        assert_eq!(plan.direction, Direction::Encode);
    }

    #[test]
    fn decode_plan_is_reversed() {
        let plan = compute_decode_plan((16, 16), Spacing::iso(8.0), (64, 64), Spacing::iso(2.0), 3).unwrap();
        let rows: Vec<usize> = plan.layer_sizes.iter().map(|s| s.0).collect();
        assert_eq!(rows, vec![16, 25, 40, 64]);
        assert!(plan.per_layer_factors().iter().all(|f| f.0 > 1.0));
    }

    #[test]
    fn unit_factor_when_already_at_latent_resolution() {
        let plan = compute_resize_plan((16, 16), Spacing::iso(8.0), (16, 16), Spacing::iso(8.0), 3).unwrap();
        assert!(plan.is_identity());
        assert_eq!(plan.factor, (1.0, 1.0));
    }

    #[test]
    fn rejects_latent_larger_than_input() {
        let err = compute_resize_plan((8, 8), Spacing::iso(8.0), (16, 16), Spacing::iso(8.0), 3);
        assert!(matches!(err, Err(crate::Error::Contract(_))));
        let err = compute_resize_plan((64, 64), Spacing::iso(16.0), (16, 16), Spacing::iso(8.0), 3);
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn last_layer_is_exactly_the_latent_grid(h in 16usize..=128, w in 16usize..=128, n in 1usize..=4) {
            let plan = compute_resize_plan((h, w), Spacing::iso(1.0), (16, 16), Spacing::iso(8.0), n).unwrap();
            prop_assert_eq!(plan.layer_sizes.len(), n + 1);
            prop_assert_eq!(plan.layer_sizes[0], (h, w));
            prop_assert_eq!(plan.layer_sizes[n], (16, 16));
            for pair in plan.layer_sizes.windows(2) {
                prop_assert!(pair[1].0 <= pair[0].0 && pair[1].1 <= pair[0].1);
            }
            // product of realized ratios telescopes to the overall ratio
            let prod: f64 = plan.per_layer_factors().iter().map(|f| f.0).product();
            prop_assert!((prod - h as f64 / 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_factor_halves() {
        let p = fixed_factor_plan((32, 64), 3).unwrap();
        assert_eq!(p.layer_sizes, vec![(32, 64), (16, 32), (8, 16), (4, 8)]);
    }
}
