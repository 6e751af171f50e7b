//! Single-channel images tagged with their physical pixel spacing.

use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Physical size of one pixel along (rows, columns), in millimetres.
/// Smaller spacing means finer resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub y: f64,
    pub x: f64,
}

impl Spacing {
    pub const fn new(y: f64, x: f64) -> Self {
        Self { y, x }
    }

    pub const fn iso(v: f64) -> Self {
        Self { y: v, x: v }
    }

    pub fn scale(self, f: f64) -> Self {
        Self::new(self.y * f, self.x * f)
    }

    pub fn is_valid(self) -> bool {
        self.y.is_finite() && self.x.is_finite() && self.y > 0.0 && self.x > 0.0
    }

    /// True when no axis is finer than `other`.
    pub fn at_least(self, other: Spacing) -> bool {
        // relative slack absorbs rounding from size-derived spacings
        self.y >= other.y * (1.0 - 1e-9) && self.x >= other.x * (1.0 - 1e-9)
    }
}

impl fmt::Display for Spacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.y, self.x)
    }
}

impl FromStr for Spacing {
    type Err = String;

    /// `"2"` (isotropic) or `"2,1.5"` (rows, columns).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let sp = match parts[..] {
            [v] => Spacing::iso(v),
            [y, x] => Spacing::new(y, x),
            _ => return Err(format!("expected 1 or 2 comma-separated values, got {s:?}")),
        };
        if !sp.is_valid() {
            return Err(format!("spacing must be positive and finite, got {s:?}"));
        }
        Ok(sp)
    }
}

/// One image: a `[1, 1, H, W]` tensor plus its pixel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample<T> {
    pub pixels: Tensor<T>,
    pub spacing: Spacing,
}

impl<T: Scalar> ImageSample<T> {
    pub fn new(pixels: Tensor<T>, spacing: Spacing) -> Result<Self> {
        let (n, c, _, _) = pixels.dims4()?;
        ensure!(
            n == 1 && c == 1,
            "image sample must be [1, 1, H, W], got {:?}",
            pixels.shape()
        );
        ensure!(spacing.is_valid(), "invalid pixel spacing {spacing:?}");
        pixels.check_finite("image sample")?;
        Ok(Self { pixels, spacing })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.pixels.shape();
        (s[2], s[3])
    }

    /// Physical extent (rows, columns) in millimetres.
    pub fn extent(&self) -> (f64, f64) {
        let (h, w) = self.size();
        (h as f64 * self.spacing.y, w as f64 * self.spacing.x)
    }

    /// Row-major `H x W` view as a rank-2 tensor.
    pub fn plane(&self) -> Tensor<T> {
        let (h, w) = self.size();
        self.pixels.clone().reshape(&[h, w]).expect("plane reshape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_spacing() {
        assert_eq!("4,4".parse::<Spacing>().unwrap(), Spacing::iso(4.0));
        assert_eq!("2".parse::<Spacing>().unwrap(), Spacing::iso(2.0));
        assert_eq!("1.5, 2".parse::<Spacing>().unwrap(), Spacing::new(1.5, 2.0));
        assert!("0,1".parse::<Spacing>().is_err());
        assert!("1,2,3".parse::<Spacing>().is_err());
    }
}
