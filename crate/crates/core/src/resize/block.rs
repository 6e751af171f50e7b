//! Learnable variable-resizing block.

use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::Conv2d;
use crate::params::{ParamStore, Session};
use crate::scalar::Scalar;
use rand::Rng;

/// Leaky-rectifier slope inside the residual path.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Bilinear resize plus a learned residual:
/// `resize(x) + post(resize(pre2(leaky(pre1(x)))))`.
///
/// All convolutions preserve the channel count, so the parameter count
/// does not depend on the resize factor.
#[derive(Clone, Debug)]
pub struct ResizeBlock {
    pub pre1: Conv2d,
    pub pre2: Conv2d,
    pub post: Conv2d,
}

impl ResizeBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            pre1: Conv2d::new(store, rng, &format!("{name}.pre1"), channels, channels, 3)?,
            pre2: Conv2d::new(store, rng, &format!("{name}.pre2"), channels, channels, 3)?,
            post: Conv2d::new(store, rng, &format!("{name}.post"), channels, channels, 3)?,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, target: (usize, usize)) -> Result<Var> {
        let skip = s.graph.resize_bilinear(x, target)?;
        let h = self.pre1.forward(s, x)?;
        let h = s.graph.leaky_relu(h, T::lit(LEAKY_SLOPE))?;
        let h = self.pre2.forward(s, h)?;
        let h = s.graph.resize_bilinear(h, target)?;
        let h = self.post.forward(s, h)?;
        s.graph.add(skip, h)
    }
}

/// Functional form of [`ResizeBlock::forward`].
pub fn learnable_resize_block<T: Scalar>(
    s: &mut Session<'_, T>,
    x: Var,
    target: (usize, usize),
    params: &ResizeBlock,
) -> Result<Var> {
    params.forward(s, x, target)
}
