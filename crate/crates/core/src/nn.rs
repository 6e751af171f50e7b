//! Parameterized layers built on the autodiff graph.

use crate::error::Result;
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::autodiff::Var;
use rand::Rng;

/// Uniform fan-in initialization, bound `1 / sqrt(fan_in)`.
fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[cout, cin, kernel, kernel], fan_in),
        )?;
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[cout], fan_in))?;
        Ok(Self {
            weight,
            bias,
            padding: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.graph.conv2d(x, w, Some(b), self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

/// Channels per normalization group.
pub const CHANNELS_PER_GROUP: usize = 8;

impl GroupNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let groups = if channels % CHANNELS_PER_GROUP == 0 {
            channels / CHANNELS_PER_GROUP
        } else {
            1
        };
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            groups,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        s.graph.group_norm(x, g, b, self.groups, T::lit(1e-5))
    }
}

/// `conv3x3 -> group norm -> SiLU -> conv3x3`, plus an identity skip
/// (1x1 conv when the channel count changes).
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    norm: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), cin, cout, 3)?,
            norm: GroupNorm::new(store, &format!("{name}.norm"), cout)?,
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), cout, cout, 3)?,
            skip: if cin == cout {
                None
            } else {
                Some(Conv2d::new(store, rng, &format!("{name}.skip"), cin, cout, 1)?)
            },
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = self.norm.forward(s, h)?;
        let h = s.graph.silu(h)?;
        let h = self.conv2.forward(s, h)?;
        let skip = match &self.skip {
            Some(c) => c.forward(s, x)?,
            None => x,
        };
        s.graph.add(h, skip)
    }
}
