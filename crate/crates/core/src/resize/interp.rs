//! Separable bilinear interpolation with half-pixel centers and edge clamping.

use crate::autodiff::{Graph, Var};
use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-axis source taps: output index `d` reads `lo[d]` and `hi[d]` blended by `frac[d]`.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

impl<T: Scalar> AxisTaps<T> {
    pub(crate) fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let max = (src - 1) as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for d in 0..dst {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor();
            lo.push(i0 as usize);
            hi.push((i0 as usize + 1).min(src - 1));
            frac.push(T::lit(s - i0));
        }
        Self { lo, hi, frac }
    }

    fn len(&self) -> usize {
        self.lo.len()
    }
}

/// Precomputed taps for one `(H, W) -> (H', W')` resize.
#[derive(Clone, Debug)]
pub(crate) struct ResizeTaps<T> {
    src: (usize, usize),
    rows: AxisTaps<T>,
    cols: AxisTaps<T>,
}

impl<T: Scalar> ResizeTaps<T> {
    pub(crate) fn new(src: (usize, usize), dst: (usize, usize)) -> Self {
        Self {
            src,
            rows: AxisTaps::new(src.0, dst.0),
            cols: AxisTaps::new(src.1, dst.1),
        }
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4().expect("resize input is rank 4");
        debug_assert_eq!((h, w), self.src);
        let (ho, wo) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in x.data().chunks(h * w) {
            for y in 0..ho {
                let r0 = &plane[self.rows.lo[y] * w..(self.rows.lo[y] + 1) * w];
                let r1 = &plane[self.rows.hi[y] * w..(self.rows.hi[y] + 1) * w];
                let wy = self.rows.frac[y];
                for xi in 0..wo {
                    let (a, b, wx) = (self.cols.lo[xi], self.cols.hi[xi], self.cols.frac[xi]);
                    let top = r0[a] + wx * (r0[b] - r0[a]);
                    let bot = r1[a] + wx * (r1[b] - r1[a]);
                    out.push(top + wy * (bot - top));
                }
            }
        }
        Tensor::new(vec![n, c, ho, wo], out).expect("resize output shape")
    }

    pub(crate) fn backward(&self, dout: &Tensor<T>) -> Tensor<T> {
        let (n, c, ho, wo) = dout.dims4().expect("resize grad is rank 4");
        let (h, w) = self.src;
        let mut dx = vec![T::zero(); n * c * h * w];
        for (plane, gplane) in dx.chunks_mut(h * w).zip(dout.data().chunks(ho * wo)) {
            for y in 0..ho {
                let (y0, y1, wy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
                for xi in 0..wo {
                    let g = gplane[y * wo + xi];
                    let (x0, x1, wx) = (self.cols.lo[xi], self.cols.hi[xi], self.cols.frac[xi]);
                    let top = g * (T::one() - wy);
                    let bot = g * wy;
                    plane[y0 * w + x0] += top * (T::one() - wx);
                    plane[y0 * w + x1] += top * wx;
                    plane[y1 * w + x0] += bot * (T::one() - wx);
                    plane[y1 * w + x1] += bot * wx;
                }
            }
        }
        Tensor::new(vec![n, c, h, w], dx).expect("resize grad shape")
    }
}

/// Differentiable bilinear resize of a `[N, C, H, W]` tensor to `target = (H', W')`.
///
/// Source coordinate for output index `d` is `(d + 0.5) * S_src / S_dst - 0.5`,
/// clamped to `[0, S_src - 1]`, so resizing to the same size is an exact identity.
pub fn interp_resize<T: Scalar>(g: &mut Graph<T>, x: Var, target: (usize, usize)) -> Result<Var> {
    g.resize_bilinear(x, target)
}

/// Non-recording convenience wrapper around [`interp_resize`].
pub fn resize_tensor<T: Scalar>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    ensure!(
        target.0 >= 1 && target.1 >= 1,
        "resize target must be at least 1x1, got {target:?}"
    );
    Ok(ResizeTaps::new((h, w), target).forward(x))
}
