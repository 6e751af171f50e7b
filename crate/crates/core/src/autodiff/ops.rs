//! Forward definitions of every recorded operation.

use super::conv::{self, ConvGeometry};
use super::{Graph, Op, Var};
use crate::error::{ensure, Result};
use crate::resize::interp::ResizeTaps;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self.value(a).zip_map(self.value(b), f)?;
        self.push(out, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a], "scalar_mul")
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), &[a], "add_scalar")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a), &[a], "exp")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.abs());
        self.push(out, Op::Abs(a), &[a], "abs")
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        ensure!(lo <= hi, "clamp: empty range");
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(out, Op::Clamp(a, lo, hi), &[a], "clamp")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        self.push(out, Op::LeakyRelu(a, slope), &[a], "leaky_relu")
    }

    /// `x * sigmoid(x)`
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x / (T::one() + (-x).exp()));
        self.push(out, Op::Silu(a), &[a], "silu")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a), &[a], "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    /// Stride-1 cross-correlation (no kernel flip) with symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4()?;
        ensure!(
            wcin == cin,
            "conv2d: input has {cin} channels but weight expects {wcin} (dimension 1)"
        );
        ensure!(
            kh % 2 == 1 && kw % 2 == 1,
            "conv2d: kernel extents must be odd, got {kh}x{kw}"
        );
        ensure!(
            h + 2 * padding >= kh && w + 2 * padding >= kw,
            "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
            h + 2 * padding,
            w + 2 * padding
        );
        if let Some(b) = bias {
            ensure!(
                self.shape(b) == [cout],
                "conv2d: bias shape {:?} does not match {cout} output channels",
                self.shape(b)
            );
        }
        let geom = ConvGeometry {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad: padding,
            ho: h + 2 * padding - kh + 1,
            wo: w + 2 * padding - kw + 1,
        };
        let out = conv::forward(
            &geom,
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
            "conv2d",
        )
    }

    /// Normalizes each group of `C / groups` channels over its channels and pixels,
    /// then applies a per-channel affine map.
    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        ensure!(
            groups >= 1 && c % groups == 0,
            "group_norm: {c} channels cannot be split into {groups} groups"
        );
        ensure!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            "group_norm: affine parameters must have shape [{c}]"
        );
        let x = self.value(input).data();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let per = (c / groups) * h * w;
        let count = T::from_usize(per).unwrap();
        let mut out = vec![T::zero(); x.len()];
        let mut stats = Vec::with_capacity(n * groups);
        for (gi, (xs, ys)) in x.chunks(per).zip(out.chunks_mut(per)).enumerate() {
            let mean = xs.iter().fold(T::zero(), |a, &v| a + v) / count;
            let var = xs.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
            let rstd = T::one() / (var + eps).sqrt();
            stats.push((mean, rstd));
            let c0 = (gi % groups) * (c / groups);
            for (j, (&xv, y)) in xs.iter().zip(ys.iter_mut()).enumerate() {
                let ch = c0 + j / (h * w);
                *y = (xv - mean) * rstd * gm[ch] + bt[ch];
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            out,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                stats,
            },
            &[input, gamma, beta],
            "group_norm",
        )
    }

    pub fn resize_bilinear(&mut self, input: Var, target: (usize, usize)) -> Result<Var> {
        let (_, _, h, w) = self.value(input).dims4()?;
        ensure!(
            target.0 >= 1 && target.1 >= 1,
            "resize target must be at least 1x1, got {target:?}"
        );
        let taps = Box::new(ResizeTaps::new((h, w), target));
        let out = taps.forward(self.value(input));
        self.push(out, Op::Resize { input, taps }, &[input], "resize")
    }

    /// `[N, C, H, W] -> [N, C, 1, 1]`
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let inv = T::one() / T::from_usize(h * w).unwrap();
        let data = self
            .value(a)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().fold(T::zero(), |s, &v| s + v) * inv)
            .collect();
        let out = Tensor::new(vec![n, c, 1, 1], data)?;
        self.push(out, Op::GlobalAvgPool(a), &[a], "global_avg_pool")
    }

    /// Mean softmax cross-entropy of `[N, K, ...]` logits (trailing unit axes allowed).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let n = x.shape()[0];
        ensure!(
            labels.len() == n,
            "cross_entropy: {} labels for batch of {n}",
            labels.len()
        );
        let k = x.numel() / n;
        ensure!(
            labels.iter().all(|&l| l < k),
            "cross_entropy: label out of range for {k} classes"
        );
        let mut probs = Vec::with_capacity(x.numel());
        let mut total = T::zero();
        for (row, &label) in x.data().chunks(k).zip(labels) {
            let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let z = row.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
            total += z.ln() + m - row[label];
            probs.extend(row.iter().map(|&v| (v - m).exp() / z));
        }
        let out = Tensor::scalar(total / T::from_usize(n).unwrap());
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
            "cross_entropy",
        )
    }
}

pub(super) fn group_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    groups: usize,
    stats: &[(T, T)],
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4().expect("group_norm input is rank 4");
    let hw = h * w;
    let per = (c / groups) * hw;
    let count = T::from_usize(per).unwrap();
    let gm = gamma.data();
    let mut dx = vec![T::zero(); x.numel()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for gi in 0..n * groups {
        let (mean, rstd) = stats[gi];
        let c0 = (gi % groups) * (c / groups);
        let span = gi * per..(gi + 1) * per;
        let xs = &x.data()[span.clone()];
        let gs = &dy.data()[span.clone()];
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..per {
            let ch = c0 + j / hw;
            let xhat = (xs[j] - mean) * rstd;
            let dxhat = gs[j] * gm[ch];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma[ch] += gs[j] * xhat;
            dbeta[ch] += gs[j];
        }
        let out = &mut dx[span];
        for j in 0..per {
            let ch = c0 + j / hw;
            let xhat = (xs[j] - mean) * rstd;
            let dxhat = gs[j] * gm[ch];
            out[j] = rstd / count * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    }
    (
        Tensor::new(vec![n, c, h, w], dx).unwrap(),
        Tensor::new(vec![c], dgamma).unwrap(),
        Tensor::new(vec![c], dbeta).unwrap(),
    )
}
