//! im2col convolution kernels (stride 1, symmetric zero padding).

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], col: &mut [T]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], dx: &mut [T]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = ox as isize + kx as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let hw = g.ho * g.wo;
    let k = g.k();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hw]
    };
    for n in 0..g.n {
        let xn = &x.data()[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let on = &mut out[n * g.cout * hw..(n + 1) * g.cout * hw];
        if let Some(b) = bias {
            for (co, chunk) in on.chunks_mut(hw).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let cols: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(g, xn, &mut col);
            &col
        };
        T::gemm(
            g.cout,
            k,
            hw,
            T::one(),
            weight.data(),
            k as isize,
            1,
            cols,
            hw as isize,
            1,
            if bias.is_some() { T::one() } else { T::zero() },
            on,
            hw as isize,
            1,
        );
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out).expect("conv output shape")
}

/// Gradients with respect to (input, weight, bias); each is computed only when requested.
pub(crate) fn backward<T: Scalar>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    want: (bool, bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let hw = g.ho * g.wo;
    let k = g.k();
    let mut dx = want.0.then(|| vec![T::zero(); g.n * g.cin * g.h * g.w]);
    let mut dw = want.1.then(|| vec![T::zero(); g.cout * k]);
    let mut db = want.2.then(|| vec![T::zero(); g.cout]);
    let mut col = if g.pointwise() || !want.1 {
        Vec::new()
    } else {
        vec![T::zero(); k * hw]
    };
    let mut dcol = if want.0 && !g.pointwise() {
        vec![T::zero(); k * hw]
    } else {
        Vec::new()
    };
    for n in 0..g.n {
        let don = &dout.data()[n * g.cout * hw..(n + 1) * g.cout * hw];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in don.chunks(hw).enumerate() {
                db[co] += chunk.iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x.data()[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            let cols: &[T] = if g.pointwise() {
                xn
            } else {
                im2col(g, xn, &mut col);
                &col
            };
            T::gemm(
                g.cout,
                hw,
                k,
                T::one(),
                don,
                hw as isize,
                1,
                cols,
                1,
                hw as isize,
                T::one(),
                dw,
                k as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            if g.pointwise() {
                T::gemm(
                    k,
                    g.cout,
                    hw,
                    T::one(),
                    weight.data(),
                    1,
                    k as isize,
                    don,
                    hw as isize,
                    1,
                    T::one(),
                    dxn,
                    hw as isize,
                    1,
                );
            } else {
                T::gemm(
                    k,
                    g.cout,
                    hw,
                    T::one(),
                    weight.data(),
                    1,
                    k as isize,
                    don,
                    hw as isize,
                    1,
                    T::zero(),
                    &mut dcol,
                    hw as isize,
                    1,
                );
                col2im(g, &dcol, dxn);
            }
        }
    }
    let mk = |shape: Vec<usize>, d: Vec<T>| Tensor::new(shape, d).expect("conv grad shape");
    (
        dx.map(|d| mk(vec![g.n, g.cin, g.h, g.w], d)),
        dw.map(|d| mk(vec![g.cout, g.cin, g.kh, g.kw], d)),
        db.map(|d| mk(vec![g.cout], d)),
    )
}
