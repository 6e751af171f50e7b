use super::*;
use crate::gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for ops with a kink at 0.
fn random_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Direct six-loop cross-correlation used as an oracle for the im2col path.
fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let (ho, wo) = (h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1);
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    t(&[n, cout, ho, wo], &out)
}

#[test]
fn conv_scalar_kernel_doubles() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let w = g.constant(t(&[1, 1, 1, 1], &[2.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, w, Some(b), 0).unwrap();
    assert_eq!(g.value(y), &Tensor::full(&[1, 1, 3, 3], 2.0));
}

#[test]
fn conv_identity_kernel() {
    let mut g = Graph::new();
    let img = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
    let x = g.constant(img.clone());
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = g.constant(t(&[1, 1, 3, 3], &k));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, w, Some(b), 1).unwrap();
    assert_eq!(g.value(y), &img);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[2, 3, 8, 8], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    for pad in [0, 1, 2] {
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), pad).unwrap();
        let want = conv_reference(&x, &w, b.data(), pad);
        assert_eq!(g.shape(y), want.shape());
        assert!(g.value(y).max_abs_diff(&want) < 1e-12, "pad {pad}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::ones(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::ones(&[1, 3, 3, 3]));
    let err = g.conv2d(x, w, None, 1).unwrap_err().to_string();
    assert!(err.contains("dimension 1"), "{err}");
    let w = g.constant(Tensor::ones(&[1, 2, 2, 2]));
    assert!(g.conv2d(x, w, None, 1).is_err());
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let m = g.mean(x).unwrap();
    assert_eq!(g.value(m).item(), 2.5);
    let z = g.constant(Tensor::zeros(&[3]));
    let e = g.exp(z).unwrap();
    assert_eq!(g.value(e), &Tensor::ones(&[3]));
    let y = g.constant(Tensor::ones(&[3]));
    assert!(g.add(x, y).is_err());
}

#[test]
fn grad_of_mean_square() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1., 2.]), true);
    let sq = g.mul(x, x).unwrap();
    let l = g.mean(sq).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn grad_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[0.3, -2.0, 5.0]), true);
    let l = g.sum(x).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap(), &Tensor::ones(&[3]));
}

#[test]
fn grad_of_mse() {
    let xs = [0.5, -1.0, 2.0, 3.5];
    let ys = [1.0, 1.0, -1.0, 3.0];
    let mut g = Graph::new();
    let x = g.leaf(t(&[4], &xs), true);
    let y = g.constant(t(&[4], &ys));
    let d = g.sub(x, y).unwrap();
    let d2 = g.mul(d, d).unwrap();
    let l = g.mean(d2).unwrap();
    let grads = g.backward(l).unwrap();
    let want: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| 2.0 * (x - y) / 4.0).collect();
    assert_eq!(grads.get(x).unwrap().data(), &want[..]);
}

#[test]
fn gradients_accumulate_over_reuse() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, -3.0]), true);
    let a = g.scalar_mul(x, 2.0).unwrap();
    let b = g.add(a, x).unwrap();
    let l = g.sum(b).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::<f64>::ones(&[2]), true);
    assert!(matches!(g.backward(x), Err(crate::Error::Contract(_))));
}

#[test]
fn non_finite_values_are_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::full(&[2], 1000.0));
    assert!(g.exp(x).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::<f64>::ones(&[2]), true);
    let c = g.constant(Tensor::ones(&[2]));
    let y = g.mul(x, c).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(c).is_none());
    assert!(grads.get(x).is_some());
}

type OpCase = (&'static str, Vec<Vec<usize>>, bool, fn(&mut Graph<f64>, &[Var]) -> Result<Var>);

fn op_cases() -> Vec<OpCase> {
    fn sq_mean(g: &mut Graph<f64>, y: Var) -> Result<Var> {
        // a nonlinear reduction so every coordinate gets a distinct weight
        let w = g.constant(Tensor::from_fn(g.shape(y), |i| 0.3 + (i as f64 * 0.71).sin()));
        let z = g.mul(y, w)?;
        let z = g.mul(z, y)?;
        g.sum(z)
    }
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], false, |g, v| {
            let y = g.add(v[0], v[1])?;
            sq_mean(g, y)
        }),
        ("sub", vec![vec![3, 4], vec![3, 4]], false, |g, v| {
            let y = g.sub(v[0], v[1])?;
            sq_mean(g, y)
        }),
        ("mul", vec![vec![5], vec![5]], false, |g, v| {
            let y = g.mul(v[0], v[1])?;
            sq_mean(g, y)
        }),
        ("div", vec![vec![5], vec![5]], true, |g, v| {
            let y = g.div(v[0], v[1])?;
            sq_mean(g, y)
        }),
        ("scalar_mul", vec![vec![6]], false, |g, v| {
            let y = g.scalar_mul(v[0], -1.7)?;
            sq_mean(g, y)
        }),
        ("add_scalar", vec![vec![6]], false, |g, v| {
            let y = g.add_scalar(v[0], 0.4)?;
            sq_mean(g, y)
        }),
        ("exp", vec![vec![2, 3]], false, |g, v| {
            let y = g.exp(v[0])?;
            sq_mean(g, y)
        }),
        ("abs", vec![vec![7]], true, |g, v| {
            let y = g.abs(v[0])?;
            sq_mean(g, y)
        }),
        ("clamp", vec![vec![7]], true, |g, v| {
            // kinks at 0 and -2; off-zero inputs in (-1, 1) avoid both
            let y = g.clamp(v[0], -2.0, 0.0)?;
            sq_mean(g, y)
        }),
        ("leaky_relu", vec![vec![7]], true, |g, v| {
            let y = g.leaky_relu(v[0], 0.2)?;
            sq_mean(g, y)
        }),
        ("silu", vec![vec![7]], false, |g, v| {
            let y = g.silu(v[0])?;
            sq_mean(g, y)
        }),
        ("sum", vec![vec![4]], false, |g, v| {
            let s = g.sum(v[0])?;
            g.mul(s, s)
        }),
        ("mean", vec![vec![4]], false, |g, v| {
            let s = g.mean(v[0])?;
            g.mul(s, s)
        }),
        ("reshape", vec![vec![2, 3]], false, |g, v| {
            let y = g.reshape(v[0], &[3, 2])?;
            sq_mean(g, y)
        }),
        ("conv2d", vec![vec![2, 3, 5, 5], vec![2, 3, 3, 3], vec![2]], false, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1)?;
            sq_mean(g, y)
        }),
        ("conv2d_pointwise", vec![vec![2, 3, 4, 4], vec![4, 3, 1, 1], vec![4]], false, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 0)?;
            sq_mean(g, y)
        }),
        ("conv2d_rect", vec![vec![1, 1, 6, 8], vec![1, 1, 1, 5]], false, |g, v| {
            let y = g.conv2d(v[0], v[1], None, 0)?;
            sq_mean(g, y)
        }),
        ("group_norm", vec![vec![2, 4, 3, 3], vec![4], vec![4]], false, |g, v| {
            let y = g.group_norm(v[0], v[1], v[2], 2, 1e-5)?;
            sq_mean(g, y)
        }),
        ("resize_down", vec![vec![1, 2, 7, 6]], false, |g, v| {
            let y = g.resize_bilinear(v[0], (3, 4))?;
            sq_mean(g, y)
        }),
        ("resize_up", vec![vec![1, 1, 3, 4]], false, |g, v| {
            let y = g.resize_bilinear(v[0], (8, 7))?;
            sq_mean(g, y)
        }),
        ("global_avg_pool", vec![vec![2, 3, 3, 2]], false, |g, v| {
            let y = g.global_avg_pool(v[0])?;
            sq_mean(g, y)
        }),
        ("cross_entropy", vec![vec![4, 3, 1, 1]], false, |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2])),
    ]
}

#[test]
fn every_op_passes_gradcheck_over_twenty_seeds() {
    for (name, shapes, off_zero, f) in op_cases() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|s| {
                    if off_zero {
                        random_off_zero(s, &mut rng)
                    } else {
                        random(s, &mut rng)
                    }
                })
                .collect();
            let report = gradcheck::check(&inputs, f, 1e-5, 200).unwrap();
            assert!(report.passes(1e-4), "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(&[1, 2, 5, 5], &mut rng);
        let w0 = random(&[2, 2, 3, 3], &mut rng);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let f = |g: &mut Graph<f64>, x: Var, w: Var| -> Result<Var> {
            let y = g.conv2d(x, w, None, 1)?;
            let y = g.silu(y)?;
            g.mean(y)
        };
        let h = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
            let y = g.exp(x)?;
            g.sum(y)
        };
        let grad_of = |mode: u8| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone(), true);
            let w = g.leaf(w0.clone(), true);
            let fv = f(&mut g, x, w).unwrap();
            let hv = h(&mut g, x).unwrap();
            let loss = match mode {
                0 => fv,
                1 => hv,
                _ => {
                    let fa = g.scalar_mul(fv, a).unwrap();
                    let hb = g.scalar_mul(hv, b).unwrap();
                    g.add(fa, hb).unwrap()
                }
            };
            g.backward(loss).unwrap().get(x).unwrap().clone()
        };
        let (gf, gh, gc) = (grad_of(0), grad_of(1), grad_of(2));
        let combo = gf.zip_map(&gh, |p, q| a * p + b * q).unwrap();
        assert!(combo.max_abs_diff(&gc) < 1e-10);
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let x = g.leaf(random(&[2, 3, 6, 6], &mut rng), true);
        let w = g.leaf(random(&[3, 3, 3, 3], &mut rng), true);
        let y = g.conv2d(x, w, None, 1).unwrap();
        let y = g.resize_bilinear(y, (4, 5)).unwrap();
        let y = g.silu(y).unwrap();
        let l = g.mean(y).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).clone(), grads.get(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}
