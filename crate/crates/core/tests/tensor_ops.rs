use hmaflow::gradcheck::{gradcheck, random_projection};
use hmaflow::{ConvSpec, Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so the kinks of relu/abs are never crossed.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn check(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) {
    let n: usize = inputs.iter().map(Tensor::numel).sum();
    assert!(n <= 1024, "{name}: {n} elements is too many to check");
    let report = gradcheck(inputs, STEP, |a| random_projection(&f(a)?, 11)).unwrap();
    assert!(report.passes(TOL), "{name}: {report:?}");
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[3, 4]);
    let nz = away_from_zero(&mut rng, &[3, 4]);
    check("add", &[a.clone(), b.clone()], |x| x[0].add(&x[1]));
    check("sub", &[a.clone(), b.clone()], |x| x[0].sub(&x[1]));
    check("mul", &[a.clone(), b.clone()], |x| x[0].mul(&x[1]));
    check("scale", std::slice::from_ref(&a), |x| Ok(x[0].scale(-2.5)));
    check("neg", std::slice::from_ref(&a), |x| Ok(x[0].neg()));
    check("tanh", std::slice::from_ref(&a), |x| Ok(x[0].tanh()));
    check("sigmoid", std::slice::from_ref(&a), |x| Ok(x[0].sigmoid()));
    check("gelu", std::slice::from_ref(&a), |x| Ok(x[0].gelu()));
    check("exp", std::slice::from_ref(&a), |x| Ok(x[0].exp()));
    check("square", std::slice::from_ref(&a), |x| Ok(x[0].square()));
    check("relu", std::slice::from_ref(&nz), |x| Ok(x[0].relu()));
    check("abs", &[nz], |x| Ok(x[0].abs()));
    check("mean", &[a], |x| Ok(x[0].mean()));
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 1, 4]);
    check("reshape", std::slice::from_ref(&a), |x| x[0].reshape(&[6, 4]));
    check("permute", std::slice::from_ref(&a), |x| x[0].permute(&[2, 0, 1]));
    check("concat", &[a.clone(), b.clone()], |x| {
        Tensor::concat(&[x[0].clone(), x[1].clone()], 1)
    });
    check("narrow", &[a], |x| x[0].narrow(2, 1, 2));
    check("expand", &[b], |x| x[0].expand(&[3, 2, 5, 4]));
    check("upsample_nearest", &[rand_tensor(&mut rng, &[1, 2, 3, 3])], |x| {
        x[0].upsample_nearest(2)
    });
}

#[test]
fn matmul_and_linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 4, 5]);
    let bt = rand_tensor(&mut rng, &[2, 5, 4]);
    let at = rand_tensor(&mut rng, &[2, 4, 3]);
    let shared = rand_tensor(&mut rng, &[4, 5]);
    check("matmul", &[a.clone(), b.clone()], |x| x[0].matmul(&x[1]));
    check("matmul_nt", &[a.clone(), bt], |x| x[0].matmul_nt(&x[1]));
    check("matmul_tn", &[at, b], |x| x[0].matmul_tn(&x[1]));
    check("matmul shared rhs", &[a.clone(), shared], |x| x[0].matmul(&x[1]));
    let w = rand_tensor(&mut rng, &[6, 4]);
    let bias = rand_tensor(&mut rng, &[6]);
    check("linear", &[a, w, bias], |x| x[0].linear(&x[1], Some(&x[2])));
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = [
        ConvSpec::new(3, 4, (3, 3)).padding(1, 1),
        ConvSpec::new(3, 2, (3, 3)).stride(2).padding(1, 1),
        ConvSpec::new(3, 2, (1, 1)),
        ConvSpec::new(3, 2, (1, 5)).padding(0, 2),
        ConvSpec::depthwise(3, (2, 2)).stride(2),
        ConvSpec {
            groups: 3,
            in_per_group: 1,
            out_channels: 6,
            ..ConvSpec::new(1, 6, (3, 3))
        },
    ];
    for spec in cases {
        let x = rand_tensor(&mut rng, &[2, 3, 6, 5]);
        let w = rand_tensor(&mut rng, &spec.weight_shape());
        let b = rand_tensor(&mut rng, &[spec.out_channels]);
        check("conv2d", &[x, w, b], |t| t[0].conv2d(&spec, &t[1], Some(&t[2])));
    }
}

#[test]
fn small_conv_net_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s1 = ConvSpec::new(2, 3, (3, 3)).padding(1, 1);
    let s2 = ConvSpec::new(3, 2, (3, 3)).stride(2);
    let x = rand_tensor(&mut rng, &[1, 2, 7, 7]);
    let w1 = rand_tensor(&mut rng, &s1.weight_shape());
    let w2 = rand_tensor(&mut rng, &s2.weight_shape());
    check("conv net", &[x, w1, w2], |t| {
        let h = t[0].conv2d(&s1, &t[1], None)?.tanh();
        Ok(h.conv2d(&s2, &t[2], None)?.gelu().sum())
    });
}

#[test]
fn pool_norm_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    check("avg_pool2d", std::slice::from_ref(&x), |t| t[0].avg_pool2d(2, 2));
    // distinct values spaced far beyond the finite-difference step
    let mut vals: Vec<f64> = (0..96).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let distinct = Tensor::new(vals, &[2, 3, 4, 4]).unwrap();
    check("max_pool2d", &[distinct], |t| t[0].max_pool2d(2, 2));
    check("instance_norm", &[x], |t| t[0].instance_norm(1e-5));
    let rows = rand_tensor(&mut rng, &[5, 6]);
    let g = rand_tensor(&mut rng, &[6]);
    let b = rand_tensor(&mut rng, &[6]);
    check("layer_norm", &[rows.clone(), g, b], |t| t[0].layer_norm(&t[1], &t[2], 1e-5));
    check("softmax", &[rows], |t| Ok(t[0].softmax()));
}

#[test]
fn bilinear_gradients_wrt_grid_and_coords() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = rand_tensor(&mut rng, &[2, 3, 5, 6]);
    // fractional parts stay inside (0.1, 0.9); some points hang off the border
    let coords = Tensor::from_fn(&[2, 2, 7], |_| {
        rng.gen_range(-2i32..7) as f64 + rng.gen_range(0.1..0.9)
    });
    check("bilinear_sample", &[grid, coords], |t| t[0].bilinear_sample(&t[1]));
}

/// Explicit im2col followed by a triple-loop product.
fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, spec: &ConvSpec) -> Vec<f32> {
    let &[b, c, h, wd] = x.shape() else { panic!("rank") };
    let (kh, kw) = spec.kernel;
    let (oh, ow) = spec.output_hw(h, wd).unwrap();
    let rows = c * kh * kw;
    let mut out = vec![0.0f32; b * spec.out_channels * oh * ow];
    for bi in 0..b {
        let mut cols = vec![0.0f32; rows * oh * ow];
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let y = (oy * spec.stride.0 + i) as isize - spec.padding.0 as isize;
                            let xx = (ox * spec.stride.1 + j) as isize - spec.padding.1 as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                cols[((ci * kh + i) * kw + j) * oh * ow + oy * ow + ox] =
                                    x.at(&[bi, ci, y as usize, xx as usize]);
                            }
                        }
                    }
                }
            }
        }
        for k in 0..spec.out_channels {
            for p in 0..oh * ow {
                let mut acc = 0.0f32;
                for r in 0..rows {
                    acc += w.data()[k * rows + r] * cols[r * oh * ow + p];
                }
                out[(bi * spec.out_channels + k) * oh * ow + p] = acc;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_im2col_oracle(
        b in 1usize..=2, c in 1usize..=4, h in 3usize..=9, w in 3usize..=9,
        k in 1usize..=4, kh in 1usize..=3, kw in 1usize..=3,
        stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // dyadic values keep every partial sum exact in f32
        let mut dyadic = |shape: &[usize]| {
            Tensor::<f32>::from_fn(shape, |_| rng.gen_range(-16i32..=16) as f32 / 16.0)
        };
        let spec = ConvSpec::new(c, k, (kh, kw)).stride(stride).padding(pad, pad);
        let x = dyadic(&[b, c, h, w]);
        let wt = dyadic(&spec.weight_shape());
        let got = x.conv2d(&spec, &wt, None).unwrap();
        let want = conv_oracle(&x, &wt, &spec);
        prop_assert_eq!(got.numel(), want.len());
        for (g, e) in got.data().iter().zip(&want) {
            prop_assert!((g - e).abs() <= 1e-6, "{} vs {}", g, e);
        }
    }

    #[test]
    fn bilinear_integer_coords_index_exactly(h in 1usize..=6, w in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Tensor::<f32>::from_fn(&[1, 2, h, w], |_| rng.gen_range(-5.0..5.0));
        let pts: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
        let mut d: Vec<f32> = pts.iter().map(|p| p.0 as f32).collect();
        d.extend(pts.iter().map(|p| p.1 as f32));
        let coords = Tensor::new(d, &[1, 2, pts.len()]).unwrap();
        let out = grid.bilinear_sample(&coords).unwrap();
        for ch in 0..2 {
            for (n, &(x, y)) in pts.iter().enumerate() {
                prop_assert_eq!(out.at(&[0, ch, n]), grid.at(&[0, ch, y, x]));
            }
        }
    }

    #[test]
    fn softmax_rows_normalised_and_shift_invariant(
        rows in 1usize..5, cols in 1usize..9, shift in -50.0f32..50.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::from_fn(&[rows, cols], |_| rng.gen_range(-8.0..8.0));
        let y = x.softmax();
        for row in y.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let ys = x.add_scalar(shift).softmax();
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn finite_check_flags_nan() {
    let t = Tensor::<f32>::new(vec![1.0, f32::NAN], &[2]).unwrap();
    assert!(t.check_finite("t").is_err());
    assert!(Tensor::<f32>::ones(&[3]).check_finite("ones").is_ok());
}
