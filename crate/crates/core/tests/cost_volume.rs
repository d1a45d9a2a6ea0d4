use hmaflow::cost_volume::{build_base_volume, lookup_centroids, multi_scale_search, Level};
use hmaflow::{FlowField, Resolution, SearchRadii, Tensor};
use proptest::prelude::*;

fn feats(b: usize, d: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
    Tensor::from_fn(&[b, d, h, w], |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 2001) as f64 / 1000.0 - 1.0
    })
}

/// Zero-padded bilinear read of one response plane, written independently
/// of the library's sampler.
fn naive_sample(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let px = |xi: i64, yi: i64| {
        if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let top = px(x0, y0) + ax * (px(x0 + 1, y0) - px(x0, y0));
    let bottom = px(x0, y0 + 1) + ax * (px(x0 + 1, y0 + 1) - px(x0, y0 + 1));
    top + ay * (bottom - top)
}

fn brute_volume(f1: &Tensor<f64>, f2: &Tensor<f64>) -> Vec<f64> {
    let &[_, d, h, w] = f1.shape() else { panic!() };
    let mut out = Vec::with_capacity(h * w * h * w);
    for i in 0..h {
        for j in 0..w {
            for m in 0..h {
                for n in 0..w {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += f1.at(&[0, c, i, j]) * f2.at(&[0, c, m, n]);
                    }
                    out.push(acc / (d as f64).sqrt());
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn base_volume_matches_triple_loop(h in 1usize..=6, w in 1usize..=8, seed in any::<u64>()) {
        let f1 = feats(1, 8, h, w, seed);
        let f2 = feats(1, 8, h, w, seed ^ 1);
        let vol = build_base_volume(&f1, &f2, Level::Eighth).unwrap();
        prop_assert_eq!(vol.data.shape(), &[h * w, 1, h, w][..]);
        for (a, b) in vol.data.data().iter().zip(brute_volume(&f1, &f2)) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn swapping_frames_transposes_the_volume(h in 1usize..=4, w in 1usize..=5, seed in any::<u64>()) {
        let f1 = feats(1, 8, h, w, seed);
        let f2 = feats(1, 8, h, w, seed ^ 7);
        let a = build_base_volume(&f1, &f2, Level::Eighth).unwrap();
        let b = build_base_volume(&f2, &f1, Level::Eighth).unwrap();
        for i in 0..h { for j in 0..w { for m in 0..h { for n in 0..w {
            prop_assert!((a.get(0, i, j, m, n) - b.get(0, m, n, i, j)).abs() < 1e-12);
        }}}}
    }

    #[test]
    fn search_matches_per_offset_loop(
        h in 1usize..=4,
        w in 1usize..=5,
        seed in any::<u64>(),
        flow_seed in any::<u64>(),
        r1 in 1usize..=2,
        r2 in 1usize..=3,
    ) {
        let f1 = feats(1, 8, h, w, seed);
        let f2 = feats(1, 8, h, w, seed ^ 3);
        let vol = build_base_volume(&f1, &f2, Level::Eighth).unwrap();
        let flow = FlowField::new(feats(1, 2, h, w, flow_seed).scale(2.5), Resolution::Eighth).unwrap();
        let radii = SearchRadii::new(&[r1, r2]).unwrap();
        let mv = multi_scale_search(&vol, &flow, &radii).unwrap();
        prop_assert_eq!(mv.data.shape(), &[1, radii.channels(), h, w][..]);
        let brute = brute_volume(&f1, &f2);
        for i in 0..h {
            for j in 0..w {
                let plane = &brute[(i * w + j) * h * w..][..h * w];
                let (u, v) = flow.at(0, i, j);
                let mut k = 0;
                for r in [r1 as i64, r2 as i64] {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let want = naive_sample(plane, h, w, j as f64 + u + dx as f64, i as f64 + v + dy as f64);
                            prop_assert!((mv.data.at(&[0, k, i, j]) - want).abs() < 1e-5);
                            k += 1;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn integer_flow_shifts_the_window(shift_x in -2i64..=2, shift_y in -2i64..=2, seed in any::<u64>()) {
        let (h, w) = (5, 6);
        let f1 = feats(1, 8, h, w, seed);
        let f2 = feats(1, 8, h, w, !seed);
        let vol = build_base_volume(&f1, &f2, Level::Eighth).unwrap();
        let radii = SearchRadii::new(&[4]).unwrap();
        let zero = multi_scale_search(&vol, &FlowField::zeros(1, h, w, Resolution::Eighth), &radii).unwrap();
        let moved = FlowField::constant(1, h, w, (shift_x as f64, shift_y as f64), Resolution::Eighth);
        let shifted = multi_scale_search(&vol, &moved, &radii).unwrap();
        let offsets = radii.offsets();
        for (k, &(dx, dy)) in offsets.iter().enumerate() {
            let (tx, ty) = (dx as i64 + shift_x, dy as i64 + shift_y);
            if let Some(k0) = offsets.iter().position(|&o| o == (tx as isize, ty as isize)) {
                for i in 0..h { for j in 0..w {
                    prop_assert!((shifted.data.at(&[0, k, i, j]) - zero.data.at(&[0, k0, i, j])).abs() < 1e-12);
                }}
            }
        }
    }
}

#[test]
fn blocks_follow_radius_order_with_dy_outer() {
    let radii = SearchRadii::new(&[1, 2]).unwrap();
    let o = radii.offsets();
    assert_eq!(o.len(), 9 + 25);
    assert_eq!(&o[..4], &[(-1, -1), (0, -1), (1, -1), (-1, 0)]);
    assert_eq!(o[4], (0, 0));
    assert_eq!(o[9], (-2, -2));
    assert_eq!(o[10], (-1, -2));
    assert_eq!(o[33], (2, 2));
}

#[test]
fn channel_count_is_sum_of_squared_window_widths() {
    for radii in [vec![4, 6, 8, 10], vec![1], vec![3, 5], vec![2, 2, 2]] {
        let expected: usize = radii.iter().map(|r| (2 * r + 1) * (2 * r + 1)).sum();
        assert_eq!(SearchRadii::new(&radii).unwrap().channels(), expected);
    }
    assert_eq!(SearchRadii::default().channels(), 980);
}

#[test]
fn linear_response_is_sampled_exactly() {
    // a response plane that is affine in (x, y) is reproduced exactly by
    // bilinear interpolation wherever all four neighbours are inside
    let (h, w) = (12, 12);
    let mut data = Vec::new();
    for _ in 0..h * w {
        for y in 0..h {
            for x in 0..w {
                data.push(0.5 * x as f64 - 0.25 * y as f64 + 3.0);
            }
        }
    }
    let vol = hmaflow::BaseCostVolume {
        level: Level::Eighth,
        data: Tensor::new(data, &[h * w, 1, h, w]).unwrap(),
        batch: 1,
        height: h,
        width: w,
        scale: 1.0,
    };
    let flow = FlowField::constant(1, h, w, (0.3, -0.6), Resolution::Eighth);
    let radii = SearchRadii::new(&[4]).unwrap();
    let mv = multi_scale_search(&vol, &flow, &radii).unwrap();
    let (i, j) = (6, 5);
    for (k, (dx, dy)) in radii.offsets().into_iter().enumerate() {
        let (x, y) = (j as f64 + 0.3 + dx as f64, i as f64 - 0.6 + dy as f64);
        if x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64 {
            assert!((mv.data.at(&[0, k, i, j]) - (0.5 * x - 0.25 * y + 3.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn quarter_centroids_double_the_parent_flow() {
    let flow = FlowField::new(Tensor::new(vec![1.5f64, -0.5, 2.0, 0.25], &[1, 2, 1, 2]).unwrap(), Resolution::Eighth)
        .unwrap();
    let c = lookup_centroids(&flow, Level::Quarter).unwrap();
    assert_eq!(c.shape(), &[1, 2, 2, 4]);
    // pixel (y=1, x=3) has parent (0, 1): x = 3 + 2 * -0.5, y = 1 + 2 * 0.25
    assert_eq!(c.at(&[0, 0, 1, 3]), 2.0);
    assert_eq!(c.at(&[0, 1, 1, 3]), 1.5);
    let e = lookup_centroids(&flow, Level::Eighth).unwrap();
    assert_eq!(e.at(&[0, 0, 0, 1]), 0.5);
}
