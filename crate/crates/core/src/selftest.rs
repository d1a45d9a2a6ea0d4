//! Checks runnable from the command line: shapes of a full forward pass,
//! fast kernels against direct loops, analytic gradients against finite
//! differences and the metrics on hand-worked cases.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost_volume::{build_base_volume, multi_scale_search, search_window, Level, MotionVolume, SearchRadii};
use crate::csa::Csa;
use crate::error::Result;
use crate::flow::{FlowField, Resolution};
use crate::gradcheck::{gradcheck, random_projection};
use crate::hma::{AlignedCostVolume, Alignment, Hma, ALIGNED_DIM};
use crate::io::flo;
use crate::metrics::{epe, fl_all, full_mask, sequence_loss, LossConfig};
use crate::model::{HmaFlow, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Tensor};
use crate::updater::convex_upsample;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const GRAD_TOL: f64 = 1e-5;

fn record(out: &mut Vec<Check>, suite: &'static str, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) {
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    out.push(Check { suite, name, passed, detail });
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn shape_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let model = match HmaFlow::new(ModelConfig::default()) {
        Ok(m) => m,
        Err(e) => {
            out.push(Check { suite: "shape", name: "model", passed: false, detail: e.to_string() });
            return out;
        }
    };
    let p = model.init_params(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let i1 = uniform(&[1, 3, 64, 64], -1.0, 1.0, &mut rng).cast::<f32>();
    let i2 = uniform(&[1, 3, 64, 64], -1.0, 1.0, &mut rng).cast::<f32>();

    record(&mut out, "shape", "features 384 at 1/4 and 1/8", || {
        let f = model.encode_features(&p, &i1, &i2)?;
        let ok = f.f1_quarter.shape() == [1, 384, 16, 16] && f.f2_eighth.shape() == [1, 384, 8, 8];
        Ok((ok, format!("{:?} {:?}", f.f1_quarter.shape(), f.f2_eighth.shape())))
    });
    record(&mut out, "shape", "context 128 + 128", || {
        let c = model.encode_context(&p, &i1)?;
        let ok = c.hidden_init.shape() == [1, 128, 8, 8] && c.context.shape() == [1, 128, 8, 8];
        let h = c.hidden_init.data().iter().all(|v| v.abs() <= 1.0);
        Ok((ok && h, format!("{:?}", c.context.shape())))
    });
    record(&mut out, "shape", "motion volumes 980 channels", || {
        let f = model.encode_features(&p, &i1, &i2)?;
        let zero = FlowField::zeros(1, 8, 8, Resolution::Eighth);
        let vq = build_base_volume(&f.f1_quarter, &f.f2_quarter, Level::Quarter)?;
        let ve = build_base_volume(&f.f1_eighth, &f.f2_eighth, Level::Eighth)?;
        let mq = multi_scale_search(&vq, &zero, model.radii())?;
        let me = multi_scale_search(&ve, &zero, model.radii())?;
        let a = model.hma().align_and_fuse(&p, &mq, &me)?;
        let ok = mq.data.shape() == [1, 980, 16, 16]
            && me.data.shape() == [1, 980, 8, 8]
            && a.data.shape() == [1, ALIGNED_DIM, 8, 8];
        Ok((ok, format!("{:?} -> {:?}", mq.data.shape(), a.data.shape())))
    });
    record(&mut out, "shape", "two iterations give two full-size predictions", || {
        let t = model.forward(&p, &i1, &i2, 2, None)?;
        let ok = t.predictions.len() == 2
            && t.predictions.iter().all(|f| f.tensor().shape() == [1, 2, 64, 64] && f.resolution() == Resolution::Full);
        t.predictions[1].tensor().check_finite("prediction")?;
        Ok((ok, format!("{} x {:?}", t.predictions.len(), t.predictions[0].tensor().shape())))
    });
    out
}

pub fn oracle_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (d, h, w) = (8, 4, 5);
    let f1 = uniform(&[1, d, h, w], -1.0, 1.0, &mut rng);
    let f2 = uniform(&[1, d, h, w], -1.0, 1.0, &mut rng);

    record(&mut out, "oracle", "base volume vs inner-product loop", || {
        let vol = build_base_volume(&f1, &f2, Level::Eighth)?;
        let mut worst = 0.0f64;
        for i in 0..h {
            for j in 0..w {
                for m in 0..h {
                    for n in 0..w {
                        let dot: f64 = (0..d).map(|c| f1.at(&[0, c, i, j]) * f2.at(&[0, c, m, n])).sum();
                        worst = worst.max((dot / (d as f64).sqrt() - vol.get(0, i, j, m, n)).abs());
                    }
                }
            }
        }
        Ok((worst < 1e-12, format!("max diff {worst:.2e}")))
    });
    record(&mut out, "oracle", "window search vs scalar bilinear", || {
        let vol = build_base_volume(&f1, &f2, Level::Eighth)?;
        let radii = SearchRadii::new(&[1, 2])?;
        let flow = FlowField::new(uniform(&[1, 2, h, w], -1.5, 1.5, &mut rng), Resolution::Eighth)?;
        let mv = multi_scale_search(&vol, &flow, &radii)?;
        let mut worst = 0.0f64;
        for i in 0..h {
            for j in 0..w {
                let centre = (j as f64 + flow.at(0, i, j).0, i as f64 + flow.at(0, i, j).1);
                let mut expected = Vec::new();
                for &r in radii.as_slice() {
                    expected.extend(search_window(&vol, 0, (i, j), centre, r)?);
                }
                let got: Vec<f64> = (0..radii.channels()).map(|k| mv.data.at(&[0, k, i, j])).collect();
                worst = worst.max(max_abs_diff(&got, &expected));
            }
        }
        Ok((worst < 1e-12, format!("max diff {worst:.2e}")))
    });
    record(&mut out, "oracle", "convex upsample of constant flow", || {
        let flow = FlowField::constant(1, 2, 3, (1.0f64, -2.0), Resolution::Eighth);
        let mask = uniform(&[1, 576, 2, 3], -2.0, 2.0, &mut rng);
        let up = convex_upsample(&flow, &mask)?;
        let hw = 16 * 24;
        let d = up.tensor().data();
        let worst = (0..hw).fold(0.0f64, |m, k| m.max((d[k] - 8.0).abs()).max((d[hw + k] + 16.0).abs()));
        Ok((worst < 1e-12, format!("max diff {worst:.2e}")))
    });
    record(&mut out, "oracle", ".flo encode/decode", || {
        let f = FlowField::new(uniform(&[1, 2, 3, 4], -9.0, 9.0, &mut rng).cast::<f32>(), Resolution::Full)?;
        let bytes = flo::encode(&f)?;
        let back = flo::decode(&bytes, Path::new("<memory>"))?;
        let ok = bytes.len() == 12 + 4 * 24 && back.tensor().data() == f.tensor().data();
        Ok((ok, format!("{} bytes", bytes.len())))
    });
    out
}

pub fn gradient_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    record(&mut out, "gradient", "window search w.r.t. volume", || {
        let f1 = uniform(&[1, 4, 2, 3], -1.0, 1.0, &mut rng);
        let f2 = uniform(&[1, 4, 2, 3], -1.0, 1.0, &mut rng);
        let flow = FlowField::new(
            Tensor::from_fn(&[1, 2, 2, 3], |_| rng.gen_range(0.1..0.9) * if rng.gen() { 1.0 } else { -1.0 }),
            Resolution::Eighth,
        )?;
        let radii = SearchRadii::new(&[1])?;
        let g = gradcheck(&[f1, f2], 1e-5, |x| {
            let vol = build_base_volume(&x[0], &x[1], Level::Eighth)?;
            random_projection(&multi_scale_search(&vol, &flow, &radii)?.data, 7)
        })?;
        Ok((g.passes(GRAD_TOL), format!("max rel {:.1e} over {}", g.max_rel_error, g.checked)))
    });
    record(&mut out, "gradient", "alignment and fusion", || {
        let hma = Hma::new(9, Alignment::Conv2x2, true);
        let p: ParamStore<f64> = ParamStore::<f32>::init(&hma.specs(), 4).cast();
        let radii = SearchRadii::new(&[1])?;
        let q = uniform(&[1, 9, 4, 4], -1.0, 1.0, &mut rng);
        let e = uniform(&[1, 9, 2, 2], -1.0, 1.0, &mut rng);
        let g = gradcheck(&[q, e], 1e-5, |x| {
            let mq = MotionVolume { level: Level::Quarter, data: x[0].clone(), radii: radii.clone() };
            let me = MotionVolume { level: Level::Eighth, data: x[1].clone(), radii: radii.clone() };
            random_projection(&hma.align_and_fuse(&p, &mq, &me)?.data.tanh(), 8)
        })?;
        Ok((g.passes(GRAD_TOL), format!("max rel {:.1e} over {}", g.max_rel_error, g.checked)))
    });
    record(&mut out, "gradient", "correlation self-attention", || {
        let csa = Csa::new(true, true, 4);
        let mut p: ParamStore<f64> = ParamStore::<f32>::init(&csa.specs(), 5).cast();
        p.insert("csa.pos_embed", uniform(&[4, ALIGNED_DIM], -0.1, 0.1, &mut rng));
        let lift = uniform(&[ALIGNED_DIM, 8, 1, 1], -0.3, 0.3, &mut rng);
        let x = uniform(&[1, 8, 2, 2], -1.0, 1.0, &mut rng);
        let g = gradcheck(&[x], 1e-5, |x| {
            let vol = AlignedCostVolume { data: x[0].conv2d(&ConvSpec::new(8, ALIGNED_DIM, (1, 1)), &lift, None)? };
            random_projection(&csa.forward(&p, &vol)?.data, 9)
        })?;
        Ok((g.passes(GRAD_TOL), format!("max rel {:.1e} over {}", g.max_rel_error, g.checked)))
    });
    record(&mut out, "gradient", "convex upsample", || {
        let f = uniform(&[1, 2, 2, 2], -2.0, 2.0, &mut rng);
        let m = uniform(&[1, 576, 2, 2], -1.0, 1.0, &mut rng);
        let g = gradcheck(&[f, m], 1e-5, |x| {
            let flow = FlowField::new(x[0].clone(), Resolution::Eighth)?;
            random_projection(convex_upsample(&flow, &x[1])?.tensor(), 10)
        })?;
        Ok((g.passes(GRAD_TOL), format!("max rel {:.1e} over {}", g.max_rel_error, g.checked)))
    });
    record(&mut out, "gradient", "sequence loss", || {
        let gt = FlowField::new(uniform(&[1, 2, 3, 3], -2.0, 2.0, &mut rng), Resolution::Full)?;
        // keep every residual well away from the kink of |x|
        let preds: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                let g = gt.tensor().data().to_vec();
                Tensor::new(
                    g.iter().map(|v| v + rng.gen_range(0.2..1.0) * if rng.gen() { 1.0 } else { -1.0 }).collect(),
                    gt.tensor().shape(),
                )
                .expect("same shape")
            })
            .collect();
        let valid = full_mask(&gt);
        let g = gradcheck(&preds, 1e-5, |x| {
            let fields = x.iter().map(|t| FlowField::new(t.clone(), Resolution::Full)).collect::<Result<Vec<_>>>()?;
            sequence_loss(&fields, &gt, &valid, &LossConfig::default())
        })?;
        Ok((g.passes(GRAD_TOL), format!("max rel {:.1e} over {}", g.max_rel_error, g.checked)))
    });
    out
}

pub fn metric_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let field = |u: &[f64], v: &[f64]| -> Result<FlowField<f64>> {
        let mut d = u.to_vec();
        d.extend_from_slice(v);
        FlowField::new(Tensor::new(d, &[1, 2, 1, u.len()])?, Resolution::Full)
    };
    record(&mut out, "metric", "epe of a 3-4-5 error", || {
        let gt = field(&[0.0], &[0.0])?;
        let e = epe(&field(&[3.0], &[4.0])?, &gt, &full_mask(&gt))?;
        Ok((e == 5.0, format!("{e}")))
    });
    record(&mut out, "metric", "fl-all needs both thresholds", || {
        let gt = field(&[200.0, 10.0], &[0.0, 0.0])?;
        let pred = field(&[205.0, 15.0], &[0.0, 0.0])?;
        let f = fl_all(&pred, &gt, &full_mask(&gt))?;
        Ok((f == 50.0, format!("{f}%")))
    });
    record(&mut out, "metric", "two-prediction sequence loss", || {
        let gt = field(&[0.0, 0.0], &[0.0, 0.0])?;
        let f1 = field(&[1.0, -1.0], &[2.0, 0.0])?;
        let f2 = field(&[0.5, 0.0], &[0.0, 0.5])?;
        let l = sequence_loss(&[f1, f2], &gt, &full_mask(&gt), &LossConfig::default())?.item()?;
        Ok(((l - 2.1).abs() < 1e-12, format!("{l}")))
    });
    out
}

/// Every suite in order.
pub fn run_all() -> Vec<Check> {
    let mut v = shape_checks();
    v.extend(oracle_checks());
    v.extend(gradient_checks());
    v.extend(metric_checks());
    v
}
