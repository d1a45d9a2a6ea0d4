//! Sequence loss over refinement predictions, endpoint error and the
//! outlier percentage.

use crate::error::{shape_err, Error, Result};
use crate::flow::FlowField;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Decay applied to earlier predictions, in `(0, 1]`.
    pub gamma: f64,
    /// Ground-truth vectors longer than this are left out of the loss.
    pub max_flow: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.8, max_flow: 400.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.max_flow.is_nan() || self.max_flow <= 0.0 {
            return Err(Error::InvalidArgument(format!("max_flow must be positive, got {}", self.max_flow)));
        }
        Ok(())
    }
}

/// All-valid mask `[B, 1, h, w]` matching a flow field.
pub fn full_mask<T: Float>(flow: &FlowField<T>) -> Tensor<T> {
    Tensor::ones(&[flow.batch(), 1, flow.height(), flow.width()])
}

fn check_pair<T: Float>(pred: &FlowField<T>, gt: &FlowField<T>, valid: &Tensor<T>, op: &'static str) -> Result<()> {
    if pred.tensor().shape() != gt.tensor().shape() {
        return Err(shape_err(op, format!("prediction {:?} vs ground truth {:?}", pred.tensor().shape(), gt.tensor().shape())));
    }
    if valid.shape() != [gt.batch(), 1, gt.height(), gt.width()] {
        return Err(shape_err(op, format!("valid mask {:?} for flow {:?}", valid.shape(), gt.tensor().shape())));
    }
    Ok(())
}

/// Per-pixel `(gt_u, gt_v, included)` in f64.
fn pixels<T: Float>(gt: &FlowField<T>, valid: &Tensor<T>, max_flow: f64) -> Vec<(f64, f64, bool)> {
    let (b, hw) = (gt.batch(), gt.height() * gt.width());
    let g = gt.tensor().data();
    let m = valid.data();
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    (0..b * hw)
        .map(|i| {
            let (bi, p) = (i / hw, i % hw);
            let (u, v) = (f(g[bi * 2 * hw + p]), f(g[(bi * 2 + 1) * hw + p]));
            (u, v, f(m[i]) > 0.5 && u.hypot(v) <= max_flow)
        })
        .collect()
}

/// `Σ_i γ^(N-i) · mean_valid(|Δu| + |Δv|)` over predictions `f_1 .. f_N`.
pub fn sequence_loss<T: Float>(
    preds: &[FlowField<T>],
    gt: &FlowField<T>,
    valid: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if preds.is_empty() {
        return Err(Error::InvalidArgument("sequence loss needs at least one prediction".into()));
    }
    for p in preds {
        check_pair(p, gt, valid, "sequence_loss")?;
    }
    let px = pixels(gt, valid, cfg.max_flow);
    let count = px.iter().filter(|p| p.2).count();
    if count == 0 {
        return Err(Error::InvalidArgument("valid mask selects no pixels".into()));
    }
    let hw = gt.height() * gt.width();
    let mask = Tensor::from_fn(gt.tensor().shape(), |i| {
        let (bi, p) = (i / (2 * hw), i % hw);
        if px[bi * hw + p].2 {
            T::one()
        } else {
            T::zero()
        }
    });
    let n = preds.len();
    let mut total: Option<Tensor<T>> = None;
    for (i, pred) in preds.iter().enumerate() {
        let weight = cfg.gamma.powi((n - 1 - i) as i32) / count as f64;
        let term = pred.tensor().sub(gt.tensor())?.abs().mul(&mask)?.sum().scale(T::lit(weight));
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.expect("at least one prediction"))
}

/// Endpoint errors of the included pixels.
fn endpoint_errors<T: Float>(pred: &FlowField<T>, gt: &FlowField<T>, valid: &Tensor<T>, op: &'static str) -> Result<Vec<(f64, f64)>> {
    check_pair(pred, gt, valid, op)?;
    let hw = gt.height() * gt.width();
    let p = pred.tensor().data();
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let out: Vec<(f64, f64)> = pixels(gt, valid, f64::INFINITY)
        .into_iter()
        .enumerate()
        .filter(|(_, px)| px.2)
        .map(|(i, (gu, gv, _))| {
            let (bi, k) = (i / hw, i % hw);
            let du = f(p[bi * 2 * hw + k]) - gu;
            let dv = f(p[(bi * 2 + 1) * hw + k]) - gv;
            (du.hypot(dv), gu.hypot(gv))
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidArgument("valid mask selects no pixels".into()));
    }
    Ok(out)
}

/// Mean Euclidean distance between predicted and true vectors.
pub fn epe<T: Float>(pred: &FlowField<T>, gt: &FlowField<T>, valid: &Tensor<T>) -> Result<f64> {
    let e = endpoint_errors(pred, gt, valid, "epe")?;
    Ok(e.iter().map(|x| x.0).sum::<f64>() / e.len() as f64)
}

/// Percentage of pixels whose endpoint error exceeds both 3 px and 5% of the
/// true vector length.
pub fn fl_all<T: Float>(pred: &FlowField<T>, gt: &FlowField<T>, valid: &Tensor<T>) -> Result<f64> {
    let e = endpoint_errors(pred, gt, valid, "fl_all")?;
    let outliers = e.iter().filter(|(err, mag)| *err > 3.0 && *err > 0.05 * mag).count();
    Ok(100.0 * outliers as f64 / e.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Resolution;

    fn field(u: &[f32], v: &[f32]) -> FlowField {
        let mut d = u.to_vec();
        d.extend_from_slice(v);
        FlowField::new(Tensor::new(d, &[1, 2, 1, u.len()]).unwrap(), Resolution::Full).unwrap()
    }

    #[test]
    fn epe_examples() {
        let gt = field(&[0.0], &[0.0]);
        let m = full_mask(&gt);
        assert_eq!(epe(&field(&[3.0], &[4.0]), &gt, &m).unwrap(), 5.0);
        assert_eq!(epe(&gt, &gt, &m).unwrap(), 0.0);
        let gt2 = field(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(epe(&field(&[0.0, 6.0], &[0.0, 8.0]), &gt2, &full_mask(&gt2)).unwrap(), 5.0);
    }

    #[test]
    fn fl_all_uses_both_thresholds() {
        let gt = field(&[200.0], &[0.0]);
        let m = full_mask(&gt);
        assert_eq!(fl_all(&field(&[205.0], &[0.0]), &gt, &m).unwrap(), 0.0);
        let gt = field(&[10.0], &[0.0]);
        assert_eq!(fl_all(&field(&[15.0], &[0.0]), &gt, &m).unwrap(), 100.0);
        assert_eq!(fl_all(&gt, &gt, &m).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_and_empty_sequence_are_errors() {
        let gt = field(&[1.0], &[1.0]);
        let none = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(epe(&gt, &gt, &none).is_err());
        assert!(fl_all(&gt, &gt, &none).is_err());
        assert!(sequence_loss(&[], &gt, &full_mask(&gt), &LossConfig::default()).is_err());
        assert!(sequence_loss(std::slice::from_ref(&gt), &gt, &none, &LossConfig::default()).is_err());
    }

    #[test]
    fn two_term_loss_weights() {
        let gt = field(&[0.0, 0.0], &[0.0, 0.0]);
        let m = full_mask(&gt);
        let f1 = field(&[1.0, -1.0], &[2.0, 0.0]); // mean L1 = (3 + 1) / 2 = 2
        let f2 = field(&[0.5, 0.0], &[0.0, 0.5]); // mean L1 = 0.5
        let l = sequence_loss(&[f1, f2], &gt, &m, &LossConfig::default()).unwrap();
        assert!((l.item().unwrap() - (0.8 * 2.0 + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn large_ground_truth_is_excluded_from_loss() {
        let gt = field(&[0.0, 500.0], &[0.0, 0.0]);
        let pred = field(&[1.0, 0.0], &[0.0, 0.0]);
        let l = sequence_loss(&[pred], &gt, &full_mask(&gt), &LossConfig::default()).unwrap();
        assert_eq!(l.item().unwrap(), 1.0);
    }
}
