//! Desk-scale training: AdamW with global-norm clipping, warmup plus cosine
//! learning-rate schedule, and an overfit loop on a single pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::io::SyntheticPair;
use crate::metrics::{epe, sequence_loss, LossConfig};
use crate::model::{HmaFlow, TRAIN_ITERS};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Refinement iterations per forward pass.
    pub iters: usize,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    pub clip: f64,
    /// Fraction of the steps spent in linear warmup.
    pub warmup: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 2e-4,
            iters: TRAIN_ITERS,
            weight_decay: 1e-5,
            clip: 1.0,
            warmup: 0.05,
            loss: LossConfig::default(),
        }
    }
}

/// Learning rate at `step` (0-based): linear ramp to `base` then cosine
/// decay to zero at `total`.
pub fn lr_at(step: usize, total: usize, base: f64, warmup: f64) -> f64 {
    let warm = ((total as f64 * warmup).round() as usize).max(1);
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1) as f64;
    let t = ((step - warm) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Decoupled-weight-decay Adam. Weight decay is applied to tensors of rank
/// two and above only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, moments: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Vec<f32>>, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get(name)?;
            if g.len() != p.numel() {
                return Err(Error::InvalidArgument(format!("gradient for `{name}` has the wrong length")));
            }
            let decay = if p.ndim() >= 2 { self.weight_decay } else { 0.0 };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let mut data = p.to_vec();
            for i in 0..data.len() {
                let gi = g[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + self.eps) + decay * data[i] as f64;
                data[i] = (data[i] as f64 - lr * update) as f32;
            }
            let shape = p.shape().to_vec();
            params.insert(name.clone(), Tensor::new(data, &shape)?);
        }
        Ok(())
    }
}

/// Scales the gradients in place so their joint L2 norm is at most `max`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f32>>, max: f64) -> f64 {
    let norm = grads.values().flatten().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
    if norm > max {
        let s = (max / norm) as f32;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Summary written by the overfit command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub steps: usize,
    pub final_loss: f64,
    /// EPE of the last refinement iteration, full resolution.
    pub final_epe: f64,
    /// EPE after every refinement iteration of the final evaluation.
    pub per_iter_epe: Vec<f64>,
}

/// Loss and per-iteration predictions on one pair, without gradients.
pub fn evaluate(
    model: &HmaFlow,
    params: &ParamStore<f32>,
    pair: &SyntheticPair,
    iters: usize,
    loss: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let (i1, i2) = pair.batched()?;
    let preds = model.forward(params, &i1, &i2, iters, None)?.predictions;
    let l = sequence_loss(&preds, &pair.gt_flow, &pair.valid, loss)?.item()? as f64;
    let epes = preds.iter().map(|p| epe(p, &pair.gt_flow, &pair.valid)).collect::<Result<_>>()?;
    Ok((l, epes))
}

/// One forward/backward pass; returns the loss and per-parameter gradients.
pub fn loss_and_grads(
    model: &HmaFlow,
    params: &ParamStore<f32>,
    i1: &Tensor<f32>,
    i2: &Tensor<f32>,
    gt: &FlowField,
    valid: &Tensor<f32>,
    cfg: &TrainConfig,
) -> Result<(f64, BTreeMap<String, Vec<f32>>)> {
    let tracked = params.tracked();
    let preds = model.forward(&tracked, i1, i2, cfg.iters, None)?.predictions;
    let loss = sequence_loss(&preds, gt, valid, &cfg.loss)?;
    drop(preds);
    loss.backward()?;
    let value = loss.item()? as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = tracked
        .iter()
        .filter_map(|(name, t)| t.grad().map(|g| (name.to_string(), g)))
        .collect();
    Ok((value, grads))
}

/// Trains `params` on a single pair for `cfg.steps` steps. `progress` sees
/// the step index and that step's loss.
pub fn overfit(
    model: &HmaFlow,
    params: &mut ParamStore<f32>,
    pair: &SyntheticPair,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<OverfitReport> {
    cfg.loss.validate()?;
    if cfg.iters == 0 {
        return Err(Error::InvalidArgument("at least one refinement iteration is required".into()));
    }
    let (i1, i2) = pair.batched()?;
    let mut opt = AdamW::new(cfg.weight_decay);
    for step in 0..cfg.steps {
        let (loss, mut grads) = loss_and_grads(model, params, &i1, &i2, &pair.gt_flow, &pair.valid, cfg)?;
        clip_grad_norm(&mut grads, cfg.clip);
        opt.step(params, &grads, lr_at(step, cfg.steps, cfg.lr, cfg.warmup))?;
        progress(step, loss);
    }
    let (final_loss, per_iter_epe) = evaluate(model, params, pair, cfg.iters, &cfg.loss)?;
    Ok(OverfitReport {
        steps: cfg.steps,
        final_loss,
        final_epe: *per_iter_epe.last().expect("iters >= 1"),
        per_iter_epe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let lrs: Vec<f64> = (0..100).map(|s| lr_at(s, 100, 1.0, 0.05)).collect();
        assert!((lrs[0] - 0.2).abs() < 1e-12);
        assert!((lrs[4] - 1.0).abs() < 1e-12);
        assert!(lrs[5..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[99] < 1e-3);
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1.0f32, -1.0], &[2]).unwrap());
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), vec![0.5f32, -2.0]);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut p, &g, 0.1).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![3.0f32, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-6);
    }
}
