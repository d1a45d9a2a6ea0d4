//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative discrepancy over all checked elements.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the largest discrepancy.
    pub worst: (usize, usize),
    /// Number of elements perturbed.
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the gradient of the scalar `f(inputs)` with central differences
/// of step `step` for every element of every input.
///
/// The relative error of element `i` is `|a - n| / max(|a|, |n|, s)`, where
/// `s` is `1e-3` times the largest numerical gradient magnitude of that
/// input; the floor keeps exactly-zero gradients from dividing by noise.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad_()).collect();
    let loss = f(&tracked)?;
    if loss.numel() != 1 {
        return Err(shape_err("gradcheck", "function must return a scalar"));
    }
    loss.backward()?;

    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for (which, input) in inputs.iter().enumerate() {
        let analytic = tracked[which].grad().unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = input.to_vec();
                data[i] += delta;
                let mut args: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
                args[which] = Tensor::new(data, input.shape())?;
                f(&args)?.item()
            };
            numeric.push((eval(step)? - eval(-step)?) / (2.0 * step));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 1e-3 * scale + 1e-12;
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (which, i);
            }
        }
        report.checked += input.numel();
    }
    Ok(report)
}

/// Reduces any tensor to a scalar by a fixed pseudo-random projection, so
/// that gradient checks see a well-conditioned, non-symmetric loss.
pub fn random_projection(t: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let weights = Tensor::from_fn(t.shape(), |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    });
    Ok(t.mul(&weights)?.sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // exp has a correct backward, so gradcheck passes
        let x = Tensor::new(vec![0.1, -0.4, 0.9], &[3]).unwrap();
        let ok = gradcheck(std::slice::from_ref(&x), 1e-4, |a| Ok(a[0].exp().sum())).unwrap();
        assert!(ok.passes(1e-7), "{ok:?}");
        // detaching mid-graph drops the gradient, which the check must notice
        let bad = gradcheck(&[x], 1e-4, |a| a[0].detach().exp().sum().add(&a[0].sum())).unwrap();
        assert!(!bad.passes(1e-2));
    }
}
