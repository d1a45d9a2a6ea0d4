use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Normalises each contiguous row of length `d`; returns normalised values
/// and per-row inverse standard deviations.
fn normalize_rows<T: Float>(x: &[T], d: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::lit(d as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(x.len() / d);
    for (row, out) in x.chunks_exact(d).zip(xhat.chunks_exact_mut(d)) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv.push(is);
    }
    (xhat, inv)
}

/// Backward of row normalisation given `dL/dxhat`.
fn normalize_rows_backward<T: Float>(gxhat: &[T], xhat: &[T], inv: &[T], d: usize) -> Vec<T> {
    let n = T::lit(d as f64);
    let mut gx = vec![T::zero(); gxhat.len()];
    for (((g, xh), out), &is) in gxhat
        .chunks_exact(d)
        .zip(xhat.chunks_exact(d))
        .zip(gx.chunks_exact_mut(d))
        .zip(inv)
    {
        let mg = g.iter().copied().sum::<T>() / n;
        let mgx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((o, &gv), &xv) in out.iter_mut().zip(g).zip(xh) {
            *o = is * (gv - mg - xv * mgx);
        }
    }
    gx
}

impl<T: Float> Tensor<T> {
    /// Normalises every `(b, c)` plane of `[B, C, H, W]` to zero mean and unit
    /// variance. No affine parameters.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor<T>> {
        self.expect_rank("instance_norm", 4)?;
        let d = self.dim(2) * self.dim(3);
        let (xhat, inv) = normalize_rows(self.data(), d, T::lit(eps));
        Ok(Tensor::from_op(
            "instance_norm",
            xhat,
            self.shape().to_vec(),
            vec![self.clone()],
            move |ctx| vec![Some(normalize_rows_backward(ctx.grad, ctx.output, &inv, d))],
        ))
    }

    /// Layer normalisation over the last axis with scale `gamma` and shift
    /// `beta`, both shaped `[D]`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = self.dim(-1);
        gamma.expect_shape("layer_norm", &[d])?;
        beta.expect_shape("layer_norm", &[d])?;
        let (xhat, inv) = normalize_rows(self.data(), d, T::lit(eps));
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(d) {
            for ((o, &gm), &bt) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
                *o = *o * gm + bt;
            }
        }
        Ok(Tensor::from_op(
            "layer_norm",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |ctx| {
                let gamma = ctx.parents[1].data();
                let g = ctx.grad;
                let gx = ctx.needs[0].then(|| {
                    let mut gxhat = g.to_vec();
                    for row in gxhat.chunks_exact_mut(d) {
                        for (v, &gm) in row.iter_mut().zip(gamma) {
                            *v *= gm;
                        }
                    }
                    normalize_rows_backward(&gxhat, &xhat, &inv, d)
                });
                let gg = ctx.needs[1].then(|| {
                    let mut acc = vec![T::zero(); d];
                    for (row, xh) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((a, &gv), &xv) in acc.iter_mut().zip(row).zip(xh) {
                            *a += gv * xv;
                        }
                    }
                    acc
                });
                let gb = ctx.needs[2].then(|| {
                    let mut acc = vec![T::zero(); d];
                    for row in g.chunks_exact(d) {
                        for (a, &gv) in acc.iter_mut().zip(row) {
                            *a += gv;
                        }
                    }
                    acc
                });
                vec![gx, gg, gb]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_norm_zero_mean_unit_variance() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 4], |i| ((i * 7919) % 31) as f64);
        let y = x.instance_norm(1e-5).unwrap();
        for plane in y.data().chunks_exact(16) {
            let mean: f64 = plane.iter().sum::<f64>() / 16.0;
            let var: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_applies_affine() {
        let x = Tensor::<f64>::new(vec![1.0, 3.0], &[1, 2]).unwrap();
        let g = Tensor::new(vec![2.0, 2.0], &[2]).unwrap();
        let b = Tensor::new(vec![0.5, 0.5], &[2]).unwrap();
        let y = x.layer_norm(&g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.5, 2.5]);
    }
}
