use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Float, MatLayout, Tensor};

fn layout(transposed: bool) -> MatLayout {
    if transposed {
        MatLayout::Transposed
    } else {
        MatLayout::Normal
    }
}

impl<T: Float> Tensor<T> {
    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`. The
    /// right operand may also be a plain `[k, n]` matrix shared by every
    /// batch entry.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(other, false, false)
    }

    /// `self x otherᵀ` where `other` is stored as `[.., n, k]`.
    pub fn matmul_nt(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(other, false, true)
    }

    /// `selfᵀ x other` where `self` is stored as `[.., k, m]`.
    pub fn matmul_tn(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(other, true, false)
    }

    fn matmul_impl(&self, other: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
        if self.ndim() < 2 || other.ndim() < 2 {
            return Err(shape_err("matmul", "operands must be at least 2-D"));
        }
        let (ra, rb) = (self.ndim(), other.ndim());
        let (a0, a1) = (self.shape()[ra - 2], self.shape()[ra - 1]);
        let (b0, b1) = (other.shape()[rb - 2], other.shape()[rb - 1]);
        let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
        let (kb, n) = if tb { (b1, b0) } else { (b0, b1) };
        let batch_shape = &self.shape()[..ra - 2];
        let shared_rhs = rb == 2;
        if k != kb || (!shared_rhs && &other.shape()[..rb - 2] != batch_shape) {
            return Err(shape_err(
                "matmul",
                format!(
                    "{:?}{} x {:?}{}",
                    self.shape(),
                    if ta { "ᵀ" } else { "" },
                    other.shape(),
                    if tb { "ᵀ" } else { "" }
                ),
            ));
        }
        let batch: usize = batch_shape.iter().product();
        let (sa, sb, sc) = (m * k, k * n, m * n);
        let mut out = vec![T::zero(); batch * sc];
        for i in 0..batch {
            let bo = if shared_rhs { 0 } else { i * sb };
            gemm(
                m,
                k,
                n,
                &self.data()[i * sa..(i + 1) * sa],
                layout(ta),
                &other.data()[bo..bo + sb],
                layout(tb),
                &mut out[i * sc..(i + 1) * sc],
                false,
            );
        }
        let mut shape = batch_shape.to_vec();
        shape.extend([m, n]);
        Ok(Tensor::from_op(
            "matmul",
            out,
            shape,
            vec![self.clone(), other.clone()],
            move |ctx| {
                let (a, b) = (ctx.parents[0].data(), ctx.parents[1].data());
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![T::zero(); batch * sa];
                    for i in 0..batch {
                        let bo = if shared_rhs { 0 } else { i * sb };
                        let bm = &b[bo..bo + sb];
                        let gc = &ctx.grad[i * sc..(i + 1) * sc];
                        let dst = &mut ga[i * sa..(i + 1) * sa];
                        if ta {
                            // stored [k, m] = op(B) [k, n] x dCᵀ [n, m]
                            gemm(k, n, m, bm, layout(tb), gc, MatLayout::Transposed, dst, false);
                        } else {
                            // [m, k] = dC [m, n] x op(B)ᵀ [n, k]
                            gemm(m, n, k, gc, MatLayout::Normal, bm, layout(!tb), dst, false);
                        }
                    }
                    ga
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![T::zero(); if shared_rhs { sb } else { batch * sb }];
                    for i in 0..batch {
                        let am = &a[i * sa..(i + 1) * sa];
                        let gc = &ctx.grad[i * sc..(i + 1) * sc];
                        let bo = if shared_rhs { 0 } else { i * sb };
                        let dst = &mut gb[bo..bo + sb];
                        let acc = shared_rhs && i > 0;
                        if tb {
                            // stored [n, k] = dCᵀ [n, m] x op(A) [m, k]
                            gemm(n, m, k, gc, MatLayout::Transposed, am, layout(ta), dst, acc);
                        } else {
                            // [k, n] = op(A)ᵀ [k, m] x dC [m, n]
                            gemm(k, m, n, am, layout(!ta), gc, MatLayout::Normal, dst, acc);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Affine map over the last axis: `x [.., in] -> x wᵀ + b`, with
    /// `w: [out, in]` and `b: [out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        weight.expect_rank("linear", 2)?;
        let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
        if self.ndim() == 0 || self.dim(-1) != in_f {
            return Err(shape_err(
                "linear",
                format!("input {:?} vs weight {:?}", self.shape(), weight.shape()),
            ));
        }
        if let Some(b) = bias {
            b.expect_shape("linear", &[out_f])?;
        }
        let rows = self.numel() / in_f;
        let mut out = vec![T::zero(); rows * out_f];
        gemm(rows, in_f, out_f, self.data(), MatLayout::Normal, weight.data(), MatLayout::Transposed, &mut out, false);
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(out_f) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op("linear", out, shape, parents, move |ctx| {
            let (x, w) = (ctx.parents[0].data(), ctx.parents[1].data());
            let g = ctx.grad;
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![T::zero(); rows * in_f];
                gemm(rows, out_f, in_f, g, MatLayout::Normal, w, MatLayout::Normal, &mut gx, false);
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let mut gw = vec![T::zero(); out_f * in_f];
                gemm(out_f, rows, in_f, g, MatLayout::Transposed, x, MatLayout::Normal, &mut gw, false);
                gw
            });
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let mut gb = vec![T::zero(); out_f];
                    for row in g.chunks_exact(out_f) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    gb
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64 * 0.5 - 1.0);
        let b = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i % 5) as f64);
        let c = a.matmul(&b).unwrap();
        let at = a.permute(&[0, 2, 1]).unwrap();
        let bt = b.permute(&[0, 2, 1]).unwrap();
        assert_eq!(at.matmul_tn(&b).unwrap().data(), c.data());
        assert_eq!(a.matmul_nt(&bt).unwrap().data(), c.data());
        // direct check of one entry
        let v: f64 = (0..3).map(|k| a.at(&[1, 0, k]) * b.at(&[1, k, 2])).sum();
        assert_eq!(c.at(&[1, 0, 2]), v);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        assert!(a.matmul(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn linear_matches_manual() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let w = Tensor::new(vec![1.0, 0.0, 1.0, 1.0, -1.0, 2.0], &[3, 2]).unwrap();
        let b = Tensor::new(vec![0.5, 0.0, 1.0], &[3]).unwrap();
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[1.5, 3.0, 4.0]);
    }
}
