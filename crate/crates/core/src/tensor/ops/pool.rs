use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tensor};

impl<T: Float> Tensor<T> {
    fn pool_geometry(&self, op: &'static str, k: usize, s: usize) -> Result<[usize; 6]> {
        self.expect_rank(op, 4)?;
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        if k == 0 || s == 0 || k > h || k > w {
            return Err(shape_err(op, format!("window {k} stride {s} on {h}x{w}")));
        }
        Ok([b, c, h, w, (h - k) / s + 1, (w - k) / s + 1])
    }

    /// Mean over `k x k` windows with stride `s`, no padding.
    pub fn avg_pool2d(&self, k: usize, s: usize) -> Result<Tensor<T>> {
        let [b, c, h, w, oh, ow] = self.pool_geometry("avg_pool2d", k, s)?;
        let norm = T::one() / T::lit((k * k) as f64);
        let x = self.data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for bc in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for i in 0..k {
                        for j in 0..k {
                            acc += x[(bc * h + oy * s + i) * w + ox * s + j];
                        }
                    }
                    out[(bc * oh + oy) * ow + ox] = acc * norm;
                }
            }
        }
        Ok(Tensor::from_op("avg_pool2d", out, vec![b, c, oh, ow], vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); b * c * h * w];
            for bc in 0..b * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = ctx.grad[(bc * oh + oy) * ow + ox] * norm;
                        for i in 0..k {
                            for j in 0..k {
                                g[(bc * h + oy * s + i) * w + ox * s + j] += gv;
                            }
                        }
                    }
                }
            }
            vec![Some(g)]
        }))
    }

    /// Max over `k x k` windows with stride `s`; ties resolve to the first
    /// element in row-major window order.
    pub fn max_pool2d(&self, k: usize, s: usize) -> Result<Tensor<T>> {
        let [b, c, h, w, oh, ow] = self.pool_geometry("max_pool2d", k, s)?;
        let x = self.data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for bc in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (T::neg_infinity(), 0);
                    for i in 0..k {
                        for j in 0..k {
                            let idx = (bc * h + oy * s + i) * w + ox * s + j;
                            if x[idx] > best.0 {
                                best = (x[idx], idx);
                            }
                        }
                    }
                    let o = (bc * oh + oy) * ow + ox;
                    out[o] = best.0;
                    argmax[o] = best.1;
                }
            }
        }
        let n_in = self.numel();
        Ok(Tensor::from_op("max_pool2d", out, vec![b, c, oh, ow], vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); n_in];
            for (&src, &gv) in argmax.iter().zip(ctx.grad) {
                g[src] += gv;
            }
            vec![Some(g)]
        }))
    }
}
