use crate::error::{shape_err, Result};
use crate::tensor::{numel_of, Float, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Visits every index of `shape` in row-major order, passing the source
/// offset computed from `src_strides`.
fn for_each_offset(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel_of(shape);
    if n == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for flat in 0..n {
        f(flat, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= src_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

fn permute_data<T: Float>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let src = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let perm_strides: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
    let mut out = vec![T::zero(); data.len()];
    for_each_offset(&out_shape, &perm_strides, |flat, off| out[flat] = data[off]);
    out
}

impl<T: Float> Tensor<T> {
    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op_shared(
            "reshape",
            self.data_arc(),
            shape.to_vec(),
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.ndim();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err(
                "permute",
                format!("{axes:?} is not a permutation of rank {rank}"),
            ));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_data(self.data(), &shape, axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op("permute", out, out_shape, vec![self.clone()], move |ctx| {
            vec![Some(permute_data(ctx.grad, &grad_shape, &inverse))]
        }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(shape_err("concat", format!("axis {axis} >= rank {rank}")));
        }
        for p in parts {
            let ok = p.ndim() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &s) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&p.data()[o * s * inner..(o + 1) * s * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op("concat", out, shape, parts.to_vec(), move |ctx| {
            let mut grads: Vec<Option<Vec<T>>> = ctx
                .needs
                .iter()
                .zip(&sizes)
                .map(|(&n, &s)| n.then(|| Vec::with_capacity(outer * s * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (g, &s) in grads.iter_mut().zip(&sizes) {
                    if let Some(g) = g {
                        g.extend_from_slice(&ctx.grad[off..off + s * inner]);
                    }
                    off += s * inner;
                }
            }
            grads
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape()[axis] {
            return Err(shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let d = self.shape()[axis];
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let full = self.numel();
        Ok(Tensor::from_op("narrow", out, shape, vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); full];
            for o in 0..outer {
                let base = (o * d + start) * inner;
                g[base..base + len * inner]
                    .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        }))
    }

    /// Broadcasts size-1 (or missing leading) axes up to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let rank = shape.len();
        if rank < self.ndim() {
            return Err(shape_err("expand", format!("{:?} -> {shape:?}", self.shape())));
        }
        let pad = rank - self.ndim();
        let src_shape: Vec<usize> = std::iter::repeat(1)
            .take(pad)
            .chain(self.shape().iter().copied())
            .collect();
        let src = strides(&src_shape);
        let mut bstrides = vec![0; rank];
        for ax in 0..rank {
            if src_shape[ax] == shape[ax] {
                bstrides[ax] = src[ax];
            } else if src_shape[ax] != 1 {
                return Err(shape_err("expand", format!("{:?} -> {shape:?}", self.shape())));
            }
        }
        let data = self.data();
        let mut out = vec![T::zero(); numel_of(shape)];
        for_each_offset(shape, &bstrides, |flat, off| out[flat] = data[off]);
        let out_shape = shape.to_vec();
        let n_src = self.numel();
        Ok(Tensor::from_op("expand", out, shape.to_vec(), vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); n_src];
            for_each_offset(&out_shape, &bstrides, |flat, off| g[off] += ctx.grad[flat]);
            vec![Some(g)]
        }))
    }

    /// Nearest-neighbour upsampling of `[B, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor<T>> {
        self.expect_rank("upsample_nearest", 4)?;
        if factor == 0 {
            return Err(shape_err("upsample_nearest", "factor must be positive"));
        }
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        let (oh, ow) = (h * factor, w * factor);
        let data = self.data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for bc in 0..b * c {
            for y in 0..oh {
                for x in 0..ow {
                    out[(bc * oh + y) * ow + x] = data[(bc * h + y / factor) * w + x / factor];
                }
            }
        }
        Ok(Tensor::from_op(
            "upsample_nearest",
            out,
            vec![b, c, oh, ow],
            vec![self.clone()],
            move |ctx| {
                let mut g = vec![T::zero(); b * c * h * w];
                for bc in 0..b * c {
                    for y in 0..oh {
                        for x in 0..ow {
                            g[(bc * h + y / factor) * w + x / factor] += ctx.grad[(bc * oh + y) * ow + x];
                        }
                    }
                }
                vec![Some(g)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn permute_transposes() {
        let t = iota(&[2, 3]).permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(iota(&[2, 3]).permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_then_narrow_recovers_parts() {
        let a = iota(&[2, 2, 3]);
        let b = iota(&[2, 1, 3]).scale(-1.0);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 2, 1).unwrap().data(), b.data());
        assert!(c.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn expand_broadcasts_and_reduces_gradient() {
        let x = iota(&[2, 1]).requires_grad_();
        let y = x.expand(&[3, 2, 4]).unwrap();
        assert_eq!(y.at(&[2, 1, 3]), 1.0);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0, 12.0]);
        assert!(iota(&[2, 3]).expand(&[2, 4]).is_err());
    }

    #[test]
    fn reshape_checks_count() {
        assert!(iota(&[2, 3]).reshape(&[3, 2]).is_ok());
        assert!(iota(&[2, 3]).reshape(&[4, 2]).is_err());
    }

    #[test]
    fn nearest_upsample_replicates() {
        let t = iota(&[1, 1, 1, 2]).upsample_nearest(2).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
