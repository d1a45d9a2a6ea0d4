//! Recurrent update block: motion encoder, separable convolutional GRU,
//! flow and upsampling-mask heads, and convex upsampling.

use crate::encoders::{CONTEXT_DIM, HIDDEN_DIM};
use crate::error::{shape_err, Error, Result};
use crate::flow::{FlowField, Resolution};
use crate::hma::ALIGNED_DIM;
use crate::params::{Conv, Init, ParamSpec, ParamStore};
use crate::tensor::{ConvSpec, Float, Tensor};

/// Upsampling factor from the eighth-resolution grid to full resolution.
pub const UPSAMPLE: usize = 8;
/// Mask channels: nine neighbour weights for each of the 8×8 fine pixels.
pub const MASK_DIM: usize = 9 * UPSAMPLE * UPSAMPLE;
const MOTION_DIM: usize = 128;

/// Recurrent state `[B, 128, h, w]`.
#[derive(Debug, Clone)]
pub struct GruState<T: Float = f32> {
    pub hidden: Tensor<T>,
}

/// Output of one update step.
#[derive(Debug, Clone)]
pub struct Update<T: Float = f32> {
    pub state: GruState<T>,
    /// Flow increment at eighth resolution.
    pub delta: Tensor<T>,
    /// Upsampling logits `[B, 576, h, w]`.
    pub mask: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct UpdateBlock {
    corr1: Conv,
    corr2: Conv,
    flow1: Conv,
    flow2: Conv,
    motion: Conv,
    z1: Conv,
    r1: Conv,
    q1: Conv,
    z2: Conv,
    r2: Conv,
    q2: Conv,
    head1: Conv,
    head2: Conv,
    mask1: Conv,
    mask2: Conv,
}

impl Default for UpdateBlock {
    fn default() -> Self {
        let c = |name: &str, cin, cout, k: (usize, usize)| Conv::new(name, ConvSpec::new(cin, cout, k).same());
        let gru_in = HIDDEN_DIM + CONTEXT_DIM + MOTION_DIM;
        Self {
            corr1: c("update.corr1", ALIGNED_DIM, 256, (1, 1)),
            corr2: c("update.corr2", 256, 192, (3, 3)),
            flow1: c("update.flow1", 2, 128, (7, 7)),
            flow2: c("update.flow2", 128, 64, (3, 3)),
            motion: c("update.motion", 192 + 64, MOTION_DIM - 2, (3, 3)),
            z1: c("update.gru.z1", gru_in, HIDDEN_DIM, (1, 5)),
            r1: c("update.gru.r1", gru_in, HIDDEN_DIM, (1, 5)),
            q1: c("update.gru.q1", gru_in, HIDDEN_DIM, (1, 5)),
            z2: c("update.gru.z2", gru_in, HIDDEN_DIM, (5, 1)),
            r2: c("update.gru.r2", gru_in, HIDDEN_DIM, (5, 1)),
            q2: c("update.gru.q2", gru_in, HIDDEN_DIM, (5, 1)),
            head1: c("update.head1", HIDDEN_DIM, 256, (3, 3)),
            head2: c("update.head2", 256, 2, (3, 3)).weight_init(Init::Zeros).bias_init(Init::Zeros),
            mask1: c("update.mask1", HIDDEN_DIM, 256, (3, 3)),
            mask2: c("update.mask2", 256, MASK_DIM, (1, 1)),
        }
    }
}

impl UpdateBlock {
    pub fn specs(&self) -> Vec<ParamSpec> {
        [
            &self.corr1, &self.corr2, &self.flow1, &self.flow2, &self.motion, &self.z1, &self.r1, &self.q1,
            &self.z2, &self.r2, &self.q2, &self.head1, &self.head2, &self.mask1, &self.mask2,
        ]
        .iter()
        .flat_map(|c| c.specs())
        .collect()
    }

    /// Encodes correlation and current flow into 128 channels, the last two
    /// of which are the raw flow.
    pub fn motion_features<T: Float>(&self, p: &ParamStore<T>, corr: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.corr1.forward(p, corr)?.relu();
        let c = self.corr2.forward(p, &c)?.relu();
        let f = self.flow1.forward(p, flow)?.relu();
        let f = self.flow2.forward(p, &f)?.relu();
        let m = self.motion.forward(p, &Tensor::concat(&[c, f], 1)?)?.relu();
        Tensor::concat(&[m, flow.clone()], 1)
    }

    fn gru_half<T: Float>(
        p: &ParamStore<T>,
        (z, r, q): (&Conv, &Conv, &Conv),
        h: &Tensor<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let hx = Tensor::concat(&[h.clone(), x.clone()], 1)?;
        let zt = z.forward(p, &hx)?.sigmoid();
        let rt = r.forward(p, &hx)?.sigmoid();
        let rhx = Tensor::concat(&[rt.mul(h)?, x.clone()], 1)?;
        let qt = q.forward(p, &rhx)?.tanh();
        h.add(&zt.mul(&qt.sub(h)?)?)
    }

    /// One refinement step from state, context, fused correlation and the
    /// current eighth-resolution flow.
    pub fn step<T: Float>(
        &self,
        p: &ParamStore<T>,
        state: &GruState<T>,
        context: &Tensor<T>,
        corr: &Tensor<T>,
        flow: &Tensor<T>,
    ) -> Result<Update<T>> {
        let motion = self.motion_features(p, corr, flow)?;
        let x = Tensor::concat(&[context.clone(), motion], 1)?;
        let h = Self::gru_half(p, (&self.z1, &self.r1, &self.q1), &state.hidden, &x)?;
        let h = Self::gru_half(p, (&self.z2, &self.r2, &self.q2), &h, &x)?;
        let delta = self.head2.forward(p, &self.head1.forward(p, &h)?.relu())?;
        let mask = self.mask2.forward(p, &self.mask1.forward(p, &h)?.relu())?.scale(T::lit(0.25));
        Ok(Update { state: GruState { hidden: h }, delta, mask })
    }
}

/// Full-resolution flow where every fine pixel is a softmax-weighted convex
/// combination of the 3×3 coarse neighbours of its cell, scaled by 8.
///
/// Mask channel `k * 64 + dy * 8 + dx` holds the logit of neighbour `k`
/// (row-major over the 3×3 window) for fine offset `(dy, dx)`. Neighbours
/// beyond the border repeat the edge value.
pub fn convex_upsample<T: Float>(flow: &FlowField<T>, mask: &Tensor<T>) -> Result<FlowField<T>> {
    if flow.resolution() != Resolution::Eighth {
        return Err(Error::InvalidArgument("convex_upsample needs an eighth-resolution flow".into()));
    }
    let (b, h, w) = (flow.batch(), flow.height(), flow.width());
    if mask.shape() != [b, MASK_DIM, h, w] {
        return Err(shape_err(
            "convex_upsample",
            format!("mask {:?} for flow {:?}; expected [{b}, {MASK_DIM}, {h}, {w}]", mask.shape(), flow.tensor().shape()),
        ));
    }
    const S: usize = UPSAMPLE;
    let (fh, fw) = (h * S, w * S);
    let hw = h * w;
    let scale = T::lit(S as f64);
    let neighbours = move |i: usize, j: usize| -> [usize; 9] {
        let mut n = [0; 9];
        for (k, slot) in n.iter_mut().enumerate() {
            let y = (i + k / 3).saturating_sub(1).min(h - 1);
            let x = (j + k % 3).saturating_sub(1).min(w - 1);
            *slot = y * w + x;
        }
        n
    };
    let weights = move |m: &[T], bi: usize, i: usize, j: usize, dy: usize, dx: usize| -> [T; 9] {
        let mut l = [T::zero(); 9];
        for (k, v) in l.iter_mut().enumerate() {
            *v = m[((bi * MASK_DIM + k * S * S + dy * S + dx) * h + i) * w + j];
        }
        let mx = l.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in l.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in l.iter_mut() {
            *v = *v / sum;
        }
        l
    };

    let fd = flow.tensor().data();
    let md = mask.data();
    let mut out = vec![T::zero(); b * 2 * fh * fw];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let nb = neighbours(i, j);
                for dy in 0..S {
                    for dx in 0..S {
                        let wk = weights(md, bi, i, j, dy, dx);
                        for c in 0..2 {
                            let plane = &fd[(bi * 2 + c) * hw..][..hw];
                            let v: T = wk.iter().zip(&nb).map(|(&wt, &n)| wt * plane[n]).sum();
                            out[((bi * 2 + c) * fh + i * S + dy) * fw + j * S + dx] = v * scale;
                        }
                    }
                }
            }
        }
    }
    let t = Tensor::from_op(
        "convex_upsample",
        out,
        vec![b, 2, fh, fw],
        vec![flow.tensor().clone(), mask.clone()],
        move |ctx| {
            let fd = ctx.parents[0].data();
            let md = ctx.parents[1].data();
            let mut gf = vec![T::zero(); b * 2 * hw];
            let mut gm = vec![T::zero(); b * MASK_DIM * hw];
            for bi in 0..b {
                for i in 0..h {
                    for j in 0..w {
                        let nb = neighbours(i, j);
                        for dy in 0..S {
                            for dx in 0..S {
                                let wk = weights(md, bi, i, j, dy, dx);
                                let mut s = [T::zero(); 9];
                                for c in 0..2 {
                                    let g = ctx.grad[((bi * 2 + c) * fh + i * S + dy) * fw + j * S + dx] * scale;
                                    let base = (bi * 2 + c) * hw;
                                    for k in 0..9 {
                                        gf[base + nb[k]] += g * wk[k];
                                        s[k] += g * fd[base + nb[k]];
                                    }
                                }
                                let mean: T = wk.iter().zip(&s).map(|(&a, &b)| a * b).sum();
                                for k in 0..9 {
                                    gm[((bi * MASK_DIM + k * S * S + dy * S + dx) * h + i) * w + j] = wk[k] * (s[k] - mean);
                                }
                            }
                        }
                    }
                }
            }
            vec![ctx.needs[0].then_some(gf), ctx.needs[1].then_some(gm)]
        },
    );
    FlowField::new(t, Resolution::Full)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_flow_scales_by_eight() {
        let f: FlowField = FlowField::constant(1, 3, 4, (1.0, -2.0), Resolution::Eighth);
        let mask = Tensor::from_fn(&[1, MASK_DIM, 3, 4], |i| ((i * 37) % 11) as f32 - 5.0);
        let up = convex_upsample(&f, &mask).unwrap();
        assert_eq!(up.tensor().shape(), &[1, 2, 24, 32]);
        assert!(up.u().data().iter().all(|&v| (v - 8.0).abs() < 1e-5));
        assert!(up.v().data().iter().all(|&v| (v + 16.0).abs() < 1e-5));
    }

    #[test]
    fn centre_weighted_mask_is_nearest_neighbour() {
        let f: FlowField = FlowField::new(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32), Resolution::Eighth).unwrap();
        let mask = Tensor::from_fn(&[1, MASK_DIM, 2, 2], |i| if (i / 4) / 64 == 4 { 100.0 } else { 0.0 });
        let up = convex_upsample(&f, &mask).unwrap();
        for c in 0..2 {
            for y in 0..16 {
                for x in 0..16 {
                    let coarse = f.tensor().at(&[0, c, y / 8, x / 8]);
                    assert!((up.tensor().at(&[0, c, y, x]) - 8.0 * coarse).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn update_shapes_and_state_range() {
        let block = UpdateBlock::default();
        let p = ParamStore::init(&block.specs(), 3);
        let state = GruState { hidden: Tensor::full(&[1, 128, 4, 4], 0.5f32) };
        let ctx = Tensor::full(&[1, 128, 4, 4], 0.2);
        let corr = Tensor::from_fn(&[1, 324, 4, 4], |i| (i % 5) as f32);
        let u = block.step(&p, &state, &ctx, &corr, &Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        assert_eq!(u.mask.shape(), &[1, 576, 4, 4]);
        assert!(u.delta.data().iter().all(|&v| v == 0.0));
        assert!(u.state.hidden.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn mask_shape_is_checked() {
        let f: FlowField = FlowField::zeros(1, 2, 2, Resolution::Eighth);
        assert!(convex_upsample(&f, &Tensor::zeros(&[1, 9, 2, 2])).is_err());
    }
}
