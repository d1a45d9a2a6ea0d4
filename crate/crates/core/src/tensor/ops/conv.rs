use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Float, MatLayout, Tensor};

/// Geometry of a 2-D convolution.
///
/// The weight tensor is `[out_channels, in_per_group, kh, kw]`; a depthwise
/// convolution has `groups == in_channels` and `in_per_group == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_per_group: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    /// Dense convolution, stride 1, no padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        Self {
            out_channels,
            in_per_group: in_channels,
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    /// One filter per input channel.
    pub fn depthwise(channels: usize, kernel: (usize, usize)) -> Self {
        Self {
            out_channels: channels,
            in_per_group: 1,
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            groups: channels,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, py: usize, px: usize) -> Self {
        self.padding = (py, px);
        self
    }

    /// `same`-style padding for odd kernels at stride 1.
    pub fn same(self) -> Self {
        let (kh, kw) = self.kernel;
        self.padding(kh / 2, kw / 2)
    }

    pub fn in_channels(&self) -> usize {
        self.in_per_group * self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group, self.kernel.0, self.kernel.1]
    }

    /// Output extent along one axis, `None` when the kernel does not fit.
    fn out_extent(input: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        (input + 2 * p).checked_sub(k).map(|v| v / s + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = Self::out_extent(h, self.kernel.0, self.stride.0, self.padding.0)?;
        let ow = Self::out_extent(w, self.kernel.1, self.stride.1, self.padding.1)?;
        Some((oh, ow))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Per-call geometry shared by the forward and backward kernels.
#[derive(Clone, Copy)]
struct Geom {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geom {
    fn cg(&self) -> usize {
        self.spec.in_per_group
    }
    fn kg(&self) -> usize {
        self.k / self.spec.groups
    }
    fn ck(&self) -> usize {
        self.cg() * self.spec.kernel.0 * self.spec.kernel.1
    }
    fn hw_out(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `ox` whose tap `x = ox * s + j - p` lands inside `0..w`.
fn valid_span(ow: usize, w: usize, s: usize, j: usize, p: usize) -> (usize, usize) {
    let lo = p.saturating_sub(j).div_ceil(s).min(ow);
    let hi = if w + p > j { ((w + p - j - 1) / s + 1).min(ow) } else { 0 };
    (lo, hi.max(lo))
}

fn im2col<T: Float>(x: &[T], g: &Geom, cols: &mut [T]) {
    let (kh, kw) = g.spec.kernel;
    let (sy, sx) = g.spec.stride;
    let (py, px) = g.spec.padding;
    let n = g.hw_out();
    for c in 0..g.cg() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((c * kh + i) * kw + j) * n..][..n];
                let (lo, hi) = valid_span(g.ow, g.w, sx, j, px);
                for oy in 0..g.oh {
                    let y = (oy * sy + i) as isize - py as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.w..][..g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if lo < hi {
                        let x0 = lo * sx + j - px;
                        if sx == 1 {
                            dst[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (d, &v) in dst[lo..hi].iter_mut().zip(src[x0..].iter().step_by(sx)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let (kh, kw) = g.spec.kernel;
    let (sy, sx) = g.spec.stride;
    let (py, px) = g.spec.padding;
    let n = g.hw_out();
    for c in 0..g.cg() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((c * kh + i) * kw + j) * n..][..n];
                let (lo, hi) = valid_span(g.ow, g.w, sx, j, px);
                if lo >= hi {
                    continue;
                }
                let x0 = lo * sx + j - px;
                for oy in 0..g.oh {
                    let y = (oy * sy + i) as isize - py as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..][..g.w];
                    let src = &row[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, &v) in dst[x0..].iter_mut().step_by(sx).zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Input slice of batch `b`, group `gi`.
fn group_input<'a, T: Float>(x: &'a [T], g: &Geom, b: usize, gi: usize) -> &'a [T] {
    let plane = g.h * g.w;
    &x[(b * g.c + gi * g.cg()) * plane..][..g.cg() * plane]
}

impl<T: Float> Tensor<T> {
    /// 2-D cross-correlation of `[B, C, H, W]` input.
    pub fn conv2d(
        &self,
        spec: &ConvSpec,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        self.expect_rank("conv2d", 4)?;
        let &[batch, c, h, w] = self.shape() else { unreachable!() };
        if spec.groups == 0 || spec.out_channels % spec.groups != 0 {
            return Err(shape_err(
                "conv2d",
                format!("{} output channels not divisible into {} groups", spec.out_channels, spec.groups),
            ));
        }
        if c != spec.in_channels() {
            return Err(shape_err(
                "conv2d",
                format!("input has {c} channels, spec expects {} ({} groups x {})", spec.in_channels(), spec.groups, spec.in_per_group),
            ));
        }
        weight.expect_shape("conv2d", &spec.weight_shape())?;
        if let Some(b) = bias {
            b.expect_shape("conv2d", &[spec.out_channels])?;
        }
        let (oh, ow) = spec.output_hw(h, w).ok_or_else(|| {
            shape_err("conv2d", format!("kernel {:?} larger than padded input {h}x{w}", spec.kernel))
        })?;
        let g = Geom { batch, c, h, w, k: spec.out_channels, oh, ow, spec: *spec };
        let (kg, ck, n) = (g.kg(), g.ck(), g.hw_out());
        let pointwise = spec.is_pointwise();
        let x = self.data();
        let wd = weight.data();
        let mut out = vec![T::zero(); batch * g.k * n];
        // the weight gradient reuses the unfolded input
        let keep = !pointwise && weight.requires_grad();
        let per = ck * n;
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); if keep { batch * spec.groups * per } else { per }]
        };
        for b in 0..batch {
            for gi in 0..spec.groups {
                let xin = group_input(x, &g, b, gi);
                let colsref: &[T] = if pointwise {
                    xin
                } else {
                    let slot = if keep { (b * spec.groups + gi) * per } else { 0 };
                    im2col(xin, &g, &mut cols[slot..slot + per]);
                    &cols[slot..slot + per]
                };
                gemm(
                    kg,
                    ck,
                    n,
                    &wd[gi * kg * ck..(gi + 1) * kg * ck],
                    MatLayout::Normal,
                    colsref,
                    MatLayout::Normal,
                    &mut out[(b * g.k + gi * kg) * n..][..kg * n],
                    false,
                );
            }
            if let Some(bias) = bias {
                for (k, &bv) in bias.data().iter().enumerate() {
                    for v in &mut out[(b * g.k + k) * n..][..n] {
                        *v += bv;
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op(
            "conv2d",
            out,
            vec![batch, g.k, oh, ow],
            parents,
            move |ctx| conv2d_backward(ctx.grad, ctx.parents, ctx.needs, &g, keep.then_some(&cols[..])),
        ))
    }
}

fn conv2d_backward<T: Float>(
    gout: &[T],
    parents: &[Tensor<T>],
    needs: &[bool],
    g: &Geom,
    saved: Option<&[T]>,
) -> Vec<Option<Vec<T>>> {
    let (kg, ck, n) = (g.kg(), g.ck(), g.hw_out());
    let x = parents[0].data();
    let wd = parents[1].data();
    let pointwise = g.spec.is_pointwise();
    let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = needs[1].then(|| vec![T::zero(); wd.len()]);
    let recompute = !pointwise && saved.is_none() && gw.is_some();
    let mut cols = vec![T::zero(); if recompute { ck * n } else { 0 }];
    let mut dcols = vec![T::zero(); if pointwise || gx.is_none() { 0 } else { ck * n }];
    for b in 0..g.batch {
        for gi in 0..g.spec.groups {
            let gy = &gout[(b * g.k + gi * kg) * n..][..kg * n];
            let wg = &wd[gi * kg * ck..(gi + 1) * kg * ck];
            if let Some(gw) = gw.as_mut() {
                let xin = group_input(x, g, b, gi);
                let colsref: &[T] = match saved {
                    _ if pointwise => xin,
                    Some(s) => &s[(b * g.spec.groups + gi) * ck * n..][..ck * n],
                    None => {
                        im2col(xin, g, &mut cols);
                        &cols
                    }
                };
                // dW_g += dY_g [kg, n] x colsᵀ [n, ck]
                gemm(kg, n, ck, gy, MatLayout::Normal, colsref, MatLayout::Transposed, &mut gw[gi * kg * ck..][..kg * ck], true);
            }
            if let Some(gx) = gx.as_mut() {
                let plane = g.h * g.w;
                let dst = &mut gx[(b * g.c + gi * g.cg()) * plane..][..g.cg() * plane];
                if pointwise {
                    gemm(ck, kg, n, wg, MatLayout::Transposed, gy, MatLayout::Normal, dst, true);
                } else {
                    // dcols = W_gᵀ [ck, kg] x dY_g [kg, n]
                    gemm(ck, kg, n, wg, MatLayout::Transposed, gy, MatLayout::Normal, &mut dcols, false);
                    col2im(&dcols, g, dst);
                }
            }
        }
    }
    let mut grads = vec![gx, gw];
    if parents.len() == 3 {
        grads.push(needs[2].then(|| {
            let mut gb = vec![T::zero(); g.k];
            for b in 0..g.batch {
                for (k, acc) in gb.iter_mut().enumerate() {
                    *acc += gout[(b * g.k + k) * n..][..n].iter().copied().sum::<T>();
                }
            }
            gb
        }));
    }
    grads
}
