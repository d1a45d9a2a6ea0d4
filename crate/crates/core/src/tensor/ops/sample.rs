use crate::error::{shape_err, Error, Result};
use crate::tensor::{Float, Tensor};

/// Corner weights and in-range flags for one sample point.
struct Corners<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

impl<T: Float> Corners<T> {
    fn new(x: T, y: T) -> Self {
        let (xf, yf) = (x.floor(), y.floor());
        Self {
            x0: xf.to_isize().unwrap_or(isize::MIN / 2),
            y0: yf.to_isize().unwrap_or(isize::MIN / 2),
            fx: x - xf,
            fy: y - yf,
        }
    }
}

#[inline]
fn fetch<T: Float>(plane: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

impl<T: Float> Tensor<T> {
    /// Bilinear lookup of `self: [B, C, H, W]` at `coords: [B, 2, N]`.
    ///
    /// `coords[b, 0, n]` is the column (x) and `coords[b, 1, n]` the row (y)
    /// of sample `n`; integer coordinates address pixels exactly. Corners
    /// that fall outside the grid contribute zero. Differentiable with
    /// respect to both the grid and the coordinates.
    pub fn bilinear_sample(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_rank("bilinear_sample", 4)?;
        coords.expect_rank("bilinear_sample", 3)?;
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        if coords.shape()[0] != b || coords.shape()[1] != 2 {
            return Err(shape_err(
                "bilinear_sample",
                format!("coords {:?} for grid {:?}; expected [{b}, 2, N]", coords.shape(), self.shape()),
            ));
        }
        if !coords.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bilinear_sample coordinates".into()));
        }
        let n = coords.shape()[2];
        let grid = self.data();
        let cd = coords.data();
        let plane = h * w;
        let mut out = vec![T::zero(); b * c * n];
        for bi in 0..b {
            let xs = &cd[bi * 2 * n..][..n];
            let ys = &cd[(bi * 2 + 1) * n..][..n];
            for (s, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                let k = Corners::new(x, y);
                let (gx, gy) = (T::one() - k.fx, T::one() - k.fy);
                for ch in 0..c {
                    let p = &grid[(bi * c + ch) * plane..][..plane];
                    let v = gy * (gx * fetch(p, h, w, k.x0, k.y0) + k.fx * fetch(p, h, w, k.x0 + 1, k.y0))
                        + k.fy * (gx * fetch(p, h, w, k.x0, k.y0 + 1) + k.fx * fetch(p, h, w, k.x0 + 1, k.y0 + 1));
                    out[(bi * c + ch) * n + s] = v;
                }
            }
        }
        Ok(Tensor::from_op(
            "bilinear_sample",
            out,
            vec![b, c, n],
            vec![self.clone(), coords.clone()],
            move |ctx| {
                let grid = ctx.parents[0].data();
                let cd = ctx.parents[1].data();
                let mut ggrid = ctx.needs[0].then(|| vec![T::zero(); grid.len()]);
                let mut gcoord = ctx.needs[1].then(|| vec![T::zero(); cd.len()]);
                for bi in 0..b {
                    for s in 0..n {
                        let x = cd[bi * 2 * n + s];
                        let y = cd[(bi * 2 + 1) * n + s];
                        let k = Corners::new(x, y);
                        let (gx, gy) = (T::one() - k.fx, T::one() - k.fy);
                        let (mut dx, mut dy) = (T::zero(), T::zero());
                        for ch in 0..c {
                            let go = ctx.grad[(bi * c + ch) * n + s];
                            let base = (bi * c + ch) * plane;
                            if let Some(gg) = ggrid.as_mut() {
                                let corners = [
                                    (k.x0, k.y0, gx * gy),
                                    (k.x0 + 1, k.y0, k.fx * gy),
                                    (k.x0, k.y0 + 1, gx * k.fy),
                                    (k.x0 + 1, k.y0 + 1, k.fx * k.fy),
                                ];
                                for (cx, cy, wgt) in corners {
                                    if cx >= 0 && cy >= 0 && cx < w as isize && cy < h as isize {
                                        gg[base + cy as usize * w + cx as usize] += go * wgt;
                                    }
                                }
                            }
                            if gcoord.is_some() {
                                let p = &grid[base..base + plane];
                                let v00 = fetch(p, h, w, k.x0, k.y0);
                                let v10 = fetch(p, h, w, k.x0 + 1, k.y0);
                                let v01 = fetch(p, h, w, k.x0, k.y0 + 1);
                                let v11 = fetch(p, h, w, k.x0 + 1, k.y0 + 1);
                                dx += go * (gy * (v10 - v00) + k.fy * (v11 - v01));
                                dy += go * (gx * (v01 - v00) + k.fx * (v11 - v10));
                            }
                        }
                        if let Some(gc) = gcoord.as_mut() {
                            gc[bi * 2 * n + s] += dx;
                            gc[(bi * 2 + 1) * n + s] += dy;
                        }
                    }
                }
                vec![ggrid, gcoord]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(points: &[(f64, f64)]) -> Tensor<f64> {
        let mut d: Vec<f64> = points.iter().map(|p| p.0).collect();
        d.extend(points.iter().map(|p| p.1));
        Tensor::new(d, &[1, 2, points.len()]).unwrap()
    }

    #[test]
    fn integer_coordinate_reads_exact_value() {
        let g = Tensor::<f64>::from_fn(&[1, 1, 5, 4], |i| i as f64 * 1.5);
        let out = g.bilinear_sample(&coords(&[(2.0, 3.0)])).unwrap();
        assert_eq!(out.data(), &[g.at(&[0, 0, 3, 2])]);
    }

    #[test]
    fn midpoint_is_mean_of_corners() {
        let g = Tensor::<f64>::new(vec![0.0, 1.0, 2.0, 3.0], &[1, 1, 2, 2]).unwrap();
        let out = g.bilinear_sample(&coords(&[(0.5, 0.5)])).unwrap();
        assert_eq!(out.data(), &[1.5]);
    }

    #[test]
    fn far_outside_is_zero() {
        let g = Tensor::<f64>::ones(&[1, 3, 4, 4]);
        let out = g.bilinear_sample(&coords(&[(-5.0, -5.0)])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn partial_overlap_zero_pads() {
        let g = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        // halfway off the left edge: only the right corners count
        let out = g.bilinear_sample(&coords(&[(-0.5, 0.0)])).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn non_finite_coordinates_error() {
        let g = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        assert!(matches!(
            g.bilinear_sample(&coords(&[(f64::NAN, 0.0)])),
            Err(Error::NonFinite(_))
        ));
    }
}
