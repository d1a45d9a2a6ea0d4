//! Seeded random-dot image pairs with known parametric motion.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{FlowField, Resolution};
use crate::tensor::Tensor;

/// Global motion mapping a frame-1 pixel `p` to `M(p)` in frame 2. Rotation
/// and zoom act about pixel `(W/2, H/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Translate { dx: f64, dy: f64 },
    /// Counter-clockwise in image coordinates (y down), degrees.
    Rotate { degrees: f64 },
    Zoom { scale: f64 },
}

impl Motion {
    fn apply(self, c: (f64, f64), x: f64, y: f64) -> (f64, f64) {
        match self {
            Motion::Translate { dx, dy } => (x + dx, y + dy),
            Motion::Rotate { degrees } => {
                let (s, co) = degrees.to_radians().sin_cos();
                let (rx, ry) = (x - c.0, y - c.1);
                (c.0 + co * rx - s * ry, c.1 + s * rx + co * ry)
            }
            Motion::Zoom { scale } => (c.0 + scale * (x - c.0), c.1 + scale * (y - c.1)),
        }
    }

    fn inverse(self) -> Motion {
        match self {
            Motion::Translate { dx, dy } => Motion::Translate { dx: -dx, dy: -dy },
            Motion::Rotate { degrees } => Motion::Rotate { degrees: -degrees },
            Motion::Zoom { scale } => Motion::Zoom { scale: 1.0 / scale },
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Motion::Translate { dx, dy } => write!(f, "translate:{dx},{dy}"),
            Motion::Rotate { degrees } => write!(f, "rotate:{degrees}"),
            Motion::Zoom { scale } => write!(f, "zoom:{scale}"),
        }
    }
}

impl FromStr for Motion {
    type Err = Error;

    /// Parses `translate:dx,dy`, `rotate:degrees` or `zoom:scale`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad motion `{s}`; use translate:DX,DY, rotate:DEG or zoom:S"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args.split(',').map(|a| a.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        match (kind, nums.as_slice()) {
            ("translate", &[dx, dy]) => Ok(Motion::Translate { dx, dy }),
            ("rotate", &[degrees]) => Ok(Motion::Rotate { degrees }),
            ("zoom", &[scale]) if scale > 0.0 => Ok(Motion::Zoom { scale }),
            _ => Err(bad()),
        }
    }
}

/// Two frames `[3, H, W]` in `[-1, 1]`, the true full-resolution flow and an
/// all-ones validity mask `[1, 1, H, W]`.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub image1: Tensor<f32>,
    pub image2: Tensor<f32>,
    pub gt_flow: FlowField,
    pub valid: Tensor<f32>,
}

impl SyntheticPair {
    /// Both frames with a leading batch axis.
    pub fn batched(&self) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = self.image1.shape();
        let shape = [1, s[0], s[1], s[2]];
        Ok((self.image1.reshape(&shape)?, self.image2.reshape(&shape)?))
    }
}

fn texture(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let dots = (h * w).div_ceil(24);
    let mut img = vec![0.0f32; 3 * h * w];
    let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-0.6..-0.2));
    for c in 0..3 {
        img[c * h * w..][..h * w].fill(bg[c]);
    }
    for _ in 0..dots {
        let (cx, cy) = (rng.gen_range(0.0..w as f32), rng.gen_range(0.0..h as f32));
        let sigma = rng.gen_range(0.8f32..2.2);
        let colour: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let reach = (3.0 * sigma).ceil() as isize;
        for y in (cy as isize - reach).max(0)..=(cy as isize + reach).min(h as isize - 1) {
            for x in (cx as isize - reach).max(0)..=(cx as isize + reach).min(w as isize - 1) {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                let a = (-d2 / (2.0 * sigma * sigma)).exp();
                for c in 0..3 {
                    let v = &mut img[(c * h + y as usize) * w + x as usize];
                    *v += a * (colour[c] - *v);
                }
            }
        }
    }
    img
}

/// Bilinear read with zero outside the frame.
fn sample(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1.0, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1.0) * (1.0 - fx) * fy
        + at(x0 + 1.0, y0 + 1.0) * fx * fy
}

/// Builds frame 1 from `seed`, the flow `M(p) - p`, and frame 2 by sampling
/// frame 1 at `M⁻¹(q)` for every frame-2 pixel `q`.
pub fn make_synthetic_pair(size: (usize, usize), motion: Motion, seed: u64) -> Result<SyntheticPair> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("synthetic size {h}x{w} must be non-empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img1 = texture(h, w, &mut rng);
    let centre = ((w / 2) as f64, (h / 2) as f64);
    let inv = motion.inverse();
    let mut img2 = vec![0.0f32; 3 * h * w];
    let mut flow = vec![0.0f32; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (mx, my) = motion.apply(centre, x as f64, y as f64);
            flow[p] = (mx - x as f64) as f32;
            flow[h * w + p] = (my - y as f64) as f32;
            let (sx, sy) = inv.apply(centre, x as f64, y as f64);
            for c in 0..3 {
                img2[c * h * w + p] = sample(&img1[c * h * w..][..h * w], h, w, sx, sy);
            }
        }
    }
    Ok(SyntheticPair {
        image1: Tensor::new(img1, &[3, h, w])?,
        image2: Tensor::new(img2, &[3, h, w])?,
        gt_flow: FlowField::new(Tensor::new(flow, &[1, 2, h, w])?, Resolution::Full)?,
        valid: Tensor::ones(&[1, 1, h, w]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translation_has_constant_flow() {
        let s = make_synthetic_pair((16, 24), Motion::Translate { dx: 5.0, dy: 3.0 }, 1).unwrap();
        assert!(s.gt_flow.u().data().iter().all(|&v| v == 5.0));
        assert!(s.gt_flow.v().data().iter().all(|&v| v == 3.0));
        // interior pixel moved by the translation
        assert_eq!(s.image2.at(&[1, 10, 12]), s.image1.at(&[1, 7, 7]));
    }

    #[test]
    fn identity_motion_copies_the_frame() {
        let s = make_synthetic_pair((8, 8), Motion::Translate { dx: 0.0, dy: 0.0 }, 2).unwrap();
        assert_eq!(s.image1.data(), s.image2.data());
        assert!(s.gt_flow.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_fixes_the_centre() {
        let s = make_synthetic_pair((32, 32), Motion::Rotate { degrees: 10.0 }, 3).unwrap();
        assert_eq!(s.gt_flow.at(0, 16, 16), (0.0, 0.0));
        assert!(s.gt_flow.at(0, 0, 0).0.abs() > 0.5);
    }

    #[test]
    fn parse_and_reject() {
        assert_eq!("translate:5,3".parse::<Motion>().unwrap(), Motion::Translate { dx: 5.0, dy: 3.0 });
        assert_eq!("zoom:1.1".parse::<Motion>().unwrap(), Motion::Zoom { scale: 1.1 });
        assert!("spin:3".parse::<Motion>().is_err());
        assert!("zoom:-1".parse::<Motion>().is_err());
        assert!(make_synthetic_pair((0, 16), Motion::Zoom { scale: 1.0 }, 0).is_err());
    }
}
