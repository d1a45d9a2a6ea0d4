//! All-pairs correlation volumes and the multi-radius window search.

use crate::error::{shape_err, Error, Result};
use crate::flow::{FlowField, Resolution};
use crate::tensor::{Float, Tensor};

/// Feature level a volume is built at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quarter,
    Eighth,
}

impl Level {
    /// Pixels of this level per pixel of the eighth-resolution flow grid.
    pub fn per_eighth(self) -> usize {
        match self {
            Level::Quarter => 2,
            Level::Eighth => 1,
        }
    }
}

/// Correlation of every frame-1 feature vector with every frame-2 feature
/// vector at one level.
///
/// Stored as `[B * h * w, 1, h, w]`: the response map of source pixel
/// `(i, j)` of batch item `b` is plane `b * h * w + i * w + j`.
#[derive(Debug, Clone)]
pub struct BaseCostVolume<T: Float = f32> {
    pub level: Level,
    pub data: Tensor<T>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Factor applied to every inner product.
    pub scale: f64,
}

impl<T: Float> BaseCostVolume<T> {
    /// Correlation between source pixel `(i, j)` and target pixel `(m, n)`.
    pub fn get(&self, b: usize, i: usize, j: usize, m: usize, n: usize) -> T {
        self.data.at(&[(b * self.height + i) * self.width + j, 0, m, n])
    }

    fn plane(&self, b: usize, i: usize, j: usize) -> &[T] {
        let hw = self.height * self.width;
        &self.data.data()[((b * self.height + i) * self.width + j) * hw..][..hw]
    }
}

/// Builds the scaled all-pairs volume from `[B, D, h, w]` features.
pub fn build_base_volume<T: Float>(f1: &Tensor<T>, f2: &Tensor<T>, level: Level) -> Result<BaseCostVolume<T>> {
    f1.expect_rank("build_base_volume", 4)?;
    if f1.shape() != f2.shape() {
        return Err(shape_err(
            "build_base_volume",
            format!("feature shapes differ: {:?} vs {:?}", f1.shape(), f2.shape()),
        ));
    }
    let &[b, d, h, w] = f1.shape() else { unreachable!() };
    let scale = 1.0 / (d as f64).sqrt();
    let a = f1.reshape(&[b, d, h * w])?;
    let c = f2.reshape(&[b, d, h * w])?;
    let corr = a.matmul_tn(&c)?.scale(T::lit(scale));
    Ok(BaseCostVolume {
        level,
        data: corr.reshape(&[b * h * w, 1, h, w])?,
        batch: b,
        height: h,
        width: w,
        scale,
    })
}

/// Ordered, strictly positive search radii.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRadii(Vec<usize>);

impl SearchRadii {
    pub fn new(radii: &[usize]) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidArgument("at least one search radius is required".into()));
        }
        if let Some(r) = radii.iter().find(|&&r| r == 0) {
            return Err(Error::InvalidArgument(format!("search radius must be positive, got {r}")));
        }
        Ok(Self(radii.to_vec()))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Channels produced by one level: the sum of `(2r + 1)^2`.
    pub fn channels(&self) -> usize {
        self.0.iter().map(|r| (2 * r + 1).pow(2)).sum()
    }

    /// `(dx, dy)` offsets of every channel, block by block, each window
    /// enumerated with `dy` outer and `dx` inner.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let mut v = Vec::with_capacity(self.channels());
        for &r in &self.0 {
            let r = r as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    v.push((dx, dy));
                }
            }
        }
        v
    }
}

impl Default for SearchRadii {
    fn default() -> Self {
        Self(vec![4, 6, 8, 10])
    }
}

/// Windowed correlation responses at one level, `[B, d, h, w]`.
#[derive(Debug, Clone)]
pub struct MotionVolume<T: Float = f32> {
    pub level: Level,
    pub data: Tensor<T>,
    pub radii: SearchRadii,
}

/// Window centres in the frame-2 grid of a level, `[B, 2, h, w]`.
///
/// At the eighth level the centre of pixel `p` is `p + f(p)`. At the
/// quarter level both the grid and the flow are measured in quarter pixels,
/// i.e. pixel `P` is displaced by twice the flow of its eighth-level parent.
pub fn lookup_centroids<T: Float>(flow: &FlowField<T>, level: Level) -> Result<Tensor<T>> {
    if flow.resolution() != Resolution::Eighth {
        return Err(Error::InvalidArgument("lookup needs an eighth-resolution flow".into()));
    }
    let f = match level {
        Level::Eighth => flow.tensor().clone(),
        Level::Quarter => flow.tensor().upsample_nearest(2)?.scale(T::lit(2.0)),
    };
    let &[b, _, h, w] = f.shape() else { unreachable!() };
    let grid = Tensor::from_fn(&[b, 2, h, w], |i| {
        let pix = i % (h * w);
        T::lit(if (i / (h * w)) % 2 == 0 { pix % w } else { pix / w } as f64)
    });
    grid.add(&f)
}

/// Samples every radius window around the flow-displaced position of each
/// pixel and concatenates the blocks along channels.
pub fn multi_scale_search<T: Float>(
    vol: &BaseCostVolume<T>,
    flow: &FlowField<T>,
    radii: &SearchRadii,
) -> Result<MotionVolume<T>> {
    let (b, h, w) = (vol.batch, vol.height, vol.width);
    let k = vol.level.per_eighth();
    if flow.batch() != b || flow.height() * k != h || flow.width() * k != w {
        return Err(shape_err(
            "multi_scale_search",
            format!(
                "flow {:?} does not match a {:?} volume of {h}x{w} (batch {b})",
                flow.tensor().shape(),
                vol.level
            ),
        ));
    }
    let n = h * w;
    let offsets = radii.offsets();
    let d = offsets.len();
    let centres = lookup_centroids(flow, vol.level)?.reshape(&[b, 2, n, 1])?.expand(&[b, 2, n, d])?;
    let delta = Tensor::from_fn(&[1, 2, 1, d], |i| {
        let (dx, dy) = offsets[i % d];
        T::lit(if i < d { dx } else { dy } as f64)
    })
    .expand(&[b, 2, n, d])?;
    let coords = centres.add(&delta)?.permute(&[0, 2, 1, 3])?.reshape(&[b * n, 2, d])?;
    let sampled = vol.data.bilinear_sample(&coords)?;
    let data = sampled.reshape(&[b, n, d])?.permute(&[0, 2, 1])?.reshape(&[b, d, h, w])?;
    Ok(MotionVolume { level: vol.level, data, radii: radii.clone() })
}

/// Window of radius `r` around `p_prime = (x, y)` in the response map of
/// source pixel `source = (i, j)`, enumerated with `dy` outer and `dx`
/// inner. Samples outside the frame read zero.
pub fn search_window<T: Float>(
    vol: &BaseCostVolume<T>,
    b: usize,
    source: (usize, usize),
    p_prime: (f64, f64),
    r: usize,
) -> Result<Vec<T>> {
    if r == 0 {
        return Err(Error::InvalidArgument("search radius must be positive".into()));
    }
    if b >= vol.batch || source.0 >= vol.height || source.1 >= vol.width {
        return Err(shape_err("search_window", format!("source {source:?} outside the volume")));
    }
    if !(p_prime.0.is_finite() && p_prime.1.is_finite()) {
        return Err(Error::NonFinite("search_window centre".into()));
    }
    let plane = vol.plane(b, source.0, source.1);
    let (h, w) = (vol.height as isize, vol.width as isize);
    let read = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            plane[(y * w + x) as usize].to_f64().unwrap_or(0.0)
        }
    };
    let r = r as isize;
    let mut out = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (p_prime.0 + dx as f64, p_prime.1 + dy as f64);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = read(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + read(x0 + 1, y0) * fx * (1.0 - fy)
                + read(x0, y0 + 1) * (1.0 - fx) * fy
                + read(x0 + 1, y0 + 1) * fx * fy;
            out.push(T::lit(v));
        }
    }
    Ok(out)
}
