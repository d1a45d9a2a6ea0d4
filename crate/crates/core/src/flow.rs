//! Dense displacement fields.

use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tensor};

/// Grid a flow field is sampled on. Displacements are always in pixels of
/// that grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Eighth,
    Full,
}

impl Resolution {
    /// Downsampling factor relative to the input image.
    pub fn factor(self) -> usize {
        match self {
            Resolution::Eighth => 8,
            Resolution::Full => 1,
        }
    }
}

/// Per-pixel `(u, v)` displacement stored as `[B, 2, h, w]`, channel 0
/// horizontal and channel 1 vertical.
#[derive(Debug, Clone)]
pub struct FlowField<T: Float = f32> {
    data: Tensor<T>,
    resolution: Resolution,
}

impl<T: Float> FlowField<T> {
    pub fn new(data: Tensor<T>, resolution: Resolution) -> Result<Self> {
        if data.ndim() != 4 || data.shape()[1] != 2 {
            return Err(shape_err("flow", format!("expected [B, 2, h, w], got {:?}", data.shape())));
        }
        Ok(Self { data, resolution })
    }

    pub fn zeros(batch: usize, h: usize, w: usize, resolution: Resolution) -> Self {
        Self { data: Tensor::zeros(&[batch, 2, h, w]), resolution }
    }

    /// Same displacement `(u, v)` at every pixel.
    pub fn constant(batch: usize, h: usize, w: usize, uv: (f64, f64), resolution: Resolution) -> Self {
        let plane = h * w;
        let data = Tensor::from_fn(&[batch, 2, h, w], |i| {
            T::lit(if (i / plane) % 2 == 0 { uv.0 } else { uv.1 })
        });
        Self { data, resolution }
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    /// Horizontal component `[B, 1, h, w]`.
    pub fn u(&self) -> Tensor<T> {
        self.data.narrow(1, 0, 1).expect("flow has two channels")
    }

    /// Vertical component `[B, 1, h, w]`.
    pub fn v(&self) -> Tensor<T> {
        self.data.narrow(1, 1, 1).expect("flow has two channels")
    }

    /// `(u, v)` at one pixel.
    pub fn at(&self, b: usize, y: usize, x: usize) -> (T, T) {
        (self.data.at(&[b, 0, y, x]), self.data.at(&[b, 1, y, x]))
    }

    pub fn detach(&self) -> Self {
        Self { data: self.data.detach(), resolution: self.resolution }
    }

    pub fn check_finite(&self) -> Result<()> {
        self.data.check_finite("flow field")
    }

    /// Crops full-resolution flow back to `h × w` after padding.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        let t = self.data.narrow(2, 0, h)?.narrow(3, 0, w)?;
        Ok(Self { data: t, resolution: self.resolution })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_split_channels() {
        let f: FlowField = FlowField::constant(1, 2, 3, (1.5, -2.0), Resolution::Full);
        assert!(f.u().data().iter().all(|&v| v == 1.5));
        assert!(f.v().data().iter().all(|&v| v == -2.0));
        assert_eq!(f.at(0, 1, 2), (1.5, -2.0));
    }

    #[test]
    fn rejects_wrong_channel_count() {
        assert!(FlowField::<f32>::new(Tensor::zeros(&[1, 3, 2, 2]), Resolution::Full).is_err());
    }
}
