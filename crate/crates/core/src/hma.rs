//! Alignment of the quarter-level motion volume onto the eighth-level grid
//! and fusion of both levels into one 324-channel volume.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost_volume::{Level, MotionVolume};
use crate::error::{shape_err, Error, Result};
use crate::params::{Conv, Init, ParamSpec, ParamStore};
use crate::tensor::{ConvSpec, Float, Tensor};

/// Channel width of the fused volume.
pub const ALIGNED_DIM: usize = 324;

/// Operator that halves the quarter-level grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Depthwise 2×2 stride-2 convolution followed by ReLU.
    #[default]
    Conv2x2,
    /// Depthwise 3×3 stride-2, padding-1 convolution followed by ReLU.
    Conv3x3,
    AvgPool,
    MaxPool,
}

impl Alignment {
    pub const ALL: [Alignment; 4] = [Alignment::Conv2x2, Alignment::Conv3x3, Alignment::AvgPool, Alignment::MaxPool];

    pub fn name(self) -> &'static str {
        match self {
            Alignment::Conv2x2 => "conv2x2",
            Alignment::Conv3x3 => "conv3x3",
            Alignment::AvgPool => "avgpool",
            Alignment::MaxPool => "maxpool",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown alignment code {code}")))
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown alignment mode `{s}` (expected conv2x2, conv3x3, avgpool or maxpool)"
            ))
        })
    }
}

/// Eighth-resolution volume handed to the attention block, `[B, 324, h, w]`.
#[derive(Debug, Clone)]
pub struct AlignedCostVolume<T: Float = f32> {
    pub data: Tensor<T>,
}

/// Hierarchical alignment and dimensionality reduction.
#[derive(Debug, Clone)]
pub struct Hma {
    channels: usize,
    alignment: Alignment,
    hierarchical: bool,
    align_conv: Option<Conv>,
    reduce: Conv,
}

impl Hma {
    /// `channels` is the per-level motion volume width. With `hierarchical`
    /// off only the eighth-level volume is reduced.
    pub fn new(channels: usize, alignment: Alignment, hierarchical: bool) -> Self {
        let align_conv = match (hierarchical, alignment) {
            (true, Alignment::Conv2x2) => Some(
                Conv::new("hma.align", ConvSpec::depthwise(channels, (2, 2)).stride(2))
                    .weight_init(Init::Constant(0.25)),
            ),
            (true, Alignment::Conv3x3) => Some(
                Conv::new("hma.align", ConvSpec::depthwise(channels, (3, 3)).stride(2).padding(1, 1))
                    .weight_init(Init::Constant(1.0 / 9.0)),
            ),
            _ => None,
        }
        .map(|c| c.bias_init(Init::Zeros));
        let fused = if hierarchical { 2 * channels } else { channels };
        let reduce = Conv::new("hma.reduce", ConvSpec::new(fused, ALIGNED_DIM, (1, 1))).bias_init(Init::Zeros);
        Self { channels, alignment, hierarchical, align_conv, reduce }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.align_conv.as_ref().map(Conv::specs).unwrap_or_default();
        v.extend(self.reduce.specs());
        v
    }

    pub fn alignment(&self) -> Alignment {
        self.alignment
    }

    /// Halves the spatial grid of a quarter-level volume with the configured
    /// operator.
    pub fn align<T: Float>(&self, p: &ParamStore<T>, quarter: &Tensor<T>) -> Result<Tensor<T>> {
        match self.alignment {
            Alignment::Conv2x2 | Alignment::Conv3x3 => {
                let conv = self.align_conv.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("alignment convolution is disabled without hierarchical motion".into())
                })?;
                Ok(conv.forward(p, quarter)?.relu())
            }
            Alignment::AvgPool => quarter.avg_pool2d(2, 2),
            Alignment::MaxPool => quarter.max_pool2d(2, 2),
        }
    }

    pub fn hierarchical(&self) -> bool {
        self.hierarchical
    }

    /// Reduction of the eighth-level volume alone, used when hierarchical
    /// motion is switched off.
    pub fn reduce_eighth<T: Float>(&self, p: &ParamStore<T>, eighth: &MotionVolume<T>) -> Result<AlignedCostVolume<T>> {
        if self.hierarchical {
            return Err(Error::InvalidArgument("hierarchical alignment needs the quarter-level volume".into()));
        }
        let e = &eighth.data;
        if e.ndim() != 4 || e.shape()[1] != self.channels {
            return Err(shape_err(
                "reduce_eighth",
                format!("volume {:?} must have {} channels", e.shape(), self.channels),
            ));
        }
        Ok(AlignedCostVolume { data: self.reduce.forward(p, e)?.relu() })
    }

    /// Aligns the quarter-level volume to the eighth-level grid, stacks both
    /// along channels and reduces the result to 324 channels.
    pub fn align_and_fuse<T: Float>(
        &self,
        p: &ParamStore<T>,
        quarter: &MotionVolume<T>,
        eighth: &MotionVolume<T>,
    ) -> Result<AlignedCostVolume<T>> {
        let e = &eighth.data;
        if eighth.level != Level::Eighth || e.ndim() != 4 || e.shape()[1] != self.channels {
            return Err(shape_err(
                "align_and_fuse",
                format!("eighth-level volume {:?} must have {} channels", e.shape(), self.channels),
            ));
        }
        if !self.hierarchical {
            return self.reduce_eighth(p, eighth);
        }
        let q = &quarter.data;
        let &[b, _, h, w] = e.shape() else { unreachable!() };
        if quarter.level != Level::Quarter || q.shape() != [b, self.channels, 2 * h, 2 * w] {
            return Err(shape_err(
                "align_and_fuse",
                format!(
                    "quarter-level volume {:?} must be twice the eighth-level grid {:?}",
                    q.shape(),
                    e.shape()
                ),
            ));
        }
        let aligned = self.align(p, q)?;
        let fused = Tensor::concat(&[aligned, e.clone()], 1)?;
        Ok(AlignedCostVolume { data: self.reduce.forward(p, &fused)?.relu() })
    }
}
