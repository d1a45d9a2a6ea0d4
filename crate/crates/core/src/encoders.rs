//! Residual convolutional encoders with taps at strides 4 and 8.

use crate::error::{Error, Result};
use crate::params::{Conv, ParamSpec, ParamStore};
use crate::tensor::{ConvSpec, Float, Tensor};

/// Channels of both feature levels.
pub const FEATURE_DIM: usize = 384;
/// GRU hidden state width.
pub const HIDDEN_DIM: usize = 128;
/// Width of the context features injected into the GRU.
pub const CONTEXT_DIM: usize = 128;

const QUARTER_WIDTH: usize = 96;
const EIGHTH_WIDTH: usize = 128;
const NORM_EPS: f64 = 1e-5;

/// Frame-1 and frame-2 features at quarter and eighth resolution.
#[derive(Debug, Clone)]
pub struct FeatureSet<T: Float = f32> {
    pub f1_quarter: Tensor<T>,
    pub f1_eighth: Tensor<T>,
    pub f2_quarter: Tensor<T>,
    pub f2_eighth: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ContextSet<T: Float = f32> {
    /// Initial GRU state, tanh-bounded.
    pub hidden_init: Tensor<T>,
    /// Non-negative features fed to every GRU update.
    pub context: Tensor<T>,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    down: Option<Conv>,
}

impl ResBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let down = (stride != 1 || cin != cout)
            .then(|| Conv::new(format!("{name}.down"), ConvSpec::new(cin, cout, (1, 1)).stride(stride)));
        Self {
            conv1: Conv::new(format!("{name}.conv1"), ConvSpec::new(cin, cout, (3, 3)).stride(stride).same()),
            conv2: Conv::new(format!("{name}.conv2"), ConvSpec::new(cout, cout, (3, 3)).same()),
            down,
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.conv1.specs();
        v.extend(self.conv2.specs());
        if let Some(d) = &self.down {
            v.extend(d.specs());
        }
        v
    }

    fn forward<T: Float>(&self, p: &ParamStore<T>, x: &Tensor<T>, norm: bool) -> Result<Tensor<T>> {
        let n = |t: Tensor<T>| if norm { t.instance_norm(NORM_EPS) } else { Ok(t) };
        let y = n(self.conv1.forward(p, x)?)?.relu();
        let y = n(self.conv2.forward(p, &y)?)?.relu();
        let skip = match &self.down {
            Some(d) => n(d.forward(p, x)?)?,
            None => x.clone(),
        };
        Ok(skip.add(&y)?.relu())
    }
}

/// Stem plus three residual stages at strides 2, 4 and 8.
#[derive(Debug, Clone)]
struct Backbone {
    stem: Conv,
    blocks: Vec<ResBlock>,
    /// Index of the last block of the stride-4 stage.
    quarter_tap: usize,
    norm: bool,
}

impl Backbone {
    fn new(prefix: &str, norm: bool) -> Self {
        let b = |i: usize, cin, cout, s| ResBlock::new(&format!("{prefix}.block{i}"), cin, cout, s);
        Self {
            stem: Conv::new(format!("{prefix}.stem"), ConvSpec::new(3, 64, (7, 7)).stride(2).padding(3, 3)),
            blocks: vec![
                b(0, 64, 64, 1),
                b(1, 64, 64, 1),
                b(2, 64, QUARTER_WIDTH, 2),
                b(3, QUARTER_WIDTH, QUARTER_WIDTH, 1),
                b(4, QUARTER_WIDTH, EIGHTH_WIDTH, 2),
                b(5, EIGHTH_WIDTH, EIGHTH_WIDTH, 1),
            ],
            quarter_tap: 3,
            norm,
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.stem.specs();
        for b in &self.blocks {
            v.extend(b.specs());
        }
        v
    }

    /// Returns the stride-4 and stride-8 activations.
    fn forward<T: Float>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut y = self.stem.forward(p, x)?;
        if self.norm {
            y = y.instance_norm(NORM_EPS)?;
        }
        y = y.relu();
        let mut quarter = None;
        for (i, b) in self.blocks.iter().enumerate() {
            y = b.forward(p, &y, self.norm)?;
            if i == self.quarter_tap {
                quarter = Some(y.clone());
            }
        }
        Ok((quarter.expect("tap index inside the block list"), y))
    }
}

fn check_input<T: Float>(x: &Tensor<T>, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::InvalidArgument(format!("{what}: expected [B, 3, H, W], got {s:?}")));
    }
    if s[2] % 8 != 0 || s[3] % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{what}: {}x{} is not divisible by 8; pad the images to a multiple of 8",
            s[2], s[3]
        )));
    }
    Ok(())
}

/// Weight-shared feature encoder producing 384-channel maps at two levels.
#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    backbone: Backbone,
    proj_quarter: Conv,
    proj_eighth: Conv,
}

impl Default for FeatureEncoder {
    fn default() -> Self {
        let proj = |name: &str, cin| {
            let mut c = Conv::new(name, ConvSpec::new(cin, FEATURE_DIM, (1, 1)));
            c.bias = false;
            c
        };
        Self {
            backbone: Backbone::new("fnet", true),
            proj_quarter: proj("fnet.proj_quarter", QUARTER_WIDTH),
            proj_eighth: proj("fnet.proj_eighth", EIGHTH_WIDTH),
        }
    }
}

impl FeatureEncoder {
    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.backbone.specs();
        v.extend(self.proj_quarter.specs());
        v.extend(self.proj_eighth.specs());
        v
    }

    /// Runs both images through the same weights in one batch.
    pub fn forward<T: Float>(&self, p: &ParamStore<T>, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<FeatureSet<T>> {
        check_input(i1, "image1")?;
        check_input(i2, "image2")?;
        if i1.shape() != i2.shape() {
            return Err(Error::InvalidArgument(format!(
                "image shapes differ: {:?} vs {:?}",
                i1.shape(),
                i2.shape()
            )));
        }
        let b = i1.shape()[0];
        let x = Tensor::concat(&[i1.clone(), i2.clone()], 0)?;
        let (q, e) = self.backbone.forward(p, &x)?;
        let q = self.proj_quarter.forward(p, &q)?;
        let e = self.proj_eighth.forward(p, &e)?;
        Ok(FeatureSet {
            f1_quarter: q.narrow(0, 0, b)?,
            f2_quarter: q.narrow(0, b, b)?,
            f1_eighth: e.narrow(0, 0, b)?,
            f2_eighth: e.narrow(0, b, b)?,
        })
    }
}

/// Frame-1 context encoder; the stride-4 tap is folded into the stride-8
/// tap by a strided convolution before the hidden/context split.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    backbone: Backbone,
    proj_eighth: Conv,
    skip_quarter: Conv,
}

impl Default for ContextEncoder {
    fn default() -> Self {
        let out = HIDDEN_DIM + CONTEXT_DIM;
        Self {
            backbone: Backbone::new("cnet", false),
            proj_eighth: Conv::new("cnet.proj_eighth", ConvSpec::new(EIGHTH_WIDTH, out, (1, 1))),
            skip_quarter: Conv::new(
                "cnet.skip_quarter",
                ConvSpec::new(QUARTER_WIDTH, out, (3, 3)).stride(2).padding(1, 1),
            ),
        }
    }
}

impl ContextEncoder {
    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.backbone.specs();
        v.extend(self.proj_eighth.specs());
        v.extend(self.skip_quarter.specs());
        v
    }

    pub fn forward<T: Float>(&self, p: &ParamStore<T>, i1: &Tensor<T>) -> Result<ContextSet<T>> {
        check_input(i1, "image1")?;
        let (q, e) = self.backbone.forward(p, i1)?;
        let fused = self.proj_eighth.forward(p, &e)?.add(&self.skip_quarter.forward(p, &q)?)?;
        Ok(ContextSet {
            hidden_init: fused.narrow(1, 0, HIDDEN_DIM)?.tanh(),
            context: fused.narrow(1, HIDDEN_DIM, CONTEXT_DIM)?.relu(),
        })
    }
}
