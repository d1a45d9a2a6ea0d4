//! The full estimator: encoders, two-level volumes, search, alignment,
//! attention and the recurrent update loop.

use serde::{Deserialize, Serialize};

use crate::cost_volume::{build_base_volume, lookup_centroids, multi_scale_search, Level, SearchRadii};
use crate::csa::Csa;
use crate::encoders::{ContextEncoder, ContextSet, FeatureEncoder, FeatureSet};
use crate::error::{Error, Result};
use crate::flow::{FlowField, Resolution};
use crate::hma::{Alignment, Hma};
use crate::params::{ParamSpec, ParamStore};
use crate::tensor::{Float, Tensor};
use crate::updater::{convex_upsample, GruState, UpdateBlock};

/// Refinement steps used while training.
pub const TRAIN_ITERS: usize = 12;
/// Refinement steps used at inference.
pub const INFER_ITERS: usize = 24;

/// Parameter name under which the configuration is stored in weight files.
pub const CONFIG_PARAM: &str = "meta.config";

/// Architecture switches. The defaults describe the full model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub radii: Vec<usize>,
    pub alignment: Alignment,
    /// Fuse the quarter level into the eighth level; off uses the eighth
    /// level alone.
    pub hierarchical: bool,
    pub csa: bool,
    pub position_embedding: bool,
    /// Largest `h/8 * w/8` the attention block accepts.
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            radii: SearchRadii::default().as_slice().to_vec(),
            alignment: Alignment::Conv2x2,
            hierarchical: true,
            csa: true,
            position_embedding: true,
            max_tokens: 4096,
        }
    }
}

impl ModelConfig {
    /// Encodes the configuration as a flat tensor:
    /// `[hierarchical, csa, position_embedding, alignment, max_tokens, radii..]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut v = vec![
            self.hierarchical as u8 as f32,
            self.csa as u8 as f32,
            self.position_embedding as u8 as f32,
            self.alignment.code() as f32,
            self.max_tokens as f32,
        ];
        v.extend(self.radii.iter().map(|&r| r as f32));
        let n = v.len();
        Tensor::new(v, &[n]).expect("non-empty")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let d = t.data();
        let int = |x: f32| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 && x < 16_777_216.0 {
                Ok(x as usize)
            } else {
                Err(Error::InvalidArgument(format!("corrupt model configuration entry {x}")))
            }
        };
        if d.len() < 6 {
            return Err(Error::InvalidArgument("model configuration entry is too short".into()));
        }
        let flag = |x: f32| int(x).map(|v| v != 0);
        Ok(Self {
            hierarchical: flag(d[0])?,
            csa: flag(d[1])?,
            position_embedding: flag(d[2])?,
            alignment: Alignment::from_code(int(d[3])? as u8)?,
            max_tokens: int(d[4])?,
            radii: d[5..].iter().map(|&x| int(x)).collect::<Result<_>>()?,
        })
    }
}

/// Intermediate values of one refinement run.
#[derive(Debug, Clone)]
pub struct RefineTrace<T: Float = f32> {
    /// Full-resolution prediction after every iteration.
    pub predictions: Vec<FlowField<T>>,
    /// Eighth-level window centres queried in the first iteration,
    /// `[B, 2, h, w]`.
    pub first_centroids: Tensor<T>,
    /// Eighth-resolution flow after the last iteration.
    pub final_flow: FlowField<T>,
}

#[derive(Debug, Clone)]
pub struct HmaFlow {
    config: ModelConfig,
    radii: SearchRadii,
    fnet: FeatureEncoder,
    cnet: ContextEncoder,
    hma: Hma,
    csa: Csa,
    update: UpdateBlock,
}

impl HmaFlow {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let radii = SearchRadii::new(&config.radii)?;
        if config.max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be positive".into()));
        }
        Ok(Self {
            hma: Hma::new(radii.channels(), config.alignment, config.hierarchical),
            csa: Csa::new(config.csa, config.position_embedding, config.max_tokens),
            fnet: FeatureEncoder::default(),
            cnet: ContextEncoder::default(),
            update: UpdateBlock::default(),
            radii,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn radii(&self) -> &SearchRadii {
        &self.radii
    }

    pub fn hma(&self) -> &Hma {
        &self.hma
    }

    pub fn csa(&self) -> &Csa {
        &self.csa
    }

    pub fn update_block(&self) -> &UpdateBlock {
        &self.update
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.fnet.specs();
        v.extend(self.cnet.specs());
        v.extend(self.hma.specs());
        v.extend(self.csa.specs());
        v.extend(self.update.specs());
        v
    }

    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        ParamStore::init(&self.param_specs(), seed)
    }

    /// Checks that `p` holds every parameter with the expected shape.
    pub fn validate<T: Float>(&self, p: &ParamStore<T>) -> Result<()> {
        p.validate(&self.param_specs())
    }

    pub fn encode_features<T: Float>(&self, p: &ParamStore<T>, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<FeatureSet<T>> {
        self.fnet.forward(p, i1, i2)
    }

    pub fn encode_context<T: Float>(&self, p: &ParamStore<T>, i1: &Tensor<T>) -> Result<ContextSet<T>> {
        self.cnet.forward(p, i1)
    }

    /// Runs `iters` update steps and returns every upsampled prediction.
    pub fn refine<T: Float>(
        &self,
        p: &ParamStore<T>,
        features: &FeatureSet<T>,
        context: &ContextSet<T>,
        iters: usize,
        init_flow: Option<&FlowField<T>>,
    ) -> Result<Vec<FlowField<T>>> {
        Ok(self.refine_traced(p, features, context, iters, init_flow)?.predictions)
    }

    pub fn refine_traced<T: Float>(
        &self,
        p: &ParamStore<T>,
        features: &FeatureSet<T>,
        context: &ContextSet<T>,
        iters: usize,
        init_flow: Option<&FlowField<T>>,
    ) -> Result<RefineTrace<T>> {
        if iters == 0 {
            return Err(Error::InvalidArgument("at least one refinement iteration is required".into()));
        }
        let e = &features.f1_eighth;
        let &[b, _, h, w] = e.shape() else {
            return Err(Error::InvalidArgument("features must be [B, D, h, w]".into()));
        };
        let mut flow = match init_flow {
            None => FlowField::zeros(b, h, w, Resolution::Eighth),
            Some(f) => {
                if f.resolution() != Resolution::Eighth || f.tensor().shape() != [b, 2, h, w] {
                    return Err(Error::InvalidArgument(format!(
                        "initial flow must be eighth-resolution [{b}, 2, {h}, {w}], got {:?} at {:?}",
                        f.tensor().shape(),
                        f.resolution()
                    )));
                }
                f.detach()
            }
        };
        let vol_e = build_base_volume(&features.f1_eighth, &features.f2_eighth, Level::Eighth)?;
        let vol_q = if self.hma.hierarchical() {
            Some(build_base_volume(&features.f1_quarter, &features.f2_quarter, Level::Quarter)?)
        } else {
            None
        };
        let first_centroids = lookup_centroids(&flow, Level::Eighth)?;
        let mut state = GruState { hidden: context.hidden_init.clone() };
        let mut predictions = Vec::with_capacity(iters);
        for _ in 0..iters {
            // window centres are treated as constants within each step
            flow = flow.detach();
            let me = multi_scale_search(&vol_e, &flow, &self.radii)?;
            let aligned = match &vol_q {
                Some(vq) => {
                    let mq = multi_scale_search(vq, &flow, &self.radii)?;
                    self.hma.align_and_fuse(p, &mq, &me)?
                }
                None => self.hma.reduce_eighth(p, &me)?,
            };
            let enhanced = self.csa.forward(p, &aligned)?;
            let upd = self.update.step(p, &state, &context.context, &enhanced.data, flow.tensor())?;
            state = upd.state;
            flow = FlowField::new(flow.tensor().add(&upd.delta)?, Resolution::Eighth)?;
            predictions.push(convex_upsample(&flow, &upd.mask)?);
        }
        Ok(RefineTrace { predictions, first_centroids, final_flow: flow })
    }

    /// Encodes both images and refines from zero flow or `init_flow`.
    pub fn forward<T: Float>(
        &self,
        p: &ParamStore<T>,
        i1: &Tensor<T>,
        i2: &Tensor<T>,
        iters: usize,
        init_flow: Option<&FlowField<T>>,
    ) -> Result<RefineTrace<T>> {
        let features = self.encode_features(p, i1, i2)?;
        let context = self.encode_context(p, i1)?;
        self.refine_traced(p, &features, &context, iters, init_flow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_tensor() {
        let c = ModelConfig {
            radii: vec![2, 3],
            alignment: Alignment::MaxPool,
            hierarchical: false,
            csa: true,
            position_embedding: false,
            max_tokens: 77,
        };
        assert_eq!(ModelConfig::from_tensor(&c.to_tensor()).unwrap(), c);
        assert_eq!(ModelConfig::from_tensor(&ModelConfig::default().to_tensor()).unwrap(), ModelConfig::default());
    }

    #[test]
    fn rejects_zero_radius_and_zero_iterations() {
        let bad = ModelConfig { radii: vec![4, 0], ..ModelConfig::default() };
        assert!(HmaFlow::new(bad).is_err());
    }
}
