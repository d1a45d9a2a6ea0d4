//! Single-head self-attention over the spatial positions of the aligned
//! cost volume.

use crate::error::{Error, Result};
use crate::hma::{AlignedCostVolume, ALIGNED_DIM};
use crate::params::{Conv, Init, LayerNorm, Linear, ParamSpec, ParamStore};
use crate::tensor::{ConvSpec, Float, Tensor};

const MLP_HIDDEN: usize = 2 * ALIGNED_DIM;

#[derive(Debug, Clone)]
pub struct Csa {
    enabled: bool,
    position_embedding: bool,
    max_tokens: usize,
    pre_proj: Conv,
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    norm2: LayerNorm,
    mlp1: Linear,
    mlp2: Linear,
}

impl Csa {
    /// `max_tokens` bounds `h * w` of the volumes the block accepts and sizes
    /// the position table.
    pub fn new(enabled: bool, position_embedding: bool, max_tokens: usize) -> Self {
        Self {
            enabled,
            position_embedding,
            max_tokens,
            pre_proj: Conv::new("csa.pre_proj", ConvSpec::new(ALIGNED_DIM, ALIGNED_DIM, (1, 1))),
            norm1: LayerNorm::new("csa.norm1", ALIGNED_DIM),
            q: Linear::new("csa.q", ALIGNED_DIM, ALIGNED_DIM),
            k: Linear::new("csa.k", ALIGNED_DIM, ALIGNED_DIM),
            v: Linear::new("csa.v", ALIGNED_DIM, ALIGNED_DIM),
            norm2: LayerNorm::new("csa.norm2", ALIGNED_DIM),
            mlp1: Linear::new("csa.mlp1", ALIGNED_DIM, MLP_HIDDEN),
            mlp2: Linear::new("csa.mlp2", MLP_HIDDEN, ALIGNED_DIM),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        if !self.enabled {
            return Vec::new();
        }
        let mut v = self.pre_proj.specs();
        if self.position_embedding {
            v.push(ParamSpec::new("csa.pos_embed", &[self.max_tokens, ALIGNED_DIM], Init::Zeros));
        }
        for l in [&self.q, &self.k, &self.v, &self.mlp1, &self.mlp2] {
            v.extend(l.specs());
        }
        v.extend(self.norm1.specs());
        v.extend(self.norm2.specs());
        v
    }

    /// Projects the volume and lays it out as `[B, N, 324]` tokens with the
    /// position embedding added.
    fn tokens<T: Float>(&self, p: &ParamStore<T>, vol: &Tensor<T>) -> Result<Tensor<T>> {
        vol.expect_rank("csa", 4)?;
        let &[b, c, h, w] = vol.shape() else { unreachable!() };
        let n = h * w;
        if c != ALIGNED_DIM {
            return Err(Error::InvalidArgument(format!("csa expects {ALIGNED_DIM} channels, got {c}")));
        }
        if n > self.max_tokens {
            return Err(Error::InvalidArgument(format!(
                "{h}x{w} volume has {n} tokens but the attention block was built for {}; \
                 rebuild the model with max_tokens >= {n}",
                self.max_tokens
            )));
        }
        let t = self.pre_proj.forward(p, vol)?.reshape(&[b, c, n])?.permute(&[0, 2, 1])?;
        if !self.position_embedding {
            return Ok(t);
        }
        let pos = p.get("csa.pos_embed")?.narrow(0, 0, n)?.reshape(&[1, n, c])?.expand(&[b, n, c])?;
        t.add(&pos)
    }

    fn attention<T: Float>(&self, p: &ParamStore<T>, t: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let y = self.norm1.forward(p, t)?;
        let q = self.q.forward(p, &y)?;
        let k = self.k.forward(p, &y)?;
        let v = self.v.forward(p, &y)?;
        let scale = T::lit(1.0 / (ALIGNED_DIM as f64).sqrt());
        let weights = q.matmul_nt(&k)?.scale(scale).softmax();
        let out = weights.matmul(&v)?;
        Ok((weights, out))
    }

    pub fn forward<T: Float>(&self, p: &ParamStore<T>, vol: &AlignedCostVolume<T>) -> Result<AlignedCostVolume<T>> {
        if !self.enabled {
            return Ok(vol.clone());
        }
        let shape = vol.data.shape().to_vec();
        let t = self.tokens(p, &vol.data)?;
        let (_, attended) = self.attention(p, &t)?;
        let t = t.add(&attended)?;
        let m = self.mlp1.forward(p, &self.norm2.forward(p, &t)?)?.gelu();
        let t = t.add(&self.mlp2.forward(p, &m)?)?;
        let data = t.permute(&[0, 2, 1])?.reshape(&shape)?;
        Ok(AlignedCostVolume { data })
    }

    /// Softmaxed attention matrix `[B, N, N]`.
    pub fn attention_weights<T: Float>(&self, p: &ParamStore<T>, vol: &AlignedCostVolume<T>) -> Result<Tensor<T>> {
        if !self.enabled {
            return Err(Error::InvalidArgument("attention block is disabled".into()));
        }
        let t = self.tokens(p, &vol.data)?;
        Ok(self.attention(p, &t)?.0)
    }
}
