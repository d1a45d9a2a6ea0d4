//! Named parameter storage, deterministic initialization and the small
//! layer descriptors shared by every network component.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{ConvSpec, Float, Tensor};

/// How a parameter is filled before training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Constant(f64),
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }
}

/// Parameters keyed by dotted names, iterated in sorted order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Float = f32> {
    map: BTreeMap<String, Tensor<T>>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    /// Materializes every spec. Each tensor draws from its own stream seeded
    /// by `seed` and its name, so adding a parameter never perturbs others.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut store = Self::new();
        for spec in specs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&spec.name));
            let t = match spec.init {
                Init::Uniform(b) => Tensor::from_fn(&spec.shape, |_| T::lit(rng.gen_range(-b..=b))),
                Init::Constant(c) => Tensor::full(&spec.shape, T::lit(c)),
                Init::Zeros => Tensor::zeros(&spec.shape),
            };
            store.map.insert(spec.name.clone(), t);
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.map.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Fresh tracked leaves sharing this store's data.
    pub fn tracked(&self) -> Self {
        let map = self.map.iter().map(|(k, v)| (k.clone(), v.detach().requires_grad_())).collect();
        Self { map }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore { map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Checks that every spec is present with the declared shape.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(shape_err(
                    "params",
                    format!("`{}` has shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape),
                ));
            }
        }
        Ok(())
    }
}

/// Replaces the initializer of every spec whose name starts with `prefix`.
pub fn override_init(specs: Vec<ParamSpec>, prefix: &str, init: Init) -> Vec<ParamSpec> {
    specs
        .into_iter()
        .map(|mut s| {
            if s.name.starts_with(prefix) {
                s.init = init;
            }
            s
        })
        .collect()
}

fn fan_in_bound(fan_in: usize) -> Init {
    Init::Uniform(1.0 / (fan_in as f64).sqrt())
}

/// A 2-D convolution with named weight and optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub spec: ConvSpec,
    pub bias: bool,
    pub weight_init: Init,
    pub bias_init: Init,
}

impl Conv {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        let [_, cin, kh, kw] = spec.weight_shape();
        let bound = fan_in_bound(cin * kh * kw);
        Self { name: name.into(), spec, bias: true, weight_init: bound, bias_init: bound }
    }

    pub fn weight_init(mut self, init: Init) -> Self {
        self.weight_init = init;
        self
    }

    pub fn bias_init(mut self, init: Init) -> Self {
        self.bias_init = init;
        self
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::new(
            format!("{}.weight", self.name),
            &self.spec.weight_shape(),
            self.weight_init,
        )];
        if self.bias {
            v.push(ParamSpec::new(format!("{}.bias", self.name), &[self.spec.out_channels], self.bias_init));
        }
        v
    }

    pub fn forward<T: Float>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = if self.bias { Some(p.get(&format!("{}.bias", self.name))?) } else { None };
        x.conv2d(&self.spec, w, b)
    }
}

/// Affine map over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weight_init: Init,
}

impl Linear {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self { name: name.into(), inputs, outputs, weight_init: fan_in_bound(inputs) }
    }

    pub fn weight_init(mut self, init: Init) -> Self {
        self.weight_init = init;
        self
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{}.weight", self.name), &[self.outputs, self.inputs], self.weight_init),
            ParamSpec::new(format!("{}.bias", self.name), &[self.outputs], fan_in_bound(self.inputs)),
        ]
    }

    pub fn forward<T: Float>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        x.linear(w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{}.gamma", self.name), &[self.dim], Init::Constant(1.0)),
            ParamSpec::new(format!("{}.beta", self.name), &[self.dim], Init::Zeros),
        ]
    }

    pub fn forward<T: Float>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = p.get(&format!("{}.gamma", self.name))?;
        let b = p.get(&format!("{}.beta", self.name))?;
        x.layer_norm(g, b, Self::EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_independent_of_order() {
        let a = ParamSpec::new("a", &[4], Init::Uniform(1.0));
        let b = ParamSpec::new("b", &[3], Init::Constant(2.0));
        let s1: ParamStore = ParamStore::init(&[a.clone(), b.clone()], 7);
        let s2: ParamStore = ParamStore::init(&[b, a], 7);
        assert_eq!(s1.get("a").unwrap().data(), s2.get("a").unwrap().data());
        assert_eq!(s1.get("b").unwrap().data(), &[2.0; 3]);
        assert!(s1.get("a").unwrap().data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn missing_and_misshapen_params_are_reported() {
        let spec = ParamSpec::new("w", &[2, 2], Init::Zeros);
        let mut s: ParamStore = ParamStore::new();
        assert!(matches!(s.validate(std::slice::from_ref(&spec)), Err(Error::MissingParam(_))));
        s.insert("w", Tensor::zeros(&[4]));
        assert!(s.validate(&[spec]).is_err());
    }
}
