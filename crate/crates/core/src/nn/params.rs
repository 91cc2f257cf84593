//! Named parameter collections and their binding onto a tape.
//!
//! Parameters live in a sorted map so that iteration order, and with it
//! every optimizer update and serialization, is deterministic.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::nn::graph::{Graph, VarId};

/// Named tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        assert!(
            self.map.insert(name.clone(), value).is_none(),
            "duplicate parameter '{name}'"
        );
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Merges `other` in, failing on duplicate names.
    pub fn absorb(&mut self, other: Params) {
        for (name, value) in other.map {
            self.insert(name, value);
        }
    }

    /// Subset of parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Params {
        let map = self
            .map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Params { map }
    }

    // ----- initializers -----

    /// Uniform fan-in initialization for a `[fan_in, fan_out]` weight.
    pub fn init_linear(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let limit = (1.0 / fan_in as f64).sqrt();
        let w = ArrayD::from_shape_fn(IxDyn(&[fan_in, fan_out]), |_| {
            rng.random_range(-limit..limit)
        });
        self.insert(format!("{name}.w"), w);
        self.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[fan_out])));
    }

    /// Linear layer with weight and bias forced to zero, so its output
    /// is identically zero until training moves it.
    pub fn init_linear_zero(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.insert(format!("{name}.w"), ArrayD::zeros(IxDyn(&[fan_in, fan_out])));
        self.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[fan_out])));
    }

    /// A tensor of small uniform noise around a base array.
    pub fn init_noisy(
        &mut self,
        name: &str,
        base: ArrayD<f64>,
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let jitter = ArrayD::from_shape_fn(base.raw_dim(), |_| rng.random_range(-noise..noise));
        self.insert(name, base + jitter);
    }

    pub fn init_uniform(&mut self, name: &str, shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) {
        let v = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-limit..limit));
        self.insert(name, v);
    }
}

/// Parameter names bound to tape leaves for one graph build.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: BTreeMap<String, VarId>,
}

impl Bound {
    /// Inserts every parameter as a trainable leaf.
    pub fn bind(graph: &mut Graph, params: &Params) -> Self {
        let mut ids = BTreeMap::new();
        for (name, value) in params.iter() {
            ids.insert(name.clone(), graph.leaf(value.clone()));
        }
        Self { ids }
    }

    pub fn id(&self, name: &str) -> VarId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    /// Gradients for every bound parameter after a backward sweep;
    /// parameters the loss never touched get zeros.
    pub fn grads(&self, graph: &Graph, params: &Params) -> BTreeMap<String, ArrayD<f64>> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.ids {
            let g = match graph.grad(*id) {
                Some(g) => g.clone(),
                None => ArrayD::zeros(params.get(name).raw_dim()),
            };
            out.insert(name.clone(), g);
        }
        out
    }
}
