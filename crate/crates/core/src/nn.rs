//! Network building blocks: named parameters, linear layers, dropout, and
//! the Adam optimizer.
//!
//! Parameters live in a `ParameterStore` outside any graph. A training step
//! binds every parameter into a fresh graph as a gradient-tracked leaf,
//! runs forward/backward, copies the leaf gradients back into the store, and
//! lets Adam consume them. Insertion order is the canonical parameter order;
//! checkpoints and optimizer state both index by it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::{Graph, NodeId, Rng, Tensor};

#[derive(Default)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(None);
        Ok(())
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.values[self.idx(name)?])
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.idx(name)?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "parameter_set",
                lhs: self.values[i].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// (name, value) pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn grad(&self, name: &str) -> Result<Option<&[f64]>> {
        Ok(self.grads[self.idx(name)?].as_deref())
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Inserts every parameter into `g` as a gradient-tracked leaf.
    pub fn bind_all(&self, g: &mut Graph) -> Binding {
        let mut ids = HashMap::with_capacity(self.names.len());
        let mut ordered = Vec::with_capacity(self.names.len());
        for (name, value) in self.iter() {
            let id = g.leaf(value, true);
            ids.insert(name.to_string(), id);
            ordered.push(id);
        }
        Binding { ids, ordered }
    }

    /// Binds every parameter as a constant except `name`, which maps to the
    /// caller-provided node. Finite-difference checks use this to study one
    /// parameter tensor at a time.
    pub fn bind_with_override(&self, g: &mut Graph, name: &str, node: NodeId) -> Result<Binding> {
        self.idx(name)?;
        let mut ids = HashMap::with_capacity(self.names.len());
        let mut ordered = Vec::with_capacity(self.names.len());
        for (n, value) in self.iter() {
            let id = if n == name { node } else { g.constant(value) };
            ids.insert(n.to_string(), id);
            ordered.push(id);
        }
        Ok(Binding { ids, ordered })
    }

    /// Copies leaf gradients from a differentiated graph back into the
    /// store. Every parameter must have received one; a parameter the loss
    /// never touched indicates a miswired model, not a value to silently
    /// treat as zero.
    pub fn collect_grads(&mut self, g: &Graph, binding: &Binding) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let id = binding.ordered[i];
            match g.grad(id) {
                Some(grad) => self.grads[i] = Some(grad.to_vec()),
                None => return Err(Error::MissingGrad(name.clone())),
            }
        }
        Ok(())
    }

    fn grads_in_order(&self) -> &[Option<Vec<f64>>] {
        &self.grads
    }

    fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }
}

/// Leaf ids a store produced for one particular graph.
pub struct Binding {
    ids: HashMap<String, NodeId>,
    ordered: Vec<NodeId>,
}

impl Binding {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual fully-connected default.
pub fn init_uniform_fanin(rng: &mut Rng, fan_in: usize, shape: Vec<usize>) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| (rng.uniform() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::new(shape, data).expect("shape product matches generated length")
}

/// Fully-connected layer y = x W + b with W stored (in, out) and b (1, out).
///
/// The bias broadcast is expressed inside the op set as ones(batch,1) x b,
/// so the whole layer differentiates through plain matmul/add.
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.insert(&w, init_uniform_fanin(rng, in_dim, vec![in_dim, out_dim]))?;
        store.insert(&b, init_uniform_fanin(rng, in_dim, vec![1, out_dim]))?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, binding: &Binding, x: NodeId) -> Result<NodeId> {
        let w = binding.get(&self.w)?;
        let b = binding.get(&self.b)?;
        let xw = g.matmul(x, w)?;
        let batch = g.shape(xw)[0];
        let ones = g.constant(&Tensor::full(vec![batch, 1], 1.0));
        let bias = g.matmul(ones, b)?;
        g.add(xw, bias)
    }
}

/// Inverted dropout: each element is kept with probability 1-rate and
/// scaled by 1/(1-rate), so activations keep their expectation and the
/// evaluation path is the identity.
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::BadDropoutRate(rate));
        }
        Ok(Dropout { rate })
    }

    /// `rng: Some` samples a fresh mask (training); `None` is the identity
    /// (evaluation). The mask enters the graph as a constant, so backward
    /// gates gradients exactly like the forward pass gated values.
    pub fn apply(&self, g: &mut Graph, x: NodeId, rng: Option<&mut Rng>) -> Result<NodeId> {
        let Some(rng) = rng else { return Ok(x) };
        if self.rate == 0.0 {
            return Ok(x);
        }
        let n = g.data(x).len();
        let scale = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < self.rate { 0.0 } else { scale })
            .collect();
        let mask = g.constant(&Tensor::new(g.shape(x).to_vec(), mask).expect("mask fits x"));
        g.mul(x, mask)
    }
}

/// Adam with bias correction. Moment buffers are kept per parameter in
/// store order and persist across steps (and, via export/import, across
/// process restarts).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update using the gradients currently held by the store,
    /// then clears them. Errors if any parameter is missing a gradient.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, v)| vec![0.0; v.numel()]).collect();
            self.v = self.m.clone();
        }
        for (i, g) in store.grads_in_order().iter().enumerate() {
            if g.is_none() {
                return Err(Error::MissingGrad(store.names[i].clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let grad = store.grads[i].take().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(i).data_mut();
            for j in 0..grad.len() {
                let gj = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// (step count, first moments, second moments) in parameter order.
    pub fn export_state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn import_state(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
