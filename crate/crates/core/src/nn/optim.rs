//! Parameter sets, Adam, weight clipping, and plateau-based LR scheduling.

use std::collections::BTreeMap;

use super::tape::{Grads, NodeId, Tape};
use super::tensor::Tensor5;
use super::NnError;

/// Named parameter tensors of one model, ordered by name.
///
/// The deterministic `BTreeMap` ordering makes checkpoint bytes and update
/// sweeps reproducible across runs.
#[derive(Debug, Clone, Default)]
pub struct Params {
    map: BTreeMap<String, Tensor5>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor5) -> Result<(), NnError> {
        if self.map.contains_key(name) {
            return Err(NnError::Graph(format!("parameter {name:?} defined twice")));
        }
        self.map.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor5> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor5> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor5)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar coefficients.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor5::numel).sum()
    }

    /// Binds every parameter onto `tape` as a trainable leaf, returning the
    /// node ids keyed by name.
    pub fn bind_trainable(&self, tape: &mut Tape) -> Result<BTreeMap<String, NodeId>, NnError> {
        let mut ids = BTreeMap::new();
        for (name, tensor) in &self.map {
            ids.insert(name.clone(), tape.param(name, tensor)?);
        }
        Ok(ids)
    }

    /// Binds every parameter as a constant leaf — no gradients flow into a
    /// model bound this way (e.g. the generator during a critic update).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<BTreeMap<String, NodeId>, NnError> {
        let mut ids = BTreeMap::new();
        for (name, tensor) in &self.map {
            ids.insert(name.clone(), tape.input(tensor.clone())?);
        }
        Ok(ids)
    }
}

/// Adam accumulator state shared across steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    /// Standard coefficients: β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment vectors keyed by parameter name (for checkpointing).
    pub fn moments(&self) -> (&BTreeMap<String, Vec<f64>>, &BTreeMap<String, Vec<f64>>) {
        (&self.m, &self.v)
    }

    /// Restores accumulator state from a checkpoint.
    pub fn restore(
        &mut self,
        step: u64,
        m: BTreeMap<String, Vec<f64>>,
        v: BTreeMap<String, Vec<f64>>,
    ) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// One Adam update over `params` using `grads`. Parameters without a gradient
/// entry (unreached by the loss) are left untouched; gradient shapes must
/// match their parameters.
pub fn adam_step(
    params: &mut Params,
    grads: &Grads,
    state: &mut AdamState,
) -> Result<(), NnError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, tensor) in params.map.iter_mut() {
        let Some((gshape, g)) = grads.get(name) else { continue };
        if *gshape != tensor.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient for {name:?} has shape {gshape:?}, parameter is {:?}",
                tensor.shape()
            )));
        }
        let n = tensor.numel();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        for ((p, (&gi, mi)), vi) in tensor
            .data_mut()
            .iter_mut()
            .zip(g.iter().zip(m.iter_mut()))
            .zip(v.iter_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Clamps every coefficient of every parameter to [−c, c] (the weight
/// constraint that keeps a Wasserstein critic Lipschitz-bounded).
pub fn clip_weights(params: &mut Params, c: f64) {
    for tensor in params.map.values_mut() {
        for w in tensor.data_mut() {
            *w = w.clamp(-c, c);
        }
    }
}

/// Halves the learning rate when the observed loss stops improving.
///
/// A loss counts as an improvement when it undercuts the best seen value by
/// more than `min_delta`; after `patience` consecutive non-improving
/// observations the rate is multiplied by `factor` and the counter resets.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub patience: u32,
    pub factor: f64,
    pub min_delta: f64,
    best: f64,
    stale: u32,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self::new(3, 0.5, 1e-4)
    }
}

impl PlateauSchedule {
    pub fn new(patience: u32, factor: f64, min_delta: f64) -> Self {
        Self { patience, factor, min_delta, best: f64::INFINITY, stale: 0 }
    }

    /// Internal state — best seen loss and stale counter — for
    /// checkpointing.
    pub fn state(&self) -> (f64, u32) {
        (self.best, self.stale)
    }

    /// Restores the internal state captured by [`PlateauSchedule::state`].
    pub fn restore(&mut self, best: f64, stale: u32) {
        self.best = best;
        self.stale = stale;
    }

    /// Feeds one loss observation; multiplies `lr` in place by `factor` when
    /// the plateau criterion fires and returns whether it did.
    pub fn observe(&mut self, loss: f64, lr: &mut f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            *lr *= self.factor;
            self.stale = 0;
            return true;
        }
        false
    }
}
