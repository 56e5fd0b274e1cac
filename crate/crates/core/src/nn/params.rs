use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors with gradient slots and Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
    step: u64,
}

/// Gradients for a subset of parameters, produced by one backward pass.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn empty(n: usize) -> Self {
        ParamGrads {
            grads: (0..n).map(|_| None).collect(),
        }
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Validation(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        let (r, c) = (value.rows(), value.cols());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: None,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Uniform Glorot initialization for an `rows x cols` weight.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.data().len()).sum()
    }

    /// Adds a backward pass's gradients into the gradient slots.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (entry, g) in self.entries.iter_mut().zip(&grads.grads) {
            let Some(g) = g else { continue };
            match &mut entry.grad {
                Some(existing) => existing.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for e in &mut self.entries {
            if let Some(g) = &mut e.grad {
                *g = g.scale(s);
            }
        }
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self
            .entries
            .iter()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    pub fn adam_steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Every parameter needs a gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| e.grad.is_none()) {
            return Err(Error::MissingGradient(e.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in &mut self.entries {
            let g = e.grad.as_ref().expect("checked above");
            let (p, m, v) = (e.value.data_mut(), e.m.data_mut(), e.v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Name/value pairs in registration order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut p = ModelParams::new();
        let id = p.add("w", Tensor::from_vec(1, 2, vec![0.5, -1.0]).unwrap()).unwrap();
        let mut g = ParamGrads::empty(1);
        g.set(id, Tensor::zeros(1, 2));
        p.accumulate(&g);
        p.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(p.value(id).data(), &[0.5, -1.0]);
    }

    #[test]
    fn single_step_matches_closed_form() {
        let mut p = ModelParams::new();
        let id = p.add("p", Tensor::scalar(2.0)).unwrap();
        let mut g = ParamGrads::empty(1);
        g.set(id, Tensor::scalar(1.0));
        p.accumulate(&g);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        p.adam_step(&cfg).unwrap();
        // m = 0.1, v = 0.001; mhat = 1, vhat = 1; step = lr / (1 + eps)
        let want = 2.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.value(id).to_scalar() - want).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut p = ModelParams::new();
        p.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            p.adam_step(&AdamConfig::default()),
            Err(Error::MissingGradient(n)) if n == "w"
        ));
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = ModelParams::new();
            let id = p.add("w", Tensor::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
            for _ in 0..2 {
                let mut g = ParamGrads::empty(1);
                g.set(id, Tensor::from_vec(1, 3, vec![0.3, -0.7, 1.1]).unwrap());
                p.zero_grads();
                p.accumulate(&g);
                p.adam_step(&AdamConfig::default()).unwrap();
            }
            p.value(id).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::new();
        p.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(p.add("w", Tensor::scalar(1.0)).is_err());
    }
}
