use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// Adam first and second moments.
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Buffers such as batch-norm running statistics are stored alongside
    /// the weights but never touched by the optimizer.
    pub trainable: bool,
}

/// Named tensors with gradient and optimizer buffers, in creation order.
#[derive(Debug, Clone)]
pub struct ParameterStore<T: Scalar = f32> {
    entries: Vec<Parameter<T>>,
    /// Adam steps taken so far.
    pub step: u64,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            step: 0,
        }
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let n = value.len();
        self.entries.push(Parameter {
            name,
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.entries.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }


    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// One Adam step with bias correction at step index `t >= 1`; clears
    /// the gradients afterwards. Any non-finite gradient aborts before a
    /// single parameter is touched.
    pub fn adam_step(&mut self, cfg: &AdamConfig, t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::Config("Adam step index starts at 1".into()));
        }
        if let Some(p) = self
            .entries
            .iter()
            .find(|p| p.trainable && p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite(format!("gradient of '{}'", p.name)));
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for p in self.entries.iter_mut().filter(|p| p.trainable) {
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i].f64();
                let m = cfg.beta1 * p.m[i].f64() + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v[i].f64() + (1.0 - cfg.beta2) * g * g;
                p.m[i] = T::of(m);
                p.v[i] = T::of(v);
                let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
                data[i] = T::of(data[i].f64() - update);
            }
        }
        self.step = t;
        self.zero_grad();
        Ok(())
    }

    /// Adam step using the internal counter.
    pub fn adam(&mut self, cfg: &AdamConfig) -> Result<()> {
        let t = self.step + 1;
        self.adam_step(cfg, t)
    }

    /// `self <- tau * online + (1 - tau) * self` for every parameter,
    /// buffers included. Both stores must come from the same architecture.
    pub fn soft_update_from(&mut self, online: &ParameterStore<T>, tau: f64) -> Result<()> {
        if self.entries.len() != online.entries.len() {
            return Err(Error::shape("soft update", "parameter stores differ in layout"));
        }
        for (t, o) in self.entries.iter_mut().zip(&online.entries) {
            if t.value.shape() != o.value.shape() {
                return Err(Error::shape("soft update", format!("'{}' shape differs", t.name)));
            }
            for (a, b) in t.value.data_mut().iter_mut().zip(o.value.data()) {
                *a = T::of(tau * b.f64() + (1.0 - tau) * a.f64());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f32) -> (ParameterStore<f32>, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("p", Tensor::from_vec(&[1], vec![v]).unwrap(), true).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(1.0);
        s.get_mut(id).grad[0] = 1.0;
        s.adam_step(&AdamConfig::with_lr(0.1), 1).unwrap();
        let v = s.get(id).value.data()[0];
        assert!((v - 0.9).abs() < 1e-6, "{v}");
        assert_eq!(s.get(id).grad[0], 0.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, id) = scalar_store(0.25);
        s.adam_step(&AdamConfig::default(), 1).unwrap();
        assert_eq!(s.get(id).value.data()[0], 0.25);
    }

    #[test]
    fn nan_gradient_fails_fast() {
        let (mut s, id) = scalar_store(0.25);
        s.get_mut(id).grad[0] = f32::NAN;
        assert!(matches!(s.adam_step(&AdamConfig::default(), 1), Err(Error::NonFinite(_))));
        assert_eq!(s.get(id).value.data()[0], 0.25);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let (mut s, id) = scalar_store(0.5);
            for t in 1..=5 {
                s.get_mut(id).grad[0] = 0.3 * t as f32;
                s.adam_step(&AdamConfig::default(), t).unwrap();
            }
            s.get(id).value.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = scalar_store(0.0);
        assert!(s.add("p", Tensor::zeros(&[1]), true).is_err());
    }
}
