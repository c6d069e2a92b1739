use rand::seq::index;

use super::env::Action;
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f32>,
    /// Terminal transition: no bootstrapping from `next_state`.
    pub done: bool,
}

/// A sampled minibatch laid out for the networks.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar = f32> {
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
    pub rewards: Vec<f64>,
    pub next_states: Tensor<T>,
    pub dones: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[Transition]) -> Result<Self> {
        let n = items.len();
        let dim = items.first().map_or(0, |t| t.state.len());
        let mut s = Vec::with_capacity(n * dim);
        let mut s2 = Vec::with_capacity(n * dim);
        let mut a = Vec::with_capacity(n * 2);
        for t in items {
            if t.state.len() != dim || t.next_state.len() != dim {
                return Err(Error::shape("batch", "transitions have different state lengths"));
            }
            s.extend(t.state.iter().map(|v| T::of(*v as f64)));
            s2.extend(t.next_state.iter().map(|v| T::of(*v as f64)));
            a.extend([T::of(t.action.dx), T::of(t.action.dy)]);
        }
        Ok(Self {
            states: Tensor::from_vec(&[n, dim], s)?,
            actions: Tensor::from_vec(&[n, 2], a)?,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: Tensor::from_vec(&[n, dim], s2)?,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform without replacement within the batch.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if n > self.items.len() {
            return Err(Error::State(format!(
                "cannot sample {n} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(index::sample(rng, self.items.len(), n).into_vec())
    }

    pub fn sample<T: Scalar>(&self, n: usize, rng: &mut Rng) -> Result<Batch<T>> {
        let picked: Vec<Transition> = self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect();
        Batch::from_transitions(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn t(r: f64) -> Transition {
        Transition {
            state: vec![r as f32],
            action: Action::new(r, -r),
            reward: r,
            next_state: vec![r as f32 + 1.0],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let mut rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..50 {
            b.push(t(i as f64));
        }
        let mut rng = seeded(3);
        let mut idx = b.sample_indices(50, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
        assert!(b.sample_indices(51, &mut rng).is_err());
        let batch: Batch<f64> = b.sample(4, &mut rng).unwrap();
        assert_eq!(batch.states.shape(), &[4, 1]);
        for i in 0..4 {
            assert_eq!(batch.next_states.data()[i], batch.states.data()[i] + 1.0);
            assert_eq!(batch.actions.data()[2 * i], batch.rewards[i]);
        }
    }
}
