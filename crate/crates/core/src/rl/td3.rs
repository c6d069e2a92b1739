//! Twin delayed deep deterministic policy gradient.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::env::Action;
use super::replay::Batch;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, GraphSpec, LayerSpec, Mode, Network, Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    /// Target smoothing noise std and clip, as fractions of the action bound.
    pub smoothing_std: f64,
    pub smoothing_clip: f64,
    /// Exploration noise std as a fraction of the action bound.
    pub exploration_std: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Uniformly random actions before the policy takes over.
    pub start_steps: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub eval_episodes: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_std: 0.2,
            smoothing_clip: 0.5,
            exploration_std: 0.1,
            batch_size: 128,
            epochs: 100,
            steps_per_epoch: 500,
            start_steps: 2_000,
            buffer_capacity: 100_000,
            hidden: 128,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            eval_episodes: 20,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if !(self.smoothing_std >= 0.0 && self.smoothing_clip >= 0.0 && self.exploration_std >= 0.0) {
            return bad("noise parameters must be non-negative");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.eval_episodes == 0 {
            return bad("batch_size, hidden and eval_episodes must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must hold at least one batch");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

/// Two hidden ReLU layers, tanh output scaled to the action bound.
pub fn actor_graph(state_dim: usize, hidden: usize, max_action: f64) -> GraphSpec {
    GraphSpec {
        input_shape: vec![state_dim],
        layers: vec![
            LayerSpec::dense(hidden).relu(),
            LayerSpec::dense(hidden).relu(),
            LayerSpec::dense(2).tanh(),
            LayerSpec::scale(max_action as f32),
        ],
    }
}

/// Q(s, a) on the concatenated input.
pub fn critic_graph(state_dim: usize, hidden: usize) -> GraphSpec {
    GraphSpec {
        input_shape: vec![state_dim + 2],
        layers: vec![
            LayerSpec::dense(hidden).relu(),
            LayerSpec::dense(hidden).relu(),
            LayerSpec::dense(1),
        ],
    }
}

#[derive(Debug, Clone)]
pub struct Td3Agent<T: Scalar = f32> {
    pub actor: Network<T>,
    pub critic1: Network<T>,
    pub critic2: Network<T>,
    pub actor_target: Network<T>,
    pub critic1_target: Network<T>,
    pub critic2_target: Network<T>,
    pub max_action: f64,
    /// `td3_update` calls so far.
    pub updates: u64,
}

impl<T: Scalar> Td3Agent<T> {
    pub fn new(state_dim: usize, hidden: usize, max_action: f64, rng: &mut Rng) -> Result<Self> {
        let actor = Network::new(actor_graph(state_dim, hidden, max_action), "actor.", rng)?;
        let critic1 = Network::new(critic_graph(state_dim, hidden), "critic1.", rng)?;
        let critic2 = Network::new(critic_graph(state_dim, hidden), "critic2.", rng)?;
        Self::from_networks(actor, critic1, critic2, max_action)
    }

    /// Targets start as copies of the online networks.
    pub fn from_networks(actor: Network<T>, critic1: Network<T>, critic2: Network<T>, max_action: f64) -> Result<Self> {
        let k = actor.input_shape().iter().product::<usize>();
        if actor.output_shape() != [2] {
            return Err(Error::shape("td3 actor", format!("expected 2 outputs, got {:?}", actor.output_shape())));
        }
        for c in [&critic1, &critic2] {
            if c.input_shape() != [k + 2] || c.output_shape() != [1] {
                return Err(Error::shape("td3 critic", "critic must map state+action to one value"));
            }
        }
        Ok(Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            max_action,
            updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_shape()[0]
    }

    /// Greedy action.
    pub fn act(&self, state: &[f32]) -> Result<Action> {
        if state.len() != self.state_dim() {
            return Err(Error::shape(
                "select_action",
                format!("state has {} values, actor expects {}", state.len(), self.state_dim()),
            ));
        }
        let x = Tensor::from_vec(&[1, state.len()], state.iter().map(|v| T::of(*v as f64)).collect())?;
        let out = self.actor.infer(&x)?;
        let a = out.data();
        Ok(Action::new(a[0].f64(), a[1].f64()).clamped(self.max_action))
    }
}

/// Actor output plus, when exploring, Gaussian noise of std
/// `noise_std * max_action`, clamped to the action box.
pub fn select_action<T: Scalar>(
    agent: &Td3Agent<T>,
    state: &[f32],
    explore: bool,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<Action> {
    let a = agent.act(state)?;
    if !explore || noise_std == 0.0 {
        return Ok(a);
    }
    let n = Normal::new(0.0, noise_std * agent.max_action).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Action::new(a.dx + n.sample(rng), a.dy + n.sample(rng)).clamped(agent.max_action))
}

/// Target policy smoothing noise for `n` actions, flattened `[n, 2]`.
pub fn smoothing_noise(n: usize, cfg: &Td3Config, max_action: f64, rng: &mut Rng) -> Vec<f64> {
    let std = cfg.smoothing_std * max_action;
    let clip = cfg.smoothing_clip * max_action;
    if std == 0.0 {
        return vec![0.0; 2 * n];
    }
    let normal = Normal::new(0.0, std).expect("std checked by validate");
    (0..2 * n).map(|_| normal.sample(rng).clamp(-clip, clip)).collect()
}

pub fn concat_state_action<T: Scalar>(s: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = (s.batch(), s.item_len());
    if a.batch() != n || a.item_len() != 2 {
        return Err(Error::shape("critic input", "state and action batches differ"));
    }
    let mut out = Vec::with_capacity(n * (k + 2));
    for i in 0..n {
        out.extend_from_slice(s.item(i));
        out.extend_from_slice(a.item(i));
    }
    Tensor::from_vec(&[n, k + 2], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetValues {
    /// Smoothed target-policy actions, `[n, 2]`.
    pub next_actions: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    /// `r + gamma * (1 - done) * min(q1, q2)`
    pub y: Vec<f64>,
}

/// Critic regression targets given the smoothing noise.
pub fn critic_targets<T: Scalar>(agent: &Td3Agent<T>, batch: &Batch<T>, noise: &[f64], gamma: f64) -> Result<TargetValues> {
    let n = batch.len();
    if noise.len() != 2 * n {
        return Err(Error::shape("critic targets", "noise must hold two values per transition"));
    }
    let pi = agent.actor_target.infer(&batch.next_states)?;
    let next_actions: Vec<f64> = pi
        .data()
        .iter()
        .zip(noise)
        .map(|(a, e)| (a.f64() + e).clamp(-agent.max_action, agent.max_action))
        .collect();
    let a2 = Tensor::from_vec(&[n, 2], next_actions.iter().map(|v| T::of(*v)).collect())?;
    let x = concat_state_action(&batch.next_states, &a2)?;
    let q1: Vec<f64> = agent.critic1_target.infer(&x)?.data().iter().map(|v| v.f64()).collect();
    let q2: Vec<f64> = agent.critic2_target.infer(&x)?.data().iter().map(|v| v.f64()).collect();
    let y = (0..n)
        .map(|i| {
            let cont = if batch.dones[i] { 0.0 } else { 1.0 };
            batch.rewards[i] + gamma * cont * q1[i].min(q2[i])
        })
        .collect();
    Ok(TargetValues {
        next_actions,
        q1,
        q2,
        y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Td3Log {
    /// Sum of both critics' mean squared errors, before the step.
    pub critic_loss: f64,
    /// `-mean Q1(s, pi(s))` when the actor was updated.
    pub actor_loss: Option<f64>,
    pub mean_target: f64,
}

fn critic_regression<T: Scalar>(critic: &mut Network<T>, x: &Tensor<T>, y: &[f64], lr: f64) -> Result<f64> {
    let q = critic.forward(x, Mode::Train)?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<T> = q
        .data()
        .iter()
        .zip(y)
        .map(|(q, y)| {
            let d = q.f64() - y;
            loss += d * d / n;
            T::of(2.0 * d / n)
        })
        .collect();
    if !loss.is_finite() {
        critic.clear_tape();
        return Err(Error::NonFinite(format!("critic loss {loss}")));
    }
    critic.backward(&Tensor::from_vec(q.shape(), grad)?)?;
    critic.params.adam(&AdamConfig::with_lr(lr))?;
    Ok(loss)
}

/// Deterministic policy gradient through critic 1. Only the actor moves.
pub fn actor_step<T: Scalar>(agent: &mut Td3Agent<T>, states: &Tensor<T>, lr: f64) -> Result<f64> {
    let n = states.batch();
    let a = agent.actor.forward(states, Mode::Train)?;
    let x = concat_state_action(states, &a)?;
    let q = agent.critic1.forward(&x, Mode::Train)?;
    let loss = -q.data().iter().map(|v| v.f64()).sum::<f64>() / n as f64;
    if !loss.is_finite() {
        agent.actor.clear_tape();
        agent.critic1.clear_tape();
        return Err(Error::NonFinite(format!("actor loss {loss}")));
    }
    let dx = agent
        .critic1
        .backward(&Tensor::filled(q.shape(), T::of(-1.0 / n as f64)))?;
    agent.critic1.zero_grad();
    let k = states.item_len();
    let da: Vec<T> = (0..n).flat_map(|i| dx.item(i)[k..k + 2].to_vec()).collect();
    agent.actor.backward(&Tensor::from_vec(&[n, 2], da)?)?;
    agent.actor.params.adam(&AdamConfig::with_lr(lr))?;
    Ok(loss)
}

pub fn soft_update_targets<T: Scalar>(agent: &mut Td3Agent<T>, tau: f64) -> Result<()> {
    agent.actor_target.params.soft_update_from(&agent.actor.params, tau)?;
    agent.critic1_target.params.soft_update_from(&agent.critic1.params, tau)?;
    agent.critic2_target.params.soft_update_from(&agent.critic2.params, tau)
}

/// One TD3 iteration on a sampled batch: both critics regress to the
/// clipped double-Q target; every `policy_delay`-th call the actor and all
/// targets are updated.
pub fn td3_update<T: Scalar>(agent: &mut Td3Agent<T>, batch: &Batch<T>, cfg: &Td3Config, rng: &mut Rng) -> Result<Td3Log> {
    let noise = smoothing_noise(batch.len(), cfg, agent.max_action, rng);
    td3_update_with_noise(agent, batch, cfg, &noise)
}

pub fn td3_update_with_noise<T: Scalar>(
    agent: &mut Td3Agent<T>,
    batch: &Batch<T>,
    cfg: &Td3Config,
    noise: &[f64],
) -> Result<Td3Log> {
    if batch.is_empty() {
        return Err(Error::State("empty batch".into()));
    }
    let targets = critic_targets(agent, batch, noise, cfg.gamma)?;
    let x = concat_state_action(&batch.states, &batch.actions)?;
    let l1 = critic_regression(&mut agent.critic1, &x, &targets.y, cfg.critic_lr)?;
    let l2 = critic_regression(&mut agent.critic2, &x, &targets.y, cfg.critic_lr)?;
    agent.updates += 1;
    let mut actor_loss = None;
    if agent.updates % cfg.policy_delay == 0 {
        actor_loss = Some(actor_step(agent, &batch.states, cfg.actor_lr)?);
        soft_update_targets(agent, cfg.tau)?;
    }
    Ok(Td3Log {
        critic_loss: l1 + l2,
        actor_loss,
        mean_target: targets.y.iter().sum::<f64>() / targets.y.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::replay::Transition;
    use crate::rng::seeded;

    fn set(net: &mut Network<f64>, name: &str, values: &[f64]) {
        let p = net.params.by_name_mut(name).unwrap();
        assert_eq!(p.value.len(), values.len(), "{name}");
        p.value.data_mut().copy_from_slice(values);
    }

    /// Linear actor a = 2 tanh(W s) and linear critics, one hidden unit
    /// each with ReLU kept positive, so everything is easy by hand.
    fn tiny_agent() -> Td3Agent<f64> {
        let mut rng = seeded(0);
        let actor_spec = GraphSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::dense(2).tanh(), LayerSpec::scale(2.0)],
        };
        let critic_spec = GraphSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::dense(1)],
        };
        let mut actor = Network::new(actor_spec, "actor.", &mut rng).unwrap();
        set(&mut actor, "actor.0.w", &[0.5, -0.25]);
        set(&mut actor, "actor.0.b", &[0.0, 0.1]);
        let mut c1 = Network::new(critic_spec.clone(), "critic1.", &mut rng).unwrap();
        set(&mut c1, "critic1.0.w", &[1.0, 0.5, -0.5]);
        set(&mut c1, "critic1.0.b", &[0.2]);
        let mut c2 = Network::new(critic_spec, "critic2.", &mut rng).unwrap();
        set(&mut c2, "critic2.0.w", &[0.8, -0.3, 0.4]);
        set(&mut c2, "critic2.0.b", &[0.1]);
        Td3Agent::from_networks(actor, c1, c2, 2.0).unwrap()
    }

    fn batch(done: bool) -> Batch<f64> {
        Batch::from_transitions(&[Transition {
            state: vec![0.5],
            action: Action::new(0.3, -0.7),
            reward: 0.25,
            next_state: vec![1.0],
            done,
        }])
        .unwrap()
    }

    #[test]
    fn hand_computed_target() {
        let agent = tiny_agent();
        let noise = [0.1, -0.2];
        let t = critic_targets(&agent, &batch(false), &noise, 0.99).unwrap();
        let a0 = 2.0 * 0.5f64.tanh() + 0.1;
        let a1 = 2.0 * (-0.25f64 + 0.1).tanh() - 0.2;
        assert!((t.next_actions[0] - a0).abs() < 1e-12);
        assert!((t.next_actions[1] - a1).abs() < 1e-12);
        let q1 = 1.0 + 0.5 * a0 - 0.5 * a1 + 0.2;
        let q2 = 0.8 - 0.3 * a0 + 0.4 * a1 + 0.1;
        assert!((t.q1[0] - q1).abs() < 1e-6 && (t.q2[0] - q2).abs() < 1e-6);
        let y = 0.25 + 0.99 * q1.min(q2);
        assert!((t.y[0] - y).abs() < 1e-6, "{} vs {y}", t.y[0]);
        let terminal = critic_targets(&agent, &batch(true), &noise, 0.99).unwrap();
        assert!((terminal.y[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn target_actions_are_clamped() {
        let agent = tiny_agent();
        let t = critic_targets(&agent, &batch(false), &[5.0, -5.0], 0.99).unwrap();
        assert_eq!(t.next_actions, vec![2.0, -2.0]);
    }

    #[test]
    fn min_of_critics_bounds_both() {
        let mut rng = seeded(5);
        let agent: Td3Agent<f64> = Td3Agent::new(3, 16, 2.0, &mut rng).unwrap();
        let items: Vec<Transition> = (0..32)
            .map(|i| Transition {
                state: vec![i as f32 * 0.1, 0.3, -0.2],
                action: Action::new(0.1, 0.2),
                reward: 0.0,
                next_state: vec![0.5, i as f32 * -0.05, 0.1],
                done: false,
            })
            .collect();
        let b = Batch::from_transitions(&items).unwrap();
        let noise = smoothing_noise(32, &Td3Config::default(), 2.0, &mut rng);
        let t = critic_targets(&agent, &b, &noise, 0.99).unwrap();
        for i in 0..32 {
            assert!(t.y[i] <= 0.99 * t.q1[i] + 1e-15 && t.y[i] <= 0.99 * t.q2[i] + 1e-15);
        }
    }

    #[test]
    fn smoothing_noise_is_clipped() {
        let cfg = Td3Config::default();
        let noise = smoothing_noise(10_000, &cfg, 2.0, &mut seeded(1));
        assert!(noise.iter().all(|e| e.abs() <= 1.0));
        assert!(noise.iter().any(|e| e.abs() == 1.0));
    }

    #[test]
    fn soft_update_contracts() {
        let mut agent = tiny_agent();
        set(&mut agent.critic1, "critic1.0.w", &[2.0, 1.5, 0.5]);
        soft_update_targets(&mut agent, 0.25).unwrap();
        let t = agent.critic1_target.params.by_name("critic1.0.w").unwrap().value.data().to_vec();
        let expect = [0.25 * 2.0 + 0.75 * 1.0, 0.25 * 1.5 + 0.75 * 0.5, 0.25 * 0.5 + 0.75 * -0.5];
        for (a, b) in t.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // distance to online shrinks by 1 - tau
        let before: f64 = [1.0f64, 1.0, 1.0].iter().map(|d| d * d).sum::<f64>().sqrt();
        let after: f64 = t
            .iter()
            .zip([2.0, 1.5, 0.5])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((after - 0.75 * before).abs() < 1e-12);
    }

    #[test]
    fn tau_one_copies() {
        let mut agent = tiny_agent();
        set(&mut agent.actor, "actor.0.w", &[0.9, 0.8]);
        soft_update_targets(&mut agent, 1.0).unwrap();
        assert_eq!(agent.actor_target.digest(), agent.actor.digest());
    }

    #[test]
    fn critic_step_matches_hand_gradient() {
        let mut agent = tiny_agent();
        let b = batch(false);
        let noise = [0.0, 0.0];
        let y = critic_targets(&agent, &b, &noise, 0.99).unwrap().y[0];
        let q = 0.5 + 0.5 * 0.3 - 0.5 * -0.7 + 0.2;
        let cfg = Td3Config {
            policy_delay: 2,
            critic_lr: 0.01,
            ..Td3Config::default()
        };
        let log = td3_update_with_noise(&mut agent, &b, &cfg, &noise).unwrap();
        assert!(log.actor_loss.is_none());
        let l2_q = 0.4 - 0.3 * 0.3 + 0.4 * -0.7 + 0.1;
        let expect = (q - y).powi(2) + (l2_q - y).powi(2);
        assert!((log.critic_loss - expect).abs() < 1e-6);
        // first Adam step moves each weight by lr against the gradient sign
        let w = agent.critic1.params.by_name("critic1.0.w").unwrap().value.data().to_vec();
        let g_sign = (q - y).signum();
        for (w, (w0, x)) in w.iter().zip([(1.0, 0.5), (0.5, 0.3), (-0.5, -0.7)]) {
            let step = 0.01 * (g_sign * x).signum();
            assert!((w - (w0 - step)).abs() < 1e-6, "{w}");
        }
        // targets untouched until the delayed update
        assert_eq!(
            agent.critic1_target.params.by_name("critic1.0.w").unwrap().value.data(),
            &[1.0, 0.5, -0.5]
        );
        let log = td3_update_with_noise(&mut agent, &b, &cfg, &noise).unwrap();
        assert!(log.actor_loss.is_some());
        assert_ne!(
            agent.critic1_target.params.by_name("critic1.0.w").unwrap().value.data(),
            &[1.0, 0.5, -0.5]
        );
    }

    #[test]
    fn actor_gradient_follows_critic() {
        let mut agent = tiny_agent();
        let s = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        let before = agent.critic1.digest();
        let loss = actor_step(&mut agent, &s, 0.01).unwrap();
        let a0 = 2.0 * 0.25f64.tanh();
        let a1 = 2.0 * (-0.125f64 + 0.1).tanh();
        let q = 0.5 + 0.5 * a0 - 0.5 * a1 + 0.2;
        assert!((loss + q).abs() < 1e-6);
        assert_eq!(agent.critic1.digest(), before);
        // dQ/da = (0.5, -0.5) pushes a0 up and a1 down
        let w = agent.actor.params.by_name("actor.0.w").unwrap().value.data().to_vec();
        assert!((w[0] - 0.51).abs() < 1e-6 && (w[1] - -0.26).abs() < 1e-6);
        assert!(agent.critic1.params.iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn exploration_stays_in_bounds() {
        let mut rng = seeded(2);
        let agent: Td3Agent<f32> = Td3Agent::new(4, 8, 2.0, &mut rng).unwrap();
        let s = [0.1, -0.4, 2.0, 0.0];
        let greedy = select_action(&agent, &s, false, 0.1, &mut rng).unwrap();
        assert_eq!(greedy, select_action(&agent, &s, false, 0.1, &mut rng).unwrap());
        assert_eq!(greedy, select_action(&agent, &s, true, 0.0, &mut rng).unwrap());
        for _ in 0..200 {
            let a = select_action(&agent, &s, true, 5.0, &mut rng).unwrap();
            assert!(a.dx.abs() <= 2.0 && a.dy.abs() <= 2.0);
        }
        assert!(agent.act(&[0.0]).is_err());
    }
}
