//! Episode rollouts, policy evaluation and the epoch-based training loop.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::env::{Action, NavEnv, Observer};
use super::replay::{ReplayBuffer, Transition};
use super::td3::{select_action, td3_update, Td3Agent, Td3Config};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived, seeded};

/// Greedy evaluation summary over a fixed set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` episodes; episode `i` uses a generator derived from
/// `(seed, i)`, so repeated calls see the same rooms and spawn poses.
pub fn evaluate_policy<O: Observer>(
    env: &mut NavEnv<O>,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&NavEnv<O>, &[f32]) -> Result<Action>,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = derived(seed, ep as u64);
        let mut state = env.reset(&mut rng)?;
        let mut total = 0.0;
        loop {
            let a = policy(env, &state)?;
            let r = env.step(a, &mut rng)?;
            total += r.reward;
            state = r.state;
            if r.done {
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EvalSummary { mean, min, max, returns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eval: EvalSummary,
    pub episodes: usize,
    pub goals: usize,
    pub collisions: usize,
    pub mean_critic_loss: f64,
}

pub struct TrainedAgent {
    pub agent: Td3Agent<f32>,
    pub curve: Vec<EpochRecord>,
}

/// Seed of the held-out evaluation rooms, shared by all trials and setups.
pub const EVAL_SEED: u64 = 0x5EED_E7A1;

/// TD3 training with a frozen observer. Each epoch runs
/// `steps_per_epoch` environment steps (one update per step once
/// `start_steps` random steps are collected) and ends with a greedy
/// evaluation on the fixed rooms of `eval_seed`.
pub fn train_agent<O: Observer>(
    env: &mut NavEnv<O>,
    cfg: &Td3Config,
    seed: u64,
    eval_seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedAgent> {
    cfg.validate()?;
    let bound = env.cfg.action_bound;
    let mut init_rng = derived(seed, 0);
    let mut agent = Td3Agent::<f32>::new(env.state_dim(), cfg.hidden, bound, &mut init_rng)?;
    let mut env_rng = derived(seed, 1);
    let mut act_rng = derived(seed, 2);
    let mut update_rng = seeded(derive_seed(seed, 3));
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut state = env.reset(&mut env_rng)?;
    let mut total_steps = 0usize;
    for epoch in 0..cfg.epochs {
        let (mut episodes, mut goals, mut collisions) = (0, 0, 0);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for _ in 0..cfg.steps_per_epoch {
            let action = if total_steps < cfg.start_steps {
                Action::new(act_rng.random_range(-bound..=bound), act_rng.random_range(-bound..=bound))
            } else {
                select_action(&agent, &state, true, cfg.exploration_std, &mut act_rng)?
            };
            let r = env.step(action, &mut env_rng)?;
            use super::env::StepEvent;
            match r.event {
                StepEvent::Goal => goals += 1,
                StepEvent::Collision => collisions += 1,
                _ => {}
            }
            buffer.push(Transition {
                state: std::mem::take(&mut state),
                action: action.clamped(bound),
                reward: r.reward,
                next_state: r.state.clone(),
                // running out of proposals is not a terminal state of the task
                done: r.done && r.event != StepEvent::Timeout,
            });
            state = r.state;
            if r.done {
                episodes += 1;
                state = env.reset(&mut env_rng)?;
            }
            total_steps += 1;
            if total_steps >= cfg.start_steps && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut update_rng)?;
                let log = td3_update(&mut agent, &batch, cfg, &mut update_rng)?;
                loss_sum += log.critic_loss;
                loss_n += 1;
            }
        }
        let eval = evaluate_policy(env, cfg.eval_episodes, eval_seed, |_, s| agent.act(s))?;
        // evaluation replaced the training episode
        state = env.reset(&mut env_rng)?;
        let rec = EpochRecord {
            epoch,
            eval,
            episodes,
            goals,
            collisions,
            mean_critic_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
        };
        on_epoch(&rec);
        curve.push(rec);
    }
    Ok(TrainedAgent { agent, curve })
}
