//! Relative-target navigation with a TD3 learner on frozen encodings.

pub mod env;
pub mod replay;
pub mod td3;
pub mod train;

pub use env::{Action, NavConfig, NavEnv, Observer, StepEvent, StepResult};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use td3::{select_action, td3_update, Td3Agent, Td3Config, Td3Log};
pub use train::{evaluate_policy, train_agent, EpochRecord, EvalSummary, TrainedAgent, EVAL_SEED};
