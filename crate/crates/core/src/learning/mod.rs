//! Agents and models: normalization, networks, return estimation, PPO and
//! AWR updates, adversarial discriminators, checkpoints and gradient
//! averaging across workers.

pub mod adam;
pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod mlp;
pub mod normalizer;
pub mod reduce;
pub mod returns;

pub use adam::Adam;
pub use agent::{Agent, IterStats, Rollout, Trainer, TrainerState};
pub use checkpoint::{Checkpoint, Layout};
pub use config::{AgentConfig, AgentKind, AwrConfig, DiscConfig, ModelConfig};
pub use losses::{awr_loss, awr_weight, disc_loss, ppo_loss, style_reward, DiscStats, ModelGrads, PolicyBatch, PolicyModel, PolicyStats};
pub use mlp::{Activation, Mlp};
pub use normalizer::RunningNormalizer;
pub use reduce::{allreduce_mean, average, LocalReducer, Reducer, ThreadReducer};
pub use returns::{compute_returns_advantages, TerminalValues};
