use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Activation;
use super::returns::TerminalValues;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ppo,
    Awr,
    Amp,
    Add,
}

impl AgentKind {
    pub fn uses_discriminator(self) -> bool {
        matches!(self, AgentKind::Amp | AgentKind::Add)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Ppo => "ppo",
            AgentKind::Awr => "awr",
            AgentKind::Amp => "amp",
            AgentKind::Add => "add",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_std: f64,
    /// Scale of the actor's output-layer initialization.
    pub actor_out_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 128],
            disc_hidden: vec![256, 128],
            activation: Activation::Relu,
            init_log_std: 0.2f64.ln(),
            actor_out_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AwrConfig {
    pub beta: f64,
    pub max_weight: f64,
    /// Replay capacity in env steps.
    pub replay_size: usize,
    pub batch_size: usize,
    pub actor_steps: usize,
    pub critic_steps: usize,
}

impl Default for AwrConfig {
    fn default() -> Self {
        AwrConfig {
            beta: 1.0,
            max_weight: 20.0,
            replay_size: 100_000,
            batch_size: 256,
            actor_steps: 100,
            critic_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscConfig {
    pub task_weight: f64,
    pub style_weight: f64,
    pub gp_coef: f64,
    pub lr: f64,
    /// Discriminator updates per policy minibatch update.
    pub updates_per_minibatch: usize,
    /// Policy samples retained as negatives across iterations.
    pub replay_size: usize,
    pub obs_clip: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            task_weight: 0.0,
            style_weight: 1.0,
            gp_coef: 5.0,
            lr: 1e-4,
            updates_per_minibatch: 1,
            replay_size: 100_000,
            obs_clip: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub agent: AgentKind,
    pub model: ModelConfig,
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub steps_per_env: usize,
    pub entropy_coef: f64,
    pub normalize_obs: bool,
    pub normalize_advantages: bool,
    pub obs_clip: f64,
    pub terminal: TerminalValues,
    pub awr: AwrConfig,
    pub disc: DiscConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            agent: AgentKind::Ppo,
            model: ModelConfig::default(),
            discount: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            epochs: 4,
            minibatches: 4,
            steps_per_env: 32,
            entropy_coef: 0.0,
            normalize_obs: true,
            normalize_advantages: true,
            obs_clip: 10.0,
            terminal: TerminalValues::default(),
            awr: AwrConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: AgentConfig = crate::envs::load_config(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("discount and gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.steps_per_env == 0 {
            return bad("epochs, minibatches and steps_per_env must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.agent == AgentKind::Awr && !(self.awr.beta > 0.0) {
            return bad("awr.beta must be positive");
        }
        Ok(())
    }
}
