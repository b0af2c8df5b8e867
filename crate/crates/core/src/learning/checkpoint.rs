//! Self-describing JSON checkpoints.
//!
//! Floats are written with shortest round-trip formatting, so a load
//! reproduces every parameter, moment and generator position bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::agent::{Agent, TrainerState};
use super::config::{AgentConfig, AgentKind};
use super::losses::PolicyModel;
use super::mlp::{Activation, Mlp};
use super::normalizer::RunningNormalizer;
use crate::envs::RngState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "imitate-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture header checked before any payload is used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub agent: AgentKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Vec<usize>,
    pub critic: Vec<usize>,
    pub disc: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Layout {
    pub fn of(agent: &Agent) -> Self {
        Layout {
            agent: agent.cfg.agent,
            obs_dim: agent.model.obs_dim(),
            act_dim: agent.model.act_dim(),
            actor: agent.model.actor.sizes().to_vec(),
            critic: agent.model.critic.sizes().to_vec(),
            disc: agent.disc.as_ref().map(|d| d.sizes().to_vec()),
            activation: agent.model.actor.activation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layout: Layout,
    pub config: AgentConfig,
    pub model: PolicyModel,
    pub obs_norm: RunningNormalizer,
    pub disc: Option<Mlp>,
    pub disc_norm: Option<RunningNormalizer>,
    pub opt_actor: Adam,
    pub opt_critic: Adam,
    pub opt_disc: Option<Adam>,
    pub rng: RngState,
    pub iteration: u64,
    pub samples: u64,
    /// Env and episode state of each worker, for exact continuation.
    pub workers: Vec<TrainerState>,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, workers: Vec<TrainerState>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layout: Layout::of(agent),
            config: agent.cfg.clone(),
            model: agent.model.clone(),
            obs_norm: agent.obs_norm.clone(),
            disc: agent.disc.clone(),
            disc_norm: agent.disc_norm.clone(),
            opt_actor: agent.opt_actor.clone(),
            opt_critic: agent.opt_critic.clone(),
            opt_disc: agent.opt_disc.clone(),
            rng: RngState::capture(&agent.rng),
            iteration: agent.iteration,
            samples: agent.samples,
            workers,
        }
    }

    /// Writes atomically: a sibling temp file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if v.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let version = v.get("version").and_then(|f| f.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "{} has version {:?}, expected {CHECKPOINT_VERSION}",
                path.display(),
                version
            )));
        }
        let ck: Checkpoint = serde_json::from_value(v).map_err(|e| Error::format(path, e.to_string()))?;
        ck.check_consistency()?;
        Ok(ck)
    }

    fn check_consistency(&self) -> Result<()> {
        let m = &self.model;
        let ok = self.layout.actor == m.actor.sizes()
            && self.layout.critic == m.critic.sizes()
            && m.actor.params.len() == m.actor.num_params()
            && m.log_std.len() == self.layout.act_dim
            && self.opt_actor.m.len() == m.actor_group_len()
            && self.opt_critic.m.len() == m.critic.num_params()
            && self.obs_norm.dim() == self.layout.obs_dim
            && self.layout.disc == self.disc.as_ref().map(|d| d.sizes().to_vec());
        if !ok {
            return Err(Error::Checkpoint("payload does not match its layout header".into()));
        }
        Ok(())
    }

    /// Copies the checkpoint into `agent`, whose architecture must match.
    pub fn restore_into(&self, agent: &mut Agent) -> Result<()> {
        let want = Layout::of(agent);
        if want != self.layout {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint {:?}, model {:?}",
                self.layout, want
            )));
        }
        agent.model = self.model.clone();
        agent.obs_norm = self.obs_norm.clone();
        agent.disc = self.disc.clone();
        agent.disc_norm = self.disc_norm.clone();
        agent.opt_actor = self.opt_actor.clone();
        agent.opt_critic = self.opt_critic.clone();
        agent.opt_disc = self.opt_disc.clone();
        agent.rng = self.rng.restore();
        agent.iteration = self.iteration;
        agent.samples = self.samples;
        Ok(())
    }
}
