#![allow(dead_code)]

use std::sync::Arc;

use imitate_core::engine::{BackendKind, EngineConfig};
use imitate_core::envs::{EnvConfig, TaskKind, VecEnv};
use imitate_core::kinematics::{CharacterModel, LoopMode, MotionClip, MotionLibrary, Pose};
use imitate_core::learning::{Agent, AgentConfig, AgentKind, Reducer, Trainer};

pub fn chain() -> Arc<CharacterModel> {
    Arc::new(CharacterModel::planar_chain(3, 0.4, 1.0, true, [10.0, 1.0], 100.0))
}

pub fn sine_library(ch: &CharacterModel) -> Arc<MotionLibrary> {
    let clip = MotionClip::from_fn(ch, 30.0, 60, LoopMode::Wrap, |t| {
        let mut p = Pose::zero(ch);
        p.root_pos.y = 2.0;
        let w = std::f64::consts::PI;
        p.set_dof_values(&[0.9 * (w * t).sin(), 0.75 * (w * t + 0.5).sin(), 0.6 * (w * t + 1.0).sin()])
            .unwrap();
        p
    })
    .unwrap();
    Arc::new(MotionLibrary::single(clip))
}

pub fn task_for(kind: AgentKind) -> TaskKind {
    match kind {
        AgentKind::Amp => TaskKind::Amp,
        AgentKind::Add => TaskKind::Add,
        _ => TaskKind::Deepmimic,
    }
}

pub fn chain_env(task: TaskKind, backend: BackendKind, num_envs: usize, seed: u64) -> VecEnv {
    let ch = chain();
    let lib = sine_library(&ch);
    let cfg = EnvConfig {
        task,
        episode_length: 1.0,
        rsi: Some(true),
        init_root_height: 2.0,
        engine: EngineConfig {
            backend,
            ..Default::default()
        },
        ..Default::default()
    };
    VecEnv::new(cfg, ch, Some(lib), num_envs, seed).unwrap()
}

pub fn small_config(kind: AgentKind) -> AgentConfig {
    let mut c = AgentConfig {
        agent: kind,
        steps_per_env: 16,
        epochs: 2,
        minibatches: 2,
        ..Default::default()
    };
    c.model.actor_hidden = vec![16];
    c.model.critic_hidden = vec![16];
    c.model.disc_hidden = vec![16];
    c.awr.batch_size = 32;
    c.awr.actor_steps = 4;
    c.awr.critic_steps = 4;
    c
}

pub fn trainer(kind: AgentKind, env_seed: u64, agent_seed: u64, rank: usize, reducer: Arc<dyn Reducer>) -> Trainer {
    let env = chain_env(task_for(kind), BackendKind::PlanarDynamics, 4, env_seed);
    let cfg = small_config(kind);
    let dd = Agent::disc_dim(kind, &env).unwrap();
    let agent = Agent::new(cfg, env.obs_dim(), env.action_dim(), dd, agent_seed, rank).unwrap();
    Trainer::new(agent, env, reducer).unwrap()
}

/// Every learned parameter and optimizer moment, flattened.
pub fn agent_fingerprint(a: &Agent) -> Vec<u64> {
    let mut v: Vec<f64> = a.model.actor.params.clone();
    v.extend(&a.model.log_std);
    v.extend(&a.model.critic.params);
    v.extend(&a.obs_norm.mean);
    v.extend(&a.obs_norm.var);
    v.extend(&a.opt_actor.m);
    v.extend(&a.opt_critic.v);
    if let Some(d) = &a.disc {
        v.extend(&d.params);
    }
    if let Some(n) = &a.disc_norm {
        v.extend(&n.mean);
        v.extend(&n.var);
    }
    v.iter().map(|x| x.to_bits()).collect()
}
