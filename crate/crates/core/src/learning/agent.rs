//! Agents and the collect/update training loop.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::{AgentConfig, AgentKind};
use super::losses::{awr_loss, awr_weight, disc_loss, ppo_loss, style_reward, PolicyBatch, PolicyModel, PolicyStats};
use super::mlp::{batch_matrix, Mlp};
use super::normalizer::RunningNormalizer;
use super::reduce::{allreduce_mean, allreduce_sum, Reducer};
use super::returns::{compute_returns_advantages, normalize_in_place};
use crate::envs::features::{add_dim, amp_dim};
use crate::envs::{DoneFlag, RngState, TaskKind, VecEnv};
use crate::error::{Error, Result};
use crate::SimRng;

/// Model, normalizers and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub model: PolicyModel,
    pub obs_norm: RunningNormalizer,
    pub disc: Option<Mlp>,
    pub disc_norm: Option<RunningNormalizer>,
    pub opt_actor: Adam,
    pub opt_critic: Adam,
    pub opt_disc: Option<Adam>,
    /// Shared across workers: minibatch order and reference sampling.
    pub rng: SimRng,
    /// Per worker: exploration noise.
    pub act_rng: SimRng,
    pub iteration: u64,
    pub samples: u64,
}

impl Agent {
    pub fn new(cfg: AgentConfig, obs_dim: usize, act_dim: usize, disc_dim: Option<usize>, seed: u64, rank: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.agent.uses_discriminator() && disc_dim.is_none() {
            return Err(Error::Config(format!("agent {} needs discriminator inputs", cfg.agent.as_str())));
        }
        let mut init = SimRng::seed_from_u64(seed);
        let model = PolicyModel::new(obs_dim, act_dim, &cfg.model, &mut init);
        let disc = match (cfg.agent.uses_discriminator(), disc_dim) {
            (true, Some(d)) => {
                let mut sizes = vec![d];
                sizes.extend(&cfg.model.disc_hidden);
                sizes.push(1);
                Some(Mlp::new(&sizes, cfg.model.activation, 1.0, &mut init))
            }
            _ => None,
        };
        let disc_norm = disc.as_ref().map(|d| RunningNormalizer::new(d.input_dim(), cfg.disc.obs_clip));
        let opt_disc = disc.as_ref().map(|d| Adam::new(d.num_params(), cfg.disc.lr));
        let mut rng = SimRng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut act_rng = SimRng::seed_from_u64(seed);
        act_rng.set_stream(2 + rank as u64);
        Ok(Agent {
            obs_norm: RunningNormalizer::new(obs_dim, cfg.obs_clip),
            opt_actor: Adam::new(model.actor_group_len(), cfg.actor_lr),
            opt_critic: Adam::new(model.critic.num_params(), cfg.critic_lr),
            cfg,
            model,
            disc,
            disc_norm,
            opt_disc,
            rng,
            act_rng,
            iteration: 0,
            samples: 0,
        })
    }

    /// Discriminator input width for an agent kind on an env, if any.
    pub fn disc_dim(kind: AgentKind, env: &VecEnv) -> Result<Option<usize>> {
        let ch = env.character();
        let task = env.config().task;
        match kind {
            AgentKind::Amp => {
                if !matches!(task, TaskKind::Amp | TaskKind::TargetLocation) {
                    return Err(Error::Config(format!("amp agent cannot train on task {task:?}")));
                }
                if env.motions().is_none() {
                    return Err(Error::Config("amp agent needs a motion_file".into()));
                }
                Ok(Some(amp_dim(ch)))
            }
            AgentKind::Add => {
                if task != TaskKind::Add {
                    return Err(Error::Config(format!("add agent cannot train on task {task:?}")));
                }
                Ok(Some(add_dim(ch)))
            }
            _ => Ok(None),
        }
    }

    pub fn normalize_obs(&self, obs: &[f64]) -> Vec<f64> {
        if self.cfg.normalize_obs {
            self.obs_norm.normalize(obs)
        } else {
            obs.to_vec()
        }
    }

    fn obs_matrix(&self, obs: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.model.obs_dim();
        let mut m = DMatrix::zeros(d, obs.len());
        for (j, o) in obs.iter().enumerate() {
            let x = self.normalize_obs(o);
            m.column_mut(j).copy_from_slice(&x);
        }
        m
    }

    /// Deterministic (mean) actions.
    pub fn act_mean(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mu = self.model.mean_actions(&self.obs_matrix(obs))?;
        Ok(mu.column_iter().map(|c| c.iter().copied().collect()).collect())
    }

    fn disc_matrix(&self, inputs: &[&[f64]]) -> DMatrix<f64> {
        let norm = self.disc_norm.as_ref().expect("discriminator present");
        let d = norm.dim();
        let mut m = DMatrix::zeros(d, inputs.len());
        let mut buf = vec![0.0; d];
        for (j, x) in inputs.iter().enumerate() {
            norm.normalize_into(x, &mut buf);
            m.column_mut(j).copy_from_slice(&buf);
        }
        m
    }

    /// Raw discriminator scores of unnormalized inputs.
    pub fn disc_scores(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let disc = self
            .disc
            .as_ref()
            .ok_or_else(|| Error::Config("agent has no discriminator".into()))?;
        Ok(disc.forward(&self.disc_matrix(inputs))?.as_slice().to_vec())
    }

    pub fn disc_rewards(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.disc_scores(inputs)?.into_iter().map(style_reward).collect())
    }

    /// One discriminator step on given real and fake inputs.
    pub fn disc_step(&mut self, real: &[&[f64]], fake: &[&[f64]], reducer: &dyn Reducer) -> Result<super::losses::DiscStats> {
        let xr = self.disc_matrix(real);
        let xf = self.disc_matrix(fake);
        let disc = self.disc.as_mut().expect("discriminator present");
        let (stats, mut grad) = disc_loss(disc, &xr, &xf, self.cfg.disc.gp_coef)?;
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {:?}", stats)));
        }
        allreduce_mean(reducer, &mut grad)?;
        self.opt_disc
            .as_mut()
            .expect("discriminator optimizer present")
            .step(&mut disc.params, &grad)?;
        Ok(stats)
    }

    /// Applies averaged actor and critic gradients.
    fn apply(&mut self, actor: &[f64], critic: &[f64], actor_on: bool, critic_on: bool) -> Result<()> {
        if actor_on {
            let mut p = self.model.actor_group();
            self.opt_actor.step(&mut p, actor)?;
            self.model.set_actor_group(&p);
        }
        if critic_on {
            self.opt_critic.step(&mut self.model.critic.params, critic)?;
        }
        Ok(())
    }
}

/// One collected batch, stored step-major: index `t * num_envs + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: usize,
    pub num_envs: usize,
    /// Normalized policy inputs.
    pub x: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_prob: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<DoneFlag>,
    /// Normalized input of the state reached, where a bootstrap is needed.
    pub next_x: Vec<Option<Vec<f64>>>,
    /// Discriminator inputs (AMP/ADD).
    pub disc_x: Vec<Vec<f64>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns and advantages, recomputing values with `model` when given.
    fn returns_advantages(&self, cfg: &AgentConfig, model: Option<&PolicyModel>) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let values = match model {
            Some(m) => {
                let rows: Vec<&[f64]> = self.x.iter().map(|v| v.as_slice()).collect();
                m.values(&batch_matrix(&rows, m.obs_dim()))?
            }
            None => self.values.clone(),
        };
        let boot_idx: Vec<usize> = (0..self.len()).filter(|&i| self.next_x[i].is_some()).collect();
        let mut boot = vec![None; self.len()];
        if !boot_idx.is_empty() {
            let rows: Vec<&[f64]> = boot_idx.iter().map(|&i| self.next_x[i].as_deref().expect("filtered")).collect();
            let dim = rows[0].len();
            let m = match model {
                Some(m) => m,
                None => return Err(Error::Contract("bootstrap needs a critic".into())),
            };
            let v = m.values(&batch_matrix(&rows, dim))?;
            for (k, &i) in boot_idx.iter().enumerate() {
                boot[i] = Some(v[k]);
            }
        }
        let n = self.len();
        let mut ret = vec![0.0; n];
        let mut adv = vec![0.0; n];
        for e in 0..self.num_envs {
            let idx: Vec<usize> = (0..self.steps).map(|t| t * self.num_envs + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            let d: Vec<DoneFlag> = idx.iter().map(|&i| self.dones[i]).collect();
            let b: Vec<Option<f64>> = idx.iter().map(|&i| boot[i]).collect();
            let (re, ad) = compute_returns_advantages(&r, &v, &d, &b, cfg.discount, cfg.gae_lambda, cfg.terminal)?;
            for (k, &i) in idx.iter().enumerate() {
                ret[i] = re[k];
                adv[i] = ad[k];
            }
        }
        Ok((ret, adv, values))
    }
}

/// Per-iteration training statistics, identical on every worker. Rewards
/// and returns are the ones optimized, discriminator terms included.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: u64,
    pub samples: u64,
    pub mean_return: f64,
    pub mean_episode_length: f64,
    pub episodes: u64,
    pub mean_reward: f64,
    pub e_pos: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub disc_loss: f64,
    pub disc_real: f64,
    pub disc_fake: f64,
}

impl IterStats {
    pub const COLUMNS: [&'static str; 14] = [
        "iteration",
        "samples",
        "mean_return",
        "mean_episode_length",
        "episodes",
        "mean_reward",
        "e_pos",
        "policy_loss",
        "value_loss",
        "clip_fraction",
        "approx_kl",
        "disc_loss",
        "disc_real",
        "disc_fake",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.iteration as f64,
            self.samples as f64,
            self.mean_return,
            self.mean_episode_length,
            self.episodes as f64,
            self.mean_reward,
            self.e_pos,
            self.policy_loss,
            self.value_loss,
            self.clip_fraction,
            self.approx_kl,
            self.disc_loss,
            self.disc_real,
            self.disc_fake,
        ]
    }
}

/// Everything besides the agent needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub env: crate::envs::EnvSnapshot,
    pub ep_return: Vec<f64>,
    pub ep_len: Vec<u64>,
    pub awr_replay: Vec<Rollout>,
    pub disc_replay: Vec<Vec<f64>>,
    pub act_rng: RngState,
}

/// Couples an agent with its env batch.
pub struct Trainer {
    pub agent: Agent,
    pub env: VecEnv,
    obs: Vec<Vec<f64>>,
    ep_return: Vec<f64>,
    ep_len: Vec<u64>,
    awr_replay: VecDeque<Rollout>,
    disc_replay: VecDeque<Vec<f64>>,
    reducer: Arc<dyn Reducer>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("agent", &self.agent.cfg.agent)
            .field("env", &self.env)
            .finish()
    }
}

#[derive(Default)]
struct Collected {
    ret_sum: f64,
    len_sum: f64,
    episodes: f64,
    reward_sum: f64,
    e_pos_sum: f64,
    e_pos_n: f64,
}

impl Trainer {
    pub fn new(agent: Agent, env: VecEnv, reducer: Arc<dyn Reducer>) -> Result<Self> {
        if agent.model.obs_dim() != env.obs_dim() || agent.model.act_dim() != env.action_dim() {
            return Err(Error::Config(format!(
                "model expects obs {} / act {}, env provides {} / {}",
                agent.model.obs_dim(),
                agent.model.act_dim(),
                env.obs_dim(),
                env.action_dim()
            )));
        }
        let expected = Agent::disc_dim(agent.cfg.agent, &env)?;
        if expected != agent.disc.as_ref().map(|d| d.input_dim()) {
            return Err(Error::Config("discriminator width does not match the env".into()));
        }
        let n = env.num_envs();
        Ok(Trainer {
            obs: env.observe(),
            agent,
            env,
            ep_return: vec![0.0; n],
            ep_len: vec![0; n],
            awr_replay: VecDeque::new(),
            disc_replay: VecDeque::new(),
            reducer,
        })
    }

    pub fn reducer(&self) -> &dyn Reducer {
        self.reducer.as_ref()
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            env: self.env.snapshot(),
            ep_return: self.ep_return.clone(),
            ep_len: self.ep_len.clone(),
            awr_replay: self.awr_replay.iter().cloned().collect(),
            disc_replay: self.disc_replay.iter().cloned().collect(),
            act_rng: RngState::capture(&self.agent.act_rng),
        }
    }

    pub fn restore(&mut self, s: TrainerState) -> Result<()> {
        self.env.restore(&s.env)?;
        if s.ep_return.len() != self.env.num_envs() || s.ep_len.len() != self.env.num_envs() {
            return Err(Error::Checkpoint("episode trackers do not match num_envs".into()));
        }
        self.obs = self.env.observe();
        self.ep_return = s.ep_return;
        self.ep_len = s.ep_len;
        self.awr_replay = s.awr_replay.into();
        self.disc_replay = s.disc_replay.into();
        self.agent.act_rng = s.act_rng.restore();
        Ok(())
    }

    fn collect(&mut self) -> Result<(Rollout, Collected)> {
        let steps = self.agent.cfg.steps_per_env;
        let n = self.env.num_envs();
        let kind = self.agent.cfg.agent;
        let mut ro = Rollout {
            steps,
            num_envs: n,
            x: Vec::with_capacity(steps * n),
            actions: Vec::with_capacity(steps * n),
            log_prob: Vec::with_capacity(steps * n),
            values: Vec::with_capacity(steps * n),
            rewards: Vec::with_capacity(steps * n),
            dones: Vec::with_capacity(steps * n),
            next_x: Vec::with_capacity(steps * n),
            disc_x: Vec::new(),
        };
        let mut raw_obs: Vec<Vec<f64>> = Vec::with_capacity(steps * n);
        let mut c = Collected::default();
        for t in 0..steps {
            let x = self.agent.obs_matrix(&self.obs);
            let mu = self.agent.model.mean_actions(&x)?;
            let (a, lp) = self.agent.model.sample(&mu, &mut self.agent.act_rng);
            let v = self.agent.model.values(&x)?;
            let actions: Vec<Vec<f64>> = a.column_iter().map(|col| col.iter().copied().collect()).collect();
            let results = self.env.step(&actions)?;
            for (e, r) in results.into_iter().enumerate() {
                ro.x.push(x.column(e).iter().copied().collect());
                ro.actions.push(actions[e].clone());
                ro.log_prob.push(lp[e]);
                ro.values.push(v[e]);
                ro.rewards.push(r.reward);
                ro.dones.push(r.done);
                let need_boot = r.done == DoneFlag::Time || (r.done == DoneFlag::Null && t + 1 == steps);
                ro.next_x.push(need_boot.then(|| self.agent.normalize_obs(&r.obs)));
                match kind {
                    AgentKind::Amp => ro.disc_x.push(info_vec(&r.info, "disc_obs")?),
                    AgentKind::Add => ro.disc_x.push(info_vec(&r.info, "add_delta")?),
                    _ => {}
                }
                if let Some(ep) = r.info.get("e_pos") {
                    c.e_pos_sum += ep[0];
                    c.e_pos_n += 1.0;
                }
                raw_obs.push(std::mem::take(&mut self.obs[e]));
                self.obs[e] = r.reset_obs.unwrap_or(r.obs);
            }
        }
        if self.agent.cfg.normalize_obs {
            let rows: Vec<&[f64]> = raw_obs.iter().map(|v| v.as_slice()).collect();
            merge_normalizer(&mut self.agent.obs_norm, &rows, self.reducer.as_ref())?;
        }
        Ok((ro, c))
    }

    /// Episode statistics over the rewards the agent is trained on.
    fn tally_episodes(&mut self, ro: &Rollout, c: &mut Collected) {
        let n = ro.num_envs;
        for (i, (&r, d)) in ro.rewards.iter().zip(&ro.dones).enumerate() {
            let e = i % n;
            self.ep_return[e] += r;
            self.ep_len[e] += 1;
            c.reward_sum += r;
            if d.is_done() {
                c.ret_sum += self.ep_return[e];
                c.len_sum += self.ep_len[e] as f64;
                c.episodes += 1.0;
                self.ep_return[e] = 0.0;
                self.ep_len[e] = 0;
            }
        }
    }

    /// Collects one batch per env and updates the agent.
    pub fn iterate(&mut self) -> Result<IterStats> {
        let (mut ro, mut c) = self.collect()?;
        let kind = self.agent.cfg.agent;
        let red = self.reducer.clone();
        if kind.uses_discriminator() {
            let rows: Vec<&[f64]> = ro.disc_x.iter().map(|v| v.as_slice()).collect();
            let style = self.agent.disc_rewards(&rows)?;
            let d = &self.agent.cfg.disc;
            for (r, s) in ro.rewards.iter_mut().zip(&style) {
                *r = d.task_weight * *r + d.style_weight * s;
            }
        }
        self.tally_episodes(&ro, &mut c);
        let len = ro.len() as f64;
        let mut stats = if kind == AgentKind::Awr {
            self.update_awr(ro)?
        } else {
            let mut stats = self.update_ppo(&ro)?;
            if kind.uses_discriminator() {
                let (loss, real, fake) = self.update_disc(&ro)?;
                stats.disc_loss = loss;
                stats.disc_real = real;
                stats.disc_fake = fake;
            }
            stats
        };
        let mut ep = vec![c.ret_sum, c.len_sum, c.episodes, c.reward_sum, c.e_pos_sum, c.e_pos_n, len];
        allreduce_sum(red.as_ref(), &mut ep)?;
        self.agent.iteration += 1;
        self.agent.samples += ep[6] as u64;
        stats.iteration = self.agent.iteration;
        stats.samples = self.agent.samples;
        stats.episodes = ep[2] as u64;
        stats.mean_return = if ep[2] > 0.0 { ep[0] / ep[2] } else { f64::NAN };
        stats.mean_episode_length = if ep[2] > 0.0 { ep[1] / ep[2] } else { f64::NAN };
        stats.mean_reward = ep[3] / ep[6];
        stats.e_pos = if ep[5] > 0.0 { ep[4] / ep[5] } else { f64::NAN };
        Ok(stats)
    }

    fn policy_step(
        &mut self,
        ro: &Rollout,
        idx: &[usize],
        adv: &[f64],
        ret: &[f64],
        weights: Option<&[f64]>,
        actor_on: bool,
        critic_on: bool,
    ) -> Result<PolicyStats> {
        let od = self.agent.model.obs_dim();
        let ad = self.agent.model.act_dim();
        let xr: Vec<&[f64]> = idx.iter().map(|&i| ro.x[i].as_slice()).collect();
        let ar: Vec<&[f64]> = idx.iter().map(|&i| ro.actions[i].as_slice()).collect();
        let x = batch_matrix(&xr, od);
        let a = batch_matrix(&ar, ad);
        let old: Vec<f64> = idx.iter().map(|&i| ro.log_prob[i]).collect();
        let ad_mb: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
        let rt: Vec<f64> = idx.iter().map(|&i| ret[i]).collect();
        let batch = PolicyBatch {
            x: &x,
            actions: &a,
            old_log_prob: &old,
            advantages: &ad_mb,
            returns: &rt,
        };
        let (stats, grads) = match weights {
            None => ppo_loss(&self.agent.model, &batch, self.agent.cfg.clip_ratio, self.agent.cfg.entropy_coef)?,
            Some(w) => {
                let wm: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
                awr_loss(&self.agent.model, &batch, &wm, self.agent.cfg.entropy_coef)?
            }
        };
        if !stats.total().is_finite() {
            return Err(Error::NonFinite(format!("policy update produced {stats:?}")));
        }
        let na = grads.actor.len();
        let mut g = grads.actor;
        g.extend(grads.critic);
        allreduce_mean(self.reducer.as_ref(), &mut g)?;
        self.agent.apply(&g[..na], &g[na..], actor_on, critic_on)?;
        Ok(stats)
    }

    fn normalized_advantages(&self, adv: &mut [f64]) -> Result<()> {
        if !self.agent.cfg.normalize_advantages {
            return Ok(());
        }
        let n = adv.len() as f64;
        let s: f64 = adv.iter().sum();
        let s2: f64 = adv.iter().map(|a| a * a).sum();
        let mut m = vec![s, s2, n];
        allreduce_sum(self.reducer.as_ref(), &mut m)?;
        let mean = m[0] / m[2];
        let var = (m[1] / m[2] - mean * mean).max(0.0);
        normalize_in_place(adv, mean, var.sqrt());
        Ok(())
    }

    fn update_ppo(&mut self, ro: &Rollout) -> Result<IterStats> {
        let (ret, mut adv, _) = ro.returns_advantages(&self.agent.cfg, Some(&self.agent.model))?;
        self.normalized_advantages(&mut adv)?;
        let cfg = self.agent.cfg.clone();
        let b = ro.len();
        let mb = b.div_ceil(cfg.minibatches);
        let mut acc = PolicyStats::default();
        let mut count = 0.0;
        let mut order: Vec<usize> = (0..b).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.agent.rng);
            for chunk in order.clone().chunks(mb) {
                let s = self.policy_step(ro, chunk, &adv, &ret, None, true, true)?;
                acc.policy_loss += s.policy_loss;
                acc.value_loss += s.value_loss;
                acc.clip_fraction += s.clip_fraction;
                acc.approx_kl += s.approx_kl;
                count += 1.0;
            }
        }
        self.finish_stats(acc, count)
    }

    fn finish_stats(&self, acc: PolicyStats, count: f64) -> Result<IterStats> {
        let mut v = vec![
            acc.policy_loss / count,
            acc.value_loss / count,
            acc.clip_fraction / count,
            acc.approx_kl / count,
        ];
        allreduce_mean(self.reducer.as_ref(), &mut v)?;
        Ok(IterStats {
            policy_loss: v[0],
            value_loss: v[1],
            clip_fraction: v[2],
            approx_kl: v[3],
            disc_loss: f64::NAN,
            disc_real: f64::NAN,
            disc_fake: f64::NAN,
            ..Default::default()
        })
    }

    fn update_awr(&mut self, ro: Rollout) -> Result<IterStats> {
        let cfg = self.agent.cfg.clone();
        self.awr_replay.push_back(ro);
        let mut total: usize = self.awr_replay.iter().map(|r| r.len()).sum();
        while total > cfg.awr.replay_size && self.awr_replay.len() > 1 {
            total -= self.awr_replay.pop_front().expect("nonempty").len();
        }
        let merged = self.merged_replay();
        let n = merged.len();
        let bs = cfg.awr.batch_size.min(n);
        let mut acc = PolicyStats::default();
        let (ret, _, _) = self.replay_targets()?;
        let zeros = vec![0.0; n];
        for _ in 0..cfg.awr.critic_steps {
            let idx: Vec<usize> = (0..bs).map(|_| self.agent.rng.random_range(0..n)).collect();
            let s = self.policy_step(&merged, &idx, &zeros, &ret, Some(&zeros), false, true)?;
            acc.value_loss += s.value_loss / cfg.awr.critic_steps as f64;
        }
        let (ret, mut adv, _) = self.replay_targets()?;
        self.normalized_advantages(&mut adv)?;
        let w: Vec<f64> = adv.iter().map(|&a| awr_weight(a, cfg.awr.beta, cfg.awr.max_weight)).collect();
        for _ in 0..cfg.awr.actor_steps {
            let idx: Vec<usize> = (0..bs).map(|_| self.agent.rng.random_range(0..n)).collect();
            let s = self.policy_step(&merged, &idx, &adv, &ret, Some(&w), true, false)?;
            acc.policy_loss += s.policy_loss / cfg.awr.actor_steps as f64;
        }
        self.finish_stats(acc, 1.0)
    }

    fn merged_replay(&self) -> Rollout {
        let mut out = Rollout {
            steps: 0,
            num_envs: 1,
            x: Vec::new(),
            actions: Vec::new(),
            log_prob: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            next_x: Vec::new(),
            disc_x: Vec::new(),
        };
        for r in &self.awr_replay {
            out.x.extend(r.x.iter().cloned());
            out.actions.extend(r.actions.iter().cloned());
            out.log_prob.extend(&r.log_prob);
            out.values.extend(&r.values);
            out.rewards.extend(&r.rewards);
            out.dones.extend(&r.dones);
            out.next_x.extend(r.next_x.iter().cloned());
        }
        out.steps = out.x.len();
        out
    }

    /// λ-returns and advantages of the whole replay under the current critic.
    fn replay_targets(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut ret = Vec::new();
        let mut adv = Vec::new();
        let mut val = Vec::new();
        for r in &self.awr_replay {
            let (a, b, c) = r.returns_advantages(&self.agent.cfg, Some(&self.agent.model))?;
            ret.extend(a);
            adv.extend(b);
            val.extend(c);
        }
        Ok((ret, adv, val))
    }

    /// Real inputs for the discriminator: reference transitions (AMP) or
    /// zero differences (ADD).
    fn real_samples(&mut self, count: usize) -> Result<Vec<Vec<f64>>> {
        match self.agent.cfg.agent {
            AgentKind::Add => {
                let d = self.agent.disc_norm.as_ref().expect("discriminator").dim();
                Ok(vec![vec![0.0; d]; count])
            }
            AgentKind::Amp => {
                let lib = self.env.motions().expect("checked at construction").clone();
                let ch = self.env.character().clone();
                crate::envs::reference_transitions(&lib, &ch, self.env.dt(), count, &mut self.agent.rng)
            }
            _ => Err(Error::Contract("no discriminator for this agent".into())),
        }
    }

    fn update_disc(&mut self, ro: &Rollout) -> Result<(f64, f64, f64)> {
        let cfg = self.agent.cfg.clone();
        let red = self.reducer.clone();
        for x in &ro.disc_x {
            self.disc_replay.push_back(x.clone());
        }
        while self.disc_replay.len() > cfg.disc.replay_size.max(ro.len()) {
            self.disc_replay.pop_front();
        }
        let b = ro.len();
        let updates = cfg.epochs * cfg.minibatches * cfg.disc.updates_per_minibatch;
        let mb = b.div_ceil(cfg.minibatches);
        let real_all = self.real_samples(b)?;
        {
            let mut rows: Vec<&[f64]> = ro.disc_x.iter().map(|v| v.as_slice()).collect();
            if cfg.agent == AgentKind::Amp {
                rows.extend(real_all.iter().map(|v| v.as_slice()));
            }
            let norm = self.agent.disc_norm.as_mut().expect("discriminator");
            merge_normalizer(norm, &rows, red.as_ref())?;
        }
        let (mut loss, mut real, mut fake) = (0.0, 0.0, 0.0);
        let nrep = self.disc_replay.len();
        for _ in 0..updates {
            let fidx: Vec<usize> = (0..mb).map(|_| self.agent.rng.random_range(0..nrep)).collect();
            let ridx: Vec<usize> = (0..mb).map(|_| self.agent.rng.random_range(0..b)).collect();
            let fake_rows: Vec<&[f64]> = fidx.iter().map(|&i| self.disc_replay[i].as_slice()).collect();
            let real_rows: Vec<&[f64]> = ridx.iter().map(|&i| real_all[i].as_slice()).collect();
            let s = self.agent.disc_step(&real_rows, &fake_rows, red.as_ref())?;
            loss += s.loss;
            real += s.mean_real;
            fake += s.mean_fake;
        }
        let u = updates as f64;
        let mut v = vec![loss / u, real / u, fake / u];
        allreduce_mean(red.as_ref(), &mut v)?;
        Ok((v[0], v[1], v[2]))
    }

    /// Current observations, one per env.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }
}

fn info_vec(info: &std::collections::BTreeMap<String, Vec<f64>>, key: &str) -> Result<Vec<f64>> {
    info.get(key)
        .cloned()
        .ok_or_else(|| Error::Contract(format!("env step info lacks `{key}`")))
}

/// Merges a batch into a normalizer; with several workers every worker's
/// batch is merged in rank order.
pub fn merge_normalizer(norm: &mut RunningNormalizer, rows: &[&[f64]], red: &dyn Reducer) -> Result<()> {
    let (n, mean, m2) = RunningNormalizer::batch_moments(rows, norm.dim());
    if red.world_size() == 1 {
        return norm.merge_moments(n, &mean, &m2);
    }
    let mut packed = vec![n];
    packed.extend(mean);
    packed.extend(m2);
    let d = norm.dim();
    for p in red.all_gather(packed) {
        if p.len() != 1 + 2 * d {
            return Err(Error::Contract("normalizer widths differ across workers".into()));
        }
        norm.merge_moments(p[0], &p[1..1 + d], &p[1 + d..])?;
    }
    Ok(())
}
