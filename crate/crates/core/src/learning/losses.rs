//! Loss functions with their exact parameter gradients.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::mlp::Mlp;
use crate::error::Result;

/// Gaussian actor with state-independent log standard deviation, and a
/// scalar critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

/// Gradients split by optimizer group. `actor` holds the actor network
/// followed by the log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl PolicyStats {
    pub fn total(&self) -> f64 {
        self.policy_loss + self.value_loss
    }
}

impl PolicyModel {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut a = vec![obs_dim];
        a.extend(&cfg.actor_hidden);
        a.push(act_dim);
        let mut c = vec![obs_dim];
        c.extend(&cfg.critic_hidden);
        c.push(1);
        PolicyModel {
            actor: Mlp::new(&a, cfg.activation, cfg.actor_out_scale, rng),
            log_std: vec![cfg.init_log_std; act_dim],
            critic: Mlp::new(&c, cfg.activation, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn actor_group_len(&self) -> usize {
        self.actor.num_params() + self.log_std.len()
    }

    /// Actor parameters and log-std as one group, in gradient layout.
    pub fn actor_group(&self) -> Vec<f64> {
        let mut v = self.actor.params.clone();
        v.extend(&self.log_std);
        v
    }

    pub fn set_actor_group(&mut self, g: &[f64]) {
        let n = self.actor.num_params();
        self.actor.params.copy_from_slice(&g[..n]);
        self.log_std.copy_from_slice(&g[n..]);
    }

    pub fn mean_actions(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.actor.forward(x)
    }

    pub fn values(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.critic.forward(x)?.as_slice().to_vec())
    }

    /// Samples actions around the mean; returns actions and log-probs.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &DMatrix<f64>, rng: &mut R) -> (DMatrix<f64>, Vec<f64>) {
        let mut a = mean.clone();
        for mut col in a.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(rng);
                *v += self.log_std[i].exp() * e;
            }
        }
        let lp = self.log_prob(mean, &a);
        (a, lp)
    }

    pub fn log_prob(&self, mean: &DMatrix<f64>, actions: &DMatrix<f64>) -> Vec<f64> {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        (0..mean.ncols())
            .map(|b| {
                (0..mean.nrows())
                    .map(|i| {
                        let s = self.log_std[i].exp();
                        let z = (actions[(i, b)] - mean[(i, b)]) / s;
                        -0.5 * z * z - self.log_std[i] - half_log_2pi
                    })
                    .sum()
            })
            .collect()
    }
}

/// Samples used by the policy and value losses. Columns are samples.
#[derive(Debug, Clone, Copy)]
pub struct PolicyBatch<'a> {
    pub x: &'a DMatrix<f64>,
    pub actions: &'a DMatrix<f64>,
    pub old_log_prob: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

/// Shared tail: given `∂L/∂logπ` per sample, backpropagates the policy part
/// and adds the value regression `mean((V − R)²)`.
fn finish(
    model: &PolicyModel,
    batch: &PolicyBatch<'_>,
    actor_cache: &super::mlp::Cache,
    dlogp: &[f64],
    entropy_coef: f64,
) -> Result<(f64, ModelGrads)> {
    let mean = actor_cache.output();
    let n = batch.x.ncols() as f64;
    let act = model.act_dim();
    let var: Vec<f64> = model.log_std.iter().map(|l| (2.0 * l).exp()).collect();
    let mut dmu = DMatrix::zeros(act, batch.x.ncols());
    let mut dlog_std = vec![-entropy_coef; act];
    for b in 0..batch.x.ncols() {
        for i in 0..act {
            let d = batch.actions[(i, b)] - mean[(i, b)];
            dmu[(i, b)] = dlogp[b] * d / var[i];
            dlog_std[i] += dlogp[b] * (d * d / var[i] - 1.0);
        }
    }
    let (mut g_actor, _) = model.actor.backward(actor_cache, &dmu);
    g_actor.extend(dlog_std);

    let critic_cache = model.critic.forward_cached(batch.x)?;
    let v = critic_cache.output();
    let mut dv = DMatrix::zeros(1, batch.x.ncols());
    let mut value_loss = 0.0;
    for b in 0..batch.x.ncols() {
        let e = v[(0, b)] - batch.returns[b];
        value_loss += e * e / n;
        dv[(0, b)] = 2.0 * e / n;
    }
    let (g_critic, _) = model.critic.backward(&critic_cache, &dv);
    Ok((
        value_loss,
        ModelGrads {
            actor: g_actor,
            critic: g_critic,
        },
    ))
}

fn entropy(model: &PolicyModel) -> f64 {
    let c = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
    model.log_std.iter().map(|l| l + c).sum()
}

/// Clipped-surrogate loss plus value regression and optional entropy bonus.
pub fn ppo_loss(
    model: &PolicyModel,
    batch: &PolicyBatch<'_>,
    clip: f64,
    entropy_coef: f64,
) -> Result<(PolicyStats, ModelGrads)> {
    let cache = model.actor.forward_cached(batch.x)?;
    let logp = model.log_prob(cache.output(), batch.actions);
    let n = batch.x.ncols() as f64;
    let mut dlogp = vec![0.0; logp.len()];
    let mut stats = PolicyStats::default();
    for b in 0..logp.len() {
        let ratio = (logp[b] - batch.old_log_prob[b]).exp();
        let a = batch.advantages[b];
        let s1 = ratio * a;
        let s2 = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        if s1 <= s2 {
            stats.policy_loss -= s1 / n;
            dlogp[b] = -s1 / n;
        } else {
            stats.policy_loss -= s2 / n;
        }
        if (ratio - 1.0).abs() > clip {
            stats.clip_fraction += 1.0 / n;
        }
        stats.approx_kl += (batch.old_log_prob[b] - logp[b]) / n;
    }
    stats.policy_loss -= entropy_coef * entropy(model);
    let (vl, grads) = finish(model, batch, &cache, &dlogp, entropy_coef)?;
    stats.value_loss = vl;
    Ok((stats, grads))
}

/// `w = min(exp(A/β), w_max)`.
pub fn awr_weight(advantage: f64, beta: f64, max_weight: f64) -> f64 {
    (advantage / beta).exp().min(max_weight)
}

/// Advantage-weighted regression: `−mean(w · logπ(a|s))` plus value
/// regression. `weights` are treated as constants.
pub fn awr_loss(
    model: &PolicyModel,
    batch: &PolicyBatch<'_>,
    weights: &[f64],
    entropy_coef: f64,
) -> Result<(PolicyStats, ModelGrads)> {
    let cache = model.actor.forward_cached(batch.x)?;
    let logp = model.log_prob(cache.output(), batch.actions);
    let n = batch.x.ncols() as f64;
    let mut stats = PolicyStats::default();
    let dlogp: Vec<f64> = weights.iter().map(|w| -w / n).collect();
    for b in 0..logp.len() {
        stats.policy_loss -= weights[b] * logp[b] / n;
    }
    stats.policy_loss -= entropy_coef * entropy(model);
    let (vl, grads) = finish(model, batch, &cache, &dlogp, entropy_coef)?;
    stats.value_loss = vl;
    Ok((stats, grads))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscStats {
    pub loss: f64,
    pub gradient_penalty: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

/// Least-squares discriminator loss with an input-gradient penalty on real
/// samples: `mean((D(real) − 1)²) + mean((D(fake) + 1)²) + c·mean(‖∇D(real)‖²)`.
pub fn disc_loss(
    disc: &Mlp,
    real: &DMatrix<f64>,
    fake: &DMatrix<f64>,
    gp_coef: f64,
) -> Result<(DiscStats, Vec<f64>)> {
    let nr = real.ncols() as f64;
    let nf = fake.ncols() as f64;
    let cr = disc.forward_cached(real)?;
    let cf = disc.forward_cached(fake)?;
    let dr = cr.output();
    let df = cf.output();
    let mut stats = DiscStats::default();
    let mut gr = DMatrix::zeros(1, real.ncols());
    for b in 0..real.ncols() {
        let e = dr[(0, b)] - 1.0;
        stats.loss += e * e / nr;
        stats.mean_real += dr[(0, b)] / nr;
        gr[(0, b)] = 2.0 * e / nr;
    }
    let mut gf = DMatrix::zeros(1, fake.ncols());
    for b in 0..fake.ncols() {
        let e = df[(0, b)] + 1.0;
        stats.loss += e * e / nf;
        stats.mean_fake += df[(0, b)] / nf;
        gf[(0, b)] = 2.0 * e / nf;
    }
    let (mut grad, _) = disc.backward(&cr, &gr);
    let (g2, _) = disc.backward(&cf, &gf);
    grad.iter_mut().zip(&g2).for_each(|(a, b)| *a += b);
    if gp_coef > 0.0 {
        let (input_grad, gp) = disc.input_gradient_penalty(&cr, gp_coef / nr);
        stats.gradient_penalty = input_grad.norm_squared() / nr;
        stats.loss += gp_coef * stats.gradient_penalty;
        grad.iter_mut().zip(&gp).for_each(|(a, b)| *a += b);
    }
    Ok((stats, grad))
}

/// `max(0, 1 − 0.25(d − 1)²)`.
pub fn style_reward(d: f64) -> f64 {
    (1.0 - 0.25 * (d - 1.0) * (d - 1.0)).max(0.0)
}
