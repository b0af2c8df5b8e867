//! Deterministic policy evaluation and its tabular reports.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::VecEnv;
use crate::error::{Error, Result};
use crate::learning::Agent;

/// Anything that maps a batch of observations to actions.
pub trait Policy {
    fn act(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

impl Policy for Agent {
    fn act(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.act_mean(obs)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        (**self).act(obs)
    }
}

/// Adapts a closure to [`Policy`].
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    fn act(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        (self.0)(obs)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeErrors {
    pub steps: usize,
    pub e_pos: f64,
    pub e_vel: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Weight every step equally instead of every episode.
    pub step_weighted: bool,
    pub motion: String,
    pub method: String,
}

/// One model's result. Spreads are over its episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub episodes: usize,
    pub e_pos_mean: f64,
    pub e_pos_std: f64,
    pub e_vel_mean: f64,
    pub e_vel_std: f64,
}

/// Per-model rows plus mean and std of the per-model means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub motion: String,
    pub method: String,
    pub rows: Vec<SeedRow>,
    pub episodes: usize,
    pub e_pos_mean: f64,
    pub e_pos_std: f64,
    pub e_vel_mean: f64,
    pub e_vel_std: f64,
    pub wall_time: f64,
}

pub const CSV_HEADER: &str = "motion,method,seed,episodes,e_pos_mean,e_pos_std,e_vel_mean,e_vel_std";

/// Population mean and standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Runs mean-action episodes on `env` until `episodes` have finished and
/// returns each one's per-step average errors. Episodes are taken in
/// completion order; the env is reset first.
pub fn run_episodes(policy: &dyn Policy, env: &mut VecEnv, episodes: usize) -> Result<Vec<EpisodeErrors>> {
    if env.motions().is_none() {
        return Err(Error::Config("evaluation needs a task with a reference motion".into()));
    }
    let mut obs = env.reset_all()?;
    let mut acc = vec![EpisodeErrors::default(); env.num_envs()];
    let mut done = Vec::with_capacity(episodes);
    while done.len() < episodes {
        let actions = policy.act(&obs)?;
        let results = env.step(&actions)?;
        for (i, r) in results.into_iter().enumerate() {
            let a = &mut acc[i];
            a.steps += 1;
            a.e_pos += r.info.get("e_pos").map_or(f64::NAN, |v| v[0]);
            a.e_vel += r.info.get("e_vel").map_or(f64::NAN, |v| v[0]);
            if r.done.is_done() {
                if done.len() < episodes {
                    done.push(*a);
                }
                *a = EpisodeErrors::default();
            }
            obs[i] = r.reset_obs.unwrap_or(r.obs);
        }
    }
    Ok(done)
}

fn seed_row(seed: u64, eps: &[EpisodeErrors], step_weighted: bool) -> SeedRow {
    let pos: Vec<f64> = eps.iter().map(|e| e.e_pos / e.steps as f64).collect();
    let vel: Vec<f64> = eps.iter().map(|e| e.e_vel / e.steps as f64).collect();
    let (mut pm, ps) = mean_std(&pos);
    let (mut vm, vs) = mean_std(&vel);
    if step_weighted {
        let steps: usize = eps.iter().map(|e| e.steps).sum();
        pm = eps.iter().map(|e| e.e_pos).sum::<f64>() / steps as f64;
        vm = eps.iter().map(|e| e.e_vel).sum::<f64>() / steps as f64;
    }
    SeedRow {
        seed,
        episodes: eps.len(),
        e_pos_mean: pm,
        e_pos_std: ps,
        e_vel_mean: vm,
        e_vel_std: vs,
    }
}

/// Evaluates one model per seed. `make_env` builds the test env for a seed.
pub fn evaluate_policy<P: Policy>(
    models: &[(u64, P)],
    mut make_env: impl FnMut(u64) -> Result<VecEnv>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.episodes == 0 || models.is_empty() {
        return Err(Error::invalid("evaluation needs at least one model and one episode"));
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(models.len());
    for (seed, policy) in models {
        let mut env = make_env(*seed)?;
        let eps = run_episodes(policy, &mut env, opts.episodes)?;
        rows.push(seed_row(*seed, &eps, opts.step_weighted));
    }
    let (pm, ps) = mean_std(&rows.iter().map(|r| r.e_pos_mean).collect::<Vec<_>>());
    let (vm, vs) = mean_std(&rows.iter().map(|r| r.e_vel_mean).collect::<Vec<_>>());
    Ok(EvalReport {
        motion: opts.motion.clone(),
        method: opts.method.clone(),
        episodes: rows.iter().map(|r| r.episodes).sum(),
        rows,
        e_pos_mean: pm,
        e_pos_std: ps,
        e_vel_mean: vm,
        e_vel_std: vs,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    /// One row per seed, then an `all` row holding mean and std across seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let (m, k) = (csv_field(&self.motion), csv_field(&self.method));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{m},{k},{},{},{},{},{},{}",
                r.seed, r.episodes, r.e_pos_mean, r.e_pos_std, r.e_vel_mean, r.e_vel_std
            );
        }
        let _ = writeln!(
            out,
            "{m},{k},all,{},{},{},{},{}",
            self.episodes, self.e_pos_mean, self.e_pos_std, self.e_vel_mean, self.e_vel_std
        );
        out
    }

    /// Fixed-width table with `mean ± std` cells.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:<10} {:>8} {:>24} {:>24}", "motion", "method", "episodes", "e_pos [m]", "e_vel [rad/s]");
        let _ = writeln!(
            out,
            "{:<16} {:<10} {:>8} {:>24} {:>24}",
            self.motion,
            self.method,
            self.episodes,
            format!("{:.4} ± {:.4}", self.e_pos_mean, self.e_pos_std),
            format!("{:.4} ± {:.4}", self.e_vel_mean, self.e_vel_std)
        );
        out
    }
}
