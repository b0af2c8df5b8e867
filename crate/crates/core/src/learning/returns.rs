use serde::{Deserialize, Serialize};

use crate::envs::DoneFlag;
use crate::error::{Error, Result};

/// Values substituted for the future return at FAIL and SUCC boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TerminalValues {
    pub fail: f64,
    pub succ: f64,
}

/// GAE(λ) advantages and λ-returns for one env's time-ordered segment.
///
/// `bootstrap[t]` is the value of the state reached after step `t`; it is
/// required where `dones[t]` is TIME and at the final step when that step is
/// NULL (the batch cut the episode short).
pub fn compute_returns_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[DoneFlag],
    bootstrap: &[Option<f64>],
    gamma: f64,
    lambda: f64,
    terminal: TerminalValues,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n || bootstrap.len() != n {
        return Err(Error::Contract(format!(
            "segment arrays differ in length: {} rewards, {} values, {} dones, {} bootstraps",
            n,
            values.len(),
            dones.len(),
            bootstrap.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut ret = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let last = t + 1 == n;
        let need = |what: &str| {
            bootstrap[t].ok_or_else(|| Error::Contract(format!("missing bootstrap value at step {t} ({what})")))
        };
        let (v_next, chain) = match dones[t] {
            DoneFlag::Fail => (terminal.fail, false),
            DoneFlag::Succ => (terminal.succ, false),
            DoneFlag::Time => (need("TIME")?, false),
            DoneFlag::Null if last => (need("truncated segment")?, false),
            DoneFlag::Null => (values[t + 1], true),
        };
        let delta = rewards[t] + gamma * v_next - values[t];
        adv[t] = delta + if chain { gamma * lambda * next_adv } else { 0.0 };
        ret[t] = adv[t] + values[t];
        next_adv = adv[t];
    }
    Ok((ret, adv))
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize_in_place(x: &mut [f64], mean: f64, std: f64) {
    let s = std.max(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) / s);
}
