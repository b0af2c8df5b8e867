use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VAR_EPS: f64 = 1e-5;

/// Running mean and population variance, merged with Chan's parallel
/// update so that any chunking of the data gives the same statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
    pub clip: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize, clip: f64) -> Self {
        RunningNormalizer {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Statistics of one batch in mergeable form `(count, mean, M2)`.
    pub fn batch_moments(rows: &[&[f64]], dim: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        if n > 0.0 {
            mean.iter_mut().for_each(|m| *m /= n);
        }
        let mut m2 = vec![0.0; dim];
        for r in rows {
            for ((s, x), m) in m2.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        (n, mean, m2)
    }

    /// Merges batch moments into the running statistics.
    pub fn merge_moments(&mut self, n: f64, mean: &[f64], m2: &[f64]) -> Result<()> {
        if mean.len() != self.dim() || m2.len() != self.dim() {
            return Err(Error::Contract(format!(
                "normalizer of width {} cannot merge width {}",
                self.dim(),
                mean.len()
            )));
        }
        if n == 0.0 {
            return Ok(());
        }
        let na = self.count;
        let total = na + n;
        for i in 0..self.dim() {
            let delta = mean[i] - self.mean[i];
            let m2a = if na > 0.0 { self.var[i] * na } else { 0.0 };
            let m2_total = m2a + m2[i] + delta * delta * na * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2_total / total;
        }
        self.count = total;
        Ok(())
    }

    pub fn update(&mut self, rows: &[&[f64]]) -> Result<()> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.dim()) {
            return Err(Error::Contract(format!("row width {} != {}", r.len(), self.dim())));
        }
        let (n, mean, m2) = Self::batch_moments(rows, self.dim());
        self.merge_moments(n, &mean, &m2)
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s))| ((v - m) / (s + VAR_EPS).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (v, (m, s))) in out.iter_mut().zip(x.iter().zip(self.mean.iter().zip(&self.var))) {
            *o = ((v - m) / (s + VAR_EPS).sqrt()).clamp(-self.clip, self.clip);
        }
    }
}
