//! Synchronous collectives between training workers.
//!
//! Every collective gathers one vector per worker and hands all of them, in
//! rank order, to every worker. Reductions then sum in rank order, so all
//! replicas see bit-identical results.

use std::sync::{Arc, Barrier, Mutex};

use crate::error::{Error, Result};

pub trait Reducer: Send + Sync {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;
    /// Returns every worker's `data`, indexed by rank.
    fn all_gather(&self, data: Vec<f64>) -> Vec<Vec<f64>>;
}

/// The single-worker case.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalReducer;

impl Reducer for LocalReducer {
    fn rank(&self) -> usize {
        0
    }

    fn world_size(&self) -> usize {
        1
    }

    fn all_gather(&self, data: Vec<f64>) -> Vec<Vec<f64>> {
        vec![data]
    }
}

#[derive(Debug)]
struct Shared {
    barrier: Barrier,
    slots: Mutex<Vec<Vec<f64>>>,
}

/// One member of a group of worker threads.
#[derive(Debug, Clone)]
pub struct ThreadReducer {
    shared: Arc<Shared>,
    rank: usize,
    size: usize,
}

impl ThreadReducer {
    /// Creates `size` connected members, one per worker thread.
    pub fn group(size: usize) -> Vec<ThreadReducer> {
        let shared = Arc::new(Shared {
            barrier: Barrier::new(size),
            slots: Mutex::new(vec![Vec::new(); size]),
        });
        (0..size)
            .map(|rank| ThreadReducer {
                shared: shared.clone(),
                rank,
                size,
            })
            .collect()
    }

    pub fn barrier(&self) {
        self.shared.barrier.wait();
    }
}

impl Reducer for ThreadReducer {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.size
    }

    fn all_gather(&self, data: Vec<f64>) -> Vec<Vec<f64>> {
        self.shared.slots.lock().expect("reducer lock")[self.rank] = data;
        self.shared.barrier.wait();
        let out = self.shared.slots.lock().expect("reducer lock").clone();
        // Nobody may overwrite a slot before everyone has read it.
        self.shared.barrier.wait();
        out
    }
}

/// Elementwise mean of equally shaped vectors, summed in order.
pub fn average(parts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = parts.first().ok_or_else(|| Error::Contract("nothing to average".into()))?;
    if let Some(p) = parts.iter().find(|p| p.len() != first.len()) {
        return Err(Error::Contract(format!(
            "gradient layouts differ: {} vs {} values",
            first.len(),
            p.len()
        )));
    }
    let mut out = first.clone();
    for p in &parts[1..] {
        out.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let w = parts.len() as f64;
    if parts.len() > 1 {
        out.iter_mut().for_each(|a| *a /= w);
    }
    Ok(out)
}

/// Replaces `data` with its mean across workers.
pub fn allreduce_mean(r: &dyn Reducer, data: &mut Vec<f64>) -> Result<()> {
    if r.world_size() == 1 {
        return Ok(());
    }
    let parts = r.all_gather(std::mem::take(data));
    *data = average(&parts)?;
    Ok(())
}

/// Replaces `data` with its elementwise sum across workers.
pub fn allreduce_sum(r: &dyn Reducer, data: &mut Vec<f64>) -> Result<()> {
    if r.world_size() == 1 {
        return Ok(());
    }
    let parts = r.all_gather(std::mem::take(data));
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        if p.len() != out.len() {
            return Err(Error::Contract("reduction layouts differ".into()));
        }
        out.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    *data = out;
    Ok(())
}
