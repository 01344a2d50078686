//! Data-parallel execution over independent work items.
//!
//! Every batch loop in the crate (per-sample gradients, MC supervision,
//! scoring, evaluation) goes through [`Execution::map`]. Results are always
//! returned in input order and reduced sequentially by the caller, so the
//! parallel and sequential paths produce bit-identical numbers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn map<I, O, F>(self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(usize, &I) -> O + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
            Execution::Parallel => par_map(items, f),
        }
    }

    pub fn map_range<O, F>(self, n: usize, f: F) -> Vec<O>
    where
        O: Send,
        F: Fn(usize) -> O + Sync + Send,
    {
        let idx: Vec<usize> = (0..n).collect();
        self.map(&idx, |_, &i| f(i))
    }
}

#[cfg(feature = "parallel")]
fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Configure the global worker pool. Only the first call has any effect.
pub fn init_workers(workers: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}
