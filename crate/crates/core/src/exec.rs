//! Execution strategy for batch work: Monte Carlo pulse blocks and parameter
//! sweeps.
//!
//! Work is always split into indexed items and results are collected in index
//! order, so the output never depends on the strategy or thread count. With the
//! `parallel` feature disabled, [`Execution::Parallel`] runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this build can actually run work on several threads.
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Maps `f` over `0..n`, results in index order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => par_map_indexed(n, f),
        }
    }

    /// Maps `f` over a slice, results in input order.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.map_indexed(items.len(), |i| f(&items[i]))
    }
}

#[cfg(feature = "parallel")]
fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_keep_order() {
        let f = |i: usize| i * i + 1;
        let seq = Execution::Sequential.map_indexed(1000, f);
        let par = Execution::Parallel.map_indexed(1000, f);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 101);
    }
}
