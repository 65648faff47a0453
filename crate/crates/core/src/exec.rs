//! Execution mode for the data-parallel inner loops.
//!
//! Every parallel section in the crate goes through [`Exec`], which maps a
//! closure over an index range and returns results in index order. Callers
//! reduce the returned vector sequentially, so sums are accumulated in the
//! same order whichever mode ran them and results are bit-identical.
//!
//! With the `parallel` feature disabled, [`Exec::Parallel`] silently runs
//! sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether parallel execution is actually available in this build.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => par_map_range(n, f),
        }
    }

    /// Evaluates `f` on every element of `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.map_range(items.len(), |i| f(&items[i]))
    }
}

#[cfg(feature = "parallel")]
fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` with parallel sections bounded to `jobs` worker threads.
///
/// `None` or `Some(0)` uses the global pool. Without the `parallel`
/// feature this just calls `f`.
pub fn with_jobs<R, F>(jobs: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = jobs.filter(|n| *n > 0) {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let seq = Exec::Sequential.map_range(1000, |i| (i as f64).sqrt());
        let par = Exec::Parallel.map_range(1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
        assert_eq!(seq[9], 3.0);
    }

    #[test]
    fn bounded_pool_matches_default() {
        let a: f64 = with_jobs(Some(1), || Exec::Parallel.map_range(500, |i| 1.0 / (1.0 + i as f64)))
            .iter()
            .sum();
        let b: f64 = with_jobs(Some(3), || Exec::Parallel.map_range(500, |i| 1.0 / (1.0 + i as f64)))
            .iter()
            .sum();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
