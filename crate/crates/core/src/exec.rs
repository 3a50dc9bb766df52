//! Order-preserving parallel map over independent jobs.
//!
//! Results come back in input order whatever the worker count, so anything
//! computed from them is independent of scheduling.

use rayon::prelude::*;
use rayon::ThreadPool;

/// Environment variable capping worker threads; `0` or unset means auto.
pub const THREADS_ENV: &str = "NIRS_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Executor {
    /// Requested workers; `0` lets rayon decide.
    pub threads: usize,
}

impl Executor {
    pub fn new(threads: usize) -> Self {
        Self { threads }
    }

    pub fn sequential() -> Self {
        Self { threads: 1 }
    }

    /// Reads [`THREADS_ENV`]; unparsable values fall back to auto.
    pub fn from_env() -> Self {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0);
        Self { threads }
    }

    fn pool(&self) -> Option<ThreadPool> {
        rayon::ThreadPoolBuilder::new().num_threads(self.threads).build().ok()
    }

    pub fn map<I, R, F>(&self, items: Vec<I>, f: F) -> Vec<R>
    where
        I: Send,
        R: Send,
        F: Fn(I) -> R + Sync + Send,
    {
        if self.threads == 1 || items.len() <= 1 {
            return items.into_iter().map(f).collect();
        }
        match self.pool() {
            Some(pool) => pool.install(|| items.into_par_iter().map(&f).collect()),
            None => items.into_iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let items: Vec<u64> = (0..200).collect();
        let expected: Vec<u64> = items.iter().map(|v| v * v).collect();
        for threads in [0, 1, 2, 4] {
            assert_eq!(Executor::new(threads).map(items.clone(), |v| v * v), expected);
        }
    }
}
