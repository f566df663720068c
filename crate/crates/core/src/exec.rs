//! Execution policy for per-path work.
//!
//! Every map here is index-ordered: output slot `i` holds `f(i)` regardless
//! of the policy, so downstream reductions see identical inputs whether the
//! work ran on one thread or many.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    /// Data-parallel over path indices. Falls back to sequential when the
    /// crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

impl ExecPolicy {
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            ExecPolicy::Sequential => (0..n).map(f).collect(),
            ExecPolicy::Parallel => par_map(n, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().with_min_len(64).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `op` with at most `workers` threads. `None` uses the global pool.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, op: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(op()),
        Some(0) => Err(Error::param("workers", "must be at least 1")),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::ThreadPool(e.to_string()))?;
            Ok(pool.install(op))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(workers: Option<usize>, op: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == Some(0) {
        return Err(Error::param("workers", "must be at least 1"));
    }
    Ok(op())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree_on_order() {
        let seq = ExecPolicy::Sequential.map_indexed(1000, |i| i * i);
        let par = ExecPolicy::Parallel.map_indexed(1000, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(with_workers(Some(0), || 1).is_err());
        assert_eq!(with_workers(Some(2), || 7).unwrap(), 7);
    }
}
