//! Data-parallel map helpers with a sequential fallback.
//!
//! The pipeline's hot loops (per-window feature rows, distance-matrix
//! pairs, per-tree forest growing, CV folds) are all embarrassingly
//! parallel maps over an index range. This module is the single point
//! where that parallelism lives: with the `parallel` feature (default)
//! the maps run on rayon's pool, without it they run sequentially.
//! Both paths collect results in input order, so outputs are identical
//! regardless of thread count — parallelism is a wall-clock decision,
//! never a numerical one.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`map_range`]; the first error (by index order in
/// the sequential build, any error in the parallel build) aborts the map.
pub fn try_map_range<U, F>(n: usize, f: F) -> Result<Vec<U>>
where
    U: Send,
    F: Fn(usize) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over a slice, preserving element order in the output.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Fallible variant of [`map_slice`].
pub fn try_map_slice<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// True when this build runs the maps on a thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Caps the worker-thread count (the CLI's `--jobs`). Must be called
/// before any parallel map runs and at most once per process; a no-op
/// in sequential builds. Thread count never affects results, only
/// wall-clock time.
#[cfg(feature = "parallel")]
pub fn configure_threads(jobs: usize) -> Result<()> {
    use crate::error::PipelineError;
    if jobs == 0 {
        return Err(PipelineError::argument("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| {
            PipelineError::config(format!("cannot configure {jobs} worker threads: {e}"))
        })
}

/// Sequential builds have exactly one worker regardless of `--jobs`.
#[cfg(not(feature = "parallel"))]
pub fn configure_threads(jobs: usize) -> Result<()> {
    use crate::error::PipelineError;
    if jobs == 0 {
        return Err(PipelineError::argument("--jobs must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::PipelineError;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(100, |i| i * i);
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, i * i);
        }
    }

    #[test]
    fn map_slice_preserves_order() {
        let items: Vec<i64> = (0..57).collect();
        let v = map_slice(&items, |x| x + 1);
        assert_eq!(v, (1..58).collect::<Vec<i64>>());
    }

    #[test]
    fn try_map_propagates_errors() {
        let r = try_map_range(10, |i| {
            if i == 7 {
                Err(PipelineError::argument("boom"))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
        let ok = try_map_range(10, Ok).unwrap();
        assert_eq!(ok, (0..10).collect::<Vec<usize>>());
    }
}
