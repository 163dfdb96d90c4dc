//! Order-preserving parallel map, sequential when the `parallel` feature is off.

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Runs `op` with at most `jobs` worker threads.
#[cfg(feature = "parallel")]
pub(crate) fn with_jobs<R: Send>(jobs: usize, op: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(op),
        Err(_) => op(),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn with_jobs<R>(_jobs: usize, op: impl FnOnce() -> R) -> R {
    op()
}
