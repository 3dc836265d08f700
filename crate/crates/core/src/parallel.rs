//! Switch between rayon and plain iteration.
//!
//! Every helper here preserves input order in its output, so callers that
//! reduce sequentially over the returned vector get bitwise-identical results
//! whichever path runs.

/// Whether data-parallel loops may use the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `0..len`, returning results in index order.
pub fn map_indices<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() && len > 1 {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Run `f` inside a pool with `workers` threads. With one worker `f` gets
/// sequential execution, and any nested parallel loop is confined to a
/// single-thread pool. Without the `parallel` feature `f` runs on the calling
/// thread.
pub fn with_workers<T, F>(workers: usize, f: F) -> T
where
    T: Send,
    F: FnOnce(Execution) -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        let exec = if workers > 1 { Execution::Parallel } else { Execution::Sequential };
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => return pool.install(|| f(exec)),
            Err(e) => log::warn!("could not build a {workers}-thread pool ({e}); running on the caller"),
        }
    }
    let _ = workers;
    f(Execution::Sequential)
}
