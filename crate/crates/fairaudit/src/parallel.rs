//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature, `par_map` fans work out over rayon
//! and reassembles results in input order. Without it, both helpers are the
//! same sequential loop. `seq_map` is always sequential so benchmarks can
//! compare the two paths under one build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
    T: Sync,
    U: Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
    T: Sync,
    U: Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
    T: Sync,
    U: Send,
{
    seq_map(items, f)
}

/// Runs `f` inside a bounded thread pool of `threads` workers when the
/// `parallel` feature is on; otherwise runs it inline.
#[cfg(feature = "parallel")]
pub fn with_bounded_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_bounded_pool<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}
