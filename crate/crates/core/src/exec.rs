//! Batch execution: data-parallel under the `parallel` feature, sequential
//! otherwise.
//!
//! Every batch stage in the crate funnels through [`map_batch`], so the
//! feature flag (or a worker count of 1) is the only thing deciding between
//! rayon and a plain loop. [`map_batch_seq`] stays available for direct
//! comparison in benchmarks.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every item, in parallel when the `parallel` feature is
/// enabled. Output order matches input order either way.
#[cfg(feature = "parallel")]
pub fn map_batch<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    items.par_iter().map(f).collect()
}

/// Applies `f` to every item, in parallel when the `parallel` feature is
/// enabled. Output order matches input order either way.
#[cfg(not(feature = "parallel"))]
pub fn map_batch<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential fallback, always available.
pub fn map_batch_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Runs two closures, concurrently under the `parallel` feature. Used for
/// the two simultaneous speeches of one turn, which share a read-only
/// context.
#[cfg(feature = "parallel")]
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    rayon::join(a, b)
}

/// Runs two closures, concurrently under the `parallel` feature. Used for
/// the two simultaneous speeches of one turn, which share a read-only
/// context.
#[cfg(not(feature = "parallel"))]
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA,
    B: FnOnce() -> RB,
{
    (a(), b())
}

/// Runs `f` inside a pool of `workers` threads (0 keeps the global default).
#[cfg(feature = "parallel")]
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(f)
}

/// Runs `f` directly; without the `parallel` feature there is no pool.
#[cfg(not(feature = "parallel"))]
pub fn with_workers<R, F>(_workers: usize, f: F) -> R
where
    F: FnOnce() -> R,
{
    f()
}
