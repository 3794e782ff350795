//! Data-parallel execution shim.
//!
//! The hot loops in this crate (probe training over the head grid, batch
//! task evaluation, seed sweeps) are maps over independent inputs with
//! read-only shared state. With the default `parallel` feature they run on
//! rayon; without it they degrade to plain sequential iteration with the
//! same output order, so results are identical either way.
//!
//! `seq_map` is always available so benchmarks can compare both paths in a
//! single build.

/// Map over a slice, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Map over a slice, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Map over an index range, preserving order.
#[cfg(feature = "parallel")]
pub fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map over an index range, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Sequential reference path, kept unconditionally for benchmarks and for
/// pinning down any suspected parallelism-order bug.
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
