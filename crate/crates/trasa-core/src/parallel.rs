//! Data-parallel helpers with a sequential fallback.
//!
//! The hot loops of this crate — per-instance gradient computation inside a
//! batch, evaluation over instances, finite-difference sweeps — are
//! embarrassingly parallel: each element builds its own computation record
//! and shares nothing mutable. With the default `parallel` feature these
//! helpers fan work out over rayon; without it they run sequentially.
//!
//! Results are always collected in input order, so reductions downstream see
//! the same operand order either way and outputs are bit-identical across
//! both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order. Parallel when the `parallel`
/// feature is enabled.
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Map `f` over `0..n`, preserving order. Parallel when the `parallel`
/// feature is enabled.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Sequential twin of [`map_collect`], available regardless of features.
/// Exists so benchmarks can compare both execution modes in one build.
pub fn map_collect_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Sequential twin of [`map_indices`].
pub fn map_indices_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}
