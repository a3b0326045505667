//! Data-parallel map with a sequential fallback.
//!
//! Grid sweeps (deviation fits, box-count scale ladders, CLI eta grids)
//! are embarrassingly parallel over independent tasks. Every task receives
//! its own index so seeding stays deterministic, and results are collected
//! in index order, so the output is byte-identical whether the `parallel`
//! feature is enabled or not and whatever the worker count.

/// Maps `f` over `0..len`, collecting results in index order.
///
/// Dispatches to a rayon parallel iterator when the `parallel` feature is
/// on, and to a plain sequential loop otherwise.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        map_indexed_par(len, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(len, f)
    }
}

/// Sequential reference implementation; always available.
pub fn map_indexed_seq<T, F>(len: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..len).map(f).collect()
}

/// Rayon-backed implementation; preserves index order on collect.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}
