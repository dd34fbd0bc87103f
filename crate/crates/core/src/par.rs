//! Data-parallel map helpers. The `parallel` feature routes through rayon;
//! without it everything runs sequentially. Outputs are position-ordered and
//! identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential indexed map. Always available; benches compare it against
/// [`map_indexed`].
pub fn map_indexed_seq<R, F>(count: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync,
    R: Send,
{
    (0..count).map(f).collect()
}

/// Indexed map over `0..count`, parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(count: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync + Send,
    R: Send,
{
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(count: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync,
    R: Send,
{
    map_indexed_seq(count, f)
}
