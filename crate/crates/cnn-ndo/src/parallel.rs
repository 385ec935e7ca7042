//! Data-parallel map helpers with a sequential fallback.
//!
//! The `parallel` feature routes these through rayon; without it they run
//! serially. Chunk boundaries are fixed, every chunk is reduced internally
//! in element order, and the partials are folded in chunk order afterwards,
//! so results are bit-identical across thread counts and across the two
//! build modes.

/// Fixed chunk length for chunked reductions.
pub(crate) const CHUNK: usize = 64;

/// Map over fixed-size chunks of `items`, returning per-chunk results in
/// chunk order.
#[cfg(feature = "parallel")]
pub(crate) fn chunked_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_chunks(CHUNK).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn chunked_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&[T]) -> R,
{
    items.chunks(CHUNK).map(f).collect()
}

/// Map over the index range `0..n` (one unit of work per index, e.g. one
/// Markov chain), returning results in index order.
#[cfg(feature = "parallel")]
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Apply `f` to disjoint row slices of a row-major matrix buffer starting at
/// `rows_from`, in parallel when enabled. Used by the dense LU factorization.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_row<T, F>(data: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    data.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_row<T, F>(data: &mut [T], row_len: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, row) in data.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}
