//! Fixed-chunk parallel maps. Chunk boundaries depend only on the input
//! length, so reductions over the returned vector are bit-identical for any
//! worker count.

use std::ops::Range;

pub(crate) const CHUNK: usize = 32;

fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    chunk_ranges(n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunk_ranges(n).into_iter().map(f).collect()
}

/// Order-preserving parallel map over `0..n`.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks(n, |r| r.map(&f).collect::<Vec<T>>())
        .into_iter()
        .flatten()
        .collect()
}
