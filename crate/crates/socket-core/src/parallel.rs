//! Deterministic parallel reduction helper.
//!
//! Floating-point sums depend on evaluation order, so parallel reductions must
//! not let the thread count decide it. Work is split into a fixed set of
//! contiguous chunks, each chunk is reduced sequentially, and the ordered
//! per-chunk partials are handed back for a sequential combine. The chunking
//! depends only on `total` and `chunk_size`, never on the worker count.

use rayon::prelude::*;
use std::ops::Range;

/// Runs `f` over fixed chunks of `0..total` in parallel and returns the
/// per-chunk results in chunk order.
pub(crate) fn chunked_partials<T, F>(total: usize, chunk_size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    assert!(chunk_size > 0);
    let ranges: Vec<Range<usize>> = (0..total)
        .step_by(chunk_size)
        .map(|start| start..(start + chunk_size).min(total))
        .collect();
    ranges.into_par_iter().map(f).collect()
}
