//! Replica-parallel map with deterministic output order.

use rayon::prelude::*;

use crate::error::Result;

/// Replicas handed to one task; fields in a chunk share a matrix product.
pub const CHUNK: usize = 32;

/// Runs `f` on consecutive replica ranges in parallel and concatenates the
/// results in replica order. The chunking depends only on `count`, so
/// results do not depend on the number of threads.
pub fn map_chunks<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Result<Vec<T>> + Sync,
{
    let ranges: Vec<_> = (0..count)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(count))
        .collect();
    let parts = ranges.into_par_iter().map(&f).collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}
