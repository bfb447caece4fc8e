//! Execution helpers for the data-parallel inner loops.
//!
//! With the `parallel` feature the chunked loops below run on rayon; without
//! it they run sequentially. Work is always split into the same fixed chunks
//! and partial results are merged in chunk order, so both modes (and any
//! thread count) produce bit-identical results. `force_sequential` flips the
//! parallel build back to the sequential path at runtime, which is what the
//! benchmark suite uses to compare the two.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk count for reductions; independent of the thread count so that
/// merge order (and therefore floating-point rounding) never varies.
pub const REDUCE_CHUNKS: usize = 16;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path even when the `parallel` feature is enabled.
pub fn force_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::Relaxed);
}

/// True when work will actually be dispatched to rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Splits `0..len` into [`REDUCE_CHUNKS`] contiguous ranges.
pub fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = REDUCE_CHUNKS.min(len.max(1));
    let base = len / chunks;
    let extra = len % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for i in 0..chunks {
        let size = base + usize::from(i < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}
