//! Fixed-size work chunks. Reductions combine per-chunk partials in chunk
//! order, so results do not depend on how many worker threads run.

use std::ops::Range;

/// Pixels per work item for pixel-parallel loops.
pub const PIXEL_CHUNK: usize = 4096;

pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..len)
        .step_by(chunk.max(1))
        .map(|s| s..(s + chunk).min(len))
        .collect()
}

/// Runs `f` on a dedicated pool with `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build thread pool")
            .install(f),
        None => f(),
    }
}
