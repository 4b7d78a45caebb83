//! Execution mode for the data-parallel inner loops.
//!
//! With the `parallel` feature the batch-level loops (convolution over
//! samples, evaluation chunks, independent seeds) run on the rayon pool.
//! Without it, or after [`set_mode`]`(ExecMode::Sequential)`, the same code
//! runs on the calling thread. Every loop writes disjoint outputs and reduces
//! in a fixed order, so both modes produce bitwise-identical results.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

pub fn set_mode(mode: ExecMode) {
    PARALLEL.store(mode == ExecMode::Parallel, Ordering::Relaxed);
}

/// The effective mode. Always `Sequential` when built without `parallel`.
pub fn mode() -> ExecMode {
    if cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed) {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

/// Applies `f(index, chunk)` to consecutive `chunk_len`-sized chunks of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
