//! Threading switch for the kernels.
//!
//! Kernels split work over the batch axis and reduce partial results in a
//! fixed order, so results never depend on the thread count. Deterministic
//! mode additionally forces single-threaded execution.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn is_deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

/// Runs `f(i, chunk)` over consecutive `chunk`-sized pieces of `out`.
pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if is_deterministic() || out.len() <= chunk {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Evaluates `f` for `0..n`, returning results in index order.
pub(crate) fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if is_deterministic() || n <= 1 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
