//! Data-parallel helpers.
//!
//! With the `parallel` feature enabled work is split across the current rayon
//! pool; without it (or inside a one-thread pool) everything runs on the
//! calling thread. Every helper partitions *outputs*, never reductions, so a
//! result does not depend on how many workers produced it.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of workers the helpers will use from the calling context.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Calls `f(first_row, chunk)` over disjoint row blocks of a row-major buffer
/// `cols` wide. Blocks are at least `min_rows` tall.
pub fn for_each_row_block<F>(out: &mut [f64], cols: usize, min_rows: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 || out.is_empty() {
        return;
    }
    let rows = out.len() / cols;
    let threads = workers();
    if threads <= 1 || rows < 2 * min_rows.max(1) {
        f(0, out);
        return;
    }
    let block = (rows.div_ceil(threads * 4)).max(min_rows.max(1));
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(block * cols)
        .enumerate()
        .for_each(|(i, chunk)| f(i * block, chunk));
    #[cfg(not(feature = "parallel"))]
    for (i, chunk) in out.chunks_mut(block * cols).enumerate() {
        f(i * block, chunk);
    }
}

/// Ordered map over `0..n`.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers() > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Runs `f` inside a pool of `threads` workers (or directly when the
/// `parallel` feature is off).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {threads}-thread pool ({e}); running inline");
                f()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Worker count requested through `MHCL_THREADS`, if set and valid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("MHCL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
