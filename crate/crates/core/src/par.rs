//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction goes through fixed-size chunks whose partial results are
//! combined in index order, so results are bit-identical for any thread count
//! and with or without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for all reductions.
pub const CHUNK: usize = 4096;

/// Sum `f(i)` for `i in 0..n` in a thread-count independent order.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<f64> = (0..chunks).map(partial).collect();
    parts.iter().sum()
}

/// Fill `out[i] = f(i)`.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

/// Process `data` in blocks of `block` items; `f(block_index, block)` returns
/// a partial value and the partials are summed in block order.
pub fn blocks_mut_sum<T, F>(data: &mut [T], block: usize, f: F) -> f64
where
    T: Send,
    F: Fn(usize, &mut [T]) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let parts: Vec<f64> = data
        .par_chunks_mut(block)
        .enumerate()
        .map(|(i, b)| f(i, b))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<f64> = data
        .chunks_mut(block)
        .enumerate()
        .map(|(i, b)| f(i, b))
        .collect();
    parts.iter().sum()
}

/// Map over a slice of independent jobs, keeping input order.
pub fn map_jobs<I, O, F>(jobs: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return jobs.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return jobs.iter().map(f).collect();
}
