//! Deterministic parallelism helpers.
//!
//! With the `parallel` feature (default), element-wise maps run on rayon while
//! reductions accumulate fixed-size chunk partials that are summed in chunk
//! order, so results are bit-identical to the sequential path regardless of
//! thread count or scheduling. Without the feature everything is sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic reductions and slab maps.
pub const CHUNK: usize = 8192;

/// Applies `f(start, chunk)` over disjoint chunks of `out` of length `CHUNK`.
/// `start` is the flat index of the first element of the chunk.
pub fn map_chunks<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| f(c * CHUNK, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    map_chunks_serial(out, f);
}

/// Sequential twin of [`map_chunks`]; also used by the benchmark suite.
pub fn map_chunks_serial<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    for (c, chunk) in out.chunks_mut(CHUNK).enumerate() {
        f(c * CHUNK, chunk);
    }
}

/// Deterministic sum of `f(i)` for `i in 0..n`: chunk partials in parallel,
/// chunk-ordered accumulation.
pub fn det_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let nchunks = n.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        })
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..nchunks)
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        })
        .collect();
    partials.iter().sum()
}

/// Sequential twin of [`det_sum`] with the same chunked accumulation order.
pub fn det_sum_serial<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64,
{
    let nchunks = n.div_ceil(CHUNK);
    let mut total = 0.0;
    for c in 0..nchunks {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        total += s;
    }
    total
}

/// Dot product with deterministic accumulation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    det_sum(a.len(), |i| a[i] * b[i])
}

/// Sequential twin of [`dot`].
pub fn dot_serial(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    det_sum_serial(a.len(), |i| a[i] * b[i])
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Max absolute value (deterministic: max is order-independent).
pub fn max_abs(a: &[f64]) -> f64 {
    #[cfg(feature = "parallel")]
    {
        a.par_chunks(CHUNK)
            .map(|c| c.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
            .reduce(|| 0.0, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    a.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// `y += alpha * x`, element-wise in parallel.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    map_chunks(y, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            *v += alpha * x[start + k];
        }
    });
}

/// `y = x + beta * y`, element-wise in parallel.
pub fn xpby(x: &[f64], beta: f64, y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    map_chunks(y, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            *v = x[start + k] + beta * *v;
        }
    });
}

/// `y *= alpha`.
pub fn scale(alpha: f64, y: &mut [f64]) {
    map_chunks(y, |_, chunk| {
        for v in chunk.iter_mut() {
            *v *= alpha;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_sum_matches_serial() {
        let n = 100_000;
        let f = |i: usize| ((i as f64) * 0.3).sin();
        assert_eq!(det_sum(n, f), det_sum_serial(n, f));
    }

    #[test]
    fn dot_matches_serial_bitwise() {
        let a: Vec<f64> = (0..50_000).map(|i| (i as f64).sqrt().sin()).collect();
        let b: Vec<f64> = (0..50_000).map(|i| (i as f64 * 0.01).cos()).collect();
        assert_eq!(dot(&a, &b), dot_serial(&a, &b));
    }
}
