//! Deterministic parallel reductions over Monte Carlo paths.
//!
//! Paths are split into fixed-size chunks independent of the thread count.
//! Each chunk accumulates sequentially and chunk results are combined in
//! index order, so sums are bit-identical on any machine and pool size.

use rayon::prelude::*;

use crate::error::Result;

/// Paths per reduction chunk.
pub const CHUNK: usize = 256;

/// `sum_p f(p)` for vector-valued `f`, where `f` adds its contribution into
/// the accumulator it is given.
pub fn ordered_sum<F>(n_paths: usize, len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let n_chunks = n_paths.div_ceil(CHUNK);
    let partial: Vec<Result<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                f(p, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; len];
    for chunk in partial {
        for (t, v) in total.iter_mut().zip(chunk?) {
            *t += v;
        }
    }
    Ok(total)
}

/// `f(p)` for every path, in path order.
pub fn ordered_map<T, F>(n_paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    (0..n_paths).into_par_iter().map(|p| f(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_sum_is_independent_of_pool_size() {
        let f = |p: usize, acc: &mut [f64]| {
            acc[0] += (p as f64).sqrt().sin();
            acc[1] += 1.0 / (1.0 + p as f64);
            Ok(())
        };
        let a = ordered_sum(10_000, 2, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| ordered_sum(10_000, 2, f).unwrap());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
