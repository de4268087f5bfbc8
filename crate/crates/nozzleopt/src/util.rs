//! Deterministic parallel reductions.
//!
//! Rayon's `sum()` depends on work-stealing split points, so its result can
//! differ between runs. The helpers here reduce over fixed-size chunks and
//! combine the partials in index order, which is bitwise reproducible for any
//! thread count.

use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Sum of a slice, bitwise deterministic regardless of thread count.
pub fn det_sum(values: &[f64]) -> f64 {
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Deterministic dot product.
pub fn det_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Deterministic maximum of |a_i - b_i|.
pub fn det_max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| {
            ca.iter()
                .zip(cb)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Deterministic maximum of a slice (0.0 for empty input).
pub fn det_max(values: &[f64]) -> f64 {
    values
        .par_chunks(CHUNK)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .reduce(|| f64::NEG_INFINITY, f64::max)
        .max(f64::NEG_INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_sequential() {
        let v: Vec<f64> = (0..20_000).map(|i| (i as f64).sin()).collect();
        let seq: f64 = v.iter().sum();
        assert!((det_sum(&v) - seq).abs() < 1e-9);
    }

    #[test]
    fn dot_matches_sequential() {
        let a: Vec<f64> = (0..9_000).map(|i| (i as f64).cos()).collect();
        let b: Vec<f64> = (0..9_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let seq: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((det_dot(&a, &b) - seq).abs() < 1e-12);
    }
}
