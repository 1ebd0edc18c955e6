//! Shared oracles for the integration suites. Everything here is a second,
//! independent route to the quantities the library computes: the simplex
//! projection is solved by bisection on the KKT shift instead of
//! sort-and-threshold, and distance matrices are built naively.
#![allow(dead_code)] // each test target uses a different subset

use mfgl::linalg::Mat;
use mfgl::superpixels::FeatureDistanceMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Euclidean projection onto the probabilistic simplex via bisection on the
/// shift mu with sum(max(0, v_i + mu)) = 1. Monotone in mu, so 200 halvings
/// pin the shift to far below any tolerance used in the tests.
pub fn project_simplex_bisection(v: &[f64]) -> Vec<f64> {
    let g = |mu: f64| -> f64 { v.iter().map(|&x| (x + mu).max(0.0)).sum::<f64>() };
    let mut lo = -v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut hi = lo + 1.0 + 1.0 / v.len() as f64;
    while g(hi) < 1.0 {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    v.iter().map(|&x| (x + mu).max(0.0)).collect()
}

/// Random symmetric nonnegative zero-diagonal distance matrix.
pub fn random_dist_matrix(n: usize, rng: &mut ChaCha12Rng) -> FeatureDistanceMatrix {
    let mut values = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = rng.random::<f64>() * 10.0 + 1e-6;
            values.set(i, j, d);
            values.set(j, i, d);
        }
    }
    FeatureDistanceMatrix {
        values,
        view_tag: "random".into(),
    }
}

/// Distance matrix whose entries are integers times 1000, so that scaling by
/// 1e3 (multiply) and 1e-3 (divide by 1000) is exact in f64.
pub fn integer_dist_matrix(n: usize, rng: &mut ChaCha12Rng) -> FeatureDistanceMatrix {
    let mut values = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = rng.random_range(1..1_048_576u32) as f64 * 1000.0;
            values.set(i, j, d);
            values.set(j, i, d);
        }
    }
    FeatureDistanceMatrix {
        values,
        view_tag: "integer".into(),
    }
}
