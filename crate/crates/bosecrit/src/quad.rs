//! One-dimensional quadrature building blocks used throughout the crate.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// Gauss-Legendre nodes and weights on `[-1, 1]`, cached per node count.
///
/// Newton iteration on the Legendre recurrence; accurate to machine
/// precision for the node counts used here (n <= 256).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: RwLock<Option<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = RwLock::new(None);
    if let Some(map) = CACHE.read().unwrap().as_ref() {
        if let Some(hit) = map.get(&n) {
            return (hit.0.clone(), hit.1.clone());
        }
    }
    let fresh = Arc::new(compute_gauss_legendre(n));
    let mut guard = CACHE.write().unwrap();
    guard.get_or_insert_with(HashMap::new).insert(n, fresh.clone());
    (fresh.0.clone(), fresh.1.clone())
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre integration of `f` over `[a, b]` with `n` nodes.
pub fn gl_integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..n {
        acc += w[i] * f(mid + c * x[i]);
    }
    acc * c
}

/// Composite Simpson rule over a uniformly sampled table (including both endpoints).
///
/// `values.len()` must be odd so the panel count is even.
pub fn simpson_table(values: &[f64], step: f64) -> f64 {
    assert!(values.len() >= 3 && values.len() % 2 == 1, "need an odd sample count");
    let mut acc = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * step / 3.0
}

/// Composite Simpson rule for a closure on `[a, b]` with `n` panels (`n` even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let values: Vec<f64> = (0..=n).map(|i| f(a + i as f64 * h)).collect();
    simpson_table(&values, h)
}

/// Deterministic pairwise summation; the result is independent of how the
/// slice was produced (in particular of the thread count that filled it).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sample mean and standard error via pairwise summation.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2);
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
