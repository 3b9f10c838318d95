//! Shared fixtures for the criterion benchmarks.

use nalgebra::{DMatrix, DVector};

use convot::CTSpec;

/// The trivariate two-cluster design used throughout the benchmarks.
pub fn bench_spec() -> CTSpec {
    let mu = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let xi = DMatrix::from_row_slice(
        3,
        3,
        &[0.6, 0.3, 0.1, 0.5, 0.7, 0.2, 0.4, 0.2, 0.8],
    );
    CTSpec::new(&[1, 2], &[4.0, 8.0], mu, xi, false).expect("valid spec")
}

/// A deterministic sample from the benchmark spec.
pub fn bench_data(t: usize) -> DMatrix<f64> {
    bench_spec().sample(t, 42)
}
