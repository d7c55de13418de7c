//! Density representations, Stein equations and density-convergence
//! experiments for Pearson diffusions and weighted Gamma sums.

pub mod chaos;
pub mod error;
pub mod experiments;
pub mod kde;
pub mod lyapunov;
pub mod pearson;
pub mod poly;
pub mod quad;
pub mod rho;
pub mod rng;
pub mod sim;
pub mod stein;

pub use error::{Error, Result};
pub use pearson::{Family, GeneralDiffusionSpec, PearsonSpec};

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
