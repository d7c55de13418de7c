//! Gaussian kernel estimates of densities and their derivatives, and Monte
//! Carlo means with standard errors.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 100;
pub const MAX_ORDER: usize = 3;
/// Kernel contributions beyond this many bandwidths are dropped (`phi(10) ~ 8e-23`).
const CUTOFF: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub order: usize,
    pub bandwidth: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeSidecar {
    pub order: usize,
    pub bandwidth: f64,
    pub n: usize,
}

impl DensityEstimate {
    /// Trapezoid integral of the estimate over its grid.
    pub fn trapezoid_mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn sidecar(&self) -> KdeSidecar {
        KdeSidecar {
            order: self.order,
            bandwidth: self.bandwidth,
            n: self.n,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,value,stderr")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},{:e},{:e}",
                self.grid[i], self.values[i], self.stderr[i]
            )?;
        }
        Ok(())
    }
}

/// Probabilists' Hermite polynomial `He_k(u)` for `k <= 3`.
fn hermite(k: usize, u: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => u,
        2 => u * u - 1.0,
        _ => u * (u * u - 3.0),
    }
}

/// `d^k/du^k phi(u) = (-1)^k He_k(u) phi(u)`.
pub fn gaussian_kernel_derivative(k: usize, u: f64) -> f64 {
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * hermite(k, u) * (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("samples must be finite".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn silverman_sorted(v: &[f64], k: usize) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = crate::sim::quantile_sorted(v, 0.75) - crate::sim::quantile_sorted(v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-1.0 / (2.0 * k as f64 + 5.0))
}

/// `0.9 min(sd, IQR/1.34) n^{-1/(2k+5)}`.
pub fn silverman_bandwidth(samples: &[f64], k: usize) -> Result<f64> {
    check(samples.len(), k)?;
    Ok(silverman_sorted(&sorted(samples)?, k))
}

fn check(n: usize, k: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::Invalid(format!(
            "kernel estimate needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    if k > MAX_ORDER {
        return Err(Error::Invalid(format!(
            "derivative order {k} exceeds {MAX_ORDER}"
        )));
    }
    Ok(())
}

/// Estimate of `p^(k)` on `grid`; the standard error is the sample standard
/// deviation of the kernel summands over `sqrt(n)`.
pub fn kde(
    samples: &[f64],
    grid: &[f64],
    k: usize,
    bandwidth: Option<f64>,
) -> Result<DensityEstimate> {
    check(samples.len(), k)?;
    let v = sorted(samples)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::Invalid(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => silverman_sorted(&v, k),
    };
    if !(h > 0.0) {
        return Err(Error::Invalid("samples are constant; no bandwidth".into()));
    }
    let n = v.len() as f64;
    let norm = h.powi(k as i32 + 1);
    let (values, stderr): (Vec<f64>, Vec<f64>) = grid
        .par_iter()
        .map(|&x| {
            let start = v.partition_point(|&s| s < x - CUTOFF * h);
            let end = v.partition_point(|&s| s <= x + CUTOFF * h);
            let (mut s1, mut s2) = (0.0, 0.0);
            for &s in &v[start..end] {
                let term = gaussian_kernel_derivative(k, (x - s) / h) / norm;
                s1 += term;
                s2 += term * term;
            }
            let mean = s1 / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
            (mean, (var / n).sqrt())
        })
        .unzip();
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        values,
        stderr,
        order: k,
        bandwidth: h,
        n: v.len(),
    })
}

/// A Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn of(values: impl Iterator<Item = f64>) -> McEstimate {
        let (mut n, mut s1, mut s2) = (0usize, 0.0, 0.0);
        // shifted sums keep the variance accurate when the mean is large
        let mut shift = None;
        for x in values {
            let c = *shift.get_or_insert(x);
            let d = x - c;
            n += 1;
            s1 += d;
            s2 += d * d;
        }
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let nf = n as f64;
        let md = s1 / nf;
        let var = if n > 1 {
            ((s2 - nf * md * md) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            mean: shift.unwrap_or(0.0) + md,
            stderr: (var / nf).sqrt(),
        }
    }

    /// Whether `value` lies within `z` standard errors.
    pub fn covers(&self, value: f64, z: f64) -> bool {
        (self.mean - value).abs() <= z * self.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Greater,
    Leq,
}

/// `E[1_{F > x} H]` (or `1_{F <= x}`) from paired draws.
pub fn indicator_expectation(
    f: &[f64],
    h: &[f64],
    x: f64,
    direction: Direction,
) -> Result<McEstimate> {
    if f.len() != h.len() {
        return Err(Error::Invalid(format!(
            "{} values of F but {} of H",
            f.len(),
            h.len()
        )));
    }
    let keep = |fi: f64| match direction {
        Direction::Greater => fi > x,
        Direction::Leq => fi <= x,
    };
    Ok(McEstimate::of(f.iter().zip(h).map(|(&fi, &hi)| {
        if keep(fi) {
            hi
        } else {
            0.0
        }
    })))
}

/// `E[X^{-q}]` split over the sign of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativeMoment {
    /// `E[X^{-q} 1_{X > 0}]`.
    pub positive: McEstimate,
    /// `E[|X|^{-q} 1_{X <= 0}]`; infinite when some sample is exactly zero.
    pub nonpositive: McEstimate,
    pub n: usize,
    pub n_nonpositive: usize,
}

impl NegativeMoment {
    /// The estimate of `E[X^{-q}]` when every sample is positive.
    pub fn mean(&self) -> f64 {
        self.positive.mean
    }

    pub fn stderr(&self) -> f64 {
        self.positive.stderr
    }
}

pub fn negative_moment(samples: &[f64], q: f64) -> Result<NegativeMoment> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Invalid(format!("q must be positive, got {q}")));
    }
    let pow = |x: f64| x.powf(-q);
    let positive = McEstimate::of(samples.iter().map(|&x| if x > 0.0 { pow(x) } else { 0.0 }));
    let nonpositive = McEstimate::of(
        samples
            .iter()
            .map(|&x| if x > 0.0 { 0.0 } else { pow(x.abs()) }),
    );
    Ok(NegativeMoment {
        positive,
        nonpositive,
        n: samples.len(),
        n_nonpositive: samples.iter().filter(|&&x| x <= 0.0).count(),
    })
}
