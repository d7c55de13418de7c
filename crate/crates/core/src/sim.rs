//! Euler-type simulation of `dZ = a(Z) dt + sqrt(1_{(lo,hi)}(Z) b(Z)) dB`.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pearson::{Family, GeneralDiffusionSpec, PearsonSpec};
use crate::rng::{chunk_rng, par_generate};

pub const DEFAULT_DT: f64 = 1e-3;

/// Drift, squared diffusion and state space of a one-dimensional SDE.
pub trait Sde: Sync {
    fn drift(&self, x: f64) -> f64;
    /// `b(x)`; only called at points of the closed support.
    fn diffusion_sq(&self, x: f64) -> f64;
    fn support(&self) -> (f64, f64);
    /// Whether `b` vanishes at a finite endpoint.
    fn has_boundary_root(&self) -> bool;
}

impl Sde for PearsonSpec {
    fn drift(&self, x: f64) -> f64 {
        PearsonSpec::drift(self, x)
    }

    fn diffusion_sq(&self, x: f64) -> f64 {
        self.b(x)
    }

    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn has_boundary_root(&self) -> bool {
        PearsonSpec::has_boundary_root(self)
    }
}

/// The same drift with `b = 0`: paths follow the ODE `z' = a(z)`.
pub struct ZeroNoise<'a, S: Sde>(pub &'a S);

impl<S: Sde> Sde for ZeroNoise<'_, S> {
    fn drift(&self, x: f64) -> f64 {
        self.0.drift(x)
    }

    fn diffusion_sq(&self, _x: f64) -> f64 {
        0.0
    }

    fn support(&self) -> (f64, f64) {
        self.0.support()
    }

    fn has_boundary_root(&self) -> bool {
        false
    }
}

/// A general diffusion whose `b = 2 int a p / p` is tabulated once on a grid
/// and interpolated linearly; the table is flat beyond its ends.
pub struct TabulatedDiffusion {
    drift: crate::pearson::RealFn,
    lo: f64,
    hi: f64,
    xs: Vec<f64>,
    bs: Vec<f64>,
}

impl TabulatedDiffusion {
    /// Tabulates `b` at `n` points of `[a, c]`, which must lie inside the support.
    pub fn new(spec: &GeneralDiffusionSpec, a: f64, c: f64, n: usize) -> Result<Self> {
        if !(spec.in_support(a) && spec.in_support(c) && a < c) || n < 2 {
            return Err(Error::Config(format!(
                "table range [{a}, {c}] with {n} points must lie inside the support"
            )));
        }
        let xs = crate::linspace(a, c, n);
        let bs = xs
            .par_iter()
            .map(|&x| spec.induced_b(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(TabulatedDiffusion {
            drift: spec.drift.clone(),
            lo: spec.lo,
            hi: spec.hi,
            xs,
            bs,
        })
    }
}

impl Sde for TabulatedDiffusion {
    fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    fn diffusion_sq(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.bs[0];
        }
        if x >= self.xs[n - 1] {
            return self.bs[n - 1];
        }
        let h = self.xs[1] - self.xs[0];
        let i = (((x - self.xs[0]) / h) as usize).min(n - 2);
        let w = (x - self.xs[i]) / h;
        self.bs[i] * (1.0 - w) + self.bs[i + 1] * w
    }

    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn has_boundary_root(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Project back onto the closed support; the indicator switches noise off outside.
    ClampWithIndicator,
    /// Mirror overshoots at finite endpoints.
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `b` at the current state, times the support indicator.
    EulerMaruyama,
    /// `b` at the current state clamped to the closed support.
    FullTruncationEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub boundary_policy: BoundaryPolicy,
    /// Full truncation when `b` has a root at a finite endpoint, plain Euler otherwise.
    #[serde(default)]
    pub scheme: Option<Scheme>,
}

impl SimConfig {
    pub fn new(t_grid: Vec<f64>, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            t_grid,
            n_paths,
            seed,
            boundary_policy: BoundaryPolicy::ClampWithIndicator,
            scheme: None,
        }
    }

    pub fn scheme_for<S: Sde + ?Sized>(&self, sde: &S) -> Scheme {
        self.scheme.unwrap_or(if sde.has_boundary_root() {
            Scheme::FullTruncationEuler
        } else {
            Scheme::EulerMaruyama
        })
    }

    /// Steps between consecutive recording times (from `t = 0`).
    pub fn step_counts(&self) -> Result<Vec<usize>> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.t_grid.is_empty() {
            return Err(Error::Config("t_grid is empty".into()));
        }
        let mut prev = 0.0;
        let mut out = Vec::with_capacity(self.t_grid.len());
        for (i, &t) in self.t_grid.iter().enumerate() {
            let gap = t - prev;
            if !(gap > 0.0 || (i == 0 && gap == 0.0)) {
                return Err(Error::Config(format!(
                    "t_grid must start at t >= 0 and increase strictly (t = {t})"
                )));
            }
            let r = gap / self.dt;
            let steps = r.round();
            if (r - steps).abs() > 1e-9 * r.max(1.0) || (i > 0 && steps < 1.0) {
                return Err(Error::Config(format!(
                    "dt = {} does not divide the grid spacing {gap}",
                    self.dt
                )));
            }
            out.push(steps as usize);
            prev = t;
        }
        Ok(out)
    }
}

/// Paths recorded at the configured times. Row `i` of `values` belongs to
/// path `path_ids[i]`; failed paths are dropped and counted.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub t_grid: Vec<f64>,
    pub path_ids: Vec<usize>,
    values: Vec<f64>,
    pub n_failed: usize,
    pub scheme: Scheme,
    pub config: SimConfig,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.path_ids.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.t_grid.len();
        &self.values[i * w..(i + 1) * w]
    }

    /// Values of all surviving paths at time index `j`.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        let w = self.t_grid.len();
        self.values.iter().skip(j).step_by(w).copied().collect()
    }

    pub fn summary(&self) -> EnsembleSummary {
        let slices = (0..self.t_grid.len())
            .map(|j| {
                let mut v = self.slice(j);
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                v.sort_by(f64::total_cmp);
                let q = |p: f64| quantile_sorted(&v, p);
                SliceSummary {
                    t: self.t_grid[j],
                    mean,
                    var,
                    q05: q(0.05),
                    q25: q(0.25),
                    q50: q(0.5),
                    q75: q(0.75),
                    q95: q(0.95),
                }
            })
            .collect();
        EnsembleSummary {
            n_paths: self.n_paths(),
            n_failed: self.n_failed,
            scheme: self.scheme,
            slices,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,path_id,value")?;
        for (i, id) in self.path_ids.iter().enumerate() {
            for (t, v) in self.t_grid.iter().zip(self.path(i)) {
                writeln!(w, "{t},{id},{v:e}")?;
            }
        }
        Ok(())
    }
}

/// Linear interpolation between order statistics.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceSummary {
    pub t: f64,
    pub mean: f64,
    pub var: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub n_failed: usize,
    pub scheme: Scheme,
    pub slices: Vec<SliceSummary>,
}

fn apply_boundary(x: f64, lo: f64, hi: f64, policy: BoundaryPolicy) -> f64 {
    match policy {
        BoundaryPolicy::ClampWithIndicator => x.clamp(lo, hi),
        BoundaryPolicy::Reflect => {
            let mut y = x;
            if y < lo {
                y = 2.0 * lo - y;
            }
            if y > hi {
                y = 2.0 * hi - y;
            }
            // overshoots wider than the whole interval
            y.clamp(lo, hi)
        }
    }
}

fn step<S: Sde + ?Sized>(
    sde: &S,
    x: f64,
    dt: f64,
    sqdt: f64,
    scheme: Scheme,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (lo, hi) = sde.support();
    let b = match scheme {
        Scheme::EulerMaruyama => {
            if x > lo && x < hi {
                sde.diffusion_sq(x)
            } else {
                0.0
            }
        }
        Scheme::FullTruncationEuler => sde.diffusion_sq(x.clamp(lo, hi)),
    };
    let xi: f64 = StandardNormal.sample(rng);
    x + sde.drift(x) * dt + b.max(0.0).sqrt() * sqdt * xi
}

/// Simulates `config.n_paths` paths from `z0`. Path `i` draws from stream `i`
/// of the seed, so the result does not depend on the worker count.
pub fn simulate<S: Sde + ?Sized>(sde: &S, z0: f64, config: &SimConfig) -> Result<Ensemble> {
    simulate_from(sde, &vec![z0; config.n_paths], config)
}

/// As [`simulate`], with path `i` started at `z0[i]`.
pub fn simulate_from<S: Sde + ?Sized>(sde: &S, z0: &[f64], config: &SimConfig) -> Result<Ensemble> {
    let steps = config.step_counts()?;
    let (lo, hi) = sde.support();
    let bounded = lo.is_finite() || hi.is_finite();
    if z0.len() != config.n_paths {
        return Err(Error::Config(format!(
            "{} initial values for {} paths",
            z0.len(),
            config.n_paths
        )));
    }
    if let Some(z) = z0.iter().find(|z| !z.is_finite() || **z < lo || **z > hi) {
        return Err(Error::Domain(format!(
            "z0 = {z} lies outside the closed support [{lo}, {hi}]"
        )));
    }
    let scheme = config.scheme_for(sde);
    let dt = config.dt;
    let sqdt = dt.sqrt();
    let width = steps.len();
    let rows: Vec<Option<Vec<f64>>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = chunk_rng(config.seed, i as u64);
            let mut x = z0[i];
            let mut row = Vec::with_capacity(width);
            for &n in &steps {
                for _ in 0..n {
                    x = step(sde, x, dt, sqdt, scheme, &mut rng);
                    if bounded {
                        x = apply_boundary(x, lo, hi, config.boundary_policy);
                    }
                }
                if !x.is_finite() {
                    return None;
                }
                row.push(x);
            }
            Some(row)
        })
        .collect();
    let mut path_ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * width);
    let mut n_failed = 0;
    for (i, r) in rows.into_iter().enumerate() {
        match r {
            Some(r) => {
                path_ids.push(i);
                values.extend(r);
            }
            None => n_failed += 1,
        }
    }
    Ok(Ensemble {
        t_grid: config.t_grid.clone(),
        path_ids,
        values,
        n_failed,
        scheme,
        config: config.clone(),
    })
}

/// Exact i.i.d. draws from the stationary law of a named family.
pub fn stationary_sample(spec: &PearsonSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    let bad = |e: String| Error::Config(format!("sampler: {e}"));
    match spec.family() {
        Family::Normal { mean, var } => {
            let d = Normal::new(mean, var.sqrt()).map_err(|e| bad(e.to_string()))?;
            Ok(par_generate(seed, n, |rng, _| d.sample(rng)))
        }
        Family::Gamma { alpha } => {
            let d = Gamma::new(alpha, 1.0).map_err(|e| bad(e.to_string()))?;
            Ok(par_generate(seed, n, |rng, _| d.sample(rng)))
        }
        Family::Beta { a, b } => {
            let d = Beta::new(a, b).map_err(|e| bad(e.to_string()))?;
            Ok(par_generate(seed, n, |rng, _| d.sample(rng)))
        }
        Family::Student { nu } => {
            let d = StudentT::new(nu).map_err(|e| bad(e.to_string()))?;
            Ok(par_generate(seed, n, |rng, _| d.sample(rng)))
        }
        Family::Custom => Err(Error::Unsupported(
            "no exact sampler for a custom Pearson spec".into(),
        )),
    }
}
