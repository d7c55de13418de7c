//! Experiment runners behind the command-line tool, and the run-directory layout
//! (`config.json`, `results.csv`, `summary.json`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::chaos::{self, WeightFamily, WeightedGammaSpec};
use crate::error::{Error, Result};
use crate::kde::{self, gaussian_kernel_derivative, McEstimate};
use crate::lyapunov::{self, DriftOverride};
use crate::pearson::{Family, PearsonSpec};
use crate::rho::{build_rho_table, representation_residual, rho, rho_via_symbolic};
use crate::rng::sub_seed;
use crate::sim::{self, BoundaryPolicy, Scheme, SimConfig};
use crate::stein::{self, EnvelopeConstants, SteinProblem};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Cells whose gap is below this many standard errors are left out of rate fits.
pub const FIT_Z: f64 = 3.0;

/// Smallest `alpha` for which the weighted sums are run.
pub const MIN_SUPERCONVERGENCE_ALPHA: f64 = 6.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Run directory; excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    ExpConvergence(ConvergenceConfig),
    Lyapunov(LyapunovConfig),
    GammaSuperconvergence(SuperconvergenceConfig),
    Validate(ValidationConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ExpConvergence(_) => "exp-convergence",
            Experiment::Lyapunov(_) => "lyapunov",
            Experiment::GammaSuperconvergence(_) => "gamma-superconvergence",
            Experiment::Validate(_) => "validate",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// SHA-256 of the canonical JSON of the config without its output directory.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c)?;
        Ok(Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    pub fn resolved_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::Config("no seed given (set \"seed\" in the config or pass --seed)".into())
        })
    }
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: &'static str,
    pub passed: bool,
    pub summary: Value,
    pub table: Table,
}

pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let seed = config.resolved_seed()?;
    match &config.experiment {
        Experiment::ExpConvergence(c) => run_exp_convergence(c, seed),
        Experiment::Lyapunov(c) => run_lyapunov_check(c),
        Experiment::GammaSuperconvergence(c) => run_gamma_superconvergence(c, seed),
        Experiment::Validate(c) => run_validation_suite(c),
    }
}

/// Writes `config.json`, `results.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, report: &Report) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut stored = config.clone();
    stored.out = None;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&stored)? + "\n",
    )?;
    let mut csv = Vec::new();
    report.table.write_csv(&mut csv)?;
    fs::write(dir.join("results.csv"), csv)?;
    let summary = json!({
        "experiment": report.experiment,
        "version": VERSION,
        "seed": config.resolved_seed()?,
        "config_hash": config.hash()?,
        "passed": report.passed,
        "report": report.summary,
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}

/// Shortest round-trip form, in exponent notation for very small or large magnitudes.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Least-squares line `y = intercept + slope t` and its `R^2`.
pub fn fit_line(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let ss_res: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

// ---------------------------------------------------------------- convergence of Pearson diffusions

fn default_normal() -> PearsonSpec {
    PearsonSpec::normal()
}

fn default_x_points() -> Vec<f64> {
    vec![0.0]
}

fn default_orders() -> Vec<usize> {
    vec![0, 1]
}

fn default_dt() -> f64 {
    sim::DEFAULT_DT
}

fn default_policy() -> BoundaryPolicy {
    BoundaryPolicy::ClampWithIndicator
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    #[serde(default = "default_normal")]
    pub target: PearsonSpec,
    pub z0: f64,
    #[serde(default = "default_x_points")]
    pub x_points: Vec<f64>,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_policy")]
    pub boundary_policy: BoundaryPolicy,
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Draw the initial values from the stationary law instead of starting at `z0`.
    #[serde(default)]
    pub stationary_start: bool,
}

/// `d^k/dx^k` of the `N(mu, sigma^2)` density.
pub fn normal_density_derivative(x: f64, mu: f64, sigma: f64, k: usize) -> f64 {
    gaussian_kernel_derivative(k, (x - mu) / sigma) / sigma.powi(k as i32 + 1)
}

/// Exact law of `Z_t` started at `z0` when the target is normal: `N(m + (z0-m)e^{-t/2}, v(1-e^{-t}))`.
fn ou_transition(spec: &PearsonSpec, z0: f64, t: f64) -> Option<(f64, f64)> {
    match spec.family() {
        Family::Normal { mean, var } => Some((
            mean + (z0 - mean) * (-t / 2.0).exp(),
            (var * -(-t).exp_m1()).sqrt(),
        )),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub x: f64,
    pub k: usize,
    /// `fitted`, `already-converged` (no cell above noise) or `too-few-points`.
    pub status: &'static str,
    /// Fit over the cells above noise from the largest gap onwards.
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_fit: usize,
    pub fit_start_t: f64,
    /// Fit over every cell above noise.
    pub full_window_rate: f64,
    pub full_window_r2: f64,
    /// Largest `|gap - exact gap| / stderr` over `t`, for normal targets.
    pub oracle_max_z: Option<f64>,
}

pub fn run_exp_convergence(c: &ConvergenceConfig, seed: u64) -> Result<Report> {
    let spec = &c.target;
    if c.t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Config(
            "exp-convergence needs t > 0 at every recording time".into(),
        ));
    }
    if let Some(&k) = c.orders.iter().find(|&&k| k > kde::MAX_ORDER) {
        return Err(Error::Config(format!(
            "derivative order {k} exceeds {}",
            kde::MAX_ORDER
        )));
    }
    let caveat = if spec.lo.is_finite() || spec.hi.is_finite() {
        Some("b vanishes or the support ends at a finite point; the whole-line positivity hypothesis on b does not hold and the rates are reported as observed")
    } else {
        None
    };
    let sim_cfg = SimConfig {
        dt: c.dt,
        t_grid: c.t_grid.clone(),
        n_paths: c.n_paths,
        seed,
        boundary_policy: c.boundary_policy,
        scheme: c.scheme,
    };
    let ens = if c.stationary_start {
        let z0 = sim::stationary_sample(spec, c.n_paths, sub_seed(seed, 1))?;
        sim::simulate_from(spec, &z0, &sim_cfg)?
    } else {
        sim::simulate(spec, c.z0, &sim_cfg)?
    };
    let mut table = Table::new(&[
        "t",
        "x",
        "k",
        "estimate",
        "stderr",
        "stationary",
        "gap",
        "exact_gap",
        "in_fit",
    ]);
    // cells[(x, k)] = (t, gap, se, exact gap)
    let mut cells: Vec<Vec<(f64, f64, f64, Option<f64>)>> =
        vec![Vec::new(); c.x_points.len() * c.orders.len()];
    for (j, &t) in c.t_grid.iter().enumerate() {
        let slice = ens.slice(j);
        for &k in &c.orders {
            let est = kde::kde(&slice, &c.x_points, k, c.bandwidth)?;
            for (ix, &x) in c.x_points.iter().enumerate() {
                let stationary = spec.density_derivative(x, k)?;
                let gap = est.values[ix] - stationary;
                let se = est.stderr[ix];
                let exact_gap = ou_transition(spec, c.z0, t)
                    .filter(|_| !c.stationary_start)
                    .map(|(mu, sd)| {
                        let Family::Normal { mean, var } = spec.family() else {
                            unreachable!()
                        };
                        normal_density_derivative(x, mu, sd, k)
                            - normal_density_derivative(x, mean, var.sqrt(), k)
                    });
                let in_fit = gap.abs() >= FIT_Z * se;
                table.push(vec![
                    num(t),
                    num(x),
                    k.to_string(),
                    num(est.values[ix]),
                    num(se),
                    num(stationary),
                    num(gap),
                    exact_gap.map(num).unwrap_or_default(),
                    in_fit.to_string(),
                ]);
                let ik = c.orders.iter().position(|&o| o == k).unwrap_or(0);
                cells[ix * c.orders.len() + ik].push((t, gap, se, exact_gap));
            }
        }
    }
    let mut fits = Vec::new();
    for (ix, &x) in c.x_points.iter().enumerate() {
        for (ik, &k) in c.orders.iter().enumerate() {
            let cell = &cells[ix * c.orders.len() + ik];
            let used: Vec<&(f64, f64, f64, Option<f64>)> = cell
                .iter()
                .filter(|(_, g, s, _)| g.abs() >= FIT_Z * s)
                .collect();
            let oracle_max_z = cell
                .iter()
                .map(|(_, g, s, e)| e.map(|e| (g - e).abs() / s))
                .try_fold(0.0f64, |m, z| z.map(|z| m.max(z)));
            let fit = |cells: &[&(f64, f64, f64, Option<f64>)]| {
                let ts: Vec<f64> = cells.iter().map(|c| c.0).collect();
                let ys: Vec<f64> = cells.iter().map(|c| c.1.abs().ln()).collect();
                fit_line(&ts, &ys)
            };
            // the decay bound says nothing about the rise before the largest gap
            let peak = used
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bg), (i, c)| {
                    if c.1.abs() > bg {
                        (i, c.1.abs())
                    } else {
                        (bi, bg)
                    }
                })
                .0;
            let tail = &used[peak.min(used.len())..];
            let (full_window_rate, _, full_window_r2) = if used.len() >= 3 {
                fit(&used)
            } else {
                (f64::NAN, 0.0, f64::NAN)
            };
            let (status, rate, intercept, r2) = match (used.len(), tail.len()) {
                (0, _) => ("already-converged", f64::NAN, f64::NAN, f64::NAN),
                (_, 0..=2) => ("too-few-points", f64::NAN, f64::NAN, f64::NAN),
                _ => {
                    let (s, i, r2) = fit(tail);
                    ("fitted", s, i, r2)
                }
            };
            fits.push(RateFit {
                x,
                k,
                status,
                rate,
                intercept,
                r2,
                n_fit: if status == "fitted" { tail.len() } else { 0 },
                fit_start_t: tail.first().map(|c| c.0).unwrap_or(f64::NAN),
                full_window_rate,
                full_window_r2,
                oracle_max_z,
            });
        }
    }
    let passed = fits.iter().all(|f| f.status != "fitted" || f.rate < 0.0);
    let summary = json!({
        "target": spec,
        "z0": c.z0,
        "stationary_start": c.stationary_start,
        "n_paths": ens.n_paths(),
        "n_failed": ens.n_failed,
        "dt": c.dt,
        "scheme": ens.scheme,
        "caveat": caveat,
        "lyapunov_factor": (c.z0 * c.z0 + 1.0).sqrt(),
        "fits": fits,
    });
    Ok(Report {
        experiment: "exp-convergence",
        passed,
        summary,
        table,
    })
}

// ---------------------------------------------------------------- Lyapunov check

fn default_lo_exp() -> f64 {
    -3.0
}

fn default_hi_exp() -> f64 {
    4.0
}

fn default_per_decade() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub target: PearsonSpec,
    #[serde(default)]
    pub drift_override: Option<DriftOverride>,
    #[serde(default = "default_lo_exp")]
    pub lo_exp: f64,
    #[serde(default = "default_hi_exp")]
    pub hi_exp: f64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

pub fn run_lyapunov_check(c: &LyapunovConfig) -> Result<Report> {
    let grid = lyapunov::log_grid(&c.target, c.lo_exp, c.hi_exp, c.per_decade);
    let r = lyapunov::check(&c.target, c.drift_override, &grid)?;
    let mut table = Table::new(&["y", "lv", "v", "bound"]);
    for (&y, &l) in r.grid.iter().zip(&r.lv) {
        let v = lyapunov::v(y);
        table.push(vec![num(y), num(l), num(v), num(-r.c * v + r.d)]);
    }
    let closed = 0.5 * c.target.b(0.0);
    let lv0 = r
        .lv_at_zero
        .map(|l| json!({ "lv": l, "half_b0": closed, "abs_diff": (l - closed).abs() }));
    let summary = json!({
        "target": c.target,
        "drift_override": c.drift_override,
        "admissible": r.admissible,
        "asymptotic_rate": r.asymptotic_rate,
        "c": r.c,
        "d": r.d,
        "crossover_radius": r.crossover_radius,
        "lv_at_zero": lv0,
        "note": "petiteness of compact sets is assumed for the built-in targets, not checked",
    });
    Ok(Report {
        experiment: "lyapunov",
        passed: r.admissible,
        summary,
        table,
    })
}

// ---------------------------------------------------------------- weighted Gamma sums

fn default_gamma_x() -> Vec<f64> {
    vec![4.0, 6.0, 8.0, 10.0, 12.0]
}

fn default_moment_orders() -> Vec<f64> {
    vec![4.0, 6.0]
}

fn default_variance_tol() -> f64 {
    1e-9
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperconvergenceConfig {
    pub alpha: f64,
    #[serde(default = "default_one")]
    pub gamma: f64,
    #[serde(default)]
    pub family: Option<WeightFamily>,
    #[serde(default)]
    pub n_schedule: Vec<usize>,
    /// Explicit specs, run after the family schedule.
    #[serde(default)]
    pub specs: Vec<WeightedGammaSpec>,
    pub n_samples: usize,
    #[serde(default = "default_gamma_x")]
    pub x_points: Vec<f64>,
    #[serde(default = "default_moment_orders")]
    pub moment_orders: Vec<f64>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_variance_tol")]
    pub variance_tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub q: f64,
    pub positive: McEstimate,
    pub nonpositive: McEstimate,
    pub n_nonpositive: usize,
    /// Rigorous Laplace bound on `E[F^{-q}]`, when it applies.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleRow {
    pub n: usize,
    pub variance_mismatch: f64,
    pub e_q1_sq: f64,
    pub e_q1_sq_mc: McEstimate,
    pub e_lq1_sq: f64,
    pub e_lq1_sq_mc: McEstimate,
    pub four_moment_m: f64,
    pub negative_moments: Vec<MomentRow>,
    pub gaps: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sup_gap: f64,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn run_gamma_superconvergence(c: &SuperconvergenceConfig, seed: u64) -> Result<Report> {
    if !(c.alpha > MIN_SUPERCONVERGENCE_ALPHA) {
        return Err(Error::Config(format!(
            "alpha = {} refused: density convergence of the weighted sums needs alpha > {MIN_SUPERCONVERGENCE_ALPHA}",
            c.alpha
        )));
    }
    let mut specs = Vec::new();
    if let Some(fam) = c.family {
        for &n in &c.n_schedule {
            specs.push(fam.spec(n, c.gamma, c.alpha)?);
        }
    } else if !c.n_schedule.is_empty() {
        return Err(Error::Config(
            "n_schedule given without a weight family".into(),
        ));
    }
    specs.extend(c.specs.iter().cloned());
    if specs.is_empty() {
        return Err(Error::Config(
            "no weights to run (give a family with an n_schedule, or explicit specs)".into(),
        ));
    }
    for s in &specs {
        if s.target_alpha != c.alpha {
            return Err(Error::Config(format!(
                "spec alpha {} differs from the run's alpha {}",
                s.target_alpha, c.alpha
            )));
        }
        let mm = s.variance_mismatch();
        if mm > c.variance_tolerance {
            return Err(Error::Config(format!(
                "variance mismatch for n = {}: gamma * sum(lambda^2) = {} but alpha = {} (relative {mm:e})",
                s.len(),
                s.variance(),
                s.target_alpha
            )));
        }
    }
    let target = chaos::TargetCoeffs::gamma(c.alpha);
    let exact: Vec<f64> = c
        .x_points
        .iter()
        .map(|&x| chaos::gamma_density(c.alpha, x))
        .collect();
    let mut table = Table::new(&["n", "x", "estimate", "stderr", "exact", "gap"]);
    let mut rows = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        let batch = chaos::sample(s, c.n_samples, sub_seed(seed, i as u64))?;
        let est = kde::kde(&batch.f, &c.x_points, 0, c.bandwidth)?;
        let gaps: Vec<f64> = est.values.iter().zip(&exact).map(|(e, p)| e - p).collect();
        for (ix, &x) in c.x_points.iter().enumerate() {
            table.push(vec![
                s.len().to_string(),
                num(x),
                num(est.values[ix]),
                num(est.stderr[ix]),
                num(exact[ix]),
                num(gaps[ix]),
            ]);
        }
        let mut negative_moments = Vec::new();
        for &q in &c.moment_orders {
            let m = kde::negative_moment(&batch.f, q)?;
            let bound = chaos::negative_moment_bound(
                s,
                q,
                chaos::SpectralChoice::S,
                chaos::BoundForm::Rigorous,
            )
            .ok()
            .map(|b| b.value);
            negative_moments.push(MomentRow {
                q,
                positive: m.positive,
                nonpositive: m.nonpositive,
                n_nonpositive: m.n_nonpositive,
                bound,
            });
        }
        rows.push(ScheduleRow {
            n: s.len(),
            variance_mismatch: s.variance_mismatch(),
            e_q1_sq: chaos::e_q1_sq(s),
            e_q1_sq_mc: McEstimate::of(batch.q1.iter().map(|q| q * q)),
            e_lq1_sq: chaos::e_lq1_sq(s),
            e_lq1_sq_mc: McEstimate::of(batch.lq1.iter().map(|q| q * q)),
            four_moment_m: chaos::four_moment_m(
                &chaos::exact_moments(s),
                chaos::FIRST_CHAOS_GRADE,
                &target,
            )?,
            negative_moments,
            sup_gap: gaps.iter().fold(0.0f64, |m, g| m.max(g.abs())),
            gaps,
            stderr: est.stderr,
        });
    }
    let e_q1: Vec<f64> = rows.iter().map(|r| r.e_q1_sq).collect();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_gap).collect();
    let per_x_decreasing: Vec<bool> = (0..c.x_points.len())
        .map(|ix| strictly_decreasing(&rows.iter().map(|r| r.gaps[ix].abs()).collect::<Vec<_>>()))
        .collect();
    let last = rows.last().expect("at least one spec");
    let final_within_noise: Vec<bool> = last
        .gaps
        .iter()
        .zip(&last.stderr)
        .map(|(g, s)| g.abs() <= 3.0 * s)
        .collect();
    let checks = json!({
        "e_q1_sq_strictly_decreasing": strictly_decreasing(&e_q1),
        "sup_gap_decreasing": strictly_decreasing(&sup),
        "gap_decreasing_per_x": per_x_decreasing,
        "final_gap_within_3_stderr": final_within_noise,
    });
    let passed = strictly_decreasing(&e_q1)
        && per_x_decreasing.iter().all(|&b| b)
        && final_within_noise.iter().all(|&b| b);
    let summary = json!({
        "alpha": c.alpha,
        "gamma": c.gamma,
        "family": c.family,
        "n_samples": c.n_samples,
        "x_points": c.x_points,
        "exact_density": exact,
        "rows": rows,
        "checks": checks,
    });
    Ok(Report {
        experiment: "gamma-superconvergence",
        passed,
        summary,
        table,
    })
}

// ---------------------------------------------------------------- validation suite

/// Adds `delta` to the coefficient `c^k_j` of every coefficient table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub k: usize,
    pub j: usize,
    pub delta: f64,
}

fn default_sweep_points() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationConfig {
    #[serde(default)]
    pub perturb_c: Option<Perturbation>,
    /// Replaces every positive tolerance.
    #[serde(default)]
    pub tolerance_override: Option<f64>,
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            perturb_c: None,
            tolerance_override: None,
            sweep_points: default_sweep_points(),
        }
    }
}

/// Default tolerances of the validation sweeps.
pub mod tolerances {
    pub const RHO_RELATIVE: f64 = 1e-9;
    pub const REPRESENTATION: f64 = 1e-6;
    pub const DRIFT_DIFFUSION: f64 = 1e-7;
    pub const ODE_INTERIOR: f64 = 1e-7;
    pub const ODE_EXTERIOR: f64 = 1e-9;
    pub const FOUR_MOMENT: f64 = 1e-10;
    pub const LV_ZERO: f64 = 1e-12;
    pub const LYAPUNOV_MIN_C: f64 = 0.2;
}

struct Sweep {
    table: Table,
    tol_override: Option<f64>,
}

impl Sweep {
    fn check(&mut self, sweep: &str, target: &str, metric: &str, value: f64, tol: f64) -> bool {
        let tol = if tol > 0.0 {
            self.tol_override.unwrap_or(tol)
        } else {
            tol
        };
        let pass = value <= tol;
        self.table.push(vec![
            sweep.into(),
            target.into(),
            metric.into(),
            num(value),
            num(tol),
            pass.to_string(),
        ]);
        pass
    }

    /// A lower-bound check: passes when `value >= floor`.
    fn at_least(
        &mut self,
        sweep: &str,
        target: &str,
        metric: &str,
        value: f64,
        floor: f64,
    ) -> bool {
        let pass = value >= floor;
        self.table.push(vec![
            sweep.into(),
            target.into(),
            metric.into(),
            num(value),
            num(floor),
            pass.to_string(),
        ]);
        pass
    }
}

/// `max_y |a(y) - b(y)| / max_y |b(y)|` between the two evaluation paths of `rho_k`.
pub fn rho_cross_error(table: &crate::rho::RhoTable, k: usize, points: &[f64]) -> Result<f64> {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &y in points {
        let a = rho(table, k, y)?;
        let b = rho_via_symbolic(&table.spec, k, y)?;
        diff = diff.max((a - b).abs());
        scale = scale.max(b.abs());
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Problems for the domination sweep: every probe threshold and `k <= k_max`,
/// plus the general-target problem at each threshold.
pub fn sweep_problems(
    spec: &PearsonSpec,
    bulk: (f64, f64),
    k_max: usize,
) -> Result<(Vec<SteinProblem>, Vec<SteinProblem>)> {
    let mut pearson = Vec::new();
    let mut general = Vec::new();
    let gen = spec.as_general();
    for x in stein::probe_thresholds(spec.lo, spec.hi, bulk) {
        for k in 0..=k_max {
            pearson.push(SteinProblem::pearson(spec, k, x)?);
        }
        general.push(SteinProblem::general(&gen, x, bulk)?);
    }
    Ok((pearson, general))
}

pub fn run_validation_suite(c: &ValidationConfig) -> Result<Report> {
    use tolerances::*;
    let mut s = Sweep {
        table: Table::new(&["sweep", "target", "metric", "value", "tolerance", "pass"]),
        tol_override: c.tolerance_override,
    };
    let mut ok = true;
    let targets = stein::calibration_targets();
    for (label, spec) in &targets {
        let bulk = spec.bulk_interval(stein::BULK_EPS, stein::BULK_EDGE);
        let mut table = build_rho_table(spec, 5);
        if let Some(p) = c.perturb_c {
            table.perturb(p.k, p.j, p.delta)?;
        }
        let pts = crate::linspace(bulk.0, bulk.1, 202)[1..201].to_vec();
        for k in 1..=6 {
            ok &= s.check(
                "rho_cross_check",
                label,
                &format!("rho_{k} relative sup error"),
                rho_cross_error(&table, k, &pts)?,
                RHO_RELATIVE,
            );
        }
        let xs = crate::linspace(bulk.0, bulk.1, 12)[1..11].to_vec();
        for k in 0..=3 {
            let worst = xs
                .iter()
                .map(|&x| representation_residual(&table, k, x))
                .collect::<Result<Vec<_>>>()?;
            ok &= s.check(
                "representation",
                label,
                &format!("k={k} max residual"),
                worst.into_iter().fold(0.0, f64::max),
                REPRESENTATION,
            );
        }
        ok &= s.check(
            "drift_diffusion",
            label,
            "max residual",
            spec.check_drift_diffusion_relation(&xs)?,
            DRIFT_DIFFUSION,
        );

        let consts = EnvelopeConstants::frozen(spec)?
            .ok_or_else(|| Error::Invalid(format!("no frozen envelope constants for {label}")))?;
        let grid = stein::sweep_grid(spec.lo, spec.hi, bulk, c.sweep_points, 0.5);
        let (pp, gp) = sweep_problems(spec, bulk, 3)?;
        let u = stein::domination_sweep(label, &pp, &consts, &grid)?;
        let v = stein::domination_sweep(label, &gp, &consts, &grid)?;
        ok &= s.check("stein", label, "U violations", u.violations() as f64, 0.0);
        ok &= s.check("stein", label, "V violations", v.violations() as f64, 0.0);
        let res_in =
            relative_residuals(&pp, &grid, true)?.max(relative_residuals(&gp, &grid, true)?);
        let res_out =
            relative_residuals(&pp, &grid, false)?.max(relative_residuals(&gp, &grid, false)?);
        ok &= s.check(
            "stein",
            label,
            "interior ODE residual",
            res_in,
            ODE_INTERIOR,
        );
        ok &= s.check(
            "stein",
            label,
            "exterior ODE residual",
            res_out,
            ODE_EXTERIOR,
        );
    }

    // exact sums for dyadic weights
    let dyadic = WeightedGammaSpec::new(1.0, vec![2.0, 1.0, 0.5, 0.5, 0.25, 0.125], 8.0)?;
    let sums = chaos::spectral_sums(&dyadic, 6)?;
    let sq: Vec<f64> = dyadic.weights.iter().map(|l| l * l).collect();
    let mut worst: f64 = 0.0;
    for q in 1..=6 {
        worst = worst.max((sums.r[q] - distinct_index_sum(&sq, q)).abs());
        worst = worst.max((sums.s[q] - distinct_index_sum(&dyadic.weights, q)).abs());
    }
    ok &= s.check(
        "chaos",
        "dyadic weights",
        "spectral sums vs enumeration",
        worst,
        0.0,
    );
    for alpha in [0.5, 3.0, 8.0] {
        let m = chaos::four_moment_m(
            &chaos::gamma_moments(alpha),
            chaos::FIRST_CHAOS_GRADE,
            &chaos::TargetCoeffs::gamma(alpha),
        )?;
        ok &= s.check(
            "chaos",
            &format!("gamma({alpha})"),
            "|M(1)| at exact moments",
            m.abs(),
            FOUR_MOMENT,
        );
    }

    for (label, spec) in [
        ("normal", PearsonSpec::normal()),
        ("gamma(7)", PearsonSpec::gamma(7.0)?),
    ] {
        let grid = lyapunov::log_grid(
            &spec,
            default_lo_exp(),
            default_hi_exp(),
            default_per_decade(),
        );
        let r = lyapunov::check(&spec, None, &grid)?;
        ok &= s.at_least(
            "lyapunov",
            label,
            "c",
            if r.admissible { r.c } else { f64::NAN },
            LYAPUNOV_MIN_C,
        );
        let lv0 = r
            .lv_at_zero
            .map(|l| (l - 0.5 * spec.b(0.0)).abs())
            .unwrap_or(f64::INFINITY);
        ok &= s.check("lyapunov", label, "|LV(0) - b(0)/2|", lv0, LV_ZERO);
    }

    let failures = s.table.rows.iter().filter(|r| r[5] == "false").count();
    let summary = json!({
        "checks": s.table.rows.len(),
        "failures": failures,
        "perturb_c": c.perturb_c,
        "tolerance_override": c.tolerance_override,
        "sweep_points": c.sweep_points,
    });
    Ok(Report {
        experiment: "validate",
        passed: ok,
        summary,
        table: s.table,
    })
}

/// Largest `residual / (1 + |g|)` over grid points inside (`inside = true`) or
/// outside the support; interior-branch problems only for points inside.
pub fn relative_residuals(problems: &[SteinProblem], grid: &[f64], inside: bool) -> Result<f64> {
    use rayon::prelude::*;
    let mut worst: f64 = 0.0;
    for p in problems {
        if inside && p.branch != stein::Branch::Interior {
            continue;
        }
        let sol = stein::solve(p)?;
        let w = grid
            .par_iter()
            .filter(|&&y| sol.in_support(y) == inside)
            .map(|&y| -> Result<f64> {
                let (g, _) = sol.eval(y)?;
                Ok(sol.ode_residual(y)? / (1.0 + g.abs()))
            })
            .collect::<Result<Vec<_>>>()?;
        worst = w.into_iter().fold(worst, f64::max);
    }
    Ok(worst)
}

/// Sum of `v_{i1} ... v_{iq}` over ordered tuples of distinct indices, by enumeration.
pub fn distinct_index_sum(v: &[f64], q: usize) -> f64 {
    fn rec(v: &[f64], q: usize, used: &mut Vec<usize>) -> f64 {
        if used.len() == q {
            return used.iter().map(|&i| v[i]).product();
        }
        let mut t = 0.0;
        for i in 0..v.len() {
            if !used.contains(&i) {
                used.push(i);
                t += rec(v, q, used);
                used.pop();
            }
        }
        t
    }
    rec(v, q, &mut Vec::new())
}

/// Resolves `--seed` and `--out` overrides, runs, and writes the run directory.
pub fn execute(
    mut config: ExperimentConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<Report> {
    if seed.is_some() {
        config.seed = seed;
    }
    if out.is_some() {
        config.out = out;
    }
    let dir = config
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory (set \"out\" or pass --out)".into()))?;
    let report = run(&config)?;
    write_run(&dir, &config, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn config_parsing_and_hash() {
        let a = cfg(r#"{"experiment": "lyapunov", "seed": 3, "target": {"family": "normal"}}"#);
        assert_eq!(a.experiment.name(), "lyapunov");
        let mut b = a.clone();
        b.out = Some("/tmp/x".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = Some(4);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        let round = cfg(&serde_json::to_string(&a).unwrap());
        assert_eq!(round.hash().unwrap(), a.hash().unwrap());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "nope"}"#).is_err());
        assert!(cfg(r#"{"experiment": "validate"}"#)
            .resolved_seed()
            .is_err());
    }

    #[test]
    fn line_fit_is_exact_on_a_line() {
        let (s, i, r2) = fit_line(&[1.0, 2.0, 3.0], &[1.0, -1.0, -3.0]);
        assert!((s + 2.0).abs() < 1e-15 && (i - 3.0).abs() < 1e-15 && (r2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_start_is_already_converged() {
        let c = ConvergenceConfig {
            target: PearsonSpec::normal(),
            z0: 0.0,
            x_points: vec![0.0],
            orders: vec![0],
            t_grid: vec![0.5, 1.0],
            n_paths: 5000,
            dt: 1e-2,
            boundary_policy: BoundaryPolicy::ClampWithIndicator,
            scheme: None,
            bandwidth: None,
            stationary_start: true,
        };
        let r = run_exp_convergence(&c, 1).unwrap();
        assert_eq!(r.summary["fits"][0]["status"], "already-converged");
        assert!(r
            .table
            .column("in_fit")
            .unwrap()
            .iter()
            .all(|v| *v == "false"));
        // started at the mode instead, the early gap is far above noise
        let r = run_exp_convergence(
            &ConvergenceConfig {
                stationary_start: false,
                ..c
            },
            1,
        )
        .unwrap();
        assert_eq!(r.table.column("in_fit").unwrap()[0], "true");
        assert!(r.summary["fits"][0]["oracle_max_z"].as_f64().unwrap() < 4.0);
    }

    #[test]
    fn larger_offset_gives_a_larger_early_gap() {
        let gap = |z0: f64| {
            let (mu, sd) = ou_transition(&PearsonSpec::normal(), z0, 0.5).unwrap();
            (normal_density_derivative(0.0, mu, sd, 0)
                - normal_density_derivative(0.0, 0.0, 1.0, 0))
            .abs()
        };
        // for small offsets the gap at x = 0 changes sign; beyond that it grows with z0
        assert!(gap(3.0) > gap(1.5));
        assert!(gap(6.0) > gap(3.0));
    }

    #[test]
    fn lyapunov_runs_and_reports_failure() {
        let ok = run_lyapunov_check(&LyapunovConfig {
            target: PearsonSpec::normal(),
            drift_override: None,
            lo_exp: -3.0,
            hi_exp: 4.0,
            per_decade: 20,
        })
        .unwrap();
        assert!(ok.passed);
        assert_eq!(ok.summary["lv_at_zero"]["abs_diff"].as_f64().unwrap(), 0.0);
        let bad = run_lyapunov_check(&LyapunovConfig {
            target: PearsonSpec::student(3.0).unwrap(),
            drift_override: Some(DriftOverride { a0: 0.0, a1: 0.2 }),
            lo_exp: -3.0,
            hi_exp: 4.0,
            per_decade: 20,
        })
        .unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn superconvergence_guards() {
        let base = SuperconvergenceConfig {
            alpha: 8.0,
            gamma: 1.0,
            family: None,
            n_schedule: vec![],
            specs: vec![WeightedGammaSpec::new(1.0, vec![2.0, 1.0], 8.0).unwrap()],
            n_samples: 1000,
            x_points: default_gamma_x(),
            moment_orders: default_moment_orders(),
            bandwidth: None,
            variance_tolerance: 1e-9,
        };
        let err = run_gamma_superconvergence(&base, 0).unwrap_err();
        assert!(err.to_string().contains("variance mismatch"), "{err}");
        let low = SuperconvergenceConfig {
            alpha: 6.0,
            ..base.clone()
        };
        assert!(run_gamma_superconvergence(&low, 0)
            .unwrap_err()
            .to_string()
            .contains("alpha"));
    }

    #[test]
    fn exact_gamma_case_is_within_noise() {
        let c = SuperconvergenceConfig {
            alpha: 8.0,
            gamma: 8.0,
            family: None,
            n_schedule: vec![],
            specs: vec![WeightedGammaSpec::exact(8.0).unwrap()],
            n_samples: 200_000,
            x_points: default_gamma_x(),
            moment_orders: default_moment_orders(),
            bandwidth: None,
            variance_tolerance: 1e-9,
        };
        let r = run_gamma_superconvergence(&c, 5).unwrap();
        let row = &r.summary["rows"][0];
        assert_eq!(row["e_q1_sq"].as_f64().unwrap(), 0.0);
        assert!(row["four_moment_m"].as_f64().unwrap().abs() < 1e-9);
        let within = r.summary["checks"]["final_gap_within_3_stderr"]
            .as_array()
            .unwrap();
        assert!(within.iter().all(|b| b.as_bool().unwrap()), "{}", r.summary);
        // q = 4 < alpha: E[G^{-4}] = Gamma(4)/Gamma(8)
        let m4 = &row["negative_moments"][0];
        let exact = 6.0 / 5040.0;
        let (mean, se) = (
            m4["positive"]["mean"].as_f64().unwrap(),
            m4["positive"]["stderr"].as_f64().unwrap(),
        );
        assert!((mean - exact).abs() < 4.0 * se);
    }
}
