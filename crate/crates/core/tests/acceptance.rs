//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pearson_stein::chaos::{self, WeightFamily, WeightedGammaSpec};
use pearson_stein::experiments::{
    self, distinct_index_sum, relative_residuals, rho_cross_error, sweep_problems, ExperimentConfig,
};
use pearson_stein::kde::{self, Direction, McEstimate};
use pearson_stein::lyapunov;
use pearson_stein::rho::{build_rho_table, representation_residual, rho};
use pearson_stein::rng::with_threads;
use pearson_stein::sim::stationary_sample;
use pearson_stein::stein::{self, EnvelopeConstants};
use pearson_stein::{linspace, PearsonSpec};

const RHO_RELATIVE: f64 = 1e-9;
const RHO_POINTS: usize = 200;
const RHO_K_MAX: usize = 5;
const REPRESENTATION: f64 = 1e-6;
const REPRESENTATION_POINTS: usize = 10;
const MC_SAMPLES: usize = 1_000_000;
const MC_Z: f64 = 3.0;
const ODE_RESIDUAL: f64 = 1e-7;
const DOMINATION_POINTS: usize = 1000;
const CHAOS_SEEDS: u64 = 5;
const CHAOS_Z: f64 = 4.0;
const FOUR_MOMENT: f64 = 1e-10;
const RATE_R2: f64 = 0.9;
const ORACLE_Z: f64 = 3.0;
const LYAPUNOV_MIN_C: f64 = 0.2;
const LV_ZERO: f64 = 1e-12;

type Outcome = Result<(bool, String), String>;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Result<ExperimentConfig, String> {
    let path = configs().join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ExperimentConfig::from_json(&text).map_err(|e| e.to_string())
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn bulk_points(spec: &PearsonSpec, n: usize) -> Vec<f64> {
    let bulk = spec.bulk_interval(stein::BULK_EPS, stein::BULK_EDGE);
    linspace(bulk.0, bulk.1, n + 2)[1..=n].to_vec()
}

fn rho_cross_validation() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (_, spec) in stein::calibration_targets() {
        let table = build_rho_table(&spec, RHO_K_MAX);
        let pts = bulk_points(&spec, RHO_POINTS);
        for k in 1..=RHO_K_MAX {
            worst = worst.max(rho_cross_error(&table, k, &pts).map_err(|e| e.to_string())?);
        }
    }
    let elapsed = start.elapsed();
    let ok = worst <= RHO_RELATIVE && within(elapsed, Duration::from_secs(1));
    Ok((
        ok,
        format!(
            "max relative error {worst:.2e} (tol {RHO_RELATIVE:e}), {:.3} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn representation() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for (i, (_, spec)) in stein::calibration_targets().into_iter().enumerate() {
        let table = build_rho_table(&spec, 5);
        for x in bulk_points(&spec, REPRESENTATION_POINTS) {
            for k in 0..=3 {
                worst =
                    worst.max(representation_residual(&table, k, x).map_err(|e| e.to_string())?);
            }
        }
        let f = stationary_sample(&spec, MC_SAMPLES, 100 + i as u64).map_err(|e| e.to_string())?;
        for x in bulk_points(&spec, 3) {
            for k in 0..=2 {
                let h = f
                    .iter()
                    .map(|&y| rho(&table, k + 1, y))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?;
                let est = kde::indicator_expectation(&f, &h, x, Direction::Greater)
                    .map_err(|e| e.to_string())?;
                let exact = spec.density_derivative(x, k).map_err(|e| e.to_string())?;
                worst_z = worst_z.max((est.mean - exact).abs() / est.stderr);
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst <= REPRESENTATION && worst_z <= MC_Z && within(elapsed, Duration::from_secs(60));
    Ok((
        ok,
        format!(
            "quadrature residual {worst:.2e} (tol {REPRESENTATION:e}), MC max z {worst_z:.2} (tol {MC_Z}), {:.1} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn stein_domination() -> Outcome {
    let start = Instant::now();
    let mut residual: f64 = 0.0;
    let mut violations = 0;
    let mut evaluated = 0;
    for (label, spec) in stein::calibration_targets() {
        let bulk = spec.bulk_interval(stein::BULK_EPS, stein::BULK_EDGE);
        let consts = EnvelopeConstants::frozen(&spec)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("no frozen constants for {label}"))?;
        let grid = stein::sweep_grid(spec.lo, spec.hi, bulk, DOMINATION_POINTS, 0.5);
        let (pp, gp) = sweep_problems(&spec, bulk, 3).map_err(|e| e.to_string())?;
        for problems in [&pp, &gp] {
            let r = stein::domination_sweep(label, problems, &consts, &grid)
                .map_err(|e| e.to_string())?;
            violations += r.violations();
            evaluated += problems.len() * grid.len();
            residual =
                residual.max(relative_residuals(problems, &grid, true).map_err(|e| e.to_string())?);
        }
    }
    let elapsed = start.elapsed();
    let ok =
        residual <= ODE_RESIDUAL && violations == 0 && within(elapsed, Duration::from_secs(60));
    Ok((
        ok,
        format!(
            "interior ODE residual {residual:.2e} (tol {ODE_RESIDUAL:e}), {violations} violations over {evaluated} (problem, point) pairs, {:.1} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn chaos_closed_forms() -> Outcome {
    let start = Instant::now();
    let specs = [
        WeightedGammaSpec::new(2.0, vec![0.5, 0.5], 1.0).map_err(|e| e.to_string())?,
        WeightFamily::Harmonic
            .spec(16, 1.0, 8.0)
            .map_err(|e| e.to_string())?,
        WeightFamily::EqualTail
            .spec(12, 1.0, 8.0)
            .map_err(|e| e.to_string())?,
        WeightedGammaSpec::new(1.5, vec![1.2, 0.7, 0.3], 4.0).map_err(|e| e.to_string())?,
    ];
    let mut worst_z: f64 = 0.0;
    for (i, spec) in specs.iter().enumerate() {
        for seed in 0..CHAOS_SEEDS {
            let b = chaos::sample(spec, MC_SAMPLES, 1000 * i as u64 + seed)
                .map_err(|e| e.to_string())?;
            let q1 = McEstimate::of(b.q1.iter().map(|q| q * q));
            let lq1 = McEstimate::of(b.lq1.iter().map(|q| q * q));
            worst_z = worst_z.max((q1.mean - chaos::e_q1_sq(spec)).abs() / q1.stderr);
            worst_z = worst_z.max((lq1.mean - chaos::e_lq1_sq(spec)).abs() / lq1.stderr);
        }
    }

    let dyadic = WeightedGammaSpec::new(1.0, vec![2.0, 1.0, 0.5, 0.5, 0.25, 0.125], 8.0)
        .map_err(|e| e.to_string())?;
    let sums = chaos::spectral_sums(&dyadic, 6).map_err(|e| e.to_string())?;
    let sq: Vec<f64> = dyadic.weights.iter().map(|l| l * l).collect();
    let exact_sums = (1..=6).all(|q| {
        sums.r[q] == distinct_index_sum(&sq, q)
            && sums.s[q] == distinct_index_sum(&dyadic.weights, q)
    });

    let mut worst_m: f64 = 0.0;
    for alpha in [0.5, 1.0, 3.0, 8.0, 20.0] {
        let target = chaos::TargetCoeffs::gamma(alpha);
        let m = chaos::four_moment_m(
            &chaos::gamma_moments(alpha),
            chaos::FIRST_CHAOS_GRADE,
            &target,
        )
        .map_err(|e| e.to_string())?;
        let spec = WeightedGammaSpec::exact(alpha).map_err(|e| e.to_string())?;
        let m_exact = chaos::four_moment_m(
            &chaos::exact_moments(&spec),
            chaos::FIRST_CHAOS_GRADE,
            &target,
        )
        .map_err(|e| e.to_string())?;
        worst_m = worst_m.max(m.abs()).max(m_exact.abs());
    }
    let elapsed = start.elapsed();
    let ok = worst_z <= CHAOS_Z
        && exact_sums
        && worst_m <= FOUR_MOMENT
        && within(elapsed, Duration::from_secs(60));
    Ok((
        ok,
        format!(
            "MC max z {worst_z:.2} (tol {CHAOS_Z}), spectral sums exact: {exact_sums}, max |M| {worst_m:.2e} (tol {FOUR_MOMENT:e}), {:.1} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn gamma_pipeline() -> Outcome {
    let start = Instant::now();
    let report = experiments::run(&load("gamma_harmonic.json")?).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let checks = &report.summary["checks"];
    let ok = report.passed && within(elapsed, Duration::from_secs(600));
    Ok((
        ok,
        format!("checks {checks}, {:.1} s", elapsed.as_secs_f64()),
    ))
}

fn ou_rate() -> Outcome {
    let start = Instant::now();
    let report = experiments::run(&load("ou_convergence.json")?).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fit = report.summary["fits"]
        .as_array()
        .and_then(|fits| fits.iter().find(|f| f["k"] == 0 && f["x"] == 0.0))
        .ok_or("no density fit at x = 0")?;
    let rate = fit["rate"].as_f64().unwrap_or(f64::NAN);
    let r2 = fit["r2"].as_f64().unwrap_or(f64::NAN);
    let z = fit["oracle_max_z"].as_f64().unwrap_or(f64::NAN);
    let ok = fit["status"] == "fitted"
        && rate < 0.0
        && r2 > RATE_R2
        && z <= ORACLE_Z
        && within(elapsed, Duration::from_secs(600));
    Ok((
        ok,
        format!(
            "rate {rate:.4}, R^2 {r2:.4} (min {RATE_R2}), oracle max z {z:.2} (tol {ORACLE_Z}), {:.1} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn lyapunov_check() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, spec) in [
        ("OU", PearsonSpec::normal()),
        ("CIR", PearsonSpec::gamma(7.0).map_err(|e| e.to_string())?),
    ] {
        let r = lyapunov::check(&spec, None, &lyapunov::log_grid(&spec, -3.0, 4.0, 20))
            .map_err(|e| e.to_string())?;
        let lv0 = r
            .lv_at_zero
            .map(|l| (l - 0.5 * spec.b(0.0)).abs())
            .unwrap_or(f64::INFINITY);
        ok &= r.admissible && r.c >= LYAPUNOV_MIN_C && lv0 <= LV_ZERO;
        parts.push(format!(
            "{label}: c {:.4}, d {:.4}, |LV(0) - b(0)/2| {lv0:.1e}",
            r.c, r.d
        ));
    }
    Ok((
        ok,
        format!(
            "{} (min c {LYAPUNOV_MIN_C}, tol {LV_ZERO:e})",
            parts.join("; ")
        ),
    ))
}

fn determinism() -> Outcome {
    let small = [
        r#"{"experiment": "exp-convergence", "seed": 11, "z0": 3.0, "t_grid": [0.5, 1.0, 2.0], "n_paths": 20000, "dt": 0.002}"#,
        r#"{"experiment": "gamma-superconvergence", "seed": 12, "alpha": 8.0, "family": "equal-tail", "n_schedule": [8, 16], "n_samples": 50000}"#,
        r#"{"experiment": "exp-convergence", "seed": 13, "target": {"family": "gamma", "alpha": 7.0}, "z0": 2.0, "x_points": [5.0, 7.0], "t_grid": [1.0], "n_paths": 20000, "stationary_start": true}"#,
    ];
    let mut identical = 0;
    for text in small {
        let cfg = ExperimentConfig::from_json(text).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for threads in [1, 3, 4] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let c = cfg.clone();
            with_threads(Some(threads), || {
                experiments::execute(c, None, Some(dir.path().to_path_buf()))
            })
            .map_err(|e| e.to_string())?
            .map_err(|e| e.to_string())?;
            let read = |f: &str| std::fs::read(dir.path().join(f)).map_err(|e| e.to_string());
            outputs.push((
                read("config.json")?,
                read("results.csv")?,
                read("summary.json")?,
            ));
        }
        if outputs.windows(2).all(|w| w[0] == w[1]) {
            identical += 1;
        }
    }
    Ok((
        identical == small.len(),
        format!(
            "{identical}/{} experiments byte-identical across 1, 3 and 4 threads",
            small.len()
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 rho cross-validation", rho_cross_validation),
        ("2 representation identities", representation),
        ("3 Stein residual and domination", stein_domination),
        ("4 gamma-chaos closed forms", chaos_closed_forms),
        ("5 weighted Gamma pipeline (harmonic)", gamma_pipeline),
        ("6 OU density convergence rate", ou_rate),
        ("7 Lyapunov drift condition", lyapunov_check),
        ("8 determinism across worker counts", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} criterion {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += !ok as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
