//! Stein equations for indicator-type test functions and the envelope
//! functions that bound their solutions.
//!
//! The equation is `2a(y) g(y) + 1_{(lo,hi)}(y) b(y) g'(y) = h(y) - E h(Z)`.
//! For a Pearson target `2a(y) = m - y` and `h = 1_{y > x} rho_{k+1}(y)`, or
//! `1_{y <= x} rho_{k+1}(y)` when the threshold sits below the support. For a
//! general diffusion `k = 0` and `rho_1` becomes `(-2a + b')/b`.
//!
//! Inside the support `g` comes from the integrating factor `b p`; outside it
//! the equation is algebraic.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linspace;
use crate::pearson::{GeneralDiffusionSpec, PearsonSpec};
use crate::poly::RatB;
use crate::quad::{integrate_pieces, QuadOptions};
use crate::rho::build_rho_table;

/// Grid size for the numerical constant `C(x)`.
pub const C_GRID_POINTS: usize = 2000;
/// Multiplier applied to the grid maximum of `|g|` to get `C(x)`.
pub const C_SAFETY: f64 = 1.1;
/// Density ratio that ends the bulk interval of a Pearson target.
pub const BULK_EPS: f64 = 1e-8;
/// Closest approach of the bulk interval to a finite endpoint, relative to its distance from `m`.
pub const BULK_EDGE: f64 = 1e-3;
/// Relative slack for comparisons that hold with equality in exact arithmetic.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Where the threshold `x` sits relative to the support `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Interior,
    Below,
    Above,
}

impl Branch {
    pub fn of(x: f64, lo: f64, hi: f64) -> Branch {
        if x <= lo {
            Branch::Below
        } else if x >= hi {
            Branch::Above
        } else {
            Branch::Interior
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Interior => "interior",
            Branch::Below => "below",
            Branch::Above => "above",
        }
    }

    /// Indices of the envelopes for `g` and `g'` on this branch.
    pub fn envelope_pair(self) -> (usize, usize) {
        match self {
            Branch::Interior => (1, 2),
            Branch::Below => (3, 4),
            Branch::Above => (5, 6),
        }
    }

    /// Branches that can occur: a threshold can only sit beyond a finite endpoint.
    pub fn available(lo: f64, hi: f64) -> Vec<Branch> {
        let mut v = vec![Branch::Interior];
        if lo.is_finite() {
            v.push(Branch::Below);
        }
        if hi.is_finite() {
            v.push(Branch::Above);
        }
        v
    }

    pub const ALL: [Branch; 3] = [Branch::Interior, Branch::Below, Branch::Above];
}

#[derive(Clone)]
pub enum Target {
    Pearson(PearsonSpec),
    General(GeneralDiffusionSpec),
}

impl Target {
    pub fn support(&self) -> (f64, f64) {
        match self {
            Target::Pearson(s) => (s.lo, s.hi),
            Target::General(s) => (s.lo, s.hi),
        }
    }
}

/// One Stein equation: target, derivative order and indicator threshold.
#[derive(Clone)]
pub struct SteinProblem {
    pub target: Target,
    pub k: usize,
    pub x: f64,
    pub branch: Branch,
    /// Interval (inside the support) on which `C(x)` is computed.
    pub bulk: (f64, f64),
}

impl SteinProblem {
    pub fn pearson(spec: &PearsonSpec, k: usize, x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Invalid(format!("threshold must be finite, got {x}")));
        }
        if k > spec.k_max() {
            return Err(Error::Invalid(format!(
                "k = {k} exceeds k_max = {}",
                spec.k_max()
            )));
        }
        Ok(SteinProblem {
            target: Target::Pearson(spec.clone()),
            k,
            x,
            branch: Branch::of(x, spec.lo, spec.hi),
            bulk: spec.bulk_interval(BULK_EPS, BULK_EDGE),
        })
    }

    /// General targets only carry `k = 0`; `bulk` must lie inside the support.
    pub fn general(spec: &GeneralDiffusionSpec, x: f64, bulk: (f64, f64)) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Invalid(format!("threshold must be finite, got {x}")));
        }
        if !(bulk.0 < bulk.1 && spec.in_support(bulk.0) && spec.in_support(bulk.1)) {
            return Err(Error::Invalid(format!(
                "bulk interval {bulk:?} must lie inside ({}, {})",
                spec.lo, spec.hi
            )));
        }
        Ok(SteinProblem {
            target: Target::General(spec.clone()),
            k: 0,
            x,
            branch: Branch::of(x, spec.lo, spec.hi),
            bulk,
        })
    }
}

#[derive(Clone)]
enum Kind {
    Pearson {
        spec: PearsonSpec,
        rho: RatB,
        rho_prime: RatB,
    },
    General(GeneralDiffusionSpec),
}

/// Evaluable solution `(g, g')` of one [`SteinProblem`].
#[derive(Clone)]
pub struct SteinSolution {
    problem: SteinProblem,
    kind: Kind,
    eh: f64,
    c_x: f64,
}

/// Solves the Stein equation and computes `C(x)` on the interior branch.
pub fn solve(problem: &SteinProblem) -> Result<SteinSolution> {
    let (lo, hi) = problem.target.support();
    if Branch::of(problem.x, lo, hi) != problem.branch {
        return Err(Error::Invalid(format!(
            "branch {} does not match x = {} and support ({lo}, {hi})",
            problem.branch.name(),
            problem.x
        )));
    }
    let interior = problem.branch == Branch::Interior;
    let (kind, eh) = match &problem.target {
        Target::Pearson(spec) => {
            let table = build_rho_table(spec, problem.k);
            let rho = table.rational(problem.k + 1)?;
            let rho_prime = rho.derivative(spec.b_poly());
            let eh = if interior {
                spec.density_derivative(problem.x, problem.k)?
            } else {
                0.0
            };
            (
                Kind::Pearson {
                    spec: spec.clone(),
                    rho,
                    rho_prime,
                },
                eh,
            )
        }
        Target::General(spec) => {
            if problem.k != 0 {
                return Err(Error::Unsupported(
                    "general targets support k = 0 only".into(),
                ));
            }
            let eh = if interior {
                (spec.density)(problem.x)
            } else {
                0.0
            };
            (Kind::General(spec.clone()), eh)
        }
    };
    let mut sol = SteinSolution {
        problem: problem.clone(),
        kind,
        eh,
        c_x: 0.0,
    };
    if interior {
        let grid = linspace(problem.bulk.0, problem.bulk.1, C_GRID_POINTS);
        let sup = grid
            .par_iter()
            .map(|&y| sol.g(y).map(f64::abs))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        sol.c_x = C_SAFETY * sup;
    }
    Ok(sol)
}

impl SteinSolution {
    pub fn problem(&self) -> &SteinProblem {
        &self.problem
    }

    pub fn branch(&self) -> Branch {
        self.problem.branch
    }

    pub fn k(&self) -> usize {
        self.problem.k
    }

    pub fn x(&self) -> f64 {
        self.problem.x
    }

    /// `E h(Z)`: `p^(k)(x)` on the interior branch, zero otherwise.
    pub fn eh(&self) -> f64 {
        self.eh
    }

    /// `C(x)`; zero off the interior branch, where it plays no role.
    pub fn c_x(&self) -> f64 {
        self.c_x
    }

    fn support(&self) -> (f64, f64) {
        self.problem.target.support()
    }

    pub fn in_support(&self, y: f64) -> bool {
        let (lo, hi) = self.support();
        y > lo && y < hi
    }

    fn active(&self, y: f64) -> bool {
        match self.problem.branch {
            Branch::Below => y <= self.problem.x,
            _ => y > self.problem.x,
        }
    }

    fn two_a(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Pearson { spec, .. } => spec.m - y,
            Kind::General(s) => 2.0 * (s.drift)(y),
        }
    }

    fn two_a_prime(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Pearson { .. } => -1.0,
            Kind::General(s) => 2.0 * (s.drift_prime)(y),
        }
    }

    /// The test function `h`.
    pub fn h(&self, y: f64) -> Result<f64> {
        if !self.active(y) {
            return Ok(0.0);
        }
        match &self.kind {
            Kind::Pearson { spec, rho, .. } => {
                if spec.b(y) == 0.0 {
                    return Err(Error::Pole(y));
                }
                Ok(rho.eval(spec.b_poly(), y))
            }
            Kind::General(s) => {
                if s.in_support(y) {
                    // (-2a + b')/b = -p'/p inside the support
                    Ok(-s.density_prime_at(y) / (s.density)(y))
                } else {
                    let [b, bp, _] = s.exterior(y)?;
                    if b == 0.0 {
                        return Err(Error::Pole(y));
                    }
                    Ok((-2.0 * (s.drift)(y) + bp) / b)
                }
            }
        }
    }

    /// `h'` away from the threshold. General targets provide it outside the support only.
    pub fn h_prime(&self, y: f64) -> Result<f64> {
        if !self.active(y) {
            return Ok(0.0);
        }
        match &self.kind {
            Kind::Pearson {
                spec, rho_prime, ..
            } => {
                if spec.b(y) == 0.0 {
                    return Err(Error::Pole(y));
                }
                Ok(rho_prime.eval(spec.b_poly(), y))
            }
            Kind::General(s) => {
                if s.in_support(y) {
                    return Err(Error::Unsupported(
                        "h' inside the support of a general target".into(),
                    ));
                }
                let [b, bp, bpp] = s.exterior(y)?;
                if b == 0.0 {
                    return Err(Error::Pole(y));
                }
                let a = (s.drift)(y);
                let ap = (s.drift_prime)(y);
                Ok(((-2.0 * ap + bpp) * b - (-2.0 * a + bp) * bp) / (b * b))
            }
        }
    }

    fn b_times_p(&self, y: f64) -> Result<f64> {
        match &self.kind {
            Kind::Pearson { spec, .. } => Ok(spec.b(y) * spec.stationary_density(y)),
            Kind::General(s) => s.b_times_p(y),
        }
    }

    fn b_inside(&self, y: f64) -> Result<f64> {
        match &self.kind {
            Kind::Pearson { spec, .. } => Ok(spec.b(y)),
            Kind::General(s) => s.induced_b(y),
        }
    }

    /// `int_a^b (h - Eh) p` over part of the support, to an absolute accuracy
    /// tied to the integrating factor it is divided by.
    fn centred_integral(&self, a: f64, b: f64, bp: f64) -> Result<f64> {
        let (lo, hi) = self.support();
        let (a, b) = (a.max(lo), b.min(hi));
        if a >= b {
            return Ok(0.0);
        }
        let opts = QuadOptions {
            rel_tol: 1e-11,
            abs_tol: (1e-13 * bp.abs()).max(1e-300),
            ..Default::default()
        };
        let x = self.problem.x;
        let eh = self.eh;
        match &self.kind {
            Kind::Pearson { spec, rho, .. } => {
                let bpoly = spec.b_poly();
                let f = |w: f64| {
                    let hw = if self.active(w) {
                        rho.eval(bpoly, w)
                    } else {
                        0.0
                    };
                    (hw - eh) * spec.stationary_density(w)
                };
                integrate_pieces(f, a, b, &[x, spec.m], spec.scale(), &opts)
            }
            Kind::General(s) => {
                // h p = -p' on the active part
                let f = |w: f64| {
                    let hp = if self.active(w) {
                        -s.density_prime_at(w)
                    } else {
                        0.0
                    };
                    hp - eh * (s.density)(w)
                };
                integrate_pieces(f, a, b, &[x], s.scale, &opts)
            }
        }
    }

    /// `g(y) = (1/(b p)) int_lo^y (h - Eh) p`, interior only.
    pub fn g_forward(&self, y: f64) -> Result<f64> {
        self.require_inside(y)?;
        let bp = self.b_times_p(y)?;
        Ok(self.centred_integral(self.support().0, y, bp)? / bp)
    }

    /// `g(y) = -(1/(b p)) int_y^hi (h - Eh) p`, interior only.
    pub fn g_backward(&self, y: f64) -> Result<f64> {
        self.require_inside(y)?;
        let bp = self.b_times_p(y)?;
        Ok(-self.centred_integral(y, self.support().1, bp)? / bp)
    }

    fn require_inside(&self, y: f64) -> Result<()> {
        if self.in_support(y) {
            Ok(())
        } else {
            let (lo, hi) = self.support();
            Err(Error::Domain(format!("y = {y} outside ({lo}, {hi})")))
        }
    }

    pub fn g(&self, y: f64) -> Result<f64> {
        if self.in_support(y) {
            if self.problem.branch != Branch::Interior {
                // h and E h both vanish on the support
                return Ok(0.0);
            }
            // integrate over the side where the drift points away from y
            if self.two_a(y) > 0.0 {
                self.g_forward(y)
            } else {
                self.g_backward(y)
            }
        } else {
            let ta = self.two_a(y);
            if ta == 0.0 {
                return Err(Error::Pole(y));
            }
            Ok((self.h(y)? - self.eh) / ta)
        }
    }

    /// `(g(y), g'(y))`.
    pub fn eval(&self, y: f64) -> Result<(f64, f64)> {
        let g = self.g(y)?;
        let ta = self.two_a(y);
        let r = self.h(y)? - self.eh;
        let gp = if self.in_support(y) {
            if self.problem.branch != Branch::Interior {
                0.0
            } else {
                (r - ta * g) / self.b_inside(y)?
            }
        } else {
            (self.h_prime(y)? * ta - r * self.two_a_prime(y)) / (ta * ta)
        };
        Ok((g, gp))
    }

    pub fn g_prime(&self, y: f64) -> Result<f64> {
        Ok(self.eval(y)?.1)
    }

    /// `|2a g + 1_{(lo,hi)} b g' - (h - Eh)|` at `y`.
    pub fn ode_residual(&self, y: f64) -> Result<f64> {
        let (g, gp) = self.eval(y)?;
        let diff = if self.in_support(y) {
            self.b_inside(y)? * gp
        } else {
            0.0
        };
        Ok((self.two_a(y) * g + diff - (self.h(y)? - self.eh)).abs())
    }

    /// Envelope `i` (1..=6) at `y`: the `U` family for Pearson targets, `V` for general ones.
    pub fn envelope(&self, i: usize, y: f64, consts: &EnvelopeConstants) -> Result<f64> {
        match &self.kind {
            Kind::Pearson { spec, .. } => UEnvelope {
                spec,
                k: self.problem.k,
                pk_x: self.eh,
                c_x: self.c_x,
                consts: *consts,
            }
            .eval(i, y),
            Kind::General(s) => envelope_v(i, s, self.eh, self.c_x, y),
        }
    }
}

// ---------------------------------------------------------------- envelopes

/// The generic constants `C` (bounds on `g`) and `C'` (bounds on `g'`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    pub c: f64,
    pub c_prime: f64,
}

/// `sum_{j<=k+1} |y|^j` and `sum_{j<=k} |y|^j`.
fn power_sums(y: f64, k: usize) -> (f64, f64) {
    let t = y.abs();
    let mut pw = 1.0;
    let mut low = 0.0;
    for _ in 0..=k {
        low += pw;
        pw *= t;
    }
    (low + pw, low)
}

/// The envelopes `U_1..U_6` of a Pearson target at fixed `k` and threshold.
#[derive(Debug, Clone, Copy)]
pub struct UEnvelope<'a> {
    pub spec: &'a PearsonSpec,
    pub k: usize,
    /// `p^(k)(x)`; only `U_1`, `U_2` use it.
    pub pk_x: f64,
    pub c_x: f64,
    pub consts: EnvelopeConstants,
}

impl UEnvelope<'_> {
    pub fn eval(&self, i: usize, y: f64) -> Result<f64> {
        let s = self.spec;
        let inside = s.in_support(y);
        let (p, p_minus) = power_sums(y, self.k);
        let b = s.b(y).abs();
        let d = (y - s.m).abs();
        let bk = b.powi(self.k as i32 + 1);
        let pk = self.pk_x.abs();
        let EnvelopeConstants { c, c_prime } = self.consts;
        let main = || p / (bk * d);
        let slope =
            || p / (bk * d * d) + p_minus / (bk * d) + s.b_prime(y).abs() * p / (bk * b * d);
        let v = match i {
            1 => {
                let mut v = 0.0;
                if y >= s.hi {
                    v += c * main();
                }
                if inside {
                    v += self.c_x;
                } else {
                    v += pk / d;
                }
                v
            }
            2 => {
                let mut v = 0.0;
                if inside {
                    v += self.c_x * d / b + pk / b + c_prime * p / bk;
                } else {
                    v += c_prime * pk / (d * d);
                }
                if y >= s.hi {
                    v += c_prime * slope();
                }
                v
            }
            3 if y <= s.lo => c * main(),
            4 if y <= s.lo => c_prime * slope(),
            5 if y > s.hi => c * main(),
            6 if y > s.hi => c_prime * slope(),
            3..=6 => 0.0,
            _ => return Err(Error::Invalid(format!("envelope index {i} outside 1..=6"))),
        };
        Ok(v)
    }
}

/// The envelopes `V_1..V_6` of a general target; `p_x` is `p(x)` on the interior branch.
pub fn envelope_v(i: usize, s: &GeneralDiffusionSpec, p_x: f64, c_x: f64, y: f64) -> Result<f64> {
    if !(1..=6).contains(&i) {
        return Err(Error::Invalid(format!("envelope index {i} outside 1..=6")));
    }
    let inside = s.in_support(y);
    let a = (s.drift)(y);
    let ap = (s.drift_prime)(y).abs();
    let px = p_x.abs();
    if inside {
        return Ok(match i {
            1 => c_x,
            2 => {
                let (b, bp) = s.b_and_prime(y)?;
                2.0 * a.abs() * c_x / b.abs() + (-2.0 * a + bp).abs() / (b * b) + px / b.abs()
            }
            _ => 0.0,
        });
    }
    let lower = y <= s.lo;
    let exterior = || -> Result<(f64, f64)> {
        let [b, bp, bpp] = s.exterior(y)?;
        let h = (-2.0 * a + bp).abs() / b.abs();
        let num = ((-2.0 * (s.drift_prime)(y) + bpp) * b - (-2.0 * a + bp) * bp).abs() / (b * b);
        Ok((h, num))
    };
    Ok(match i {
        1 => {
            let mut v = px / (2.0 * a.abs());
            if y >= s.hi {
                v += exterior()?.0 / (2.0 * a.abs());
            }
            v
        }
        2 => {
            let mut v = ap * px / (2.0 * a * a);
            if y >= s.hi {
                let (h, num) = exterior()?;
                v += 2.0 * num / a.abs() + ap * h / (2.0 * a * a);
            }
            v
        }
        3 if lower => exterior()?.0 / (2.0 * a.abs()),
        5 if y > s.hi => exterior()?.0 / (2.0 * a.abs()),
        4 if lower => {
            let (h, num) = exterior()?;
            num / a.abs() + ap * h / (2.0 * a * a)
        }
        6 if y > s.hi => {
            let (h, num) = exterior()?;
            num / (2.0 * a.abs()) + ap * h / (2.0 * a * a)
        }
        _ => 0.0,
    })
}

// ---------------------------------------------------------------- frozen constants

const FROZEN: &str = include_str!("../data/envelope_constants.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenEntry {
    pub label: String,
    pub target: PearsonSpec,
    #[serde(flatten)]
    pub constants: EnvelopeConstants,
}

/// Calibrated constants as shipped in `data/envelope_constants.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenConstants {
    pub grid_points: usize,
    pub k_max: usize,
    pub targets: Vec<FrozenEntry>,
}

impl FrozenConstants {
    pub fn load() -> Result<Self> {
        Ok(serde_json::from_str(FROZEN)?)
    }
}

impl EnvelopeConstants {
    /// Frozen constants for a calibrated target, if there are any.
    pub fn frozen(spec: &PearsonSpec) -> Result<Option<Self>> {
        Ok(FrozenConstants::load()?
            .targets
            .into_iter()
            .find(|e| &e.target == spec)
            .map(|e| e.constants))
    }
}

/// The targets whose constants are calibrated and frozen.
pub fn calibration_targets() -> Vec<(&'static str, PearsonSpec)> {
    vec![
        ("normal", PearsonSpec::normal()),
        ("gamma(7)", PearsonSpec::gamma(7.0).expect("valid gamma")),
        (
            "beta(8,8)",
            PearsonSpec::beta(8.0, 8.0).expect("valid beta"),
        ),
    ]
}

// ---------------------------------------------------------------- grids

/// Width of the band swept beyond a finite endpoint.
pub fn exterior_width(bulk: (f64, f64)) -> f64 {
    0.5 * (bulk.1 - bulk.0)
}

/// Sweep grid: the bulk interval plus a band beyond each finite endpoint.
///
/// `phase` in `[0, 1)` shifts the points; `0` puts them on the bulk endpoints.
/// Support endpoints themselves are never included.
pub fn sweep_grid(lo: f64, hi: f64, bulk: (f64, f64), n: usize, phase: f64) -> Vec<f64> {
    let w = exterior_width(bulk);
    let bands = lo.is_finite() as usize + hi.is_finite() as usize;
    let n_bulk = if bands == 0 { n } else { n / 2 };
    let n_lo = if lo.is_finite() {
        (n - n_bulk) / bands
    } else {
        0
    };
    let n_hi = n - n_bulk - n_lo;
    let mut out = Vec::with_capacity(n);
    let span = bulk.1 - bulk.0;
    let denom = (n_bulk as f64 - 1.0 + 2.0 * phase).max(1.0);
    for i in 0..n_lo {
        out.push(lo - w * (n_lo - i) as f64 / n_lo as f64 + w * phase / n_lo as f64);
    }
    for i in 0..n_bulk {
        out.push(bulk.0 + span * (i as f64 + phase) / denom);
    }
    for i in 0..n_hi {
        out.push(hi + w * (i as f64 + 1.0 - phase) / n_hi as f64);
    }
    out
}

/// Thresholds used for calibration: five in the bulk, two beyond each finite endpoint.
pub fn calibration_thresholds(lo: f64, hi: f64, bulk: (f64, f64)) -> Vec<f64> {
    let w = exterior_width(bulk);
    let mut v: Vec<f64> = [0.3, 0.4, 0.5, 0.6, 0.7]
        .iter()
        .map(|t| bulk.0 + t * (bulk.1 - bulk.0))
        .collect();
    if lo.is_finite() {
        v.extend([lo - 0.25 * w, lo - 0.75 * w]);
    }
    if hi.is_finite() {
        v.extend([hi + 0.25 * w, hi + 0.75 * w]);
    }
    v
}

/// One threshold per available branch, distinct from the calibration set.
pub fn probe_thresholds(lo: f64, hi: f64, bulk: (f64, f64)) -> Vec<f64> {
    let w = exterior_width(bulk);
    let mut v = vec![bulk.0 + 0.45 * (bulk.1 - bulk.0)];
    if lo.is_finite() {
        v.push(lo - 0.5 * w);
    }
    if hi.is_finite() {
        v.push(hi + 0.5 * w);
    }
    v
}

// ---------------------------------------------------------------- calibration

/// Smallest power of two, from `2^-8` up, that is at least `need`.
fn power_of_two_at_least(need: f64) -> Result<f64> {
    let mut c = 2f64.powi(-8);
    while c < need {
        c *= 2.0;
        if !c.is_finite() {
            return Err(Error::Invalid(format!(
                "no finite constant dominates (need {need:e})"
            )));
        }
    }
    Ok(c)
}

/// Calibrates `C` against the `g` envelopes, then `C'` against the `g'`
/// envelopes, over all `ks` and `thresholds` on `grid`.
pub fn calibrate_constants(
    spec: &PearsonSpec,
    ks: &[usize],
    thresholds: &[f64],
    grid: &[f64],
) -> Result<EnvelopeConstants> {
    let zero = EnvelopeConstants {
        c: 0.0,
        c_prime: 0.0,
    };
    let unit = EnvelopeConstants {
        c: 1.0,
        c_prime: 1.0,
    };
    let mut need_c: f64 = 0.0;
    let mut need_cp: f64 = 0.0;
    for &k in ks {
        for &x in thresholds {
            let sol = solve(&SteinProblem::pearson(spec, k, x)?)?;
            let (ig, igp) = sol.branch().envelope_pair();
            let needs = grid
                .par_iter()
                .map(|&y| -> Result<(f64, f64)> {
                    let (g, gp) = sol.eval(y)?;
                    // each envelope is affine in its constant: U(c) = B + c A
                    let need = |i: usize, val: f64| -> Result<f64> {
                        let base = sol.envelope(i, y, &zero)?;
                        let slope = sol.envelope(i, y, &unit)? - base;
                        let target = val.abs() / (1.0 + ROUNDING_SLACK);
                        if target <= base {
                            Ok(0.0)
                        } else if slope > 0.0 {
                            Ok((target - base) / slope)
                        } else {
                            Ok(f64::INFINITY)
                        }
                    };
                    Ok((need(ig, g)?, need(igp, gp)?))
                })
                .collect::<Result<Vec<_>>>()?;
            for (a, b) in needs {
                need_c = need_c.max(a);
                need_cp = need_cp.max(b);
            }
        }
    }
    Ok(EnvelopeConstants {
        c: power_of_two_at_least(need_c)?,
        c_prime: power_of_two_at_least(need_cp)?,
    })
}

// ---------------------------------------------------------------- domination sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub branch: Branch,
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub g: f64,
    pub g_prime: f64,
    /// The branch's envelope for `g` (`U_1`, `U_3` or `U_5`; `V` for general targets).
    pub env_g: f64,
    pub env_g_prime: f64,
    pub pass_g: bool,
    pub pass_g_prime: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub target: String,
    pub rows: Vec<SweepRow>,
    /// Branches that cannot occur for this support.
    pub not_applicable: Vec<Branch>,
    /// Largest ODE residual at support points of interior-branch problems.
    pub max_interior_residual: f64,
    /// Largest ODE residual at points outside the support.
    pub max_exterior_residual: f64,
}

impl SweepReport {
    pub fn violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !(r.pass_g && r.pass_g_prime))
            .count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "target,branch,k,x,y,g,g_prime,env_g,env_g_prime,pass_g,pass_g_prime"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                self.target,
                r.branch.name(),
                r.k,
                r.x,
                r.y,
                r.g,
                r.g_prime,
                r.env_g,
                r.env_g_prime,
                r.pass_g,
                r.pass_g_prime
            )?;
        }
        Ok(())
    }
}

fn dominated(v: f64, env: f64) -> bool {
    v.abs() <= env * (1.0 + ROUNDING_SLACK)
}

/// Checks `|g| <= env_g` and `|g'| <= env_g'` for every problem at every grid point.
pub fn domination_sweep(
    label: &str,
    problems: &[SteinProblem],
    consts: &EnvelopeConstants,
    grid: &[f64],
) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut max_in: f64 = 0.0;
    let mut max_out: f64 = 0.0;
    let mut seen = Vec::new();
    let mut support = (f64::NEG_INFINITY, f64::INFINITY);
    for problem in problems {
        support = problem.target.support();
        let sol = solve(problem)?;
        let (ig, igp) = sol.branch().envelope_pair();
        if !seen.contains(&sol.branch()) {
            seen.push(sol.branch());
        }
        let part = grid
            .par_iter()
            .map(|&y| -> Result<(SweepRow, f64)> {
                let (g, gp) = sol.eval(y)?;
                let env_g = sol.envelope(ig, y, consts)?;
                let env_gp = sol.envelope(igp, y, consts)?;
                let res = sol.ode_residual(y)?;
                let row = SweepRow {
                    branch: sol.branch(),
                    k: sol.k(),
                    x: sol.x(),
                    y,
                    g,
                    g_prime: gp,
                    env_g,
                    env_g_prime: env_gp,
                    pass_g: dominated(g, env_g),
                    pass_g_prime: dominated(gp, env_gp),
                };
                Ok((row, res))
            })
            .collect::<Result<Vec<_>>>()?;
        for (row, res) in part {
            if sol.in_support(row.y) {
                if sol.branch() == Branch::Interior {
                    max_in = max_in.max(res);
                }
            } else {
                max_out = max_out.max(res);
            }
            rows.push(row);
        }
    }
    let not_applicable = Branch::ALL
        .iter()
        .copied()
        .filter(|b| !Branch::available(support.0, support.1).contains(b))
        .collect();
    Ok(SweepReport {
        target: label.to_string(),
        rows,
        not_applicable,
        max_interior_residual: max_in,
        max_exterior_residual: max_out,
    })
}

// ---------------------------------------------------------------- discrepancy bound

/// Evaluated right-hand side of the product bound
/// `(E[U_2^2]^{1/2} + E[U_4^2]^{1/2} + E[U_6^2]^{1/2}) E[(b(F) + Gamma(L^{-1}F, F))^2]^{1/2}`.
#[derive(Debug, Clone, Serialize)]
pub struct DiscrepancyBound {
    pub value: f64,
    /// `E[U_i^2]^{1/2}` for `i = 2, 4, 6`.
    pub envelope_rms: [f64; 3],
    pub second_factor: f64,
    pub diagnostic: Option<String>,
}

/// Monte Carlo evaluation of the bound. `gamma_term[i]` is `Gamma(L^{-1}F, F)`
/// at the sample `f[i]`, which must come from a construction where it has a closed form.
pub fn stein_discrepancy_bound(
    sol: &SteinSolution,
    consts: &EnvelopeConstants,
    f: &[f64],
    gamma_term: &[f64],
) -> Result<DiscrepancyBound> {
    let spec = match &sol.kind {
        Kind::Pearson { spec, .. } => spec,
        Kind::General(_) => {
            return Err(Error::Unsupported(
                "the product bound is implemented for Pearson targets".into(),
            ))
        }
    };
    if f.len() != gamma_term.len() || f.is_empty() {
        return Err(Error::Invalid(format!(
            "{} samples of F but {} of the Gamma term",
            f.len(),
            gamma_term.len()
        )));
    }
    let n = f.len() as f64;
    let mut sums = [0.0; 3];
    let mut bad = [0usize; 3];
    let mut second = 0.0;
    for (&y, &gt) in f.iter().zip(gamma_term) {
        for (slot, i) in [2usize, 4, 6].iter().enumerate() {
            let u = sol.envelope(*i, y, consts)?;
            if u.is_finite() {
                sums[slot] += u * u;
            } else {
                bad[slot] += 1;
            }
        }
        let d = spec.b(y) + gt;
        second += d * d;
    }
    let second_factor = (second / n).sqrt();
    let envelope_rms = [
        (sums[0] / n).sqrt(),
        (sums[1] / n).sqrt(),
        (sums[2] / n).sqrt(),
    ];
    let mut diagnostic = None;
    let mut value = envelope_rms.iter().sum::<f64>() * second_factor;
    if bad.iter().any(|&c| c > 0) || envelope_rms.iter().any(|v| !v.is_finite()) {
        value = f64::INFINITY;
        diagnostic = Some(format!(
            "non-finite envelope values at {}/{}/{} samples for U2/U4/U6; the envelope moments are infinite",
            bad[0], bad[1], bad[2]
        ));
    } else if second_factor == 0.0 {
        value = 0.0;
    }
    Ok(DiscrepancyBound {
        value,
        envelope_rms,
        second_factor,
        diagnostic,
    })
}
