//! Pearson targets, their stationary densities and density derivatives, and
//! targets given by a general drift/density pair.

use std::fmt;
use std::sync::Arc;

use libm::lgamma as ln_gamma;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::poly::{Poly, RatB};
use crate::quad::{integrate, integrate_pieces, QuadOptions};

/// Default highest derivative order prepared for [`PearsonSpec::density_derivative`].
pub const DEFAULT_K_MAX: usize = 6;

/// Named members of the Pearson family for which exact samplers exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Normal { mean: f64, var: f64 },
    Gamma { alpha: f64 },
    Beta { a: f64, b: f64 },
    Student { nu: f64 },
    Custom,
}

/// Target law of `dZ = (m - Z)/2 dt + sqrt(1_{(lo,hi)}(Z) b(Z)) dB`.
#[derive(Clone)]
pub struct PearsonSpec {
    pub b2: f64,
    pub b1: f64,
    pub b0: f64,
    pub m: f64,
    pub lo: f64,
    pub hi: f64,
    log_norm: f64,
    family: Family,
    b: Poly,
    q: Vec<RatB>,
}

impl fmt::Debug for PearsonSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PearsonSpec")
            .field("b2", &self.b2)
            .field("b1", &self.b1)
            .field("b0", &self.b0)
            .field("m", &self.m)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("family", &self.family)
            .finish()
    }
}

impl PartialEq for PearsonSpec {
    fn eq(&self, o: &Self) -> bool {
        self.b2 == o.b2
            && self.b1 == o.b1
            && self.b0 == o.b0
            && self.m == o.m
            && self.lo == o.lo
            && self.hi == o.hi
    }
}

impl PearsonSpec {
    /// Validates the coefficients and computes the normalising constant.
    pub fn new(b2: f64, b1: f64, b0: f64, m: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::with_k_max(b2, b1, b0, m, lo, hi, DEFAULT_K_MAX)
    }

    pub fn with_k_max(
        b2: f64,
        b1: f64,
        b0: f64,
        m: f64,
        lo: f64,
        hi: f64,
        k_max: usize,
    ) -> Result<Self> {
        for (name, v) in [("b2", b2), ("b1", b1), ("b0", b0), ("m", m)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if lo.is_nan() || hi.is_nan() || !(lo < m && m < hi) {
            return Err(Error::Config(format!(
                "need lo < m < hi, got lo={lo}, m={m}, hi={hi}"
            )));
        }
        let b = Poly::new(vec![b0, b1, b2]);
        if b.eval(m) <= 0.0 {
            return Err(Error::Config(format!(
                "b(m) = {} is not positive",
                b.eval(m)
            )));
        }
        for r in real_roots(b2, b1, b0) {
            if r > lo && r < hi {
                return Err(Error::Config(format!(
                    "b has a root at {r} inside ({lo}, {hi})"
                )));
            }
        }
        let family = detect_family(b2, b1, b0, m, lo, hi);
        let mut spec = PearsonSpec {
            b2,
            b1,
            b0,
            m,
            lo,
            hi,
            log_norm: 0.0,
            family,
            b,
            q: Vec::new(),
        };
        spec.q = spec.build_q(k_max);
        spec.log_norm = match spec.named_log_density_at_mean() {
            // unnormalized(m) = 1/b(m)
            Some(lq) => lq + spec.b(m).ln(),
            None => {
                let z = integrate_pieces(
                    |x| spec.unnormalized(x),
                    lo,
                    hi,
                    &[m],
                    spec.scale(),
                    &QuadOptions {
                        rel_tol: 1e-12,
                        ..Default::default()
                    },
                )
                .map_err(|e| Error::Config(format!("normalising constant: {e}")))?;
                if !(z.is_finite() && z > 0.0) {
                    return Err(Error::Config(format!(
                        "density is not normalisable (integral {z})"
                    )));
                }
                -z.ln()
            }
        };
        Ok(spec)
    }

    pub fn normal() -> Self {
        Self::new(0.0, 0.0, 1.0, 0.0, f64::NEG_INFINITY, f64::INFINITY)
            .expect("standard normal is valid")
    }

    pub fn gamma(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!(
                "gamma shape must be positive, got {alpha}"
            )));
        }
        Self::new(0.0, 1.0, 0.0, alpha, 0.0, f64::INFINITY)
    }

    /// Beta(a, b) on (0, 1): `b(x) = x(1-x)/(a+b)`, mean `a/(a+b)`.
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Config(format!(
                "beta parameters must be positive, got ({a}, {b})"
            )));
        }
        let s = a + b;
        Self::new(-1.0 / s, 1.0 / s, 0.0, a / s, 0.0, 1.0)
    }

    /// Student t with `nu > 1` degrees of freedom: `b(x) = (x^2 + nu)/(nu - 1)`.
    pub fn student(nu: f64) -> Result<Self> {
        if !(nu > 1.0) {
            return Err(Error::Config(format!(
                "Student target needs nu > 1, got {nu}"
            )));
        }
        Self::new(
            1.0 / (nu - 1.0),
            0.0,
            nu / (nu - 1.0),
            0.0,
            f64::NEG_INFINITY,
            f64::INFINITY,
        )
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Log of the standard density of a named family at its mean. Quadrature
    /// cannot normalise beta laws with a shape below one to full precision:
    /// the mass within one ulp of `x = 1` is already of order `eps^b`.
    fn named_log_density_at_mean(&self) -> Option<f64> {
        let m = self.m;
        match self.family {
            Family::Normal { var, .. } => Some(-0.5 * (2.0 * std::f64::consts::PI * var).ln()),
            Family::Gamma { alpha } => Some((alpha - 1.0) * m.ln() - m - ln_gamma(alpha)),
            Family::Beta { a, b } => Some(
                (a - 1.0) * m.ln() + (b - 1.0) * (1.0 - m).ln()
                    - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)),
            ),
            Family::Student { nu } => Some(
                ln_gamma(0.5 * (nu + 1.0))
                    - ln_gamma(0.5 * nu)
                    - 0.5 * (nu * std::f64::consts::PI).ln(),
            ),
            Family::Custom => None,
        }
    }

    pub fn b_poly(&self) -> &Poly {
        &self.b
    }

    pub fn b(&self, x: f64) -> f64 {
        self.b.eval(x)
    }

    pub fn b_prime(&self, x: f64) -> f64 {
        2.0 * self.b2 * x + self.b1
    }

    pub fn drift(&self, x: f64) -> f64 {
        0.5 * (self.m - x)
    }

    pub fn in_support(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// Stationary variance `b(m)/(1-b2)`; infinite when `b2 >= 1`.
    pub fn variance(&self) -> f64 {
        if self.b2 < 1.0 {
            self.b(self.m) / (1.0 - self.b2)
        } else {
            f64::INFINITY
        }
    }

    /// Length unit for quadrature maps and grids.
    pub fn scale(&self) -> f64 {
        let v = self.variance();
        let s = if v.is_finite() {
            v.sqrt()
        } else {
            self.b(self.m).sqrt()
        };
        if self.lo.is_finite() && self.hi.is_finite() {
            s.min(self.hi - self.lo)
        } else {
            s
        }
    }

    pub fn k_max(&self) -> usize {
        self.q.len() - 1
    }

    /// Finite endpoints at which `b` vanishes (square-root type boundaries).
    pub fn has_boundary_root(&self) -> bool {
        let tol = 1e-12 * (1.0 + self.b2.abs() + self.b1.abs() + self.b0.abs());
        (self.lo.is_finite() && self.b(self.lo).abs() <= tol)
            || (self.hi.is_finite() && self.b(self.hi).abs() <= tol)
    }

    /// `int_m^x (y-m)/b(y) dy` in closed form.
    fn log_integral(&self, x: f64) -> f64 {
        let (b2, b1, b0, m) = (self.b2, self.b1, self.b0, self.m);
        if b2 == 0.0 && b1 == 0.0 {
            return (x - m) * (x - m) / (2.0 * b0);
        }
        if b2 == 0.0 {
            let shift = m + b0 / b1;
            return (x - m) / b1 - shift / b1 * ((b1 * x + b0) / (b1 * m + b0)).abs().ln();
        }
        // (y-m)/b = b'/(2 b2 b) - (m + b1/(2 b2))/b
        let d = b1 * b1 - 4.0 * b2 * b0;
        let anti = |y: f64| -> f64 {
            let t = 2.0 * b2 * y + b1;
            if d < 0.0 {
                let r = (-d).sqrt();
                2.0 / r * (t / r).atan()
            } else if d > 0.0 {
                let r = d.sqrt();
                // (t - r)(t + r) = 4 b2 b(y); the smaller factor is formed from b(y)
                // to avoid cancellation next to a root
                let fb = 4.0 * b2 * self.b(y);
                let ratio = if (t + r).abs() >= (t - r).abs() {
                    fb / ((t + r) * (t + r))
                } else {
                    (t - r) * (t - r) / fb
                };
                ratio.abs().ln() / r
            } else {
                -2.0 / t
            }
        };
        (self.b(x) / self.b(m)).abs().ln() / (2.0 * b2)
            - (m + b1 / (2.0 * b2)) * (anti(x) - anti(m))
    }

    fn unnormalized(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return 0.0;
        }
        (-self.b(x).ln() - self.log_integral(x)).exp()
    }

    /// Stationary density, zero outside `(lo, hi)`.
    pub fn stationary_density(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return 0.0;
        }
        (self.log_norm - self.b(x).ln() - self.log_integral(x)).exp()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        self.log_norm - self.b(x).ln() - self.log_integral(x)
    }

    // q_0 = 1, q_{k+1} = q_k' - q_k (x - m + b')/b, so p^(k) = q_k p.
    fn build_q(&self, k_max: usize) -> Vec<RatB> {
        let shift = &Poly::linear(-self.m, 1.0) + &self.b.derivative();
        let mut q = vec![RatB {
            num: Poly::constant(1.0),
            pow: 0,
        }];
        for _ in 0..k_max {
            let last = q.last().unwrap();
            let d = last.derivative(&self.b);
            // bring -N (x - m + b') / b^{p+1} onto the same power as d
            let extra = -&(&last.num * &shift);
            q.push(RatB {
                num: &d.num + &extra,
                pow: d.pow,
            });
        }
        q
    }

    /// `p^(k)/p` as an exact rational in `b`.
    pub fn log_derivative_rational(&self, k: usize) -> Result<&RatB> {
        self.q.get(k).ok_or_else(|| {
            Error::Invalid(format!(
                "derivative order {k} exceeds k_max {}",
                self.k_max()
            ))
        })
    }

    /// `p^(k)(x) = q_k(x) p(x)`; zero outside the support.
    pub fn density_derivative(&self, x: f64, k: usize) -> Result<f64> {
        let q = self.log_derivative_rational(k)?;
        if !self.in_support(x) {
            return Ok(0.0);
        }
        Ok(q.eval(&self.b, x) * self.stationary_density(x))
    }

    /// `int_a^b f(w) p(w) dw` restricted to the support, split at `m` and at `breaks`.
    pub fn expect_on<F: Fn(f64) -> f64>(
        &self,
        f: F,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<f64> {
        let lo = a.max(self.lo);
        let hi = b.min(self.hi);
        if lo >= hi {
            return Ok(0.0);
        }
        let mut br = breaks.to_vec();
        br.push(self.m);
        integrate_pieces(
            |w| f(w) * self.stationary_density(w),
            lo,
            hi,
            &br,
            self.scale(),
            &QuadOptions::default(),
        )
    }

    /// `P(Z > y)`.
    pub fn survival(&self, y: f64) -> Result<f64> {
        if y >= self.m {
            self.expect_on(|_| 1.0, y, self.hi, &[])
        } else {
            Ok(1.0 - self.expect_on(|_| 1.0, self.lo, y, &[])?)
        }
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        if y <= self.m {
            self.expect_on(|_| 1.0, self.lo, y, &[])
        } else {
            Ok(1.0 - self.expect_on(|_| 1.0, y, self.hi, &[])?)
        }
    }

    /// max over `grid` of `|b(x)p(x) - 2 int_lo^x a(w) p(w) dw|` with the
    /// drift `a(w) = (m-w)/2`, i.e. `|b p - int_lo^x (m-w) p|`.
    pub fn check_drift_diffusion_relation(&self, grid: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &x in grid {
            if !self.in_support(x) {
                return Err(Error::Domain(format!(
                    "grid point {x} outside ({}, {})",
                    self.lo, self.hi
                )));
            }
            let rhs = self.expect_on(|w| self.m - w, self.lo, x, &[])?;
            worst = worst.max((self.b(x) * self.stationary_density(x) - rhs).abs());
        }
        Ok(worst)
    }

    /// Interval holding all but a negligible part of the mass: the density
    /// drops below `eps * p(m)` beyond it, or it stops `edge` short of a
    /// finite endpoint (in units of the distance from `m`).
    pub fn bulk_interval(&self, eps: f64, edge: f64) -> (f64, f64) {
        let pm = self.stationary_density(self.m);
        let s = self.scale();
        let side = |end: f64, dir: f64| -> f64 {
            if end.is_finite() {
                let span = (end - self.m).abs();
                let mut t = 0.5;
                while t > edge {
                    let y = end - dir * span * t;
                    if self.stationary_density(y) < eps * pm {
                        return y;
                    }
                    t *= 0.5;
                }
                end - dir * span * edge
            } else {
                let mut y = self.m;
                for _ in 0..100_000 {
                    y += dir * 0.25 * s;
                    if self.stationary_density(y) < eps * pm {
                        break;
                    }
                }
                y
            }
        };
        (side(self.lo, -1.0), side(self.hi, 1.0))
    }

    /// View this target as a general diffusion with the Pearson drift.
    pub fn as_general(&self) -> GeneralDiffusionSpec {
        let d = self.clone();
        let d1 = self.clone();
        let e = self.clone();
        let m = self.m;
        GeneralDiffusionSpec {
            drift: Arc::new(move |x| 0.5 * (m - x)),
            drift_prime: Arc::new(|_| -0.5),
            density: Arc::new(move |x| d.stationary_density(x)),
            density_prime: Some(Arc::new(move |x| {
                d1.density_derivative(x, 1).unwrap_or(0.0)
            })),
            exterior_b: Some(Arc::new(move |x| [e.b(x), e.b_prime(x), 2.0 * e.b2])),
            lo: self.lo,
            hi: self.hi,
            scale: self.scale(),
        }
    }
}

fn real_roots(b2: f64, b1: f64, b0: f64) -> Vec<f64> {
    if b2 == 0.0 {
        if b1 == 0.0 {
            Vec::new()
        } else {
            vec![-b0 / b1]
        }
    } else {
        let d = b1 * b1 - 4.0 * b2 * b0;
        if d < 0.0 {
            Vec::new()
        } else {
            let r = d.sqrt();
            vec![(-b1 - r) / (2.0 * b2), (-b1 + r) / (2.0 * b2)]
        }
    }
}

fn detect_family(b2: f64, b1: f64, b0: f64, m: f64, lo: f64, hi: f64) -> Family {
    let full = lo == f64::NEG_INFINITY && hi == f64::INFINITY;
    if b2 == 0.0 && b1 == 0.0 && full {
        return Family::Normal { mean: m, var: b0 };
    }
    if b2 == 0.0 && b1 == 1.0 && b0 == 0.0 && lo == 0.0 && hi == f64::INFINITY {
        return Family::Gamma { alpha: m };
    }
    if b2 < 0.0 && b0 == 0.0 && lo == 0.0 && hi == 1.0 && (b1 + b2).abs() <= 1e-15 * b1.abs() {
        let s = 1.0 / b1;
        return Family::Beta {
            a: m * s,
            b: (1.0 - m) * s,
        };
    }
    if b2 > 0.0 && b1 == 0.0 && m == 0.0 && full && (b0 - (1.0 + b2)).abs() <= 1e-14 * b0 {
        return Family::Student { nu: 1.0 + 1.0 / b2 };
    }
    Family::Custom
}

// ---------------------------------------------------------------- serialisation

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Bound {
    Num(f64),
    Text(String),
}

impl Bound {
    fn from_f64(x: f64) -> Bound {
        if x == f64::INFINITY {
            Bound::Text("inf".into())
        } else if x == f64::NEG_INFINITY {
            Bound::Text("-inf".into())
        } else {
            Bound::Num(x)
        }
    }

    fn to_f64(&self) -> std::result::Result<f64, String> {
        match self {
            Bound::Num(x) => Ok(*x),
            Bound::Text(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(format!(
                    "bad support endpoint {other:?}; use a number, \"inf\" or \"-inf\""
                )),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffJson {
    b2: f64,
    b1: f64,
    b0: f64,
    m: f64,
    lo: Bound,
    hi: Bound,
}

#[derive(Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
enum NamedJson {
    Normal,
    Gamma { alpha: f64 },
    Beta { a: f64, b: f64 },
    Student { nu: f64 },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TargetJson {
    Named(NamedJson),
    Coeffs(CoeffJson),
}

impl Serialize for PearsonSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CoeffJson {
            b2: self.b2,
            b1: self.b1,
            b0: self.b0,
            m: self.m,
            lo: Bound::from_f64(self.lo),
            hi: Bound::from_f64(self.hi),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PearsonSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let t = TargetJson::deserialize(d)?;
        let spec = match t {
            TargetJson::Named(NamedJson::Normal) => Ok(PearsonSpec::normal()),
            TargetJson::Named(NamedJson::Gamma { alpha }) => PearsonSpec::gamma(alpha),
            TargetJson::Named(NamedJson::Beta { a, b }) => PearsonSpec::beta(a, b),
            TargetJson::Named(NamedJson::Student { nu }) => PearsonSpec::student(nu),
            TargetJson::Coeffs(c) => {
                let lo = c.lo.to_f64().map_err(D::Error::custom)?;
                let hi = c.hi.to_f64().map_err(D::Error::custom)?;
                PearsonSpec::new(c.b2, c.b1, c.b0, c.m, lo, hi)
            }
        };
        spec.map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------- general diffusions

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type TripleFn = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;

/// Target given by a drift `a` and a density `p` supported on `(lo, hi)`.
///
/// `b` inside the support is induced by `a` and `p`. Outside it the Stein
/// machinery needs `(b, b', b'')` from an explicit extension.
#[derive(Clone)]
pub struct GeneralDiffusionSpec {
    pub drift: RealFn,
    pub drift_prime: RealFn,
    pub density: RealFn,
    /// Exact `p'`; a 5-point difference is used when absent.
    pub density_prime: Option<RealFn>,
    pub exterior_b: Option<TripleFn>,
    pub lo: f64,
    pub hi: f64,
    pub scale: f64,
}

/// Outcome of checking the sign and centring conditions on the drift.
#[derive(Debug, Clone, Serialize)]
pub struct DriftCheck {
    /// A point where the drift changes from positive to negative.
    pub crossing: Option<f64>,
    /// `int a p` over the support.
    pub integral_ap: f64,
    pub centred: bool,
}

impl GeneralDiffusionSpec {
    pub fn in_support(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// `b(x) = 2 int_lo^x a p / p(x)`.
    ///
    /// Past the drift's sign change the numerator is taken as `-2 int_x^hi a p`,
    /// which is the same number when `int a p = 0` and avoids cancellation.
    pub fn induced_b(&self, x: f64) -> Result<f64> {
        let px = (self.density)(x);
        if self.in_support(x) && !(px >= 1e-300) {
            return Err(Error::Domain(format!(
                "density {px:e} at x = {x} is below the floor 1e-300"
            )));
        }
        Ok(self.b_times_p(x)? / px)
    }

    /// `b(x) p(x)` without dividing by the density.
    pub fn b_times_p(&self, x: f64) -> Result<f64> {
        if !self.in_support(x) {
            return Err(Error::Domain(format!(
                "x = {x} outside ({}, {})",
                self.lo, self.hi
            )));
        }
        let f = |y: f64| 2.0 * (self.drift)(y) * (self.density)(y);
        let o = QuadOptions::default();
        if (self.drift)(x) > 0.0 {
            Ok(integrate(f, self.lo, x, self.scale, &o)?.value)
        } else {
            Ok(-integrate(f, x, self.hi, self.scale, &o)?.value)
        }
    }

    pub fn density_prime_at(&self, x: f64) -> f64 {
        match &self.density_prime {
            Some(f) => f(x),
            None => {
                let h = f64::EPSILON.powf(1.0 / 3.0) * (1.0 + x.abs());
                let p = &self.density;
                (-p(x + 2.0 * h) + 8.0 * p(x + h) - 8.0 * p(x - h) + p(x - 2.0 * h)) / (12.0 * h)
            }
        }
    }

    /// `(b, b')` inside the support; `b' = 2a - b p'/p`.
    pub fn b_and_prime(&self, x: f64) -> Result<(f64, f64)> {
        let b = self.induced_b(x)?;
        let px = (self.density)(x);
        Ok((b, 2.0 * (self.drift)(x) - b * self.density_prime_at(x) / px))
    }

    /// `(b, b', b'')` outside the support, from the explicit extension.
    pub fn exterior(&self, x: f64) -> Result<[f64; 3]> {
        match &self.exterior_b {
            Some(f) => Ok(f(x)),
            None => Err(Error::Unsupported(
                "no exterior extension of b was supplied".into(),
            )),
        }
    }

    /// Checks that `a` changes sign once from + to - and that `int a p = 0`
    /// (reported at tolerance 1e-8, not enforced).
    pub fn check_drift(&self, grid: &[f64]) -> Result<DriftCheck> {
        let mut crossing = None;
        let mut prev: Option<(f64, f64)> = None;
        let mut sign_changes = 0;
        for &x in grid.iter().filter(|&&x| self.in_support(x)) {
            let a = (self.drift)(x);
            if let Some((px, pa)) = prev {
                if pa > 0.0 && a <= 0.0 {
                    crossing = Some(0.5 * (px + x));
                    sign_changes += 1;
                } else if pa <= 0.0 && a > 0.0 {
                    sign_changes += 1;
                }
            }
            prev = Some((x, a));
        }
        if sign_changes != 1 {
            crossing = None;
        }
        let integral_ap = integrate(
            |y| (self.drift)(y) * (self.density)(y),
            self.lo,
            self.hi,
            self.scale,
            &QuadOptions::default(),
        )?
        .value;
        Ok(DriftCheck {
            crossing,
            integral_ap,
            centred: integral_ap.abs() <= 1e-8,
        })
    }
}
