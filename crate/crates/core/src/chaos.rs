//! Weighted sums of centred Gamma variables, `X = sum_i lambda_i (Y_i - gamma)`
//! with `Y_i ~ Gamma(gamma, 1)` i.i.d., as first-chaos elements of the
//! Laguerre generator. `F = X + alpha` is compared with `Gamma(alpha, 1)`.
//!
//! The carre du champ acts diagonally, `Gamma(Y_i) = Y_i` and
//! `Gamma(Y_i, Y_j) = 0` for `i != j`, so every quantity below is a closed form
//! in the weights.

use std::io::Write;

use num_complex::Complex64;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma as gamma_fn, ln_gamma};

use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::rng::par_generate;

/// Eigenvalue of the first-chaos sums under the Laguerre generator.
pub const FIRST_CHAOS_GRADE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedGammaSpec {
    #[serde(rename = "gamma")]
    pub gamma_shape: f64,
    pub weights: Vec<f64>,
    #[serde(rename = "alpha")]
    pub target_alpha: f64,
}

#[derive(Deserialize)]
struct SpecJson {
    gamma: f64,
    alpha: f64,
    weights: Vec<f64>,
}

impl<'de> Deserialize<'de> for WeightedGammaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = SpecJson::deserialize(d)?;
        WeightedGammaSpec::new(j.gamma, j.weights, j.alpha).map_err(serde::de::Error::custom)
    }
}

impl WeightedGammaSpec {
    /// Weights must be positive, finite and sorted in descending order.
    pub fn new(gamma_shape: f64, weights: Vec<f64>, target_alpha: f64) -> Result<Self> {
        if !(gamma_shape > 0.0 && gamma_shape.is_finite()) {
            return Err(Error::Config(format!(
                "gamma shape must be positive, got {gamma_shape}"
            )));
        }
        if !(target_alpha > 0.0 && target_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {target_alpha}"
            )));
        }
        if weights.is_empty() {
            return Err(Error::Config("at least one weight is needed".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!(
                "weights must be positive and finite, got {w}"
            )));
        }
        if weights.windows(2).any(|p| p[0] < p[1]) {
            return Err(Error::Config(
                "weights must be sorted in descending order".into(),
            ));
        }
        Ok(WeightedGammaSpec {
            gamma_shape,
            weights,
            target_alpha,
        })
    }

    /// `gamma = alpha`, one unit weight: `F` is exactly `Gamma(alpha, 1)`.
    pub fn exact(alpha: f64) -> Result<Self> {
        Self::new(alpha, vec![1.0], alpha)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Var(X) = gamma * sum lambda^2`.
    pub fn variance(&self) -> f64 {
        self.gamma_shape * self.weights.iter().map(|l| l * l).sum::<f64>()
    }

    /// Relative mismatch between `Var(X)` and the target variance `alpha`.
    pub fn variance_mismatch(&self) -> f64 {
        (self.variance() - self.target_alpha).abs() / self.target_alpha
    }
}

/// Weight families normalised so that `gamma * sum lambda^2 = alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFamily {
    /// `lambda_i = c / i`, `i = 1..n`.
    Harmonic,
    /// `lambda_i = c 2^{-(i-1)}`, `i = 1..n`.
    Geometric,
    /// `round(alpha/gamma)` weights `s` followed by `n` weights `1/n`, with `s` fixing the variance.
    EqualTail,
}

impl WeightFamily {
    pub fn weights(self, n: usize, gamma_shape: f64, alpha: f64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Config("weight count must be positive".into()));
        }
        let scaled = |raw: Vec<f64>| {
            let s2: f64 = raw.iter().map(|l| l * l).sum();
            let c = (alpha / (gamma_shape * s2)).sqrt();
            raw.into_iter().map(|l| l * c).collect()
        };
        match self {
            WeightFamily::Harmonic => Ok(scaled((1..=n).map(|i| 1.0 / i as f64).collect())),
            WeightFamily::Geometric => Ok(scaled((0..n).map(|i| 0.5f64.powi(i as i32)).collect())),
            WeightFamily::EqualTail => {
                let k = (alpha / gamma_shape).round().max(1.0) as usize;
                let tail = 1.0 / n as f64;
                let s2 = (alpha / gamma_shape - tail) / k as f64;
                if s2 < tail * tail {
                    return Err(Error::Config(format!(
                        "equal-tail weights need alpha/gamma > 1/n + k/n^2 (alpha={alpha}, gamma={gamma_shape}, n={n})"
                    )));
                }
                let mut w = vec![s2.sqrt(); k];
                w.extend(std::iter::repeat_n(tail, n));
                Ok(w)
            }
        }
    }

    pub fn spec(self, n: usize, gamma_shape: f64, alpha: f64) -> Result<WeightedGammaSpec> {
        WeightedGammaSpec::new(gamma_shape, self.weights(n, gamma_shape, alpha)?, alpha)
    }
}

/// Columns of a sampled batch; entry `i` of every column belongs to draw `i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChaosBatch {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    /// `Gamma(X) = sum lambda^2 Y`.
    pub gamma_carre: Vec<f64>,
    /// `Gamma(X) - F`.
    pub q1: Vec<f64>,
    /// `-sum (lambda^2 - lambda)(Y - gamma)`.
    pub lq1: Vec<f64>,
    /// `Gamma(F, Q1) = sum lambda (lambda^2 - lambda) Y`.
    pub q2: Vec<f64>,
}

impl ChaosBatch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "X,F,gamma_carre,Q1,LQ1,Q2")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                self.x[i], self.f[i], self.gamma_carre[i], self.q1[i], self.lq1[i], self.q2[i]
            )?;
        }
        Ok(())
    }
}

/// Draws `n` samples; draw `i` uses the random stream of its chunk.
pub fn sample(spec: &WeightedGammaSpec, n: usize, seed: u64) -> Result<ChaosBatch> {
    let dist = Gamma::new(spec.gamma_shape, 1.0)
        .map_err(|e| Error::Config(format!("gamma sampler: {e}")))?;
    let g = spec.gamma_shape;
    let alpha = spec.target_alpha;
    let rows = par_generate(seed, n, |rng, _| {
        let (mut x, mut gc, mut lq1, mut q2) = (0.0, 0.0, 0.0, 0.0);
        for &l in &spec.weights {
            let y: f64 = dist.sample(rng);
            let l2 = l * l;
            x += l * (y - g);
            gc += l2 * y;
            lq1 -= (l2 - l) * (y - g);
            q2 += l * (l2 - l) * y;
        }
        [x, gc, lq1, q2]
    });
    let mut b = ChaosBatch::default();
    for [x, gc, lq1, q2] in rows {
        let f = x + alpha;
        b.x.push(x);
        b.f.push(f);
        b.gamma_carre.push(gc);
        b.q1.push(gc - f);
        b.lq1.push(lq1);
        b.q2.push(q2);
    }
    Ok(b)
}

/// `E[Q1^2] = gamma sum (lambda^2 - lambda)^2 + (gamma sum lambda^2 - alpha)^2`.
pub fn e_q1_sq(spec: &WeightedGammaSpec) -> f64 {
    let mean = spec.variance() - spec.target_alpha;
    e_lq1_sq(spec) + mean * mean
}

/// `E[(L Q1)^2] = gamma sum (lambda^2 - lambda)^2`.
pub fn e_lq1_sq(spec: &WeightedGammaSpec) -> f64 {
    spec.gamma_shape
        * spec
            .weights
            .iter()
            .map(|l| (l * l - l).powi(2))
            .sum::<f64>()
}

/// Elementary symmetric polynomials `e_0..e_q_max` of `v` by the product recurrence.
pub fn elementary_symmetric(v: &[f64], q_max: usize) -> Vec<f64> {
    let mut e = vec![0.0; q_max + 1];
    e[0] = 1.0;
    for (seen, &x) in v.iter().enumerate() {
        for j in (1..=q_max.min(seen + 1)).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// Distinct-index sums `R_q = sum lambda_{i1}^2 ... lambda_{iq}^2` and
/// `S_q = sum lambda_{i1} ... lambda_{iq}` over ordered tuples of distinct
/// indices, i.e. `q! e_q`. Index `q` of each vector holds the order-`q` sum, `q = 0..=q_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSums {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
}

pub fn spectral_sums(spec: &WeightedGammaSpec, q_max: usize) -> Result<SpectralSums> {
    if q_max > spec.len() {
        return Err(Error::Invalid(format!(
            "q_max = {q_max} exceeds the {} weights",
            spec.len()
        )));
    }
    let sq: Vec<f64> = spec.weights.iter().map(|l| l * l).collect();
    let er = elementary_symmetric(&sq, q_max);
    let es = elementary_symmetric(&spec.weights, q_max);
    let mut fact = 1.0;
    let mut r = Vec::with_capacity(q_max + 1);
    let mut s = Vec::with_capacity(q_max + 1);
    for q in 0..=q_max {
        if q > 0 {
            fact *= q as f64;
        }
        r.push(fact * er[q]);
        s.push(fact * es[q]);
    }
    Ok(SpectralSums { r, s })
}

/// `(alpha/2) prod_{r=1}^{q} (alpha/2 - sum_{j <= min(r, n)} lambda_j^2)`.
pub fn m_product(spec: &WeightedGammaSpec, q: usize) -> Result<f64> {
    if q == 0 {
        return Err(Error::Invalid("q must be at least 1".into()));
    }
    let half = 0.5 * spec.target_alpha;
    let mut partial = 0.0;
    let mut prod = half;
    for r in 1..=q {
        if let Some(l) = spec.weights.get(r - 1) {
            partial += l * l;
        }
        prod *= half - partial;
    }
    Ok(prod)
}

/// Which spectral sums enter the negative-moment bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralChoice {
    /// `R` sums, bounding `E[Gamma(X)^{-q}]`.
    R,
    /// `S` sums, bounding `E[(X + alpha)^{-q}]`.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundForm {
    /// `(1/(2 (q-1)!)) [1/((q-gamma) R_1^gamma) + 1/((gamma(p+1)-q) R_{p+1}^gamma)]`.
    Printed,
    /// `(1/Gamma(q)) [1/((q-gamma) e_1^gamma) + 1/((gamma(p+1)-q) e_{p+1}^gamma)]`,
    /// from splitting the Laplace integral at `t = 1`.
    Rigorous,
}

#[derive(Debug, Clone, Serialize)]
pub struct NegativeMomentBound {
    pub value: f64,
    /// Smallest integer with `q/gamma - 1 < p < alpha/gamma`.
    pub p: usize,
    /// Smallest integer with `q > 1/m + gamma`.
    pub m: usize,
}

/// Two-term Laplace bound on `E[Gamma(X)^{-q}]` (R) or `E[F^{-q}]` (S).
pub fn negative_moment_bound(
    spec: &WeightedGammaSpec,
    q: f64,
    choice: SpectralChoice,
    form: BoundForm,
) -> Result<NegativeMomentBound> {
    let g = spec.gamma_shape;
    let alpha = spec.target_alpha;
    if !(q > g && q.is_finite()) {
        return Err(Error::Invalid(format!(
            "need q > gamma, got gamma={g}, q={q}"
        )));
    }
    let p = ((q / g - 1.0).floor() + 1.0).max(0.0) as usize;
    if !((p as f64) < alpha / g) {
        return Err(Error::Invalid(format!(
            "alpha too small for this q: no integer p with {} < p < {}",
            q / g - 1.0,
            alpha / g
        )));
    }
    let m = (1.0 / (q - g)).floor() as usize + 1;
    if p + 1 > spec.len() {
        return Err(Error::Invalid(format!(
            "the bound needs {} weights, the spec has {}",
            p + 1,
            spec.len()
        )));
    }
    let v: Vec<f64> = match choice {
        SpectralChoice::R => spec.weights.iter().map(|l| l * l).collect(),
        SpectralChoice::S => {
            let shift = alpha - g * spec.weights.iter().sum::<f64>();
            if shift < 0.0 {
                return Err(Error::Invalid(format!(
                    "the S form needs alpha >= gamma * sum(lambda) (shift {shift} < 0)"
                )));
            }
            spec.weights.clone()
        }
    };
    let e = elementary_symmetric(&v, p + 1);
    let (first, last, lead) = match form {
        BoundForm::Printed => {
            let (r1, rp) = (e[1], e[p + 1] * gamma_fn(p as f64 + 2.0));
            (r1, rp, 1.0 / (2.0 * gamma_fn(q)))
        }
        BoundForm::Rigorous => (e[1], e[p + 1], 1.0 / gamma_fn(q)),
    };
    let value = lead
        * (1.0 / ((q - g) * first.powf(g)) + 1.0 / ((g * (p as f64 + 1.0) - q) * last.powf(g)));
    Ok(NegativeMomentBound { value, p, m })
}

/// Which variable the characteristic function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CharfunOf {
    GammaCarre,
    F,
}

/// `E[e^{it Gamma(X)}] = prod (1 - it lambda^2)^{-gamma}` and
/// `E[e^{it F}] = e^{it(alpha - gamma sum lambda)} prod (1 - it lambda)^{-gamma}`.
pub fn charfun(spec: &WeightedGammaSpec, t: f64, of: CharfunOf) -> Complex64 {
    let g = spec.gamma_shape;
    let one = Complex64::new(1.0, 0.0);
    let mut log = Complex64::new(0.0, 0.0);
    for &l in &spec.weights {
        let w = if of == CharfunOf::GammaCarre {
            l * l
        } else {
            l
        };
        log -= g * (one - Complex64::new(0.0, t * w)).ln();
    }
    if of == CharfunOf::F {
        let shift = spec.target_alpha - g * spec.weights.iter().sum::<f64>();
        log += Complex64::new(0.0, t * shift);
    }
    log.exp()
}

/// Quadratic diffusion coefficient and mean of a Pearson target, as used by
/// [`four_moment_m`] and [`decomposition_integrand`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetCoeffs {
    pub b2: f64,
    pub b1: f64,
    pub b0: f64,
    pub m: f64,
}

impl TargetCoeffs {
    pub fn gamma(alpha: f64) -> Self {
        TargetCoeffs {
            b2: 0.0,
            b1: 1.0,
            b0: 0.0,
            m: alpha,
        }
    }

    pub fn b(&self, x: f64) -> f64 {
        (self.b2 * x + self.b1) * x + self.b0
    }
}

/// The four-moment functional `M(q)` from `mu = [E F, E F^2, E F^3, E F^4]`.
pub fn four_moment_m(mu: &[f64], q: f64, t: &TargetCoeffs) -> Result<f64> {
    if mu.len() != 4 {
        return Err(Error::Invalid(format!(
            "need the first four moments, got {}",
            mu.len()
        )));
    }
    if !(q > 0.0) {
        return Err(Error::Invalid(format!(
            "chaos grade must be positive, got {q}"
        )));
    }
    if t.b2 >= 1.0 {
        return Err(Error::Invalid(format!("need b2 < 1, got {}", t.b2)));
    }
    if t.b2 == 0.5 {
        return Err(Error::Invalid("W is undefined at b2 = 1/2".into()));
    }
    let (b2, b1, b0, m) = (t.b2, t.b1, t.b0, t.m);
    let w1 = 2.0 * (b1 + m) / (2.0 * b2 - 1.0);
    let w0 = (b0 + m * (b1 + m) / (2.0 * b2 - 1.0)) / (b2 - 1.0);
    let w = Poly::new(vec![w0, w1, 1.0]);
    let dw = w.derivative();
    let w_sq = &w * &w;
    let cube = &(&dw * &dw) * &dw;
    let v = &w_sq.scale(1.0 - b2) - &(&cube * &Poly::linear(-m, 1.0)).scale(1.0 / 12.0);
    let expect = |p: &Poly| -> f64 {
        p.coeffs()
            .iter()
            .enumerate()
            .map(|(j, c)| c * if j == 0 { 1.0 } else { mu[j - 1] })
            .sum()
    };
    let lead = 2.0 * (1.0 - b2 - q / 4.0) * expect(&v);
    if q <= 2.0 * (1.0 - b2) {
        Ok(lead)
    } else {
        Ok(lead + (q - 2.0 * (1.0 - b2)) * (1.0 - b2) / 2.0 * expect(&w_sq))
    }
}

/// Exact moments `E[G^j] = alpha (alpha+1) ... (alpha+j-1)`, `j = 1..=4`, of `Gamma(alpha, 1)`.
pub fn gamma_moments(alpha: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mut acc = 1.0;
    for (j, o) in out.iter_mut().enumerate() {
        acc *= alpha + j as f64;
        *o = acc;
    }
    out
}

/// The `k = 0` eigenfunction integrand
/// `rho_1(F) + Q2/S1^2 - Q1 (2 b2 F + b1 + F - m)/(S1 b(F))`, with `S1 = Gamma(F)`.
/// Its indicator expectation `E[1_{F > x} .]` is the density of `F` at `x`.
pub fn decomposition_integrand(t: &TargetCoeffs, f: f64, s1: f64, q1: f64, q2: f64) -> f64 {
    let b = t.b(f);
    let rho1 = (f - t.m + 2.0 * t.b2 * f + t.b1) / b;
    rho1 + q2 / (s1 * s1) - q1 * (2.0 * t.b2 * f + t.b1 + f - t.m) / (s1 * b)
}

/// Raw moments `E[F^j]`, `j = 1..=4`, from the cumulants `kappa_j(X) = gamma (j-1)! sum lambda^j`.
pub fn exact_moments(spec: &WeightedGammaSpec) -> [f64; 4] {
    let pw = |j: i32| spec.gamma_shape * spec.weights.iter().map(|l| l.powi(j)).sum::<f64>();
    let (k1, k2, k3, k4) = (spec.target_alpha, pw(2), 2.0 * pw(3), 6.0 * pw(4));
    [
        k1,
        k2 + k1 * k1,
        k3 + 3.0 * k2 * k1 + k1.powi(3),
        k4 + 4.0 * k3 * k1 + 3.0 * k2 * k2 + 6.0 * k2 * k1 * k1 + k1.powi(4),
    ]
}

/// Density of `Gamma(alpha, 1)`.
pub fn gamma_density(alpha: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((alpha - 1.0) * x.ln() - x - ln_gamma(alpha)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_atom() -> WeightedGammaSpec {
        WeightedGammaSpec::new(2.0, vec![0.5, 0.5], 1.0).unwrap()
    }

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn spec_validation_and_json() {
        assert!(WeightedGammaSpec::new(1.0, vec![0.5, 1.0], 2.0).is_err());
        assert!(WeightedGammaSpec::new(1.0, vec![1.0, 0.0], 2.0).is_err());
        assert!(WeightedGammaSpec::new(0.0, vec![1.0], 2.0).is_err());
        let s: WeightedGammaSpec =
            serde_json::from_str(r#"{"gamma": 2, "alpha": 1, "weights": [0.5, 0.5]}"#).unwrap();
        assert_eq!(s, two_atom());
        let back: WeightedGammaSpec =
            serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<WeightedGammaSpec>(
            r#"{"gamma": 2, "alpha": 1, "weights": [0.1, 0.5]}"#
        )
        .is_err());
    }

    #[test]
    fn exact_gamma_has_zero_q1() {
        let b = sample(&WeightedGammaSpec::exact(3.0).unwrap(), 2000, 1).unwrap();
        assert!(b.q1.iter().all(|&q| q.abs() < 1e-12));
        assert!(b.lq1.iter().all(|&q| q == 0.0));
        assert_eq!(e_q1_sq(&WeightedGammaSpec::exact(3.0).unwrap()), 0.0);
        assert_eq!(e_lq1_sq(&WeightedGammaSpec::exact(3.0).unwrap()), 0.0);
    }

    #[test]
    fn two_atom_closed_forms() {
        let s = two_atom();
        assert!((e_q1_sq(&s) - 0.25).abs() < 1e-15);
        assert!((e_lq1_sq(&s) - 0.25).abs() < 1e-15);
        let b = sample(&s, 200_000, 3).unwrap();
        let (m, se) = mean_and_se(&b.q1);
        assert!(m.abs() < 4.0 * se, "E Q1 = {m} +- {se}");
        let (mx, sex) = mean_and_se(&b.x);
        assert!(mx.abs() < 4.0 * sex);
        let sq: Vec<f64> = b.q1.iter().map(|q| q * q).collect();
        let (m2, se2) = mean_and_se(&sq);
        assert!((m2 - 0.25).abs() < 4.0 * se2);
    }

    #[test]
    fn columns_satisfy_their_identities() {
        let s = WeightedGammaSpec::new(1.5, vec![0.9, 0.4, 0.1], 2.0).unwrap();
        let b = sample(&s, 500, 9).unwrap();
        for i in 0..b.len() {
            assert!(b.gamma_carre[i] >= 0.0);
            assert!((b.q1[i] - (b.gamma_carre[i] - b.f[i])).abs() < 1e-12);
            assert!((b.f[i] - b.x[i] - 2.0).abs() < 1e-12);
        }
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("X,F,gamma_carre,Q1,LQ1,Q2\n"));
        assert_eq!(text.lines().count(), 501);
    }

    #[test]
    fn spectral_sums_two_atom() {
        let ss = spectral_sums(&two_atom(), 2).unwrap();
        assert_eq!(ss.r, vec![1.0, 0.5, 0.125]);
        assert_eq!(ss.s, vec![1.0, 1.0, 0.5]);
        assert!(spectral_sums(&two_atom(), 3).is_err());
    }

    fn naive_distinct_sum(v: &[f64], q: usize) -> f64 {
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

    proptest! {
        #[test]
        fn recurrence_matches_enumeration(mut w in proptest::collection::vec(0.01f64..2.0, 1..=6)) {
            w.sort_by(|a, b| b.total_cmp(a));
            let s = WeightedGammaSpec::new(1.0, w.clone(), 3.0).unwrap();
            let ss = spectral_sums(&s, w.len()).unwrap();
            let sq: Vec<f64> = w.iter().map(|l| l * l).collect();
            for q in 1..=w.len() {
                let nr = naive_distinct_sum(&sq, q);
                let ns = naive_distinct_sum(&w, q);
                prop_assert!((ss.r[q] - nr).abs() <= 1e-12 * nr.abs().max(1e-300));
                prop_assert!((ss.s[q] - ns).abs() <= 1e-12 * ns.abs().max(1e-300));
            }
        }

        #[test]
        fn charfun_is_bounded(t in -50.0f64..50.0, g in 0.2f64..5.0) {
            let s = WeightedGammaSpec::new(g, vec![1.3, 0.7, 0.2], 4.0).unwrap();
            prop_assert!(charfun(&s, t, CharfunOf::F).norm() <= 1.0 + 1e-12);
            prop_assert!(charfun(&s, t, CharfunOf::GammaCarre).norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn m_product_examples() {
        let s = WeightedGammaSpec::new(1.0, vec![1.0, 0.5], 4.0).unwrap();
        assert!((m_product(&s, 2).unwrap() - 1.5).abs() < 1e-15);
        let s = WeightedGammaSpec::new(1.0, vec![1.0, 0.1], 2.0).unwrap();
        assert_eq!(m_product(&s, 1).unwrap(), 0.0);
        let s = WeightedGammaSpec::new(1.0, vec![0.3, 0.2, 0.1], 2.0).unwrap();
        assert!(m_product(&s, 3).unwrap() > 0.0);
    }

    #[test]
    fn charfun_examples() {
        let s = WeightedGammaSpec::new(1.0, vec![0.6, 0.3], 2.0).unwrap();
        assert_eq!(charfun(&s, 0.0, CharfunOf::F), Complex64::new(1.0, 0.0));
        let e = WeightedGammaSpec::exact(2.5).unwrap();
        for &t in &[-3.0, 0.4, 7.0] {
            let direct = (Complex64::new(1.0, -t)).powf(-2.5);
            assert!((charfun(&e, t, CharfunOf::F) - direct).norm() < 1e-13);
        }
    }

    #[test]
    fn charfun_matches_empirical_mean() {
        let s = two_atom();
        let b = sample(&s, 100_000, 4).unwrap();
        let t = 0.7;
        let (re, im): (Vec<f64>, Vec<f64>) =
            b.f.iter().map(|&f| ((t * f).cos(), (t * f).sin())).unzip();
        let (mr, ser) = mean_and_se(&re);
        let (mi, sei) = mean_and_se(&im);
        let c = charfun(&s, t, CharfunOf::F);
        assert!((mr - c.re).abs() < 4.0 * ser && (mi - c.im).abs() < 4.0 * sei);
    }

    #[test]
    fn exact_moments_match_sampling_and_the_gamma_case() {
        let e = exact_moments(&WeightedGammaSpec::exact(3.0).unwrap());
        let g = gamma_moments(3.0);
        for j in 0..4 {
            assert!((e[j] - g[j]).abs() < 1e-12 * g[j]);
        }
        let s = WeightedGammaSpec::new(1.5, vec![0.9, 0.4, 0.1], 2.0).unwrap();
        let b = sample(&s, 400_000, 6).unwrap();
        let e = exact_moments(&s);
        for j in 0..4 {
            let v: Vec<f64> = b.f.iter().map(|f| f.powi(j as i32 + 1)).collect();
            let (m, se) = mean_and_se(&v);
            assert!(
                (m - e[j]).abs() < 4.0 * se,
                "moment {}: {m} vs {}",
                j + 1,
                e[j]
            );
        }
        let direct = 8f64.powi(7) * (-8f64).exp() / 5040.0;
        assert!((gamma_density(8.0, 8.0) - direct).abs() < 1e-13 * direct);
        assert_eq!(gamma_density(2.0, -1.0), 0.0);
    }

    #[test]
    fn four_moment_functional_vanishes_at_the_target() {
        for &a in &[0.7, 3.0, 8.0] {
            let m = four_moment_m(&gamma_moments(a), 1.0, &TargetCoeffs::gamma(a)).unwrap();
            assert!(m.abs() < 1e-10 * (1.0 + a.powi(4)), "alpha={a}: {m}");
        }
        let normal = TargetCoeffs {
            b2: 0.0,
            b1: 0.0,
            b0: 1.0,
            m: 0.0,
        };
        assert!(
            four_moment_m(&[0.0, 1.0, 0.0, 3.0], 1.0, &normal)
                .unwrap()
                .abs()
                < 1e-12
        );
        // above q = 2(1 - b2) the E[W^2] term survives: W = x^2 - 1, E[W^2] = 2, so M(3) = 1
        assert!((four_moment_m(&[0.0, 1.0, 0.0, 3.0], 3.0, &normal).unwrap() - 1.0).abs() < 1e-12);
        assert!(four_moment_m(&[0.0, 1.0, 0.0], 1.0, &normal).is_err());
        assert!(four_moment_m(&[0.0; 4], 1.0, &TargetCoeffs { b2: 1.0, ..normal }).is_err());
    }

    #[test]
    fn negative_moment_bounds() {
        let s = WeightFamily::EqualTail.spec(8, 1.0, 8.0).unwrap();
        for form in [BoundForm::Printed, BoundForm::Rigorous] {
            let b = negative_moment_bound(&s, 4.0, SpectralChoice::R, form).unwrap();
            assert!(b.value.is_finite() && b.value > 0.0);
            assert_eq!(b.p, 4);
            assert_eq!(b.m, 1);
        }
        assert!(negative_moment_bound(&s, 9.0, SpectralChoice::R, BoundForm::Rigorous).is_err());
        assert!(negative_moment_bound(&s, 0.5, SpectralChoice::R, BoundForm::Rigorous).is_err());
        // p = floor(q/gamma - 1) + 1 must stay below alpha/gamma = 2.25
        let t = WeightedGammaSpec::new(2.0, vec![1.0; 8], 4.5).unwrap();
        assert_eq!(
            negative_moment_bound(&t, 5.5, SpectralChoice::R, BoundForm::Rigorous)
                .unwrap()
                .p,
            2
        );
        let err =
            negative_moment_bound(&t, 6.0, SpectralChoice::R, BoundForm::Rigorous).unwrap_err();
        assert!(err.to_string().contains("alpha too small"));
        // p + 1 weights are needed
        let short = WeightedGammaSpec::new(1.0, vec![2.0, 1.0], 8.0).unwrap();
        assert!(
            negative_moment_bound(&short, 4.0, SpectralChoice::R, BoundForm::Rigorous).is_err()
        );
    }

    #[test]
    fn rigorous_bound_dominates_monte_carlo() {
        let s = WeightFamily::EqualTail.spec(16, 1.0, 8.0).unwrap();
        let q = 4.0;
        let bound = negative_moment_bound(&s, q, SpectralChoice::R, BoundForm::Rigorous)
            .unwrap()
            .value;
        for seed in 0..5 {
            let b = sample(&s, 100_000, seed).unwrap();
            let v: Vec<f64> = b.gamma_carre.iter().map(|g| g.powf(-q)).collect();
            let (m, _) = mean_and_se(&v);
            assert!(m <= bound, "seed {seed}: {m} > {bound}");
        }
    }

    #[test]
    fn bound_shrinks_as_weights_spread() {
        // same sum of squares, more spread: larger R_{p+1}
        let a = WeightedGammaSpec::new(1.0, vec![2.0, 1.0, 1.0, 1.0, 0.5, 0.5], 8.0).unwrap();
        let sq: f64 = a.weights.iter().map(|l| l * l).sum();
        let b = WeightedGammaSpec::new(1.0, vec![(sq / 6.0).sqrt(); 6], 8.0).unwrap();
        let ba = negative_moment_bound(&a, 3.0, SpectralChoice::R, BoundForm::Rigorous)
            .unwrap()
            .value;
        let bb = negative_moment_bound(&b, 3.0, SpectralChoice::R, BoundForm::Rigorous)
            .unwrap()
            .value;
        assert!(bb < ba);
    }

    #[test]
    fn s_form_requires_nonnegative_shift() {
        let s = WeightFamily::Harmonic.spec(64, 1.0, 8.0).unwrap();
        assert!(negative_moment_bound(&s, 4.0, SpectralChoice::S, BoundForm::Rigorous).is_err());
        let e = WeightedGammaSpec::new(1.0, vec![1.0; 8], 8.0).unwrap();
        let b = negative_moment_bound(&e, 4.0, SpectralChoice::S, BoundForm::Rigorous).unwrap();
        assert!(b.value.is_finite() && b.value > 0.0);
    }

    #[test]
    fn weight_families_are_normalised_and_sorted() {
        for fam in [
            WeightFamily::Harmonic,
            WeightFamily::Geometric,
            WeightFamily::EqualTail,
        ] {
            for n in [4, 32] {
                let s = fam.spec(n, 1.0, 8.0).unwrap();
                assert!(s.variance_mismatch() < 1e-12, "{fam:?} n={n}");
            }
        }
    }

    #[test]
    fn harmonic_e_q1_sq_decreases() {
        let mut last = f64::INFINITY;
        for n in [4, 8, 16, 32, 64, 128, 256] {
            let v = e_q1_sq(&WeightFamily::Harmonic.spec(n, 1.0, 8.0).unwrap());
            assert!(v < last);
            last = v;
        }
        let mut last = f64::INFINITY;
        for n in [4, 8, 16, 32, 64, 128, 256] {
            let s = WeightFamily::EqualTail.spec(n, 1.0, 8.0).unwrap();
            let v = e_q1_sq(&s);
            assert!(v < last);
            assert!(e_lq1_sq(&s) <= v);
            last = v;
        }
        assert!(last < 0.01);
    }

    #[test]
    fn decomposition_reproduces_the_density() {
        // gamma = 2, alpha = 1, lambda = (1/2, 1/2): F = G/2 - 1 with G ~ Gamma(4, 1),
        // the integrand is 2 - 6/G and E[1_{F > x} .] = c^3 e^{-c}/3 with c = 2x + 2.
        let s = two_atom();
        let t = TargetCoeffs::gamma(1.0);
        let b = sample(&s, 400_000, 12).unwrap();
        let vals: Vec<f64> = (0..b.len())
            .map(|i| decomposition_integrand(&t, b.f[i], b.gamma_carre[i], b.q1[i], b.q2[i]))
            .collect();
        for i in 0..50 {
            let g = 2.0 * (b.f[i] + 1.0);
            assert!((vals[i] - (2.0 - 6.0 / g)).abs() < 1e-9 * (1.0 + 6.0 / g));
        }
        for &x in &[0.0, 1.0, 2.5] {
            let ind: Vec<f64> = (0..b.len())
                .map(|i| if b.f[i] > x { vals[i] } else { 0.0 })
                .collect();
            let (m, se) = mean_and_se(&ind);
            let c: f64 = 2.0 * x + 2.0;
            let exact = c.powi(3) * (-c).exp() / 3.0;
            assert!((m - exact).abs() < 4.0 * se, "x={x}: {m} vs {exact}");
        }
    }
}
