//! The functions `rho_k = N_k / b^k` that turn density derivatives into
//! indicator expectations: `p^(k)(x) = E[1_{Z > x} rho_{k+1}(Z)]`.
//!
//! Two independent constructions are kept side by side. [`RhoTable`] fills
//! the numerator coefficients level by level with a closed index recursion;
//! [`rho_via_symbolic`] differentiates the rational functions exactly.

use std::io::Write;

use crate::error::{Error, Result};
use crate::pearson::PearsonSpec;
use crate::poly::{Poly, RatB};

/// Triangular array `c[k][j]`, `1 <= k <= k_max + 1`, `0 <= j <= k`.
#[derive(Debug, Clone)]
pub struct RhoTable {
    pub spec: PearsonSpec,
    pub k_max: usize,
    coeffs: Vec<Vec<f64>>,
}

impl RhoTable {
    /// Coefficient `c^k_j`, zero out of range.
    pub fn c(&self, k: usize, j: isize) -> f64 {
        if j < 0 {
            return 0.0;
        }
        self.coeffs
            .get(k)
            .and_then(|row| row.get(j as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    /// Highest `k` for which `rho_k` is available.
    pub fn top(&self) -> usize {
        self.k_max + 1
    }

    /// `rho_k` as a rational in `b`.
    pub fn rational(&self, k: usize) -> Result<RatB> {
        self.check_k(k)?;
        Ok(RatB {
            num: Poly(self.coeffs[k].clone()),
            pow: k as u32,
        })
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.top() {
            return Err(Error::Invalid(format!(
                "rho index {k} outside 1..={}",
                self.top()
            )));
        }
        Ok(())
    }

    /// Adds `delta` to one coefficient; used to check that the validators catch it.
    pub fn perturb(&mut self, k: usize, j: usize, delta: f64) -> Result<()> {
        self.check_k(k)?;
        if j > k {
            return Err(Error::Invalid(format!(
                "coefficient index {j} exceeds level {k}"
            )));
        }
        self.coeffs[k][j] += delta;
        Ok(())
    }

    /// Rows `k,j,c` with a header, for regression snapshots.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,j,c")?;
        for k in 1..=self.top() {
            for (j, c) in self.coeffs[k].iter().enumerate() {
                writeln!(w, "{k},{j},{c:e}")?;
            }
        }
        Ok(())
    }
}

/// Fills the coefficient table from `c^1_1 = 2 b2 + 1`, `c^1_0 = b1 - m`.
pub fn build_rho_table(spec: &PearsonSpec, k_max: usize) -> RhoTable {
    let (b2, b1, b0, m) = (spec.b2, spec.b1, spec.b0, spec.m);
    let mut coeffs = vec![Vec::new(), vec![b1 - m, 2.0 * b2 + 1.0]];
    for k in 1..=k_max {
        let prev = &coeffs[k];
        let at = |j: isize| -> f64 {
            if j < 0 {
                0.0
            } else {
                prev.get(j as usize).copied().unwrap_or(0.0)
            }
        };
        let kf = k as f64;
        let next: Vec<f64> = (0..=k + 1)
            .map(|j| {
                let ji = j as isize;
                let jf = j as f64;
                at(ji) * (m + b1 * (jf - kf - 1.0))
                    - at(ji - 1) * ((2.0 * kf + 3.0 - jf) * b2 + 1.0)
                    + b0 * (jf + 1.0) * at(ji + 1)
            })
            .collect();
        coeffs.push(next);
    }
    RhoTable {
        spec: spec.clone(),
        k_max,
        coeffs,
    }
}

/// Evaluates `rho_k(x)` from the coefficient table.
pub fn rho(table: &RhoTable, k: usize, x: f64) -> Result<f64> {
    table.check_k(k)?;
    let bx = table.spec.b(x);
    if bx == 0.0 {
        return Err(Error::Pole(x));
    }
    let num = table.coeffs[k]
        .iter()
        .rev()
        .fold(0.0, |acc, &c| acc * x + c);
    Ok(num / bx.powi(k as i32))
}

/// `rho_1, ..., rho_k` by exact differentiation:
/// `rho_{k+1} = -rho_k (x - m + b')/b + rho_k'`.
pub fn symbolic_rhos(spec: &PearsonSpec, k: usize) -> Vec<RatB> {
    let b = spec.b_poly().clone();
    let shift = &Poly::linear(-spec.m, 1.0) + &b.derivative();
    let mut out = vec![RatB {
        num: shift.clone(),
        pow: 1,
    }];
    while out.len() < k {
        let r = out.last().unwrap();
        let d = r.derivative(&b);
        // -N shift / b^{p+1} shares the denominator of d.
        let num = &d.num - &(&r.num * &shift);
        out.push(RatB { num, pow: d.pow });
    }
    out
}

pub fn rho_via_symbolic(spec: &PearsonSpec, k: usize, x: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("rho index starts at 1".into()));
    }
    let bx = spec.b(x);
    if bx == 0.0 {
        return Err(Error::Pole(x));
    }
    let r = symbolic_rhos(spec, k).pop().unwrap();
    Ok(r.eval(spec.b_poly(), x))
}

/// Source of density derivatives for [`h_general`].
pub enum DensityDerivs<'a> {
    /// `f(n, x) = p^(n)(x)` for `n <= k + 1`.
    Exact(&'a dyn Fn(usize, f64) -> f64),
    /// Five-point central differences of `p`.
    FiniteDifference,
}

/// `h_k(x) = -p^(k+1)(x) / p(x)`.
pub fn h_general(
    p: &dyn Fn(f64) -> f64,
    derivs: DensityDerivs<'_>,
    k: usize,
    x: f64,
) -> Result<f64> {
    let px = p(x);
    if !(px > 1e-300) {
        return Err(Error::Domain(format!(
            "density {px:e} at x = {x} is below the floor"
        )));
    }
    let d = match derivs {
        DensityDerivs::Exact(f) => f(k + 1, x),
        DensityDerivs::FiniteDifference => {
            let h = f64::EPSILON.powf(1.0 / (k as f64 + 3.0)) * (1.0 + x.abs());
            let (f2m, f1m, f0, f1p, f2p) = (p(x - 2.0 * h), p(x - h), px, p(x + h), p(x + 2.0 * h));
            match k + 1 {
                1 => (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h),
                2 => (-f2p + 16.0 * f1p - 30.0 * f0 + 16.0 * f1m - f2m) / (12.0 * h * h),
                3 => (f2p - 2.0 * f1p + 2.0 * f1m - f2m) / (2.0 * h.powi(3)),
                4 => (f2p - 4.0 * f1p + 6.0 * f0 - 4.0 * f1m + f2m) / h.powi(4),
                n => return Err(Error::Unsupported(format!(
                    "finite differences stop at order 4, asked for {n}; supply exact derivatives"
                ))),
            }
        }
    };
    Ok(-d / px)
}

/// `|p^(k)(x) - int_x^u rho_{k+1} p|`; both sides vanish off the support.
pub fn representation_residual(table: &RhoTable, k: usize, x: f64) -> Result<f64> {
    let spec = &table.spec;
    let r = table.rational(k + 1)?;
    if !spec.in_support(x) {
        // Below the support the representation integrates over (lo, x), which is empty.
        return Ok(0.0);
    }
    let b = spec.b_poly().clone();
    let integral = spec.expect_on(|w| r.eval(&b, w), x, spec.hi, &[])?;
    Ok((spec.density_derivative(x, k)? - integral).abs())
}
