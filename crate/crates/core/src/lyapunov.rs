//! Foster-Lyapunov drift condition `LV <= -c V + d` for `V(y) = sqrt(y^2 + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pearson::PearsonSpec;

/// Fraction of the asymptotic rate `-lim LV/V` taken as `c`.
pub const RATE_FRACTION: f64 = 0.8;

/// Linear drift `a(y) = a0 + a1 y` replacing the target's `(m - y)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftOverride {
    pub a0: f64,
    pub a1: f64,
}

pub fn v(y: f64) -> f64 {
    (y * y + 1.0).sqrt()
}

/// `LV = a V' + b V''/2` with `V' = y/V` and `V'' = V^{-3}`.
pub fn generator_on_v(spec: &PearsonSpec, drift: Option<DriftOverride>, y: f64) -> f64 {
    let a = match drift {
        Some(d) => d.a0 + d.a1 * y,
        None => spec.drift(y),
    };
    let vy = v(y);
    let b = if y >= spec.lo && y <= spec.hi {
        spec.b(y)
    } else {
        0.0
    };
    a * y / vy + 0.5 * b / (vy * vy * vy)
}

/// `0`, and `±10^e` for `e` on `per_decade` steps from `10^lo_exp` to `10^hi_exp`,
/// restricted to the closed support.
pub fn log_grid(spec: &PearsonSpec, lo_exp: f64, hi_exp: f64, per_decade: usize) -> Vec<f64> {
    let n = ((hi_exp - lo_exp) * per_decade as f64).round() as usize + 1;
    let mags = crate::linspace(lo_exp, hi_exp, n)
        .into_iter()
        .map(|e| 10f64.powf(e));
    let mut g: Vec<f64> = mags
        .clone()
        .map(|r| -r)
        .chain(std::iter::once(0.0))
        .chain(mags)
        .collect();
    g.retain(|&y| y >= spec.lo && y <= spec.hi);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    /// `min -LV/V` over the outermost decade of the grid.
    pub asymptotic_rate: f64,
    pub admissible: bool,
    pub c: f64,
    pub d: f64,
    /// Smallest radius beyond which `LV <= -c V` on every grid point.
    pub crossover_radius: f64,
    pub lv_at_zero: Option<f64>,
    pub grid: Vec<f64>,
    pub lv: Vec<f64>,
}

pub fn check(
    spec: &PearsonSpec,
    drift: Option<DriftOverride>,
    grid: &[f64],
) -> Result<LyapunovReport> {
    if grid.len() < 2 {
        return Err(Error::Invalid(
            "Lyapunov grid needs at least two points".into(),
        ));
    }
    let lv: Vec<f64> = grid
        .iter()
        .map(|&y| generator_on_v(spec, drift, y))
        .collect();
    let r_max = grid.iter().fold(0.0f64, |r, y| r.max(y.abs()));
    let asymptotic_rate = grid
        .iter()
        .zip(&lv)
        .filter(|(y, _)| y.abs() >= 0.1 * r_max)
        .map(|(&y, &l)| -l / v(y))
        .fold(f64::INFINITY, f64::min);
    let lv_at_zero = grid.iter().position(|&y| y == 0.0).map(|i| lv[i]);
    if !(asymptotic_rate > 0.0) {
        return Ok(LyapunovReport {
            asymptotic_rate,
            admissible: false,
            c: f64::NAN,
            d: f64::NAN,
            crossover_radius: f64::NAN,
            lv_at_zero,
            grid: grid.to_vec(),
            lv,
        });
    }
    let c = RATE_FRACTION * asymptotic_rate;
    let slack: Vec<f64> = grid.iter().zip(&lv).map(|(&y, &l)| l + c * v(y)).collect();
    let d = slack.iter().cloned().fold(0.0f64, f64::max);
    let crossover_radius = grid
        .iter()
        .zip(&slack)
        .filter(|(_, s)| **s > 0.0)
        .fold(0.0f64, |r, (y, _)| r.max(y.abs()));
    Ok(LyapunovReport {
        asymptotic_rate,
        admissible: true,
        c,
        d,
        crossover_radius,
        lv_at_zero,
        grid: grid.to_vec(),
        lv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_closed_form() {
        let s = PearsonSpec::normal();
        for &y in &[-3.0, -0.4, 0.0, 1.0, 25.0] {
            let exact = -y * y / (2.0 * v(y)) + 0.5 * (y * y + 1.0).powf(-1.5);
            assert!((generator_on_v(&s, None, y) - exact).abs() < 1e-15);
        }
        let r = check(&s, None, &log_grid(&s, -3.0, 4.0, 10)).unwrap();
        assert!(r.admissible);
        assert!((r.c - 0.4).abs() < 1e-3, "c = {}", r.c);
        assert!(r.d.is_finite() && r.d > 0.0);
        assert_eq!(r.lv_at_zero, Some(0.5));
        for (y, l) in r.grid.iter().zip(&r.lv) {
            assert!(*l <= -r.c * v(*y) + r.d + 1e-15);
        }
    }

    #[test]
    fn cir_is_admissible_and_lv0_is_half_b0() {
        let s = PearsonSpec::gamma(3.0).unwrap();
        let g = log_grid(&s, -3.0, 4.0, 10);
        assert_eq!(g[0], 0.0);
        let r = check(&s, None, &g).unwrap();
        assert!(r.admissible && r.c >= 0.2);
        assert_eq!(r.lv_at_zero, Some(0.5 * s.b(0.0)));
        let st = PearsonSpec::student(3.0).unwrap();
        let r = check(&st, None, &log_grid(&st, -3.0, 4.0, 10)).unwrap();
        assert!(r.admissible);
        assert_eq!(r.lv_at_zero, Some(0.5 * st.b(0.0)));
    }

    #[test]
    fn explosive_drift_fails() {
        let s = PearsonSpec::student(3.0).unwrap();
        let r = check(
            &s,
            Some(DriftOverride { a0: 0.0, a1: 0.1 }),
            &log_grid(&s, -3.0, 4.0, 10),
        )
        .unwrap();
        assert!(!r.admissible);
        assert!(r.asymptotic_rate < 0.0);
    }
}
