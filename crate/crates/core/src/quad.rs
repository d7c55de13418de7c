//! Adaptive Gauss-Kronrod quadrature.
//!
//! Finite intervals are bisected globally (largest error first) until the
//! summed Kronrod/Gauss discrepancy meets the tolerance. Infinite endpoints
//! are mapped onto finite ones with `x = c + s*tan(t)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_222_540,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-15,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Kronrod value, |Kronrod - Gauss|, and the Kronrod estimate of `int |f|`.
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[10] * fc;
    let mut abs = WGK[10] * fc.abs();
    let mut gauss = 0.0;
    for i in 0..10 {
        let dx = h * XGK[i];
        let (lo, hi) = (f(c - dx), f(c + dx));
        kron += WGK[i] * (lo + hi);
        abs += WGK[i] * (lo.abs() + hi.abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * (lo + hi);
        }
    }
    (kron * h, ((kron - gauss) * h).abs(), abs * h.abs())
}

// Below this multiple of eps * int |f| the error estimate is rounding noise.
const ROUNDOFF_FLOOR: f64 = 50.0 * f64::EPSILON;

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let (v, e, m) = gk21(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a,
        b,
        value: v,
        error: e,
        abs: m,
    });
    let mut total = v;
    let mut err = e;
    let mut mass = m;
    let mut n = 1;
    loop {
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if err
            <= opts
                .abs_tol
                .max(opts.rel_tol * total.abs())
                .max(ROUNDOFF_FLOOR * mass)
        {
            break;
        }
        if n >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "[{a}, {b}]: estimate {total:e} with error {err:e} after {n} intervals"
            )));
        }
        let seg = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval exhausted at machine precision; accept what we have.
            break;
        }
        let (v1, e1, m1) = gk21(f, seg.a, mid);
        let (v2, e2, m2) = gk21(f, mid, seg.b);
        total += v1 + v2 - seg.value;
        err += e1 + e2 - seg.error;
        mass += m1 + m2 - seg.abs;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
            abs: m1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
            abs: m2,
        });
        n += 1;
    }
    // Re-sum to shed the drift from incremental updates.
    let mut value = 0.0;
    let mut error = 0.0;
    for s in heap.iter() {
        value += s.value;
        error += s.error;
    }
    Ok(QuadResult {
        value,
        error,
        intervals: n,
    })
}

/// Integrates `f` over `[a, b]`, where either end may be infinite.
///
/// `scale` sets the length unit of the tan map used on infinite ends.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    scale: f64,
    opts: &QuadOptions,
) -> Result<QuadResult> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::Invalid("NaN integration limit".into()));
    }
    if a > b {
        let r = integrate(f, b, a, scale, opts)?;
        return Ok(QuadResult {
            value: -r.value,
            ..r
        });
    }
    let s = if scale > 0.0 && scale.is_finite() {
        scale
    } else {
        1.0
    };
    // Map value times Jacobian, guarded so that an infinite x gives 0 rather than NaN.
    let mapped = |c: f64, t: f64| -> f64 {
        let x = c + s * t.tan();
        if !x.is_finite() {
            return 0.0;
        }
        let fx = f(x);
        if fx == 0.0 {
            return 0.0;
        }
        let sec = 1.0 / t.cos();
        fx * s * sec * sec
    };
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adapt(&f, a, b, opts),
        (true, false) => adapt(&|t| mapped(a, t), 0.0, FRAC_PI_2, opts),
        (false, true) => adapt(&|t| mapped(b, t), -FRAC_PI_2, 0.0, opts),
        (false, false) => adapt(&|t| mapped(0.0, t), -FRAC_PI_2, FRAC_PI_2, opts),
    }
}

/// Integrates over `[a, b]` split at the interior breakpoints (kinks, jumps).
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    scale: f64,
    opts: &QuadOptions,
) -> Result<f64> {
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&c| c > lo && c < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    pts.extend(inner);
    pts.push(hi);
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += integrate(&f, w[0], w[1], scale, opts)?.value;
    }
    Ok(sign * total)
}
