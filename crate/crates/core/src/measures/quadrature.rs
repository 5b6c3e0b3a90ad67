//! Adaptive Gauss–Kronrod (10/21) quadrature on finite intervals and on
//! half-lines.
//!
//! Half-lines are integrated over doubling segments `[a, a+h], [a+h, a+2h],
//! [a+2h, a+4h], ...`. The walk stops once a segment contributes less than
//! the tolerance and the integrand, probed pointwise at the remaining
//! segment ends, is negligible; the geometric remainder of the last two
//! segments is then added. An integrand that is still non-decreasing and
//! non-negligible at `a + 2^40 h`, or whose segments have not settled by
//! then, is reported as non-integrable.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
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

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Number of doublings probed pointwise when looking for tail growth.
const PROBE_DOUBLINGS: i32 = 40;

/// Non-improving bisections tolerated before a result is accepted as
/// roundoff-limited.
const ROUNDOFF_LIMIT: usize = 10;

/// Tolerances and limits for every integral taken against a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Maximum number of doubling segments on a half-line.
    pub max_tail_segments: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-9, max_subdivisions: 2000, max_tail_segments: 64 }
    }
}

/// Outcome of a single 21-point rule that met a non-finite value.
enum Rule {
    Value { result: f64, abserr: f64 },
    Infinite(f64),
}

fn check(v: f64, z: f64) -> Result<Option<f64>> {
    if v.is_nan() {
        return Err(Error::InvalidInput(format!("integrand is NaN at z = {z}")));
    }
    if v.is_infinite() {
        return Ok(Some(v));
    }
    Ok(None)
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Rule> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if let Some(inf) = check(fc, center)? {
        return Ok(Rule::Infinite(inf));
    }
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let (z1, z2) = (center - x, center + x);
        let (f1, f2) = (f(z1), f(z2));
        if let Some(inf) = check(f1, z1)? {
            return Ok(Rule::Infinite(inf));
        }
        if let Some(inf) = check(f2, z2)? {
            return Ok(Rule::Infinite(inf));
        }
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut abserr = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && abserr != 0.0 {
        abserr = res_asc * (200.0 * abserr / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        abserr = abserr.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Rule::Value { result, abserr })
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Adaptive integral of `f` over the finite interval `[a, b]`.
///
/// A non-finite integrand value short-circuits to that value, so `+∞`
/// propagates as an extended-real result.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64> {
    integrate_interval_with(&f, a, b, cfg.abs_tol, cfg.rel_tol, cfg.max_subdivisions)
}

fn integrate_interval_with<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_sub: usize,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (result, abserr) = match gk21(f, a, b)? {
        Rule::Infinite(v) => return Ok(v),
        Rule::Value { result, abserr } => (result, abserr),
    };
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: result, err: abserr });
    let mut total = result;
    let mut total_err = abserr;
    let mut subdivisions = 1;
    let mut roundoff = 0;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if subdivisions >= max_sub {
            return Err(Error::QuadratureDivergence { lo: a, hi: b, subdivisions });
        }
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution; accept what we have
            heap.push(worst);
            break;
        }
        let mut parts = Vec::with_capacity(2);
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            match gk21(f, lo, hi)? {
                Rule::Infinite(v) => return Ok(v),
                Rule::Value { result, abserr } => parts.push(Panel { a: lo, b: hi, value: result, err: abserr }),
            }
        }
        let (area, err) = (parts[0].value + parts[1].value, parts[0].err + parts[1].err);
        // bisection that leaves the error unchanged means the integrand is
        // noise-limited at this tolerance
        if (area - worst.value).abs() <= 1e-5 * area.abs() && err >= 0.99 * worst.err {
            roundoff += 1;
        }
        total += area - worst.value;
        total_err += err - worst.err;
        for p in parts {
            heap.push(p);
        }
        subdivisions += 1;
        if roundoff >= ROUNDOFF_LIMIT {
            break;
        }
        // recompute occasionally to avoid drift in the running sums
        if subdivisions % 64 == 0 {
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.err).sum();
        }
    }
    Ok(heap.iter().map(|p| p.value).sum())
}

/// Integral of `f` over `[a, ∞)` (`direction = +1`) or `(-∞, a]`
/// (`direction = -1`), with `scale` the length of the first segment.
pub fn integrate_half_line<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    direction: f64,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let dir = direction.signum();
    let point = |k: i32| a + dir * scale * 2f64.powi(k);

    // pointwise growth probe
    let mut probes = Vec::with_capacity(PROBE_DOUBLINGS as usize + 1);
    for k in 0..=PROBE_DOUBLINGS {
        let z = point(k);
        let v = f(z);
        if let Some(inf) = check(v, z)? {
            return Ok(inf);
        }
        probes.push((z, v.abs()));
    }
    let (z_last, last) = probes[probes.len() - 1];
    let (_, before) = probes[probes.len() - 2];
    // growth that is still negligible at the last probe is below resolution
    if last > 0.0 && last >= before && last * (z_last - a).abs() > cfg.abs_tol {
        return Err(Error::NonIntegrable(format!(
            "integrand does not decay: |f| = {last:e} at z = {:e}",
            point(PROBE_DOUBLINGS)
        )));
    }

    let seg_abs = cfg.abs_tol / 16.0;
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for j in 0..cfg.max_tail_segments {
        let (lo, hi) = if j == 0 { (a, point(0)) } else { (point(j as i32 - 1), point(j as i32)) };
        let (x0, x1) = if dir > 0.0 { (lo, hi) } else { (hi, lo) };
        let v = integrate_interval_with(&f, x0, x1, seg_abs, cfg.rel_tol, cfg.max_subdivisions)?;
        if v.is_infinite() {
            return Ok(v);
        }
        total += v;
        let tol = cfg.abs_tol.max(cfg.rel_tol * total.abs()) / 10.0;
        let ratio = match prev {
            Some(p) if p != 0.0 => v.abs() / p.abs(),
            Some(_) => 0.0,
            None => f64::INFINITY,
        };
        let hi_abs = hi.abs();
        let tail_quiet = probes
            .iter()
            .filter(|(z, _)| z.abs() > hi_abs)
            .all(|(z, fz)| fz * (z - a).abs() <= tol);
        if j >= 2 && v.abs() <= tol && ratio < 0.9 && tail_quiet {
            if ratio > 0.0 {
                total += v * ratio / (1.0 - ratio);
            }
            return Ok(total);
        }
        if j >= PROBE_DOUBLINGS as usize {
            // mass this far out is below the resolution of the probes
            return Err(Error::NonIntegrable(format!("tail has not settled by z = {hi:e}")));
        }
        prev = Some(v);
    }
    Err(Error::NonIntegrable(format!(
        "tail did not converge within {} doubling segments",
        cfg.max_tail_segments
    )))
}
