//! Young functions, Luxemburg norms and the integrability ladder that tells
//! good constraints (small Orlicz space) from critical ones.

use serde::{Deserialize, Serialize};

use super::{Measure, Node, TestFunction};
use crate::entropy::EntropySpec;
use crate::error::{Error, Result};

const BETA_LO: f64 = 1e-12;
const BETA_HI: f64 = 1e12;
const BISECTION_ITERS: usize = 200;
const BISECTION_REL_WIDTH: f64 = 1e-12;

/// Even convex function vanishing at 0.
#[derive(Debug, Clone, PartialEq)]
pub enum YoungFunction {
    /// `ρ_p(s) = |s|^p / p`
    Power(f64),
    /// `λ⋄` of a catalog entry.
    LambdaDiamond(EntropySpec),
    /// Numerical convex conjugate `ρ*(t) = sup_s { |t| s - ρ(s) }`.
    Conjugate(Box<YoungFunction>),
}

impl YoungFunction {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            YoungFunction::Power(p) => s.abs().powf(*p) / p,
            YoungFunction::LambdaDiamond(spec) => spec.lambda_diamond(s),
            YoungFunction::Conjugate(inner) => numeric_conjugate(inner, s),
        }
    }

    /// `ρ(s) r` with `r = exp(log_r)`.
    pub fn eval_weighted(&self, s: f64, log_r: f64) -> f64 {
        match self {
            YoungFunction::LambdaDiamond(spec) => spec.lambda_diamond_weighted(s, log_r),
            _ => {
                let v = self.eval(s);
                if v == 0.0 || log_r == f64::NEG_INFINITY {
                    0.0
                } else if v.is_infinite() {
                    v
                } else {
                    v * log_r.exp()
                }
            }
        }
    }

    pub fn conjugate(&self) -> YoungFunction {
        YoungFunction::Conjugate(Box::new(self.clone()))
    }
}

/// `sup_{s ≥ 0} { |t| s - ρ(s) }` by bracketing and golden-section search.
fn numeric_conjugate(rho: &YoungFunction, t: f64) -> f64 {
    let a = t.abs();
    if a == 0.0 {
        return 0.0;
    }
    let phi = |s: f64| {
        let r = rho.eval(s);
        if r.is_finite() {
            a * s - r
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut hi = 1.0;
    while phi(hi) > phi(0.5 * hi) && phi(hi).is_finite() {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut up) = (0.0, hi);
    let mut x1 = up - g * (up - lo);
    let mut x2 = lo + g * (up - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..300 {
        if up - lo <= 1e-15 * up {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (up - lo);
            f2 = phi(x2);
        } else {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - g * (up - lo);
            f1 = phi(x1);
        }
    }
    f1.max(f2).max(0.0)
}

fn modular<F: Fn(Node) -> f64>(u: &F, rho: &YoungFunction, beta: f64, r: &Measure) -> Result<f64> {
    match r.integrate_weighted(|n, lr| rho.eval_weighted(u(n) / beta, lr)) {
        Ok(v) => Ok(v),
        Err(Error::NonIntegrable(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Luxemburg norm `inf { β > 0 : ∫ ρ(u/β) dR ≤ 1 }`.
///
/// Returns `0` when `u = 0` R-a.e. and `+∞` when no `β ≤ 1e12` qualifies.
pub fn luxemburg_norm<F: Fn(Node) -> f64>(u: F, rho: &YoungFunction, r: &Measure) -> Result<f64> {
    if modular(&u, rho, BETA_LO, r)? == 0.0 {
        return Ok(0.0);
    }
    if modular(&u, rho, BETA_HI, r)? > 1.0 {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (BETA_LO, BETA_HI);
    for _ in 0..BISECTION_ITERS {
        if hi / lo - 1.0 <= BISECTION_REL_WIDTH {
            break;
        }
        let mid = (lo * hi).sqrt();
        if modular(&u, rho, mid, r)? <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `2 ‖u‖_ρ ‖v‖_{ρ*} - ∫ |u v| dR`, non-negative by Hölder's inequality.
pub fn holder_residual<U, V>(u: U, v: V, rho: &YoungFunction, r: &Measure) -> Result<f64>
where
    U: Fn(Node) -> f64,
    V: Fn(Node) -> f64,
{
    let nu = luxemburg_norm(&u, rho, r)?;
    let nv = luxemburg_norm(&v, &rho.conjugate(), r)?;
    let prod = if nu == 0.0 || nv == 0.0 { 0.0 } else { nu * nv };
    let cross = r.integrate(|n| (u(n) * v(n)).abs())?;
    Ok(2.0 * prod - cross)
}

/// Position of a test function relative to the Orlicz space of `λ⋄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrabilityClass {
    /// `∫ λ⋄(α u) dR < ∞` for every probed `α`: a good constraint.
    SmallOrlicz,
    /// Finite for small `α` only: a critical constraint.
    OrliczOnly,
    /// Divergent for every probed `α`.
    Outside,
}

/// Whether `∫ λ⋄(α u) dR` is finite, evaluated with a log-sum-exp shift so
/// that finite but huge values are not mistaken for divergence.
pub fn lambda_diamond_finite<F: Fn(Node) -> f64>(u: &F, alpha: f64, spec: &EntropySpec, r: &Measure) -> bool {
    let log_term = |n: Node, lr: f64| spec.log_lambda_diamond(alpha * u(n)) + lr;
    let shift = r
        .probe_nodes()
        .into_iter()
        .map(|(n, lr)| log_term(n, lr))
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    match r.integrate_weighted(|n, lr| {
        let v = log_term(n, lr);
        if v == f64::NEG_INFINITY {
            0.0
        } else {
            (v - shift).exp()
        }
    }) {
        Ok(v) => v.is_finite(),
        Err(_) => false,
    }
}

/// Probes `∫ λ⋄(α u) dR` on `α = 2^k, k = -10..=10`.
pub fn integrability_class(u: &TestFunction, spec: &EntropySpec, r: &Measure) -> IntegrabilityClass {
    if u.bounded_on(r) {
        return IntegrabilityClass::SmallOrlicz;
    }
    integrability_class_fn(|n| u.eval(n), spec, r)
}

/// [`integrability_class`] for an arbitrary measurable function.
pub fn integrability_class_fn<F: Fn(Node) -> f64>(u: F, spec: &EntropySpec, r: &Measure) -> IntegrabilityClass {
    if matches!(r, Measure::Discrete(_)) {
        return IntegrabilityClass::SmallOrlicz;
    }
    let finite = (-10..=10)
        .filter(|&k| lambda_diamond_finite(&u, 2f64.powi(k), spec, r))
        .count();
    match finite {
        21 => IntegrabilityClass::SmallOrlicz,
        0 => IntegrabilityClass::Outside,
        _ => IntegrabilityClass::OrliczOnly,
    }
}
