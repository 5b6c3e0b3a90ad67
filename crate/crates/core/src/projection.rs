//! `Γ*`, its recession function and the absolutely continuous / singular
//! split of a moment vector.
//!
//! A moment vector `x` splits as `x = xᵃ + xˢ`, where `xᵃ` is carried by the
//! density `γ'(⟨y_b, θ⟩)` built from the closure-point dual solution and `xˢ`
//! is the part lost to mass escaping to infinity. `Γ*(x) = Γ*(xᵃ) + Γ̃*(xˢ)`
//! with `Γ̃*` the recession function of `Γ*`, equal to the support function
//! of `dom Γ`.

use serde::Serialize;

use crate::dual::{solve_dual, ConstraintSet, DualSolution, MomentProblem, SolveStatus, TiltDensity};
use crate::entropy::EntropyKind;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Relative agreement required between the two recession estimates.
pub const RECESSION_CONSENSUS: f64 = 1e-3;

/// `Γ*(x)` together with the dual maximizer that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaStarReport {
    pub x: Vec<f64>,
    /// `+∞` when the equality problem is infeasible.
    pub value: f64,
    pub maximizer: DualSolution,
}

/// `Γ*(x) = sup_y {⟨y, x⟩ - ∫γ(⟨y, θ⟩) dR}`.
pub fn gamma_star_of_x(prob: &MomentProblem, x: &[f64]) -> Result<GammaStarReport> {
    let p = prob.with_constraint(ConstraintSet::Equality(x.to_vec()))?;
    let sol = solve_dual(&p)?;
    let value = if sol.status == SolveStatus::Infeasible { f64::INFINITY } else { sol.dual_value };
    Ok(GammaStarReport { x: x.to_vec(), value, maximizer: sol })
}

/// The two recession estimates and their consensus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecessionEstimate {
    /// Richardson limit of `Γ*(t ξ)/t`.
    pub quotient: f64,
    /// `sup {⟨y, ξ⟩ : y ∈ dom Γ}` from a ray search.
    pub support: f64,
    pub value: f64,
}

const QUOTIENT_LADDER: std::ops::RangeInclusive<i32> = 4..=12;
const RAY_CAP: f64 = 1e6;
const RAY_START: f64 = 1e-3;
const ANGLES: usize = 72;

/// `Γ̃*(ξ) = lim_{t→∞} Γ*(tξ)/t`, estimated twice and cross-checked.
pub fn recession_function(prob: &MomentProblem, xi: &[f64]) -> Result<RecessionEstimate> {
    recession_function_with(prob, xi, Execution::default())
}

pub fn recession_function_with(prob: &MomentProblem, xi: &[f64], exec: Execution) -> Result<RecessionEstimate> {
    if xi.len() != prob.dim() {
        return Err(Error::InvalidInput("direction dimension mismatch".into()));
    }
    if xi.iter().all(|&v| v == 0.0) {
        return Ok(RecessionEstimate { quotient: 0.0, support: 0.0, value: 0.0 });
    }
    let quotient = quotient_estimate(prob, xi, exec)?;
    let support = support_estimate(prob, xi, exec)?;
    let agree = if quotient.is_infinite() || support.is_infinite() {
        quotient == support
    } else {
        (quotient - support).abs() <= RECESSION_CONSENSUS * (1.0 + quotient.abs())
    };
    if !agree {
        return Err(Error::EstimateDisagreement { first: quotient, second: support });
    }
    Ok(RecessionEstimate { quotient, support, value: support })
}

fn quotient_estimate(prob: &MomentProblem, xi: &[f64], exec: Execution) -> Result<f64> {
    let ts: Vec<f64> = QUOTIENT_LADDER.map(|k| 2f64.powi(k)).collect();
    let vals = exec.map(&ts, |&t| {
        let x: Vec<f64> = xi.iter().map(|v| v * t).collect();
        gamma_star_of_x(prob, &x).map(|r| r.value / t)
    });
    let q = vals.into_iter().collect::<Result<Vec<f64>>>()?;
    if q.iter().any(|v| v.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    Ok(richardson(&q))
}

/// Richardson tableau for a sequence sampled at `h, h/2, h/4, …`, carried to
/// second order; returns the bottom entry.
fn richardson(q: &[f64]) -> f64 {
    let order = 2.min(q.len() - 1);
    let mut col = q.to_vec();
    for j in 1..=order {
        let f = 2f64.powi(j as i32) - 1.0;
        col = col.windows(2).map(|w| w[1] + (w[1] - w[0]) / f).collect();
    }
    *col.last().unwrap()
}

/// Membership of `y` in `dom Γ`. For relative entropy the integral is taken
/// after a log-sum-exp shift so that large but finite tilts do not overflow.
pub fn in_dual_domain(prob: &MomentProblem, y: &[f64]) -> Result<bool> {
    if prob.spec().kind() != EntropyKind::Relative {
        return Ok(prob.integral_gamma(y)?.is_finite());
    }
    let shift = prob
        .measure()
        .probe_nodes()
        .iter()
        .map(|(n, lr)| prob.pairing(y, *n) + lr)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    match prob.measure().integrate_weighted(|n, lr| (prob.pairing(y, n) + lr - shift).exp()) {
        Ok(v) => Ok(v.is_finite()),
        Err(Error::NonIntegrable(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Largest `t ≤ RAY_CAP` with `t u ∈ dom Γ`; `+∞` if the cap is reached.
fn ray_extent(prob: &MomentProblem, u: &[f64]) -> Result<f64> {
    let at = |t: f64| -> Vec<f64> { u.iter().map(|v| v * t).collect() };
    let mut inside = 0.0;
    let mut t = RAY_START;
    let outside = loop {
        if !in_dual_domain(prob, &at(t))? {
            break t;
        }
        inside = t;
        if t >= RAY_CAP {
            return Ok(f64::INFINITY);
        }
        t = (t * 4.0).min(RAY_CAP);
    };
    let (mut a, mut b) = (inside, outside);
    while b - a > 1e-11 * (1.0 + b) {
        let m = 0.5 * (a + b);
        if in_dual_domain(prob, &at(m))? {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(a)
}

fn ray_value(prob: &MomentProblem, u: &[f64], xi: &[f64]) -> Result<f64> {
    // drop rounding residue such as sin(π) so that it cannot pair with an
    // unbounded ray
    let u: Vec<f64> = u.iter().map(|&v| if v.abs() < 1e-12 { 0.0 } else { v }).collect();
    let u = u.as_slice();
    let s: f64 = u.iter().zip(xi).map(|(a, b)| a * b).sum();
    if s <= 0.0 {
        // the origin is in dom Γ, so such rays never beat 0
        return Ok(0.0);
    }
    Ok(s * ray_extent(prob, u)?)
}

fn support_estimate(prob: &MomentProblem, xi: &[f64], exec: Execution) -> Result<f64> {
    let k = prob.dim();
    let dirs: Vec<Vec<f64>> = match k {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..ANGLES)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / ANGLES as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let l = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut d = vec![xi.iter().map(|v| v / l).collect::<Vec<_>>()];
            for i in 0..k {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; k];
                    e[i] = s;
                    d.push(e);
                }
            }
            d
        }
    };
    let vals = exec.map(&dirs, |u| ray_value(prob, u, xi)).into_iter().collect::<Result<Vec<f64>>>()?;
    let (best_i, best) = vals.iter().copied().enumerate().fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if k != 2 || best.is_infinite() || best == 0.0 {
        return Ok(best);
    }
    // refine the angle of the best ray by golden-section search
    let step = std::f64::consts::TAU / ANGLES as f64;
    let centre = std::f64::consts::TAU * best_i as f64 / ANGLES as f64;
    let f = |a: f64| ray_value(prob, &[a.cos(), a.sin()], xi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (centre - step, centre + step);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..40 {
        if fc.is_infinite() || fd.is_infinite() {
            return Ok(f64::INFINITY);
        }
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(best.max(fc).max(fd))
}

/// `x = xᵃ + xˢ`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub x: Vec<f64>,
    pub x_a: Vec<f64>,
    pub x_s: Vec<f64>,
    pub gamma_star_x: f64,
    pub gamma_star_xa: f64,
    pub recession_xs: f64,
    /// Both estimates behind `recession_xs`; zero when `xˢ` is negligible.
    pub recession: RecessionEstimate,
    /// `dQ⋄/dR`
    pub density_a: TiltDensity,
    pub is_dominating: bool,
    pub solution: DualSolution,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn negligible(x_s: &[f64], x: &[f64]) -> bool {
    norm(x_s) <= 1e-6 * (1.0 + norm(x))
}

/// Splits `x` into its absolutely continuous and singular moment parts.
pub fn decompose(prob: &MomentProblem, x: &[f64]) -> Result<Decomposition> {
    let rep = gamma_star_of_x(prob, x)?;
    if rep.value.is_infinite() {
        return Err(Error::Infeasible);
    }
    let sol = rep.maximizer;
    let density_a = TiltDensity { spec: *prob.spec(), theta: prob.theta().to_vec(), y: sol.y.clone() };
    if sol.status != SolveStatus::BoundaryOptimum {
        return Ok(Decomposition {
            x: x.to_vec(),
            x_a: x.to_vec(),
            x_s: vec![0.0; x.len()],
            gamma_star_x: rep.value,
            gamma_star_xa: rep.value,
            recession_xs: 0.0,
            recession: RecessionEstimate { quotient: 0.0, support: 0.0, value: 0.0 },
            density_a,
            is_dominating: true,
            solution: sol,
        });
    }
    let x_a = prob.tilted_moments(&sol.y)?;
    let x_s: Vec<f64> = x.iter().zip(&x_a).map(|(a, b)| a - b).collect();
    let gamma_star_xa = gamma_star_of_x(prob, &x_a)?.value;
    let recession = if negligible(&x_s, x) {
        RecessionEstimate { quotient: 0.0, support: 0.0, value: 0.0 }
    } else {
        // a residue at quadrature resolution in a direction where dom Γ is
        // unbounded would otherwise price the split at +∞
        let floor = 1e-9 * (1.0 + norm(x));
        let dir: Vec<f64> = x_s.iter().map(|&v| if v.abs() <= floor { 0.0 } else { v }).collect();
        recession_function(prob, &dir)?
    };
    Ok(Decomposition {
        is_dominating: negligible(&x_s, x),
        x: x.to_vec(),
        x_a,
        x_s,
        gamma_star_x: rep.value,
        gamma_star_xa,
        recession_xs: recession.value,
        recession,
        density_a,
        solution: sol,
    })
}

/// Evidence behind a dominating-point verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominatingCertificate {
    /// `x ∈ C ∩ dom Γ*`
    pub feasible: bool,
    /// Supporting functional of `C` at `x`.
    pub y: Vec<f64>,
    /// `min ⟨y, x' - x⟩` over the sampled `x' ∈ C`; non-negative when `y`
    /// supports `C` at `x`.
    pub support_gap: f64,
    /// `|x - ∫ θ γ'(⟨y, θ⟩) dR|`
    pub representation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominatingReport {
    pub x: Vec<f64>,
    pub dominating: bool,
    pub certificate: DominatingCertificate,
}

/// Minimizer `x̄` of `Γ*` over the problem's constraint set, with the dual
/// solution that identifies it.
pub fn constrained_minimizer(prob: &MomentProblem) -> Result<(Vec<f64>, DualSolution)> {
    let sol = solve_dual(prob)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible);
    }
    Ok((sol.x_c.clone(), sol))
}

/// Whether `x` is a `Γ*`-dominating point of the problem's constraint set.
pub fn is_dominating_point(prob: &MomentProblem, x: &[f64]) -> Result<DominatingReport> {
    let tol = 1e-6 * (1.0 + norm(x));
    let in_c = prob.constraint().contains(x, tol);
    let dec = match decompose(prob, x) {
        Ok(d) => d,
        Err(Error::Infeasible) => {
            return Ok(DominatingReport {
                x: x.to_vec(),
                dominating: false,
                certificate: DominatingCertificate {
                    feasible: false,
                    y: vec![f64::NAN; x.len()],
                    support_gap: f64::NAN,
                    representation_residual: f64::INFINITY,
                },
            })
        }
        Err(e) => return Err(e),
    };
    let y = dec.solution.y.clone();
    let support_gap = sample_constraint(prob.constraint(), x)
        .iter()
        .map(|xp| y.iter().zip(xp.iter().zip(x)).map(|(yk, (a, b))| yk * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let residual = norm(&dec.x_s);
    let certificate = DominatingCertificate { feasible: in_c, y, support_gap, representation_residual: residual };
    Ok(DominatingReport {
        x: x.to_vec(),
        dominating: in_c && support_gap >= -tol && residual <= tol,
        certificate,
    })
}

/// Deterministic sample of points of `C` around `x`: the box corners (with
/// infinite sides cut at a finite distance) and a lattice between them.
fn sample_constraint(c: &ConstraintSet, x: &[f64]) -> Vec<Vec<f64>> {
    let (lo, hi) = c.bounds();
    let span: Vec<(f64, f64)> = lo
        .iter()
        .zip(&hi)
        .zip(x)
        .map(|((&l, &h), &xk)| {
            let reach = 10.0 * (1.0 + xk.abs());
            let l = if l.is_finite() { l } else { xk.min(h) - reach };
            let h = if h.is_finite() { h } else { xk.max(l) + reach };
            (l, h)
        })
        .collect();
    const LEVELS: usize = 5;
    let k = span.len();
    let total = LEVELS.pow(k.min(4) as u32);
    (0..total)
        .map(|mut idx| {
            (0..k)
                .map(|i| {
                    let (l, h) = span[i];
                    let level = if i < 4 {
                        let v = idx % LEVELS;
                        idx /= LEVELS;
                        v
                    } else {
                        0
                    };
                    l + (h - l) * level as f64 / (LEVELS - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Entropy carried by the singular component, `Γ̃*(xˢ)`.
pub fn singular_entropy_value(prob: &MomentProblem, x_s: &[f64]) -> Result<f64> {
    Ok(recession_function(prob, x_s)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::EntropySpec;
    use crate::measures::{Density1D, TestFunction};

    fn augmented(r: Density1D) -> MomentProblem {
        MomentProblem::new(
            r.into(),
            EntropySpec::relative(),
            vec![TestFunction::constant(1.0), TestFunction::Identity],
            ConstraintSet::Equality(vec![1.0, 1.0]),
        )
        .unwrap()
    }

    fn xi_closed(x: f64) -> f64 {
        x - 1.0 - x.ln()
    }

    #[test]
    fn gamma_star_at_reference_moments_is_zero() {
        let p = augmented(Density1D::exponential(1.0).unwrap());
        let m = p.reference_moments().unwrap();
        let r = gamma_star_of_x(&p, &m).unwrap();
        assert!(r.value.abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn gamma_star_matches_cramer_for_exponential() {
        let p = augmented(Density1D::exponential(1.0).unwrap());
        for x in [0.5, 2.0, 3.0] {
            let r = gamma_star_of_x(&p, &[1.0, x]).unwrap();
            assert!((r.value - xi_closed(x)).abs() < 1e-8, "{x}: {}", r.value);
        }
    }

    #[test]
    fn recession_of_exponential() {
        let p = augmented(Density1D::exponential(1.0).unwrap());
        let up = recession_function(&p, &[0.0, 1.0]).unwrap();
        assert!((up.value - 1.0).abs() < 1e-3, "{up:?}");
        let down = recession_function(&p, &[0.0, -1.0]).unwrap();
        assert_eq!(down.value, f64::INFINITY);
        assert_eq!(recession_function(&p, &[0.0, 0.0]).unwrap().value, 0.0);
    }

    #[test]
    fn csiszar_split() {
        let p = augmented(Density1D::csiszar(1.0, 3.0, true).unwrap());
        let d = decompose(&p, &[1.0, 3.0]).unwrap();
        assert!(!d.is_dominating);
        assert!((d.x_a[1] - 1.0).abs() < 1e-4, "{:?}", d.x_a);
        assert!((d.x_s[1] - 2.0).abs() < 1e-4);
        assert!((d.recession_xs - 2.0).abs() < 2e-3);
        assert!((d.gamma_star_x - d.gamma_star_xa - d.recession_xs).abs() < 1e-4);
        let again = decompose(&p, &d.x_a).unwrap();
        assert!(again.is_dominating);
    }

    #[test]
    fn dominating_verdicts() {
        let p = augmented(Density1D::csiszar(1.0, 3.0, true).unwrap());
        let below = p
            .with_constraint(ConstraintSet::Box { lo: vec![1.0, 0.9], hi: vec![1.0, f64::INFINITY] })
            .unwrap();
        let (x, sol) = constrained_minimizer(&below).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.y[1] > 0.0 && sol.y[1] < 1.0);
        assert!(is_dominating_point(&below, &x).unwrap().dominating);
        let above = p
            .with_constraint(ConstraintSet::Box { lo: vec![1.0, 2.0], hi: vec![1.0, f64::INFINITY] })
            .unwrap();
        let (x, _) = constrained_minimizer(&above).unwrap();
        let rep = is_dominating_point(&above, &x).unwrap();
        assert!(!rep.dominating);
        assert!(rep.certificate.feasible);
        assert!(rep.certificate.support_gap >= -1e-6);
    }

    #[test]
    fn singular_value_of_zero() {
        let p = augmented(Density1D::exponential(1.0).unwrap());
        assert_eq!(singular_entropy_value(&p, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn richardson_removes_first_order_error() {
        let q: Vec<f64> = (4..=12).map(|k| 1.0 + 3.0 / 2f64.powi(k) - 5.0 / 4f64.powi(k)).collect();
        assert!((richardson(&q) - 1.0).abs() < 1e-12);
    }
}
