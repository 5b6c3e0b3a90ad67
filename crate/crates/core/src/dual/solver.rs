//! Projected, damped Newton ascent on the dual objective.
//!
//! Coordinates whose constraint interval has an infinite end carry a sign
//! restriction (`lo = -∞ ⇒ y ≤ 0`, `hi = +∞ ⇒ y ≥ 0`); coordinates with a
//! finite interval `lo < hi` have a kink at `y = 0`. Both are handled by
//! projecting steps onto the current orthant and freezing coordinates that
//! sit at `0` with a vanishing minimum-norm supergradient.
//!
//! Steps that leave the effective domain of `y ↦ ∫γ(⟨y,θ⟩)dR` are trimmed to
//! 99% of the distance to its boundary. When that distance collapses, the
//! solver switches to boundary mode: it estimates the outward normal of the
//! domain from coordinate ray searches, moves onto the boundary and
//! maximizes along the tangent face. A tangential stationary point whose
//! gradient points outward is a boundary optimum.

use nalgebra::{DMatrix, DVector};

use super::{dual_gradient, dual_objective, DualSolution, MomentProblem, SolveStatus};
use crate::error::{Error, Result};

/// Iterations with relative gain below `STALL_GAIN` before giving up.
/// Inward offset of a reported boundary optimum, relative to `1 + |y|`.
pub const BOUNDARY_MARGIN: f64 = 1e-10;
const STALL_ITERATIONS: usize = 25;
const STALL_GAIN: f64 = 1e-13;

/// Tuning of [`solve_dual_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Converged when `|∇D| ≤ tol (1 + |x_C|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Dual values above this are taken as an unbounded dual.
    pub infeasible_value: f64,
    /// Distance to the domain boundary that triggers boundary mode.
    pub boundary_eps: f64,
    pub armijo: f64,
    /// Fraction of the distance to the domain boundary a step may cover.
    pub trim: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, infeasible_value: 1e10, boundary_eps: 1e-9, armijo: 1e-4, trim: 0.99 }
    }
}

pub fn solve_dual(prob: &MomentProblem) -> Result<DualSolution> {
    solve_dual_with(prob, &SolverConfig::default(), None)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    y.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

struct Ctx<'a> {
    prob: &'a MomentProblem,
    cfg: &'a SolverConfig,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Ctx<'_> {
    fn fixed(&self, k: usize) -> bool {
        self.lo[k] == f64::NEG_INFINITY && self.hi[k] == f64::INFINITY
    }

    /// Keeps every coordinate on the side of zero it starts from and
    /// respects sign restrictions.
    fn project(&self, y: &[f64], cand: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|k| {
                let v = cand[k];
                if self.fixed(k) || (y[k] > 0.0 && v < 0.0) || (y[k] < 0.0 && v > 0.0) {
                    0.0
                } else if (self.hi[k] == f64::INFINITY && v < 0.0) || (self.lo[k] == f64::NEG_INFINITY && v > 0.0) {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    /// `D(y)`, or `-∞` where the tilted moments do not resolve.
    fn objective(&self, y: &[f64]) -> Result<f64> {
        let v = dual_objective(self.prob, y)?;
        if !v.is_finite() {
            return Ok(v);
        }
        match self.prob.tilted_moments(y) {
            Ok(_) => Ok(v),
            Err(Error::DomainBoundary(_)) | Err(Error::NonIntegrable(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Numerical membership in `dom Γ`: the value and the tilted moments
    /// must both resolve, so that points kept by the bracket have a gradient.
    fn gamma_finite(&self, y: &[f64]) -> Result<bool> {
        if !self.prob.integral_gamma(y)?.is_finite() {
            return Ok(false);
        }
        match self.prob.tilted_moments(y) {
            Ok(_) => Ok(true),
            Err(Error::DomainBoundary(_)) | Err(Error::NonIntegrable(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Bracket `(inside, outside)` of the boundary of `dom Γ` along `dir`;
    /// `None` when the ray stays inside up to `cap`.
    fn ray_bracket(&self, y: &[f64], dir: &[f64], iters: usize) -> Result<Option<(f64, f64)>> {
        const CAP: f64 = 1e6;
        let mut inside = 0.0;
        let mut h = 1e-12;
        loop {
            if !self.gamma_finite(&axpy(y, h, dir))? {
                break;
            }
            inside = h;
            h *= 16.0;
            if h > CAP {
                return Ok(None);
            }
        }
        let mut outside = h;
        for _ in 0..iters {
            let mid = 0.5 * (inside + outside);
            if mid <= inside || mid >= outside {
                break;
            }
            if self.gamma_finite(&axpy(y, mid, dir))? {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(Some((inside, outside)))
    }

    /// Outward normal of `dom Γ` at a point close to its boundary.
    fn boundary_normal(&self, y: &[f64]) -> Result<Option<Vec<f64>>> {
        let k = y.len();
        let mut nu = vec![0.0; k];
        for i in 0..k {
            if self.fixed(i) {
                continue;
            }
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            let plus = self.ray_bracket(y, &e, 30)?.map(|(a, b)| 0.5 * (a + b));
            e[i] = -1.0;
            let minus = self.ray_bracket(y, &e, 30)?.map(|(a, b)| 0.5 * (a + b));
            nu[i] = plus.map_or(0.0, |t| 1.0 / t) - minus.map_or(0.0, |t| 1.0 / t);
        }
        let n = norm(&nu);
        if n == 0.0 || !n.is_finite() {
            return Ok(None);
        }
        // components this small come from the resolution limit of the
        // finiteness test along directions that never leave the domain
        Ok(Some(nu.iter().map(|v| if v.abs() <= 1e-9 * n { 0.0 } else { v / n }).collect()))
    }

    /// Steps a snapped boundary point back inside by [`BOUNDARY_MARGIN`], so
    /// that integrands heavier than the moments stay resolvable there.
    fn settle(&self, y: Vec<f64>, value: f64, nu: &[f64]) -> Result<(Vec<f64>, f64)> {
        let eta = BOUNDARY_MARGIN * (1.0 + norm(&y));
        let inner = self.project(&y, &axpy(&y, -eta, nu));
        let v = self.objective(&inner)?;
        Ok(if v.is_finite() { (inner, v) } else { (y, value) })
    }

    /// Moves `y` along `nu` onto the last point of the domain.
    fn snap(&self, y: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
        match self.ray_bracket(y, nu, 60)? {
            Some((inside, _)) => Ok(self.project(y, &axpy(y, inside, nu))),
            None => Ok(y.to_vec()),
        }
    }
}

/// Orthonormal basis of the free coordinates, orthogonal to `nu` if given.
fn tangent_basis(free: &[bool], nu: Option<&[f64]>) -> Vec<Vec<f64>> {
    let k = free.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let nu_free: Option<Vec<f64>> = nu.map(|n| (0..k).map(|i| if free[i] { n[i] } else { 0.0 }).collect());
    let mut against: Vec<Vec<f64>> = Vec::new();
    if let Some(n) = &nu_free {
        let l = norm(n);
        if l > 0.0 {
            against.push(n.iter().map(|v| v / l).collect());
        }
    }
    for i in (0..k).filter(|&i| free[i]) {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        for b in against.iter().chain(basis.iter()) {
            let c = dot(&v, b);
            for j in 0..k {
                v[j] -= c * b[j];
            }
        }
        let l = norm(&v);
        if l > 1e-8 {
            basis.push(v.iter().map(|x| x / l).collect());
        }
    }
    basis
}

/// Solves `M d = g` for the positive semidefinite curvature `M`, falling back
/// to `d = g` when `M` is singular beyond `1e-12` conditioning.
fn newton_direction(m: &DMatrix<f64>, g: &[f64]) -> (Vec<f64>, bool) {
    let gv = DVector::from_column_slice(g);
    if m.iter().all(|v| v.is_finite()) {
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min > 1e-12 * max {
            if let Some(ch) = m.clone().cholesky() {
                let d = ch.solve(&gv);
                if d.iter().all(|v| v.is_finite()) {
                    return (d.iter().copied().collect(), true);
                }
            }
        }
    }
    (g.to_vec(), false)
}

/// Newton direction over the free coordinates. A coordinate at zero with a
/// two-sided bound only has the one-sided slope `g` on the side `g` points
/// to, so it is pinned when the step would leave it the other way.
fn direction(ctx: &Ctx, y: &[f64], g: &[f64], mut free: Vec<bool>, nu: Option<&[f64]>) -> Result<(Vec<f64>, bool)> {
    let k = y.len();
    loop {
        let basis = tangent_basis(&free, nu);
        let g_t: Vec<f64> = basis.iter().map(|b| dot(b, g)).collect();
        let m = ctx.prob.curvature(y, &basis).unwrap_or_else(|_| DMatrix::from_element(basis.len(), basis.len(), f64::NAN));
        let (dt, newton) = newton_direction(&m, &g_t);
        let mut d = vec![0.0; k];
        for (b, c) in basis.iter().zip(&dt) {
            for j in 0..k {
                d[j] += c * b[j];
            }
        }
        let wrong: Vec<usize> = (0..k).filter(|&i| free[i] && y[i] == 0.0 && ctx.lo[i] < ctx.hi[i] && d[i] * g[i] < 0.0).collect();
        if wrong.is_empty() {
            return Ok((d, newton));
        }
        for i in wrong {
            free[i] = false;
        }
    }
}

/// Maximizes the dual objective starting from `y0` (or the origin).
pub fn solve_dual_with(prob: &MomentProblem, cfg: &SolverConfig, y0: Option<&[f64]>) -> Result<DualSolution> {
    let (lo, hi) = prob.constraint().bounds();
    let ctx = Ctx { prob, cfg, lo, hi };
    let k = prob.dim();

    let mut y = vec![0.0; k];
    if let Some(start) = y0 {
        let s = ctx.project(start, start);
        if ctx.objective(&s)?.is_finite() {
            y = s;
        }
    }
    let mut value = ctx.objective(&y)?;
    let mut normal: Option<Vec<f64>> = None;
    let mut boundary_entries = 0;
    let mut last_grad = f64::INFINITY;
    let mut last_xc = vec![0.0; k];

    let finish = |y: Vec<f64>, value: f64, grad: f64, it: usize, status: SolveStatus, xc: Vec<f64>, nu: Option<Vec<f64>>| {
        let multiplier_active = (0..k).map(|i| ctx.lo[i] < ctx.hi[i] && y[i] == 0.0).collect();
        DualSolution {
            y,
            dual_value: value,
            grad_norm: grad,
            iterations: it,
            boundary_active: status == SolveStatus::BoundaryOptimum,
            multiplier_active,
            status,
            x_c: xc,
            boundary_normal: nu,
        }
    };

    let mut stalled = 0;
    let mut last_value = value;
    for iter in 0..cfg.max_iter {
        if value > cfg.infeasible_value {
            return Ok(finish(y, value, last_grad, iter, SolveStatus::Infeasible, last_xc, None));
        }
        // a supremum approached only at infinity shows up as a creeping value
        if iter > 0 && value - last_value <= STALL_GAIN * (1.0 + value.abs()) {
            stalled += 1;
            if stalled >= STALL_ITERATIONS {
                return Ok(finish(y, value, last_grad, iter, SolveStatus::MaxIter, last_xc, normal));
            }
        } else {
            stalled = 0;
        }
        last_value = value;
        let mom = prob.tilted_moments(&y)?;
        let xc = prob.minimizing_x(&y, &mom);
        let g: Vec<f64> = xc.iter().zip(&mom).map(|(a, b)| a - b).collect();
        let scale = 1.0 + norm(&xc);
        let free: Vec<bool> = (0..k)
            .map(|i| !(ctx.fixed(i) || (y[i] == 0.0 && ctx.lo[i] < ctx.hi[i] && g[i] == 0.0)))
            .collect();
        let g_free: Vec<f64> = (0..k).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        last_grad = norm(&g_free);
        last_xc = xc.clone();

        if let Some(nu) = normal.clone() {
            let basis = tangent_basis(&free, Some(&nu));
            let g_t: Vec<f64> = basis.iter().map(|b| dot(b, &g)).collect();
            let outward = dot(&g_free, &nu);
            if norm(&g_t) <= cfg.tol * scale && outward >= -cfg.tol * scale {
                let (y, value) = ctx.settle(y, value, &nu)?;
                return Ok(finish(y, value, norm(&g_t), iter, SolveStatus::BoundaryOptimum, xc, Some(nu)));
            }
            if outward < -cfg.tol * scale && norm(&g_t) <= 1e-3 * outward.abs() {
                // the gradient points back into the domain: resume interior steps
                normal = None;
                continue;
            }
            if basis.is_empty() {
                let (y, value) = ctx.settle(y, value, &nu)?;
                return Ok(finish(y, value, last_grad, iter, SolveStatus::BoundaryOptimum, xc, Some(nu)));
            }
            let (d, _) = direction(&ctx, &y, &g, free.clone(), Some(&nu))?;
            match line_search(&ctx, &y, value, &g, &d, true)? {
                Step::Accepted(ny, nv) => {
                    y = ctx.snap(&ny, &nu)?;
                    value = ctx.objective(&y)?.max(nv);
                }
                Step::Boundary | Step::Failed => {
                    return Ok(finish(y, value, norm(&g_t), iter, SolveStatus::MaxIter, xc, Some(nu)));
                }
            }
            continue;
        }

        if last_grad <= cfg.tol * scale {
            return Ok(finish(y, value, last_grad, iter, SolveStatus::Converged, xc, None));
        }
        let (d, newton) = direction(&ctx, &y, &g, free, None)?;
        match line_search(&ctx, &y, value, &g, &d, newton)? {
            Step::Accepted(ny, nv) => {
                y = ny;
                value = nv;
            }
            Step::Boundary => {
                boundary_entries += 1;
                match ctx.boundary_normal(&y)? {
                    Some(nu) if boundary_entries <= 20 => {
                        y = ctx.snap(&y, &nu)?;
                        value = ctx.objective(&y)?;
                        normal = Some(nu);
                    }
                    _ => return Ok(finish(y, value, last_grad, iter, SolveStatus::MaxIter, xc, None)),
                }
            }
            Step::Failed => return Ok(finish(y, value, last_grad, iter, SolveStatus::MaxIter, xc, None)),
        }
    }
    Ok(finish(y, value, last_grad, cfg.max_iter, SolveStatus::MaxIter, last_xc, normal))
}

enum Step {
    Accepted(Vec<f64>, f64),
    /// The step collapsed against the boundary of the dual domain.
    Boundary,
    Failed,
}

fn line_search(ctx: &Ctx, y: &[f64], value: f64, g: &[f64], d: &[f64], newton: bool) -> Result<Step> {
    let cfg = ctx.cfg;
    let dn = norm(d);
    if dn == 0.0 {
        return Ok(Step::Failed);
    }
    let at = |t: f64| ctx.project(y, &axpy(y, t, d));
    let mut t_max = 1.0;
    if !ctx.objective(&at(1.0))?.is_finite() {
        // bisection on finiteness of the objective
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if ctx.objective(&at(mid))?.is_finite() {
                a = mid;
            } else {
                b = mid;
            }
        }
        if a * dn <= cfg.boundary_eps {
            return Ok(Step::Boundary);
        }
        t_max = cfg.trim * a;
    }
    let armijo_ok = |cand: &[f64], v: f64| {
        let lin: f64 = g.iter().zip(cand.iter().zip(y)).map(|(gi, (c, yi))| gi * (c - yi)).sum();
        v.is_finite() && v >= value + cfg.armijo * lin && v >= value
    };
    let mut t = t_max;
    for _ in 0..80 {
        let cand = at(t);
        let v = ctx.objective(&cand)?;
        if armijo_ok(&cand, v) && cand != y {
            if !newton && t == t_max && t_max == 1.0 {
                // gradient steps may be badly scaled: expand while it pays
                let (mut best, mut best_v, mut tt) = (cand, v, t);
                for _ in 0..40 {
                    tt *= 2.0;
                    let c2 = at(tt);
                    let v2 = ctx.objective(&c2)?;
                    if !(v2.is_finite() && v2 > best_v) {
                        break;
                    }
                    best = c2;
                    best_v = v2;
                    if best_v > cfg.infeasible_value {
                        break;
                    }
                }
                return Ok(Step::Accepted(best, best_v));
            }
            return Ok(Step::Accepted(cand, v));
        }
        if newton && t == 1.0 && v.is_finite() && v >= value - 8.0 * f64::EPSILON * (1.0 + value.abs()) && cand != y {
            // near the optimum the gain drops below the roundoff of D; the
            // full Newton step still counts if it shrinks the gradient
            let moved = |g: &[f64]| g.iter().zip(d).filter(|(_, dk)| **dk != 0.0).map(|(gk, _)| gk * gk).sum::<f64>();
            if let Ok(gc) = dual_gradient(ctx.prob, &cand) {
                if moved(&gc) < moved(g) {
                    return Ok(Step::Accepted(cand, v));
                }
            }
        }
        t *= 0.5;
    }
    Ok(Step::Failed)
}
