//! Moment problems and their finite-dimensional dual.
//!
//! For `θ : Z → ℝ^K` and a constraint set `C`, the dual objective is
//!
//! ```text
//! D(y) = inf_{x ∈ C} ⟨y, x⟩ - ∫ γ(⟨y, θ⟩) dR
//! ```
//!
//! and a maximizer `y` yields the primal density `γ'(⟨y, θ⟩)`. Constraint
//! sets are coordinatewise intervals `[lo_k, hi_k]`, so the infimum is a sum
//! of one-dimensional terms.

mod oracle;
mod solver;

use serde::{Deserialize, Serialize};

use crate::entropy::{EntropyKind, EntropySpec};
use crate::error::{Error, Result};
use crate::measures::{integrability_class, IntegrabilityClass, Measure, Node, TestFunction};

pub use oracle::{brute_force_primal, BruteForceResult};
pub use solver::{solve_dual, solve_dual_with, SolverConfig};

/// Constraint set `C ⊂ ℝ^K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    Equality(Vec<f64>),
    /// `x_k ≥ c_k` for every `k`.
    LowerBounds(Vec<f64>),
    /// `lo_k ≤ x_k ≤ hi_k`; infinite ends are allowed.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ConstraintSet {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::Equality(x) | ConstraintSet::LowerBounds(x) => x.len(),
            ConstraintSet::Box { lo, .. } => lo.len(),
        }
    }

    /// Coordinatewise bounds `(lo, hi)`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ConstraintSet::Equality(x) => (x.clone(), x.clone()),
            ConstraintSet::LowerBounds(c) => (c.clone(), vec![f64::INFINITY; c.len()]),
            ConstraintSet::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let (lo, hi) = self.bounds();
        x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if lo.len() != hi.len() {
            return Err(Error::InvalidInput("box bounds have different lengths".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if l.is_nan() || h.is_nan() || l > h || *l == f64::INFINITY || *h == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!("bad constraint interval [{l}, {h}]")));
            }
        }
        Ok(())
    }
}

/// `(R, γ*, θ, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentProblem {
    r: Measure,
    spec: EntropySpec,
    theta: Vec<TestFunction>,
    constraint: ConstraintSet,
}

impl MomentProblem {
    /// Validates dimensions, linear independence of `θ` on the support of
    /// `R`, and that every component of `θ` lies in the Orlicz space of `λ⋄`.
    pub fn new(r: Measure, spec: EntropySpec, theta: Vec<TestFunction>, constraint: ConstraintSet) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidInput("at least one constraint function is required".into()));
        }
        if constraint.dim() != theta.len() {
            return Err(Error::InvalidInput(format!(
                "constraint has dimension {} but θ has {} components",
                constraint.dim(),
                theta.len()
            )));
        }
        constraint.validate()?;
        for t in &theta {
            t.check_against(&r)?;
        }
        let p = Self { r, spec, theta, constraint };
        let rank = p.theta_rank()?;
        if rank < p.dim() {
            return Err(Error::InvalidInput(format!(
                "θ components are linearly dependent on the support of R (rank {rank} < {})",
                p.dim()
            )));
        }
        for (k, t) in p.theta.iter().enumerate() {
            if integrability_class(t, &p.spec, &p.r) == IntegrabilityClass::Outside {
                return Err(Error::InvalidInput(format!(
                    "θ_{k} is outside the Orlicz space of the {} entropy",
                    p.spec.name()
                )));
            }
        }
        Ok(p)
    }

    /// Same problem with another constraint set.
    pub fn with_constraint(&self, constraint: ConstraintSet) -> Result<Self> {
        if constraint.dim() != self.dim() {
            return Err(Error::InvalidInput("constraint dimension mismatch".into()));
        }
        constraint.validate()?;
        Ok(Self { constraint, ..self.clone() })
    }

    pub fn measure(&self) -> &Measure {
        &self.r
    }

    pub fn spec(&self) -> &EntropySpec {
        &self.spec
    }

    pub fn theta(&self) -> &[TestFunction] {
        &self.theta
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta_at(&self, node: Node) -> Vec<f64> {
        self.theta.iter().map(|t| t.eval(node)).collect()
    }

    /// `⟨y, θ(z)⟩`
    pub fn pairing(&self, y: &[f64], node: Node) -> f64 {
        self.theta.iter().zip(y).map(|(t, yk)| if *yk == 0.0 { 0.0 } else { yk * t.eval(node) }).sum()
    }

    /// Numerical rank of the Gram matrix `∫ θ θᵀ e^{-|z|} dR` (the damping
    /// keeps the matrix finite for unbounded `θ`).
    fn theta_rank(&self) -> Result<usize> {
        let k = self.dim();
        let mut g = nalgebra::DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = self.r.integrate_weighted(|n, lr| {
                    let w = (lr - n.z.abs()).exp();
                    self.theta[i].eval(n) * self.theta[j].eval(n) * w
                })?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(g).eigenvalues;
        let max = eig.iter().copied().fold(0.0, f64::max);
        Ok(eig.iter().filter(|&&e| e > 1e-10 * max).count())
    }

    /// `∫ θ m dR`, the moment vector of the unconstrained minimizer.
    pub fn reference_moments(&self) -> Result<Vec<f64>> {
        let m = self.spec.m();
        (0..self.dim()).map(|k| self.r.integrate(|n| m * self.theta[k].eval(n))).collect()
    }

    /// `∫ γ(⟨y, θ⟩) dR`; `+∞` when the integral diverges or `⟨y, θ⟩` leaves
    /// `dom γ` on a set of positive measure.
    pub fn integral_gamma(&self, y: &[f64]) -> Result<f64> {
        let res = self.r.integrate_weighted(|n, lr| self.spec.gamma_weighted(self.pairing(y, n), lr));
        match res {
            Ok(v) if v.is_nan() => Ok(f64::INFINITY),
            Ok(v) => Ok(v),
            Err(Error::NonIntegrable(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// `inf_{x ∈ C} ⟨y, x⟩`, possibly `-∞`.
    pub fn support_term(&self, y: &[f64]) -> f64 {
        let (lo, hi) = self.constraint.bounds();
        y.iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&yk, (&l, &h))| {
                if yk > 0.0 {
                    yk * l
                } else if yk < 0.0 {
                    yk * h
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Whether `y` has the signs required by infinite constraint bounds.
    pub fn sign_feasible(&self, y: &[f64]) -> bool {
        self.support_term(y) > f64::NEG_INFINITY
    }

    /// `∫ θ γ'(⟨y, θ⟩) dR`.
    pub fn tilted_moments(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let v = self.r.integrate_weighted(|n, lr| {
                let t = self.theta[k].eval(n);
                if t == 0.0 {
                    return 0.0;
                }
                match self.spec.gamma_prime_weighted(self.pairing(y, n), lr) {
                    Ok(v) if v == 0.0 => 0.0,
                    Ok(v) => t * v,
                    Err(_) => f64::INFINITY,
                }
            })?;
            if !v.is_finite() {
                return Err(Error::DomainBoundary(v));
            }
            out.push(v);
        }
        Ok(out)
    }

    /// `∫ (u·θ)(v·θ) γ''(⟨y, θ⟩) dR` for every pair of directions in `basis`.
    pub fn curvature(&self, y: &[f64], basis: &[Vec<f64>]) -> Result<nalgebra::DMatrix<f64>> {
        let m = basis.len();
        let mut h = nalgebra::DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.r.integrate_weighted(|n, lr| {
                    let th = self.theta_at(n);
                    let a: f64 = th.iter().zip(&basis[i]).map(|(t, b)| t * b).sum();
                    let b: f64 = th.iter().zip(&basis[j]).map(|(t, b)| t * b).sum();
                    if a == 0.0 || b == 0.0 {
                        return 0.0;
                    }
                    a * b * self.spec.gamma_second_weighted(self.pairing(y, n), lr)
                })?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }

    /// Minimum-norm element of `x_C(y)`: the closest point of the
    /// superdifferential of `inf_{x∈C}⟨y, x⟩` to the tilted moments `mom`.
    pub fn minimizing_x(&self, y: &[f64], mom: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.constraint.bounds();
        (0..self.dim())
            .map(|k| {
                if y[k] > 0.0 {
                    lo[k]
                } else if y[k] < 0.0 {
                    hi[k]
                } else {
                    mom[k].clamp(lo[k], hi[k])
                }
            })
            .collect()
    }
}

/// `D(y)`; `-∞` outside the dual effective domain.
pub fn dual_objective(prob: &MomentProblem, y: &[f64]) -> Result<f64> {
    let lin = prob.support_term(y);
    if lin == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let g = prob.integral_gamma(y)?;
    if g == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lin - g)
}

/// `x_C(y) - ∫ θ γ'(⟨y, θ⟩) dR`.
pub fn dual_gradient(prob: &MomentProblem, y: &[f64]) -> Result<Vec<f64>> {
    let mom = prob.tilted_moments(y)?;
    let xc = prob.minimizing_x(y, &mom);
    Ok(xc.iter().zip(&mom).map(|(a, b)| a - b).collect())
}

/// `-∫ θ θᵀ γ''(⟨y, θ⟩) dR`.
pub fn dual_hessian(prob: &MomentProblem, y: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
    let k = prob.dim();
    let basis: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            e
        })
        .collect();
    Ok(-prob.curvature(y, &basis)?)
}

/// Outcome of the dual maximization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// The maximizer sits on the boundary of the dual effective domain.
    BoundaryOptimum,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub y: Vec<f64>,
    pub dual_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub boundary_active: bool,
    /// Coordinates pinned at zero by a sign constraint.
    pub multiplier_active: Vec<bool>,
    pub status: SolveStatus,
    /// Minimizing point of `inf_{x∈C}⟨y, x⟩` at the solution.
    pub x_c: Vec<f64>,
    /// Outward normal of the dual domain at a boundary optimum.
    pub boundary_normal: Option<Vec<f64>>,
}

/// Densities with respect to `R`.
pub trait DensityFn {
    fn eval(&self, node: Node) -> f64;

    /// `log f(z)`; `-∞` where `f` vanishes.
    fn log_eval(&self, node: Node) -> f64 {
        self.eval(node).ln()
    }
}

impl<F: Fn(Node) -> f64> DensityFn for F {
    fn eval(&self, node: Node) -> f64 {
        self(node)
    }
}

/// Density given by its logarithm, for densities that overflow in linear
/// scale.
#[derive(Debug, Clone, Copy)]
pub struct LogDensity<F>(pub F);

impl<F: Fn(Node) -> f64> DensityFn for LogDensity<F> {
    fn eval(&self, node: Node) -> f64 {
        (self.0)(node).exp()
    }

    fn log_eval(&self, node: Node) -> f64 {
        (self.0)(node)
    }
}

/// `z ↦ γ'(⟨y, θ(z)⟩)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltDensity {
    pub spec: EntropySpec,
    pub theta: Vec<TestFunction>,
    pub y: Vec<f64>,
}

impl TiltDensity {
    pub fn pairing(&self, node: Node) -> f64 {
        self.theta.iter().zip(&self.y).map(|(t, yk)| if *yk == 0.0 { 0.0 } else { yk * t.eval(node) }).sum()
    }
}

impl DensityFn for TiltDensity {
    fn eval(&self, node: Node) -> f64 {
        self.spec.gamma_prime(self.pairing(node)).unwrap_or(f64::NAN)
    }

    fn log_eval(&self, node: Node) -> f64 {
        match self.spec.kind() {
            EntropyKind::Relative => self.pairing(node),
            _ => self.eval(node).ln(),
        }
    }
}

/// Density `γ'(⟨y, θ⟩)` of the solution.
pub fn reconstruct_primal(prob: &MomentProblem, sol: &DualSolution) -> Result<TiltDensity> {
    match sol.status {
        SolveStatus::Converged | SolveStatus::BoundaryOptimum => Ok(TiltDensity {
            spec: prob.spec,
            theta: prob.theta.clone(),
            y: sol.y.clone(),
        }),
        s => Err(Error::InvalidInput(format!("no primal density for a solution with status {s:?}"))),
    }
}

/// `∫ γ*(f) dR`; `+∞` when `f` leaves `dom γ*` on a set of positive measure.
pub fn primal_entropy<D: DensityFn + ?Sized>(prob: &MomentProblem, f: &D) -> Result<f64> {
    let spec = prob.spec;
    let dom = spec.dom_gamma_star();
    let res = prob.r.integrate_weighted(|n, lr| {
        if spec.kind() == EntropyKind::Relative {
            let lf = f.log_eval(n);
            if lf.is_nan() {
                return f64::INFINITY;
            }
            if lf == f64::NEG_INFINITY {
                return lr.exp();
            }
            // f log f - f + 1, weighted
            (lf + lr).exp() * (lf - 1.0) + lr.exp()
        } else {
            let v = f.eval(n);
            if !dom.contains(v) {
                return f64::INFINITY;
            }
            let g = spec.gamma_star(v);
            if g == 0.0 {
                0.0
            } else {
                g * lr.exp()
            }
        }
    });
    match res {
        Err(Error::NonIntegrable(_)) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Residuals of the dual equality and of `I(Q) + ∫γ(⟨y,θ⟩)dR = ∫⟨y,θ⟩dQ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FenchelResiduals {
    /// `|I(f) + ⟨y, x_s⟩ - D(y)|`; `x_s = 0` unless the optimum is on the
    /// boundary of the dual domain.
    pub dual_equality_gap: f64,
    pub d3_gap: f64,
    /// Entropy of the density `f`.
    pub entropy: f64,
}

pub fn fenchel_residuals<D: DensityFn + ?Sized>(
    prob: &MomentProblem,
    sol: &DualSolution,
    f: &D,
) -> Result<FenchelResiduals> {
    let y = &sol.y;
    let entropy = primal_entropy(prob, f)?;
    let int_gamma = prob.integral_gamma(y)?;
    let relative = prob.spec.kind() == EntropyKind::Relative;
    let weighted_f = |n: Node, lr: f64| {
        if relative {
            (f.log_eval(n) + lr).exp()
        } else {
            f.eval(n) * lr.exp()
        }
    };
    let paired = prob.r.integrate_weighted(|n, lr| {
        let s = prob.pairing(y, n);
        if s == 0.0 {
            0.0
        } else {
            s * weighted_f(n, lr)
        }
    })?;
    let mut singular_price = 0.0;
    if sol.status == SolveStatus::BoundaryOptimum {
        for k in 0..prob.dim() {
            if y[k] == 0.0 {
                continue;
            }
            let xa = prob.r.integrate_weighted(|n, lr| prob.theta[k].eval(n) * weighted_f(n, lr))?;
            singular_price += y[k] * (sol.x_c[k] - xa);
        }
    }
    Ok(FenchelResiduals {
        dual_equality_gap: (entropy + singular_price - sol.dual_value).abs(),
        d3_gap: (entropy + int_gamma - paired).abs(),
        entropy,
    })
}
