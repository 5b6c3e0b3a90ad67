//! Relative entropy through the log-Laplace transform
//! `Λ(y) = log ∫ e^{⟨y, θ⟩} dR` and its Cramér transform `Ξ = Λ*`.
//!
//! The scalar machinery here is independent of the dual solver; the two are
//! tied together by the unit-mass augmentation `θ̃ = (1, θ)`, under which
//! `Γ*(1, x) = Ξ(x)` for a probability measure `R`.

use std::path::Path;

use serde::Serialize;

use crate::dual::{ConstraintSet, DensityFn, MomentProblem};
use crate::entropy::EntropySpec;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measures::quadrature::integrate_half_line;
use crate::measures::{Density1D, Measure, Node, TestFunction};
use crate::projection::{decompose, gamma_star_of_x};

/// Number of rungs `y_max - 2^{-k}` on the boundary ladder.
pub const LADDER_RUNGS: i32 = 30;
/// Ladder values of `|Λ'|` beyond this are taken as divergence.
pub const STEEP_THRESHOLD: f64 = 1e6;
const DOMAIN_CAP: f64 = 1e6;

fn pairing(theta: &[TestFunction], y: &[f64], n: Node) -> f64 {
    theta.iter().zip(y).map(|(t, yk)| if *yk == 0.0 { 0.0 } else { yk * t.eval(n) }).sum()
}

/// Location and height of the largest value of `⟨y, θ⟩ + log r` over the
/// probe nodes and the finite ends of the support.
fn peak(r: &Measure, theta: &[TestFunction], y: &[f64]) -> (f64, f64) {
    let mut nodes = r.probe_nodes();
    if let Measure::Density(d) = r {
        let (lo, hi) = d.support();
        for z in [lo, hi] {
            if z.is_finite() {
                nodes.push((Node::at(z), d.log_density(z)));
            }
        }
    }
    nodes
        .iter()
        .map(|(n, lr)| (n.z, pairing(theta, y, *n) + lr))
        .filter(|(_, v)| !v.is_nan())
        .fold((0.0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc })
}

/// `∫ f dR` for a density, with breakpoints accumulating geometrically at
/// `peak` so that sharply tilted integrands are resolved.
fn integrate_around<F: Fn(Node, f64) -> f64>(d: &Density1D, f: F, peak: f64) -> Result<f64> {
    let (lo, hi) = d.support();
    let w = d.scale();
    let mut pts: Vec<f64> = vec![peak.clamp(lo, hi)];
    for j in 0..=52 {
        let h = w * 2f64.powi(-j);
        pts.push((peak - h).clamp(lo, hi));
        pts.push((peak + h).clamp(lo, hi));
    }
    pts.retain(|p| p.is_finite());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = d.integrate_weighted_range(&f, lo, pts[0])?;
    for win in pts.windows(2) {
        total += d.integrate_weighted_range(&f, win[0], win[1])?;
    }
    total += d.integrate_weighted_range(&f, *pts.last().unwrap(), hi)?;
    Ok(total)
}

/// `(log ∫ e^{⟨y,θ⟩} dR, ∫ g e^{⟨y,θ⟩ - shift} dR / ∫ e^{⟨y,θ⟩ - shift} dR)`
/// for each `g` in `gs`; `None` outside the domain of `Λ`.
fn tilted(r: &Measure, theta: &[TestFunction], y: &[f64], gs: &[&dyn Fn(Node) -> f64]) -> Result<Option<(f64, Vec<f64>)>> {
    let (zp, shift) = peak(r, theta, y);
    if shift == f64::INFINITY {
        return Ok(None);
    }
    if shift == f64::NEG_INFINITY {
        return Err(Error::InvalidMeasure("reference measure has no mass at the probe nodes".into()));
    }
    let integral = |g: &dyn Fn(Node) -> f64| -> Result<f64> {
        let f = |n: Node, lr: f64| {
            let e = (pairing(theta, y, n) + lr - shift).exp();
            if e == 0.0 {
                0.0
            } else {
                g(n) * e
            }
        };
        match r {
            Measure::Discrete(_) => r.integrate_weighted(f),
            Measure::Density(d) => integrate_around(d, f, zp),
        }
    };
    let mass = match integral(&|_| 1.0) {
        Ok(v) if v.is_finite() => v,
        Ok(_) | Err(Error::NonIntegrable(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut out = Vec::with_capacity(gs.len());
    for g in gs {
        match integral(*g) {
            Ok(v) if v.is_finite() => out.push(v / mass),
            Ok(_) | Err(Error::NonIntegrable(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some((shift + mass.ln(), out)))
}

/// `Λ(y)`, `+∞` outside its domain.
pub fn log_laplace(r: &Measure, theta: &[TestFunction], y: &[f64]) -> Result<f64> {
    Ok(tilted(r, theta, y, &[])?.map_or(f64::INFINITY, |(l, _)| l))
}

/// `Λ'(y)`, the mean of `θ` under the tilted law; `+∞` components outside
/// the domain of `Λ`.
pub fn log_laplace_prime(r: &Measure, theta: &[TestFunction], y: &[f64]) -> Result<Vec<f64>> {
    let gs: Vec<Box<dyn Fn(Node) -> f64 + '_>> = theta.iter().map(|t| Box::new(move |n| t.eval(n)) as Box<dyn Fn(Node) -> f64>).collect();
    let refs: Vec<&dyn Fn(Node) -> f64> = gs.iter().map(|g| g.as_ref()).collect();
    Ok(tilted(r, theta, y, &refs)?.map_or(vec![f64::INFINITY; theta.len()], |(_, m)| m))
}

/// Scalar log-Laplace transform of the image of `R` under `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLaplace {
    r: Measure,
    theta: TestFunction,
}

impl LogLaplace {
    pub fn new(r: Measure, theta: TestFunction) -> Result<Self> {
        theta.check_against(&r)?;
        Ok(Self { r, theta })
    }

    pub fn measure(&self) -> &Measure {
        &self.r
    }

    pub fn theta(&self) -> &TestFunction {
        &self.theta
    }

    pub fn value(&self, y: f64) -> Result<f64> {
        log_laplace(&self.r, std::slice::from_ref(&self.theta), &[y])
    }

    /// `(Λ, Λ', Λ'')` at `y`; `None` outside the domain.
    pub fn derivatives(&self, y: f64) -> Result<Option<(f64, f64, f64)>> {
        let t = &self.theta;
        let g1 = |n: Node| t.eval(n);
        let g2 = |n: Node| {
            let v = t.eval(n);
            v * v
        };
        Ok(tilted(&self.r, std::slice::from_ref(t), &[y], &[&g1, &g2])?.map(|(l, m)| (l, m[0], (m[1] - m[0] * m[0]).max(0.0))))
    }

    pub fn prime(&self, y: f64) -> Result<f64> {
        Ok(self.derivatives(y)?.map_or(f64::INFINITY, |d| d.1))
    }
}

/// Behaviour of `Λ` at the end of its domain in one direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaplaceReport {
    pub direction: f64,
    /// End of `dom Λ` along `direction`, possibly infinite.
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub y_max: f64,
    pub steep: bool,
    /// `lim Λ'(y)` as `y` approaches `y_max` from inside.
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub x_star: f64,
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub lambda_at_boundary: f64,
    /// `(y_k, Λ'(y_k))` along the ladder.
    pub ladder: Vec<(f64, f64)>,
}

/// Locates the end of `dom Λ` along `direction` and the limit of `Λ'`
/// there.
pub fn steepness_probe(lap: &LogLaplace, direction: f64) -> Result<LaplaceReport> {
    let dir = direction.signum();
    if direction == 0.0 || direction.is_nan() {
        return Err(Error::InvalidInput("probe direction must be non-zero".into()));
    }
    // membership asks for Λ'' as well; the weight θ² exposes slow tail growth
    // just past the edge. Past it by less than the quadrature can resolve, the
    // integrand is noise-dominated far out and that counts as outside too
    let finite = |t: f64| -> Result<bool> {
        match lap.derivatives(dir * t) {
            Ok(v) => Ok(v.is_some_and(|d| d.0.is_finite() && d.1.is_finite() && d.2.is_finite())),
            Err(Error::QuadratureDivergence { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let mut inside = 0.0;
    let mut t = 2f64.powi(-10);
    let bounded = loop {
        if !finite(t)? {
            break true;
        }
        inside = t;
        if t >= DOMAIN_CAP {
            break false;
        }
        t *= 2.0;
    };
    if bounded {
        let mut outside = t;
        while outside - inside > 1e-13 * (1.0 + outside) {
            let mid = 0.5 * (inside + outside);
            if mid <= inside || mid >= outside {
                break;
            }
            if finite(mid)? {
                inside = mid;
            } else {
                outside = mid;
            }
        }
    }
    let y_max = if bounded { dir * inside } else { dir * f64::INFINITY };
    let rung = |k: i32| if bounded { dir * (inside - 2f64.powi(-k)) } else { dir * 2f64.powi(k) };

    let mut ladder: Vec<(f64, f64)> = Vec::new();
    let mut lambdas: Vec<f64> = Vec::new();
    let mut steep = false;
    for k in 1..=LADDER_RUNGS {
        let y = rung(k);
        let Some((l, l1, _)) = lap.derivatives(y)? else {
            steep = true;
            break;
        };
        if let Some(&(_, prev)) = ladder.last() {
            if dir * l1 < dir * prev - 1e-9 * (1.0 + prev.abs()) {
                return Err(Error::EstimateDisagreement { first: prev, second: l1 });
            }
        }
        ladder.push((y, l1));
        lambdas.push(l);
        if l1.abs() >= STEEP_THRESHOLD {
            steep = true;
            break;
        }
    }
    let n = ladder.len();
    let x_star = if steep || n < 2 {
        steep = true;
        dir * f64::INFINITY
    } else {
        let (q1, q0) = (ladder[n - 1].1, ladder[n - 2].1);
        let x = q1 + (q1 - q0);
        if x.abs() >= STEEP_THRESHOLD {
            steep = true;
            dir * f64::INFINITY
        } else {
            x
        }
    };
    let lambda_at_boundary = if bounded && !steep {
        lap.value(y_max)?
    } else {
        match lambdas.len() {
            0 | 1 => f64::INFINITY,
            m => {
                let d = lambdas[m - 1] - lambdas[m - 2];
                if d.abs() <= 1e-6 {
                    lambdas[m - 1]
                } else {
                    d.signum() * f64::INFINITY
                }
            }
        }
    };
    Ok(LaplaceReport { direction: dir, y_max, steep, x_star, lambda_at_boundary, ladder })
}

/// `Ξ(x)` with the dual point that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CramerPoint {
    pub x: f64,
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub value: f64,
    pub y: f64,
    /// The supremum sits at the end of `dom Λ` and `Ξ` continues affinely.
    pub boundary: bool,
}

/// `Ξ(x) = sup_y {y x - Λ(y)}` for a scalar `θ`.
#[derive(Debug, Clone)]
pub struct Cramer {
    lap: LogLaplace,
    mean: f64,
    up: LaplaceReport,
    down: LaplaceReport,
}

impl Cramer {
    pub fn new(r: Measure, theta: TestFunction) -> Result<Self> {
        let lap = LogLaplace::new(r, theta)?;
        let mean = lap.prime(0.0)?;
        if !mean.is_finite() {
            return Err(Error::InvalidInput("θ has no finite mean under R".into()));
        }
        let up = steepness_probe(&lap, 1.0)?;
        let down = steepness_probe(&lap, -1.0)?;
        Ok(Self { lap, mean, up, down })
    }

    pub fn laplace(&self) -> &LogLaplace {
        &self.lap
    }

    /// `Λ'(0)`, the mean of `θ` under `R`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn up(&self) -> &LaplaceReport {
        &self.up
    }

    pub fn down(&self) -> &LaplaceReport {
        &self.down
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        Ok(self.point(x)?.value)
    }

    pub fn point(&self, x: f64) -> Result<CramerPoint> {
        if x.is_nan() {
            return Err(Error::InvalidInput("x is NaN".into()));
        }
        if x == self.mean {
            return Ok(CramerPoint { x, value: 0.0, y: 0.0, boundary: false });
        }
        let rep = if x > self.mean { &self.up } else { &self.down };
        let dir = rep.direction;
        let beyond = dir * (x - rep.x_star);
        if rep.steep || beyond < 0.0 {
            return self.interior(x, rep);
        }
        if rep.y_max.is_infinite() {
            return Ok(CramerPoint { x, value: f64::INFINITY, y: rep.y_max, boundary: true });
        }
        Ok(CramerPoint { x, value: rep.y_max * x - rep.lambda_at_boundary, y: rep.y_max, boundary: true })
    }

    /// Solves `Λ'(y) = x` by Newton's method safeguarded by bisection.
    fn interior(&self, x: f64, rep: &LaplaceReport) -> Result<CramerPoint> {
        let dir = rep.direction;
        let mut far = rep.y_max;
        if far.is_infinite() {
            let mut b = 1.0;
            loop {
                let v = self.lap.prime(dir * b)?;
                if dir * (v - x) >= 0.0 || b > DOMAIN_CAP {
                    break;
                }
                b *= 2.0;
            }
            far = dir * b;
        }
        // Λ' is nondecreasing, so keep lo < hi with Λ'(lo) < x < Λ'(hi)
        let (mut lo, mut hi) = if dir > 0.0 { (0.0, far) } else { (far, 0.0) };
        let mut y = 0.0;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for _ in 0..400 {
            match self.lap.derivatives(y)? {
                None => {
                    if dir > 0.0 {
                        hi = y;
                    } else {
                        lo = y;
                    }
                    y = 0.5 * (lo + hi);
                }
                Some((l, l1, l2)) => {
                    let f = l1 - x;
                    if f.abs() < best.0 {
                        best = (f.abs(), y, l);
                    }
                    if f.abs() <= 1e-13 * (1.0 + x.abs()) {
                        break;
                    }
                    if f < 0.0 {
                        lo = y;
                    } else {
                        hi = y;
                    }
                    let newton = y - f / l2;
                    y = if l2 > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                }
            }
            if hi - lo <= 1e-15 * (1.0 + y.abs()) {
                break;
            }
        }
        let (_, y, l) = best;
        Ok(CramerPoint { x, value: y * x - l, y, boundary: false })
    }
}

/// `Γ*(1, x)` from the unit-mass augmented dual next to `Ξ(x)` from the
/// scalar transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitMassCheck {
    pub x: f64,
    pub gamma_star: f64,
    pub xi: f64,
    pub residual: f64,
}

/// Relative-entropy problem with constraint functions `(1, θ)`, the first
/// pinned to unit mass; `mean` constrains the second.
pub fn augmented_problem(r: &Measure, theta: &TestFunction, mean: ConstraintSet) -> Result<MomentProblem> {
    if mean.dim() != 1 {
        return Err(Error::InvalidInput("mean constraint must be scalar".into()));
    }
    let (lo, hi) = mean.bounds();
    let constraint = ConstraintSet::Box { lo: vec![1.0, lo[0]], hi: vec![1.0, hi[0]] };
    MomentProblem::new(r.clone(), EntropySpec::relative(), vec![TestFunction::constant(1.0), theta.clone()], constraint)
}

/// Cross-checks `Γ*(1, x) = Ξ(x)` between the dual solver and the scalar
/// Cramér transform.
pub fn unit_mass_check(cramer: &Cramer, x: f64) -> Result<UnitMassCheck> {
    let prob = augmented_problem(cramer.lap.measure(), cramer.lap.theta(), ConstraintSet::Equality(vec![x]))?;
    let gamma_star = gamma_star_of_x(&prob, &[1.0, x])?.value;
    let xi = cramer.value(x)?;
    let residual = if gamma_star == xi { 0.0 } else { (gamma_star - xi).abs() };
    Ok(UnitMassCheck { x, gamma_star, xi, residual })
}

/// `dP/dR = exp(y θ - Λ(y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialTilt {
    pub theta: TestFunction,
    pub y: f64,
    pub log_norm: f64,
}

impl DensityFn for ExponentialTilt {
    fn eval(&self, node: Node) -> f64 {
        self.log_eval(node).exp()
    }

    fn log_eval(&self, node: Node) -> f64 {
        let t = if self.y == 0.0 { 0.0 } else { self.y * self.theta.eval(node) };
        t - self.log_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// The constraint is inactive and `R` itself is the minimizer.
    ReferenceItself,
    /// The minimizer is attained.
    Projection,
    /// Minimizing sequences lose part of the moment at infinity.
    Generalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub kind: ProjectionKind,
    pub density: ExponentialTilt,
    /// Minimizer of `Ξ` over `[c, ∞)`.
    pub x_hat: f64,
    /// Moment carried by the density.
    pub x_a: f64,
    /// Moment lost at infinity.
    pub x_s: f64,
    /// `Ξ(x̂)`, including the price of the singular part.
    pub entropy_value: f64,
    /// `∫ ρ log ρ dR` of the density alone.
    pub entropy_ac: f64,
    /// `∫ ρ dR`
    pub mass: f64,
    pub dual_y: f64,
}

/// Minimizes relative entropy over laws with `∫ θ dP ≥ c`.
pub fn entropic_projection(cramer: &Cramer, c: f64) -> Result<ProjectionReport> {
    let m = cramer.mean();
    let rep = cramer.up();
    let (kind, y, x_hat, x_a) = if c <= m {
        (ProjectionKind::ReferenceItself, 0.0, m, m)
    } else if rep.steep || c <= rep.x_star {
        let pt = cramer.point(c)?;
        if !pt.value.is_finite() {
            return Err(Error::Infeasible);
        }
        (ProjectionKind::Projection, pt.y, c, c)
    } else if rep.y_max.is_infinite() {
        return Err(Error::Infeasible);
    } else {
        let x_a = cramer.laplace().prime(rep.y_max)?;
        (ProjectionKind::Generalized, rep.y_max, c, x_a)
    };
    let lap = cramer.laplace();
    let log_norm = lap.value(y)?;
    let density = ExponentialTilt { theta: lap.theta().clone(), y, log_norm };
    let r = lap.measure();
    let mass = r.integrate_weighted(|n, lr| (density.log_eval(n) + lr).exp())?;
    let entropy_ac = r.integrate_weighted(|n, lr| {
        let l = density.log_eval(n);
        let w = (l + lr).exp();
        if w == 0.0 {
            0.0
        } else {
            w * l
        }
    })?;
    let entropy_value = match kind {
        ProjectionKind::ReferenceItself => 0.0,
        ProjectionKind::Projection => y * c - log_norm,
        // Ξ continues affinely with slope y_max beyond x_a
        ProjectionKind::Generalized => y * x_a - log_norm + y * (c - x_a),
    };
    Ok(ProjectionReport { kind, density, x_hat, x_a, x_s: x_hat - x_a, entropy_value, entropy_ac, mass, dual_y: y })
}

/// The worked example `R(dz) = e^{-z}/(a₀(1 + z³)) dz` with `θ(z) = z`.
#[derive(Debug, Clone, Serialize)]
pub struct CsiszarReport {
    pub c: f64,
    /// `∫ e^{-z}/(1 + z³) dz`
    pub a0: f64,
    /// `∫ 1/(1 + z³) dz`
    pub a1: f64,
    pub probe: LaplaceReport,
    pub x_star: f64,
    pub verdict: ProjectionKind,
    pub y: f64,
    pub xi_c: f64,
    pub x_a: f64,
    pub x_s: f64,
    /// `xᵃ` and `xˢ` of the mean coordinate from the augmented dual.
    pub dual_x_a: f64,
    pub dual_x_s: f64,
    pub dominating: bool,
}

pub fn csiszar_measure() -> Result<Density1D> {
    Density1D::csiszar(1.0, 3.0, true)
}

pub fn csiszar_scenario(c: f64) -> Result<CsiszarReport> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::InvalidInput("c must be non-negative".into()));
    }
    let d = csiszar_measure()?;
    let a0 = d.kernel_mass();
    let a1 = integrate_half_line(|z| 1.0 / (1.0 + z * z * z), 0.0, 1.0, 1.0, d.quadrature())?;
    let r: Measure = d.into();
    let cramer = Cramer::new(r.clone(), TestFunction::Identity)?;
    let proj = entropic_projection(&cramer, c)?;
    let aug = augmented_problem(&r, &TestFunction::Identity, ConstraintSet::Equality(vec![proj.x_hat]))?;
    let dec = decompose(&aug, &[1.0, proj.x_hat])?;
    Ok(CsiszarReport {
        c,
        a0,
        a1,
        x_star: cramer.up().x_star,
        probe: cramer.up().clone(),
        verdict: proj.kind,
        y: proj.dual_y,
        xi_c: proj.entropy_value,
        x_a: proj.x_a,
        x_s: proj.x_s,
        dual_x_a: dec.x_a[1],
        dual_x_s: dec.x_s[1],
        dominating: dec.is_dominating,
    })
}

/// `(y, Λ(y))` rows.
pub fn lambda_curve(lap: &LogLaplace, ys: &[f64], exec: Execution) -> Result<Vec<(f64, f64)>> {
    exec.map(ys, |&y| lap.value(y).map(|v| (y, v))).into_iter().collect()
}

/// `(x, Ξ(x))` rows.
pub fn xi_curve(cramer: &Cramer, xs: &[f64], exec: Execution) -> Result<Vec<(f64, f64)>> {
    exec.map(xs, |&x| cramer.value(x).map(|v| (x, v))).into_iter().collect()
}

/// Writes a two-column curve table; values keep full precision.
pub fn write_curve_csv(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
