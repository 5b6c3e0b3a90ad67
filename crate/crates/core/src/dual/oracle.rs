//! Brute-force primal minimization on small discrete instances.
//!
//! Minimizes `Σ_j γ*(f_j) r_j` directly over densities `f`, without any use
//! of the dual. Inequality constraints are handled by enumerating which of
//! them hold with equality; each equality-constrained subproblem is solved
//! in a null-space parametrization `f = f_0 + N u` by gradient descent from
//! random starts followed by a compass search.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConstraintSet, MomentProblem};
use crate::entropy::{EntropyKind, EntropySpec};
use crate::error::{Error, Result};

const MAX_POINTS: usize = 12;
const MAX_DIM: usize = 3;
const STARTS: usize = 100;
const GD_ITERS: usize = 20_000;
const STALL_STEPS: usize = 20;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub f: Vec<f64>,
    pub value: f64,
}

/// Derivative of `γ*` in the interior of its domain.
fn gamma_star_prime(spec: &EntropySpec, t: f64) -> f64 {
    match spec.kind() {
        EntropyKind::Relative => t.ln(),
        EntropyKind::ReverseRelative => 1.0 - 1.0 / t,
        EntropyKind::FermiDirac => t.atanh(),
        EntropyKind::LpNorm => {
            let p = spec.p().unwrap_or(2.0);
            t.signum() * t.abs().powf(p - 1.0)
        }
        EntropyKind::LpEntropy => {
            let p = spec.p().unwrap_or(2.0);
            t.max(0.0).powf(p - 1.0)
        }
    }
}

/// Closed interior box used to keep iterates inside `dom γ*`.
fn domain_box(spec: &EntropySpec) -> (f64, f64) {
    let d = spec.dom_gamma_star();
    let margin = 1e-12;
    let lo = if d.lo.is_finite() { d.lo + margin } else { f64::NEG_INFINITY };
    let hi = if d.hi.is_finite() { d.hi - margin } else { f64::INFINITY };
    (lo, hi)
}

struct Subproblem<'a> {
    spec: &'a EntropySpec,
    r: &'a [f64],
    base: DVector<f64>,
    null: DMatrix<f64>,
}

impl Subproblem<'_> {
    fn point(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.null * u
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        let f = self.point(u);
        f.iter().zip(self.r).map(|(t, r)| self.spec.gamma_star(*t) * r).sum()
    }

    fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let f = self.point(u);
        let gf = DVector::from_iterator(f.len(), f.iter().zip(self.r).map(|(t, r)| gamma_star_prime(self.spec, *t) * r));
        self.null.transpose() * gf
    }

    fn descend(&self, mut u: DVector<f64>) -> DVector<f64> {
        if self.null.ncols() == 0 {
            return u;
        }
        let mut val = self.value(&u);
        let mut step = 1.0;
        let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
        let mut flat = 0;
        for _ in 0..GD_ITERS {
            let g = self.grad(&u);
            let gn2 = g.norm_squared();
            if gn2.sqrt() <= 1e-13 || !gn2.is_finite() {
                break;
            }
            // Barzilai-Borwein trial length, backtracked under Armijo
            let mut t = match &prev {
                Some((du, dg)) if du.dot(dg) > 0.0 => (du.norm_squared() / du.dot(dg)).min(1e6),
                _ => step,
            };
            let mut moved = false;
            for _ in 0..80 {
                let cand = &u - &g * t;
                let v = self.value(&cand);
                if v.is_finite() && v <= val - 1e-4 * t * gn2 {
                    let ng = self.grad(&cand);
                    prev = Some((&cand - &u, &ng - &g));
                    // a gradient at roundoff level keeps producing steps that gain nothing
                    flat = if val - v <= 4.0 * f64::EPSILON * (1.0 + val.abs()) { flat + 1 } else { 0 };
                    u = cand;
                    val = v;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved || flat >= STALL_STEPS {
                break;
            }
            step = (t * 2.0).min(1e6);
        }
        self.compass(u, val)
    }

    fn compass(&self, mut u: DVector<f64>, mut val: f64) -> DVector<f64> {
        let m = u.len();
        let mut h = 1e-3;
        while h >= 1e-7 {
            let mut improved = true;
            while improved {
                improved = false;
                for i in 0..m {
                    for sgn in [1.0, -1.0] {
                        let mut cand = u.clone();
                        cand[i] += sgn * h;
                        let v = self.value(&cand);
                        if v < val {
                            u = cand;
                            val = v;
                            improved = true;
                        }
                    }
                }
            }
            h *= 0.1;
        }
        u
    }
}

/// Point of `{A f = b} ∩ dom γ*` found by alternating projections.
fn feasible_point(a: &DMatrix<f64>, pinv: &DMatrix<f64>, b: &DVector<f64>, lo: f64, hi: f64) -> Option<DVector<f64>> {
    let n = a.ncols();
    let inner_lo = if lo.is_finite() { lo + 1e-6 } else { lo };
    let inner_hi = if hi.is_finite() { hi - 1e-6 } else { hi };
    let mut f = pinv * b;
    for _ in 0..20_000 {
        let inside = f.iter().all(|v| *v > lo && *v < hi);
        let resid = (a * &f - b).amax();
        if inside && resid <= 1e-12 * (1.0 + b.amax()) {
            return Some(f);
        }
        for j in 0..n {
            f[j] = f[j].clamp(inner_lo, inner_hi);
        }
        let corr = pinv * (a * &f - b);
        f -= corr;
    }
    None
}

/// Minimizes the primal problem directly; `Infeasible` if no density meets
/// the constraints.
pub fn brute_force_primal(prob: &MomentProblem, seed: u64) -> Result<BruteForceResult> {
    let r = prob
        .measure()
        .as_discrete()
        .ok_or_else(|| Error::InvalidInput("brute force needs a discrete measure".into()))?;
    let n = r.len();
    let k = prob.dim();
    if n > MAX_POINTS || k > MAX_DIM {
        return Err(Error::InvalidInput(format!("instance too large: {n} points, {k} constraints")));
    }
    let spec = prob.spec();
    let weights = r.weights();
    let mut a = DMatrix::zeros(k, n);
    for (j, (node, _)) in r.nodes().enumerate() {
        for (i, t) in prob.theta().iter().enumerate() {
            a[(i, j)] = t.eval(node) * weights[j];
        }
    }
    let (lo, hi) = prob.constraint().bounds();
    let (dlo, dhi) = domain_box(spec);

    // each coordinate is free, at its lower end or at its upper end
    let mut options: Vec<Vec<Option<f64>>> = Vec::new();
    for i in 0..k {
        let mut o = Vec::new();
        if lo[i] == hi[i] {
            o.push(Some(lo[i]));
        } else {
            o.push(None);
            if lo[i].is_finite() {
                o.push(Some(lo[i]));
            }
            if hi[i].is_finite() {
                o.push(Some(hi[i]));
            }
        }
        options.push(o);
    }
    let mut patterns: Vec<Vec<Option<f64>>> = vec![Vec::new()];
    for o in &options {
        patterns = patterns
            .into_iter()
            .flat_map(|p| {
                o.iter().map(move |c| {
                    let mut q = p.clone();
                    q.push(*c);
                    q
                })
            })
            .collect();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<BruteForceResult> = None;
    let full = ConstraintSet::Box { lo: lo.clone(), hi: hi.clone() };
    for pattern in patterns {
        let rows: Vec<usize> = (0..k).filter(|&i| pattern[i].is_some()).collect();
        let candidate = if rows.is_empty() {
            let f = vec![spec.m(); n];
            let value = f.iter().zip(weights).map(|(t, w)| spec.gamma_star(*t) * w).sum();
            Some(BruteForceResult { f, value })
        } else {
            solve_equality(spec, weights, &a, &rows, &pattern, dlo, dhi, &mut rng)
        };
        let Some(c) = candidate else { continue };
        let moments: Vec<f64> = (0..k).map(|i| (0..n).map(|j| a[(i, j)] * c.f[j]).sum()).collect();
        if !full.contains(&moments, FEAS_TOL * (1.0 + moments.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => c.value < b.value || (c.value == b.value && c.f < b.f),
        };
        if better && c.value.is_finite() {
            best = Some(c);
        }
    }
    best.ok_or(Error::Infeasible)
}

#[allow(clippy::too_many_arguments)]
fn solve_equality(
    spec: &EntropySpec,
    weights: &[f64],
    a: &DMatrix<f64>,
    rows: &[usize],
    pattern: &[Option<f64>],
    dlo: f64,
    dhi: f64,
    rng: &mut ChaCha8Rng,
) -> Option<BruteForceResult> {
    let n = a.ncols();
    let a_s = DMatrix::from_fn(rows.len(), n, |i, j| a[(rows[i], j)]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| pattern[i].unwrap_or(0.0)));
    let svd = a_s.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
    let pinv = svd.clone().pseudo_inverse(1e-10 * smax).ok()?;
    if (&a_s * (&pinv * &b) - &b).amax() > 1e-9 * (1.0 + b.amax()) {
        return None;
    }
    let v_t = svd.v_t?;
    // full V from the right singular vectors; complete to a basis of ℝ^n
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..v_t.nrows() {
        let s = if i < svd.singular_values.len() { svd.singular_values[i] } else { 0.0 };
        if s <= 1e-10 * smax {
            cols.push(v_t.row(i).transpose());
        }
    }
    // orthogonal complement of the row space
    let row_space: Vec<DVector<f64>> = (0..rank).map(|i| v_t.row(i).transpose()).collect();
    for e in 0..n {
        if cols.len() + rank >= n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        for b in row_space.iter().chain(cols.iter()) {
            let c = v.dot(b);
            v -= b * c;
        }
        let l = v.norm();
        if l > 1e-8 {
            cols.push(v / l);
        }
    }
    let null = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
    let base = feasible_point(&a_s, &pinv, &b, dlo, dhi)?;
    let sub = Subproblem { spec, r: weights, base, null };
    let m = sub.null.ncols();
    let mut best: Option<BruteForceResult> = None;
    for start in 0..STARTS {
        let mut u = if start == 0 {
            DVector::zeros(m)
        } else {
            DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
        };
        while !sub.value(&u).is_finite() {
            u *= 0.5;
            if u.amax() < 1e-300 {
                u.fill(0.0);
                break;
            }
        }
        let u = sub.descend(u);
        let value = sub.value(&u);
        let f: Vec<f64> = sub.point(&u).iter().copied().collect();
        let better = match &best {
            None => true,
            Some(b) => value < b.value || (value == b.value && f < b.f),
        };
        if better {
            best = Some(BruteForceResult { f, value });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{DiscreteMeasure, TestFunction};

    #[test]
    fn reference_moments_give_reference_density() {
        let r = DiscreteMeasure::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let mean = 0.5 + 0.6;
        let p = MomentProblem::new(
            r.into(),
            EntropySpec::relative(),
            vec![TestFunction::Identity],
            ConstraintSet::Equality(vec![mean]),
        )
        .unwrap();
        let b = brute_force_primal(&p, 1).unwrap();
        assert!(b.value.abs() < 1e-10);
        assert!(b.f.iter().all(|v| (v - 1.0).abs() < 1e-5), "{:?}", b.f);
    }

    #[test]
    fn outside_hull_is_infeasible() {
        let r = DiscreteMeasure::uniform(vec![0.0, 1.0, 2.0]).unwrap();
        let p = MomentProblem::new(
            r.into(),
            EntropySpec::relative(),
            vec![TestFunction::Identity],
            ConstraintSet::Equality(vec![-1.0]),
        )
        .unwrap();
        assert_eq!(brute_force_primal(&p, 1), Err(Error::Infeasible));
    }
}
