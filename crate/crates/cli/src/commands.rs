//! The four subcommands. Each returns a short human report; every number
//! goes to the output files.

use std::fmt::Write as _;
use std::path::Path;

use entroproj::dual::{fenchel_residuals, solve_dual, DensityFn, MomentProblem, SolveStatus, TiltDensity};
use entroproj::exec::Execution;
use entroproj::gibbs::{self, RateRung, SimMode, SingularDiagnostic};
use entroproj::measures::{integrability_class, IntegrabilityClass, Measure, Node};
use entroproj::projection::decompose;
use entroproj::relative::{self, Cramer, ExponentialTilt};
use entroproj::{Error, Result};
use serde::Serialize;

use crate::config::{GibbsSpec, RunConfig, Scenario};

/// Number of rows in `density.csv` for a density reference measure.
pub const DENSITY_GRID: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Good,
    Critical,
    Invalid,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub scenario: String,
    pub verdict: Verdict,
    pub reference_mass: f64,
    /// Integrability class of each `θ_k`.
    pub classes: Vec<IntegrabilityClass>,
    pub failure: Option<String>,
}

pub fn validate(sc: &Scenario) -> ValidateReport {
    let mut rep = ValidateReport { scenario: sc.name.clone(), verdict: Verdict::Good, reference_mass: f64::NAN, classes: Vec::new(), failure: None };
    match sc.r.mass() {
        Ok(m) if m.is_finite() && m > 0.0 => rep.reference_mass = m,
        Ok(m) => {
            rep.verdict = Verdict::Invalid;
            rep.failure = Some(format!("reference measure is not bounded (mass {m})"));
            return rep;
        }
        Err(e) => {
            rep.verdict = Verdict::Invalid;
            rep.failure = Some(format!("reference measure: {e}"));
            return rep;
        }
    }
    rep.classes = sc.theta.iter().map(|t| integrability_class(t, &sc.spec, &sc.r)).collect();
    // rank and the Orlicz membership of every component
    if let Err(e) = problem(sc) {
        rep.verdict = Verdict::Invalid;
        rep.failure = Some(e.to_string());
        return rep;
    }
    if rep.classes.contains(&IntegrabilityClass::OrliczOnly) {
        rep.verdict = Verdict::Critical;
    }
    rep
}

fn problem(sc: &Scenario) -> Result<MomentProblem> {
    MomentProblem::new(sc.r.clone(), sc.spec, sc.theta.clone(), sc.constraint.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    RItself,
    Projection,
    Generalized,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub scenario: String,
    pub kind: SolutionKind,
    pub status: SolveStatus,
    pub y: Vec<f64>,
    pub iterations: usize,
    /// Value of the problem, singular part included.
    pub entropy: f64,
    /// `∫ γ*(f) dR` of the density alone.
    pub entropy_ac: f64,
    pub x_c: Vec<f64>,
    pub x_a: Vec<f64>,
    pub x_s: Vec<f64>,
    pub dual_equality_gap: f64,
    pub d3_gap: f64,
    /// `θ[0] ≡ 1` pins the total mass.
    pub augmented: bool,
}

pub struct Solved {
    pub report: SolutionReport,
    pub density: TiltDensity,
}

pub fn solve(sc: &Scenario) -> Result<Solved> {
    let prob = problem(sc)?;
    let sol = solve_dual(&prob)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible);
    }
    let density = TiltDensity { spec: *prob.spec(), theta: prob.theta().to_vec(), y: sol.y.clone() };
    let res = fenchel_residuals(&prob, &sol, &density)?;
    let dec = decompose(&prob, &sol.x_c)?;
    let null_y = sol.y.iter().enumerate().all(|(k, v)| *v == 0.0 || (sc.augmented && k == 0));
    let kind = if null_y {
        SolutionKind::RItself
    } else if dec.is_dominating {
        SolutionKind::Projection
    } else {
        SolutionKind::Generalized
    };
    Ok(Solved {
        report: SolutionReport {
            scenario: sc.name.clone(),
            kind,
            status: sol.status,
            y: sol.y.clone(),
            iterations: sol.iterations,
            entropy: sol.dual_value,
            entropy_ac: res.entropy,
            x_c: sol.x_c.clone(),
            x_a: dec.x_a,
            x_s: dec.x_s,
            dual_equality_gap: res.dual_equality_gap,
            d3_gap: res.d3_gap,
            augmented: sc.augmented,
        },
        density,
    })
}

/// Output grid for `density.csv`: the atoms of a discrete measure, or 2001
/// points on `[lo, T]` with `T` the quadrature truncation point, spaced
/// geometrically away from `lo` (linearly on the whole line).
pub fn density_grid(r: &Measure) -> Vec<f64> {
    match r {
        Measure::Discrete(d) => d.points().to_vec(),
        Measure::Density(d) => {
            let (lo, hi) = d.support();
            let t = d.truncation_point().min(hi);
            if lo.is_finite() {
                let span = t - lo;
                let first = span * 1e-8;
                let mut g = vec![lo];
                let steps = DENSITY_GRID - 2;
                g.extend((0..=steps).map(|i| lo + first * (span / first).powf(i as f64 / steps as f64)));
                *g.last_mut().unwrap() = t;
                g
            } else {
                let a = -t.abs().max(1.0);
                let b = t.abs().max(1.0);
                (0..DENSITY_GRID).map(|i| a + (b - a) * i as f64 / (DENSITY_GRID - 1) as f64).collect()
            }
        }
    }
}

pub fn cmd_solve(sc: &Scenario, out: &Path) -> Result<String> {
    let s = solve(sc)?;
    let grid = density_grid(&sc.r);
    let rows: Vec<(f64, f64)> = match &sc.r {
        Measure::Discrete(d) => d.nodes().map(|(n, _)| (n.z, s.density.eval(n))).collect(),
        Measure::Density(_) => grid.iter().map(|&z| (z, s.density.eval(Node::at(z)))).collect(),
    };
    relative::write_curve_csv(&out.join("density.csv"), ["z", "density"], &rows)?;
    write_json(&out.join("solution.json"), &s.report)?;
    let r = &s.report;
    let mut text = String::new();
    let _ = writeln!(text, "{}: {:?} ({:?}, {} iterations)", r.scenario, r.kind, r.status, r.iterations);
    let _ = writeln!(text, "  entropy {:.10}  (density part {:.10})", r.entropy, r.entropy_ac);
    let _ = writeln!(text, "  y = {:?}", r.y);
    let _ = write!(text, "  wrote solution.json, density.csv");
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct RecessionReport {
    pub mean: f64,
    pub up: relative::LaplaceReport,
    pub down: relative::LaplaceReport,
    pub steep: bool,
    #[serde(serialize_with = "entroproj::ext_real::serialize")]
    pub x_star: f64,
    /// Slope of `Ξ` beyond `x_star` when the transform is not steep.
    pub affine_tail_slope: Option<f64>,
    /// The same slope measured on the `Ξ` curve between `x_star + ½` and
    /// `x_star + 2`.
    pub measured_tail_slope: Option<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn cramer_of(sc: &Scenario) -> Result<(Cramer, f64)> {
    let (theta, c) = sc
        .scalar
        .clone()
        .ok_or_else(|| Error::InvalidInput("this command needs relative entropy with one moment constrained to [c, ∞)".into()))?;
    Ok((Cramer::new(sc.r.clone(), theta)?, c))
}

pub fn cmd_analyze(cfg: &RunConfig, sc: &Scenario, out: &Path, exec: Execution) -> Result<String> {
    let (cram, _) = cramer_of(sc)?;
    let up = cram.up().clone();
    let down = cram.down().clone();
    let mean = cram.mean();
    let ys = match cfg.analyze.y {
        Some((a, b, n)) => linspace(a, b, n),
        None => {
            let lo = if down.y_max.is_finite() { down.y_max } else { -3.0 };
            let hi = if up.y_max.is_finite() { up.y_max } else { 3.0 };
            let mut g = linspace(lo.max(-3.0), hi.min(3.0), 301);
            if !g.contains(&0.0) {
                g.push(0.0);
                g.sort_by(f64::total_cmp);
            }
            g
        }
    };
    let xs = match cfg.analyze.x {
        Some((a, b, n)) => linspace(a, b, n),
        None => {
            let spread = 4.0 * mean.abs().max(1.0);
            let lo = if down.x_star.is_finite() { down.x_star + spread / 400.0 } else { mean - spread };
            linspace(lo, mean + spread, 401)
        }
    };
    let lambda = relative::lambda_curve(cram.laplace(), &ys, exec)?;
    let xi = relative::xi_curve(&cram, &xs, exec)?;
    relative::write_curve_csv(&out.join("lambda_curve.csv"), ["y", "Lambda"], &lambda)?;
    relative::write_curve_csv(&out.join("xi_curve.csv"), ["x", "Xi"], &xi)?;
    let (affine_tail_slope, measured_tail_slope) = if up.steep {
        (None, None)
    } else {
        let (a, b) = (up.x_star + 0.5, up.x_star + 2.0);
        (Some(up.y_max), Some((cram.value(b)? - cram.value(a)?) / (b - a)))
    };
    let rep = RecessionReport { mean, steep: up.steep, x_star: up.x_star, affine_tail_slope, measured_tail_slope, up, down };
    write_json(&out.join("recession.json"), &rep)?;
    let mut text = format!("{}: mean {:.6}, dom Λ ends at y = {}", sc.name, mean, rep.up.y_max);
    if rep.steep {
        text.push_str(", steep");
    } else {
        let _ = write!(text, ", not steep: x* = {:.6}, Ξ affine beyond with slope {:.6}", rep.x_star, rep.up.y_max);
    }
    text.push_str("\n  wrote lambda_curve.csv, xi_curve.csv, recession.json");
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsReport {
    pub scenario: String,
    pub c: f64,
    #[serde(serialize_with = "entroproj::ext_real::serialize")]
    pub xi_c: f64,
    pub result: Option<gibbs::SimResult>,
    pub singular: Option<SingularDiagnostic>,
    pub rates: Option<Vec<RateRung>>,
}

pub fn cmd_gibbs(spec: &GibbsSpec, sc: &Scenario, out: &Path, exec: Execution) -> Result<String> {
    let sim = &spec.sim;
    sim.validate()?;
    let (report, target_mass);
    match sim.mode {
        SimMode::IidEmpirical => {
            let (cram, c) = cramer_of(sc)?;
            let proj = relative::entropic_projection(&cram, c)?;
            let theta = cram.laplace().theta().clone();
            let xi_c = proj.entropy_value;
            let target: &ExponentialTilt = &proj.density;
            let (result, none_main) = accepted(gibbs::run_conditional_sim(sim, &sc.r, &theta, c, Some(target as &dyn DensityFn), exec))?;
            let singular = if spec.singular_diagnostic {
                result.as_ref().map(|r| SingularDiagnostic::from_result(r, cram.up().x_star, sim.delta))
            } else {
                None
            };
            let rates = match &spec.rate_ladder {
                Some(ns) => match gibbs::rate_estimate(sim, &sc.r, &theta, c, ns, exec) {
                    Ok(r) => Some(r),
                    Err(Error::NoAcceptedTrials) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            if none_main && rates.as_ref().is_none_or(|r| r.iter().all(|g| g.omitted)) {
                return Err(Error::NoAcceptedTrials);
            }
            target_mass = result.as_ref().and_then(|r| r.target_hist.clone());
            report = GibbsReport { scenario: sc.name.clone(), c, xi_c, result, singular, rates };
        }
        SimMode::WeightedEmpirical => {
            if sc.theta.len() != 1 {
                return Err(Error::InvalidInput("weighted mode needs a scalar θ".into()));
            }
            let s = solve(sc)?;
            let c = sc.constraint.bounds().0[0];
            let (result, _) = accepted(gibbs::run_conditional_sim(sim, &sc.r, &sc.theta[0], c, Some(&s.density as &dyn DensityFn), exec))?;
            let result = result.ok_or(Error::NoAcceptedTrials)?;
            target_mass = result.target_hist.clone();
            report = GibbsReport { scenario: sc.name.clone(), c, xi_c: s.report.entropy, result: Some(result), singular: None, rates: None };
        }
    }
    write_json(&out.join("gibbs.json"), &report)?;
    let mut text = format!("{}: c = {}, Ξ(c) = {:.6}", report.scenario, report.c, report.xi_c);
    if let Some(r) = &report.result {
        gibbs::write_hist_csv(&out.join("conditioned_hist.csv"), &r.bins, &r.conditioned_hist, target_mass.as_deref())?;
        gibbs::write_hist_csv(&out.join("bulk_hist.csv"), &r.bins, &r.bulk_hist, target_mass.as_deref())?;
        let _ = write!(text, "\n  accepted {}/{} trials, ESS {:.1}", r.accepted, r.trials, r.ess);
        if let Some(d) = r.distance_to_target {
            let _ = write!(text, ", binned TV to target {d:.4}");
        }
    } else {
        text.push_str("\n  no trial accepted at the main size");
    }
    if let Some(s) = &report.singular {
        let _ = write!(text, "\n  top-{} share {:.4}, bulk mean {:.4}", s.top_k, s.topk_ratio_mean.mean, s.bulk_mean.mean);
    }
    if let Some(rates) = &report.rates {
        for g in rates {
            match &g.rate {
                Some(e) => {
                    let _ = write!(text, "\n  n = {:>5}: -(1/n) log p = {:.5} ± {:.5}", g.n, e.mean, e.stderr);
                }
                None => {
                    let _ = write!(text, "\n  n = {:>5}: no accepted trial", g.n);
                }
            }
        }
    }
    text.push_str("\n  wrote gibbs.json, conditioned_hist.csv, bulk_hist.csv");
    Ok(text)
}

/// Turns `NoAcceptedTrials` into a missing result.
fn accepted(r: Result<gibbs::SimResult>) -> Result<(Option<gibbs::SimResult>, bool)> {
    match r {
        Ok(v) => Ok((Some(v), false)),
        Err(Error::NoAcceptedTrials) => Ok((None, true)),
        Err(e) => Err(e),
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}
