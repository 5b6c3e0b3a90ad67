use entroproj::dual::{
    dual_objective, primal_entropy, reconstruct_primal, solve_dual, ConstraintSet, DensityFn, MomentProblem, SolveStatus,
};
use entroproj::exec::Execution;
use entroproj::gibbs::{bin_target, run_conditional_sim, total_variation, DeltaVariant, Proposal, SimConfig, SimMode, WeightLaw};
use entroproj::measures::{luxemburg_norm, Density1D, DiscreteMeasure, Measure, Node, TestFunction, YoungFunction};
use entroproj::projection::{decompose, recession_function};
use entroproj::relative::{augmented_problem, csiszar_measure, entropic_projection, Cramer, ProjectionKind};
use entroproj::EntropySpec;
use proptest::prelude::*;

fn catalog() -> Vec<EntropySpec> {
    vec![
        EntropySpec::relative(),
        EntropySpec::reverse_relative(),
        EntropySpec::fermi_dirac(),
        EntropySpec::lp_norm(1.5).unwrap(),
        EntropySpec::lp_norm(3.0).unwrap(),
        EntropySpec::lp_entropy(2.0).unwrap(),
        EntropySpec::lp_entropy(4.0).unwrap(),
    ]
}

fn entry() -> impl Strategy<Value = EntropySpec> {
    (0..catalog().len()).prop_map(|i| catalog()[i])
}

/// Maps `u ∈ (0, 1)` into the interior of an interval, clipping infinite ends.
fn inside(lo: f64, hi: f64, u: f64) -> f64 {
    let lo = if lo.is_finite() { lo } else { -8.0 };
    let hi = if hi.is_finite() { hi } else { 8.0 };
    lo + (hi - lo) * (0.02 + 0.96 * u)
}

proptest! {
    #[test]
    fn young_fenchel_inequality(spec in entry(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let (dg, dgs) = (spec.dom_gamma(), spec.dom_gamma_star());
        let s = inside(dg.lo, dg.hi.min(4.0), u);
        let t = inside(dgs.lo, dgs.hi, v);
        prop_assert!(s * t <= spec.gamma(s) + spec.gamma_star(t) + 1e-12 * (1.0 + (s * t).abs()));
    }

    #[test]
    fn conjugate_at_the_derivative(spec in entry(), u in 0.0..1.0f64) {
        let dg = spec.dom_gamma();
        let s = inside(dg.lo, dg.hi.min(3.0), u);
        let t = spec.gamma_prime(s).unwrap();
        let lhs = spec.gamma_star(t);
        let rhs = s * t - spec.gamma(s);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{} at s = {s}: {lhs} vs {rhs}", spec.name());
    }

    #[test]
    fn lambda_diamond_is_even_and_dominates(spec in entry(), s in -5.0..5.0f64) {
        let ld = spec.lambda_diamond(s);
        prop_assert_eq!(ld, spec.lambda_diamond(-s));
        let l = spec.lambda(s);
        prop_assert!(l >= -1e-12);
        prop_assert!(ld >= l || (ld.is_infinite() && l.is_infinite()));
    }

    #[test]
    fn gamma_star_is_nonnegative(spec in entry(), v in 0.0..1.0f64) {
        let d = spec.dom_gamma_star();
        prop_assert!(spec.gamma_star(inside(d.lo, d.hi, v)) >= 0.0);
        prop_assert_eq!(spec.gamma_star(spec.m()), 0.0);
    }
}

fn grid_measure(weights: &[f64]) -> Measure {
    DiscreteMeasure::new((0..weights.len()).map(|i| i as f64).collect(), weights.to_vec()).unwrap().into()
}

fn values(v: &[f64]) -> impl Fn(Node) -> f64 + '_ {
    move |n: Node| v[n.index.unwrap()]
}

proptest! {
    #[test]
    fn luxemburg_homogeneity(
        w in prop::collection::vec(0.05..1.0f64, 10),
        u in prop::collection::vec(-3.0..3.0f64, 10),
        p in 1.2..4.0f64,
    ) {
        let r = grid_measure(&w);
        let rho = YoungFunction::Power(p);
        let base = luxemburg_norm(values(&u), &rho, &r).unwrap();
        for alpha in [0.5, 2.0, -3.0] {
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            let n = luxemburg_norm(values(&scaled), &rho, &r).unwrap();
            prop_assert!((n - alpha.abs() * base).abs() <= 1e-8 * (1.0 + n), "{n} vs {}", alpha.abs() * base);
        }
    }

    #[test]
    fn luxemburg_monotone(
        w in prop::collection::vec(0.05..1.0f64, 10),
        u in prop::collection::vec(-3.0..3.0f64, 10),
        grow in prop::collection::vec(1.0..2.0f64, 10),
    ) {
        let r = grid_measure(&w);
        let v: Vec<f64> = u.iter().zip(&grow).map(|(a, g)| a * g).collect();
        let rho = YoungFunction::LambdaDiamond(EntropySpec::relative());
        let nu = luxemburg_norm(values(&u), &rho, &r).unwrap();
        let nv = luxemburg_norm(values(&v), &rho, &r).unwrap();
        prop_assert!(nu <= nv * (1.0 + 1e-12));
    }
}

fn catalog_measures() -> Vec<Measure> {
    vec![
        Density1D::exponential(1.5).unwrap().into(),
        Density1D::gaussian(0.5, 2.0).unwrap().into(),
        Density1D::uniform(-1.0, 3.0).unwrap().into(),
        csiszar_measure().unwrap().into(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn integration_is_linear(i in 0..4usize, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let r = &catalog_measures()[i];
        let f = |n: Node| n.z * n.z;
        let g = |n: Node| (0.3 * n.z).cos();
        let both = r.integrate(|n| a * f(n) + b * g(n)).unwrap();
        let parts = a * r.integrate(f).unwrap() + b * r.integrate(g).unwrap();
        prop_assert!((both - parts).abs() <= 1e-10 * (a.abs() + b.abs()) * (1.0 + parts.abs()), "{both} vs {parts}");
    }
}

/// A discrete instance together with a density that meets its constraint.
#[derive(Debug, Clone)]
struct Instance {
    prob: MomentProblem,
    feasible: Vec<f64>,
}

fn instance() -> impl Strategy<Value = Instance> {
    (3..=8usize)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0..2.0f64, n),
                prop::collection::vec(0.2..1.0f64, n),
                prop::collection::vec(0.1..0.9f64, n),
                0..3usize,
                1..=2usize,
                0..3usize,
                prop::collection::vec(0.0..0.3f64, 4),
            )
        })
        .prop_filter_map("coincident atoms", |(mut z, w, f, e, k, c, slack)| {
            z.sort_by(f64::total_cmp);
            if z.windows(2).any(|p| p[1] - p[0] < 1e-3) {
                return None;
            }
            let r = DiscreteMeasure::new(z, w.clone()).ok()?;
            let spec = [EntropySpec::relative(), EntropySpec::lp_norm(2.0).unwrap(), EntropySpec::fermi_dirac()][e];
            let theta: Vec<TestFunction> = [TestFunction::Identity, TestFunction::Power { k: 2 }].into_iter().take(k).collect();
            let x: Vec<f64> = theta.iter().map(|t| r.nodes().zip(&w).zip(&f).map(|(((nd, _), wj), fj)| t.eval(nd) * wj * fj).sum()).collect();
            let constraint = match c {
                0 => ConstraintSet::Equality(x),
                1 => ConstraintSet::LowerBounds(x.iter().zip(&slack).map(|(v, s)| v - s).collect()),
                _ => ConstraintSet::Box {
                    lo: x.iter().zip(&slack).map(|(v, s)| v - s).collect(),
                    hi: x.iter().zip(&slack[2..]).map(|(v, s)| v + s).collect(),
                },
            };
            let prob = MomentProblem::new(r.into(), spec, theta, constraint).ok()?;
            Some(Instance { prob, feasible: f })
        })
}

fn dual_point(prob: &MomentProblem, raw: &[f64]) -> Vec<f64> {
    // infinite upper bounds force y ≥ 0
    let (_, hi) = prob.constraint().bounds();
    raw.iter().zip(&hi).map(|(y, h)| if h.is_infinite() { y.abs() } else { *y }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_is_concave(inst in instance(), a in prop::collection::vec(-1.5..1.5f64, 2), b in prop::collection::vec(-1.5..1.5f64, 2)) {
        let p = &inst.prob;
        let k = p.dim();
        let (y1, y2) = (dual_point(p, &a[..k]), dual_point(p, &b[..k]));
        let (d1, d2) = (dual_objective(p, &y1).unwrap(), dual_objective(p, &y2).unwrap());
        for t in [0.25, 0.5, 0.75] {
            let ym: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| t * u + (1.0 - t) * v).collect();
            let dm = dual_objective(p, &ym).unwrap();
            prop_assert!(dm >= t * d1 + (1.0 - t) * d2 - 1e-9 * (1.0 + dm.abs()), "{dm} < {t}·{d1} + {}·{d2}", 1.0 - t);
        }
    }

    #[test]
    fn weak_duality(inst in instance(), a in prop::collection::vec(-1.5..1.5f64, 2)) {
        let p = &inst.prob;
        let y = dual_point(p, &a[..p.dim()]);
        let d = dual_objective(p, &y).unwrap();
        let i = primal_entropy(p, &values(&inst.feasible)).unwrap();
        prop_assert!(i >= d - 1e-9, "I = {i} < D = {d}");
    }

    #[test]
    fn converged_moments_meet_the_constraint(inst in instance()) {
        let p = &inst.prob;
        let sol = solve_dual(p).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Converged);
        let f = reconstruct_primal(p, &sol).unwrap();
        let r = p.measure();
        let x: Vec<f64> = p.theta().iter().map(|t| r.integrate(|n| t.eval(n) * f.eval(n)).unwrap()).collect();
        let (lo, hi) = p.constraint().bounds();
        for k in 0..p.dim() {
            prop_assert!(x[k] >= lo[k] - 1e-7 && x[k] <= hi[k] + 1e-7, "x = {x:?}");
            // complementary slackness
            let slack = if sol.y[k] > 0.0 { x[k] - lo[k] } else if sol.y[k] < 0.0 { hi[k] - x[k] } else { 0.0 };
            prop_assert!((sol.y[k] * slack).abs() <= 1e-7, "y = {:?}, x = {x:?}", sol.y);
        }
    }
}

fn csiszar_augmented() -> MomentProblem {
    augmented_problem(&csiszar_measure().unwrap().into(), &TestFunction::Identity, ConstraintSet::Equality(vec![2.0])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn recession_is_sublinear(a in 0.1..2.0f64, b in 0.1..2.0f64) {
        let prob = csiszar_augmented();
        let ra = recession_function(&prob, &[0.0, a]).unwrap().value;
        let rb = recession_function(&prob, &[0.0, b]).unwrap().value;
        for t in [2.0, 5.0] {
            let rt = recession_function(&prob, &[0.0, t * a]).unwrap().value;
            prop_assert!((rt - t * ra).abs() <= 1e-6 * rt.abs().max(1.0), "{rt} vs {}", t * ra);
        }
        let rab = recession_function(&prob, &[0.0, a + b]).unwrap().value;
        prop_assert!(rab <= ra + rb + 1e-6);
    }
}

#[test]
fn absolutely_continuous_part_is_not_recessive() {
    let prob = csiszar_augmented();
    let dec = decompose(&prob, &[1.0, 2.0]).unwrap();
    assert!(!dec.is_dominating);
    let again = decompose(&prob, &dec.x_a).unwrap();
    assert!(again.is_dominating, "x_s = {:?}", again.x_s);
    assert!(again.x_s.iter().all(|v| v.abs() <= 1e-6 * 2.0));
}

fn cramers() -> [Cramer; 2] {
    [
        Cramer::new(Density1D::exponential(1.0).unwrap().into(), TestFunction::Identity).unwrap(),
        Cramer::new(csiszar_measure().unwrap().into(), TestFunction::Identity).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn laplace_is_convex(i in 0..2usize, y in -3.0..0.9f64, h in 0.01..0.05f64) {
        let lap = cramers()[i].laplace().clone();
        let (a, b, c) = (lap.value(y - h).unwrap(), lap.value(y).unwrap(), lap.value(y + h).unwrap());
        prop_assert!(a - 2.0 * b + c >= -1e-9);
    }

    #[test]
    fn cramer_is_nonnegative(i in 0..2usize, x in 0.05..5.0f64) {
        let cr = &cramers()[i];
        prop_assert!(cr.value(x).unwrap() >= 0.0);
        prop_assert!(cr.value(cr.mean()).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn projections_are_normalized(i in 0..2usize, u in 0.0..1.0f64) {
        let cr = &cramers()[i];
        // c between the mean and the last point with a projection
        let top = if i == 0 { 5.0 } else { cr.up().x_star };
        let c = cr.mean() + (top - cr.mean()) * (0.05 + 0.9 * u);
        let p = entropic_projection(cr, c).unwrap();
        prop_assert_eq!(p.kind, ProjectionKind::Projection);
        let r = cr.laplace().measure();
        let mass = r.integrate_weighted(|n, lr| (p.density.log_eval(n) + lr).exp()).unwrap();
        prop_assert!((mass - 1.0).abs() <= 1e-9, "mass {mass}");
        let fenchel = p.dual_y * p.x_hat - p.density.log_norm;
        prop_assert!((p.entropy_value - fenchel).abs() <= 1e-7, "{} vs {fenchel}", p.entropy_value);
    }
}

fn small_sim(n: usize, trials: usize, seed: u64, y: f64) -> SimConfig {
    SimConfig {
        mode: SimMode::IidEmpirical,
        n,
        delta: 0.1,
        variant: DeltaVariant::LowerTail,
        trials,
        seed,
        proposal: Proposal::ExponentialTilt { y },
        weight_law: WeightLaw::default(),
        bins: vec![0.0, 0.5, 1.0, 2.0, 4.0],
        top_k: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn histograms_are_probability_vectors(n in 2..40usize, seed in any::<u64>(), y in 0.0..0.6f64, c in 0.5..2.0f64) {
        let r: Measure = Density1D::exponential(1.0).unwrap().into();
        let cfg = small_sim(n, 300, seed, y);
        match run_conditional_sim(&cfg, &r, &TestFunction::Identity, c, None, Execution::Sequential) {
            Ok(res) => {
                prop_assert!((0.0..=1.0).contains(&res.acceptance_rate));
                for h in [&res.conditioned_hist, &res.bulk_hist] {
                    prop_assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    prop_assert!(h.iter().all(|v| *v >= 0.0));
                }
            }
            Err(entroproj::Error::NoAcceptedTrials) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), n in 2..30usize) {
        let r: Measure = Density1D::exponential(1.0).unwrap().into();
        let cfg = small_sim(n, 200, seed, 0.3);
        let a = run_conditional_sim(&cfg, &r, &TestFunction::Identity, 1.2, None, Execution::Parallel);
        let b = run_conditional_sim(&cfg, &r, &TestFunction::Identity, 1.2, None, Execution::Sequential);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn weighted_mode_reaches_the_entropy_minimizer() {
    // Poisson(1) weights: the limit minimizes ∫ (f log f - f + 1) dR with no
    // mass constraint, i.e. the dual reconstruction for relative entropy
    let points: Vec<f64> = (0..10).map(|j| j as f64 / 5.0).collect();
    let r: Measure = DiscreteMeasure::uniform(points).unwrap().into();
    let c = 1.2;
    let prob = MomentProblem::new(r.clone(), EntropySpec::relative(), vec![TestFunction::Identity], ConstraintSet::LowerBounds(vec![c])).unwrap();
    let sol = solve_dual(&prob).unwrap();
    let target = reconstruct_primal(&prob, &sol).unwrap();
    let bins: Vec<f64> = (0..=10).map(|j| j as f64 / 5.0 - 0.1).collect();
    let cfg = SimConfig {
        mode: SimMode::WeightedEmpirical,
        n: 2000,
        delta: 0.05,
        variant: DeltaVariant::LowerTail,
        trials: 400,
        seed: 42,
        proposal: Proposal::ExponentialTilt { y: sol.y[0] },
        weight_law: WeightLaw::Poisson1,
        bins: bins.clone(),
        top_k: 0,
    };
    let res = run_conditional_sim(&cfg, &r, &TestFunction::Identity, c, Some(&target), Execution::default()).unwrap();
    let expected = bin_target(&r, &target, &bins).unwrap();
    let tv = total_variation(&res.conditioned_hist, &expected);
    assert_eq!(Some(tv), res.distance_to_target);
    assert!(tv <= 0.15, "TV {tv}");
}
