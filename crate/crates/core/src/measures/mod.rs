//! Reference measures, test functions and integration against them.
//!
//! Integrands receive a [`Node`] and `log r`, the logarithm of the
//! reference density (or atom weight) at that node, and return the already
//! weighted value `f(z) r(z)`. Working with `log r` lets exponential
//! integrands meet exponential tails without overflow.

mod io;
pub mod orlicz;
pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use orlicz::{holder_residual, integrability_class, luxemburg_norm, IntegrabilityClass, YoungFunction};
pub use quadrature::QuadratureConfig;

/// A point of the support. `index` is set for atoms of a discrete measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub z: f64,
    pub index: Option<usize>,
}

impl Node {
    pub fn at(z: f64) -> Self {
        Self { z, index: None }
    }
}

/// Finite weighted grid `Σ r_j δ_{z_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("a discrete measure needs at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(z) = points.iter().find(|z| !z.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite point {z}")));
        }
        if let Some(r) = weights.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidMeasure(format!("weights must be finite and positive, got {r}")));
        }
        let log_weights = weights.iter().map(|r| r.ln()).collect();
        Ok(Self { points, weights, log_weights })
    }

    /// Equal weights summing to one.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let n = points.len().max(1) as f64;
        let weights = vec![1.0 / n; points.len()];
        Self::new(points, weights)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (Node, f64)> + '_ {
        self.points
            .iter()
            .zip(&self.log_weights)
            .enumerate()
            .map(|(i, (&z, &lr))| (Node { z, index: Some(i) }, lr))
    }
}

/// One-dimensional density families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensityFamily {
    /// `rate e^{-rate z}` on `[0, ∞)`.
    Exponential { rate: f64 },
    /// `e^{-a z} / (1 + z^b)` on `[0, ∞)`.
    Csiszar { a: f64, b: f64 },
    Gaussian { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl DensityFamily {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DensityFamily::Exponential { rate } => rate.is_finite() && rate > 0.0,
            DensityFamily::Csiszar { a, b } => a.is_finite() && a > 0.0 && b.is_finite() && b > 1.0,
            DensityFamily::Gaussian { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            DensityFamily::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMeasure(format!("bad parameters for {self:?}")))
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            DensityFamily::Exponential { .. } | DensityFamily::Csiszar { .. } => (0.0, f64::INFINITY),
            DensityFamily::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DensityFamily::Uniform { lo, hi } => (lo, hi),
        }
    }

    /// Natural length scale used for the first tail segment.
    fn scale(&self) -> f64 {
        match *self {
            DensityFamily::Exponential { rate } => 1.0 / rate,
            DensityFamily::Csiszar { a, .. } => 1.0 / a,
            DensityFamily::Gaussian { sigma, .. } => sigma,
            DensityFamily::Uniform { lo, hi } => hi - lo,
        }
    }

    fn log_kernel(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if z < lo || z > hi {
            return f64::NEG_INFINITY;
        }
        match *self {
            DensityFamily::Exponential { rate } => rate.ln() - rate * z,
            DensityFamily::Csiszar { a, b } => {
                let log1p_zb = if z > 1.0 { b * z.ln() + z.powf(-b).ln_1p() } else { z.powf(b).ln_1p() };
                -a * z - log1p_zb
            }
            DensityFamily::Gaussian { mu, sigma } => {
                let u = (z - mu) / sigma;
                -0.5 * u * u - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
            }
            DensityFamily::Uniform { lo, hi } => -(hi - lo).ln(),
        }
    }
}

/// A cataloged density on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    family: DensityFamily,
    normalized: bool,
    quadrature: QuadratureConfig,
    log_norm: f64,
    kernel_mass: f64,
}

impl Density1D {
    pub fn new(family: DensityFamily, normalized: bool, quadrature: QuadratureConfig) -> Result<Self> {
        family.validate()?;
        let mut d = Self { family, normalized, quadrature, log_norm: 0.0, kernel_mass: 1.0 };
        if let DensityFamily::Csiszar { .. } = family {
            let mass = d.integrate_weighted(|_, lr| lr.exp())?;
            d.kernel_mass = mass;
            if normalized {
                d.log_norm = mass.ln();
            }
        }
        Ok(d)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(DensityFamily::Exponential { rate }, true, QuadratureConfig::default())
    }

    pub fn csiszar(a: f64, b: f64, normalized: bool) -> Result<Self> {
        Self::new(DensityFamily::Csiszar { a, b }, normalized, QuadratureConfig::default())
    }

    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(DensityFamily::Gaussian { mu, sigma }, true, QuadratureConfig::default())
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DensityFamily::Uniform { lo, hi }, true, QuadratureConfig::default())
    }

    pub fn family(&self) -> DensityFamily {
        self.family
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quadrature
    }

    /// Integral of the unnormalized kernel.
    pub fn kernel_mass(&self) -> f64 {
        self.kernel_mass
    }

    pub fn log_density(&self, z: f64) -> f64 {
        self.family.log_kernel(z) - self.log_norm
    }

    pub fn density(&self, z: f64) -> f64 {
        self.log_density(z).exp()
    }

    pub fn support(&self) -> (f64, f64) {
        self.family.support()
    }

    /// Point beyond which the reference tail mass is below `abs_tol / 10`.
    pub fn truncation_point(&self) -> f64 {
        let eps = self.quadrature.abs_tol / 10.0;
        match self.family {
            DensityFamily::Exponential { rate } => ((1.0 / eps).ln() + 1.0) / rate,
            DensityFamily::Csiszar { a, .. } => {
                // tail ≤ e^{-aT} / (a · norm)
                let norm = if self.normalized { self.kernel_mass } else { 1.0 };
                ((1.0 / (eps * a * norm)).ln() + 1.0).max(0.0) / a
            }
            DensityFamily::Gaussian { mu, sigma } => mu + sigma * (2.0 * (1.0 / eps).ln()).sqrt(),
            DensityFamily::Uniform { hi, .. } => hi,
        }
    }

    pub fn integrate_weighted<F: Fn(Node, f64) -> f64>(&self, f: F) -> Result<f64> {
        let (lo, hi) = self.support();
        self.integrate_weighted_range(f, lo, hi)
    }

    /// Integral over `[lo, hi] ∩ support`.
    pub fn integrate_weighted_range<F: Fn(Node, f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> Result<f64> {
        let (s_lo, s_hi) = self.support();
        let (lo, hi) = (lo.max(s_lo), hi.min(s_hi));
        if lo >= hi {
            return Ok(0.0);
        }
        let g = |z: f64| {
            let lr = self.log_density(z);
            if lr == f64::NEG_INFINITY {
                0.0
            } else {
                f(Node::at(z), lr)
            }
        };
        let cfg = &self.quadrature;
        let scale = self.family.scale();
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => quadrature::integrate_interval(g, lo, hi, cfg),
            (true, false) => quadrature::integrate_half_line(g, lo, 1.0, scale, cfg),
            (false, true) => quadrature::integrate_half_line(g, hi, -1.0, scale, cfg),
            (false, false) => {
                let mid = match self.family {
                    DensityFamily::Gaussian { mu, .. } => mu,
                    _ => 0.0,
                };
                let right = quadrature::integrate_half_line(&g, mid, 1.0, scale, cfg)?;
                let left = quadrature::integrate_half_line(&g, mid, -1.0, scale, cfg)?;
                Ok(left + right)
            }
        }
    }

    /// Natural length scale of the family.
    pub fn scale(&self) -> f64 {
        self.family.scale()
    }

    /// Points spread over the support at the natural scale, used to pick
    /// log-sum-exp shifts and to probe integrands.
    pub fn probe_points(&self) -> Vec<f64> {
        let scale = self.family.scale();
        let mut pts = Vec::new();
        match self.family {
            DensityFamily::Uniform { lo, hi } => {
                pts.extend((0..=64).map(|i| lo + (hi - lo) * i as f64 / 64.0));
            }
            DensityFamily::Gaussian { mu, sigma } => {
                pts.push(mu);
                for i in 1..=32 {
                    let d = sigma * i as f64 / 4.0;
                    pts.extend([mu - d, mu + d]);
                }
                for k in 4..=40 {
                    let d = sigma * 2f64.powi(k);
                    pts.extend([mu - d, mu + d]);
                }
            }
            DensityFamily::Exponential { .. } | DensityFamily::Csiszar { .. } => {
                pts.extend((0..=32).map(|i| scale * i as f64 / 4.0));
                pts.extend((4..=40).map(|k| scale * 2f64.powi(k)));
            }
        }
        pts
    }
}

/// Reference measure `R`.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Discrete(DiscreteMeasure),
    Density(Density1D),
}

impl From<DiscreteMeasure> for Measure {
    fn from(m: DiscreteMeasure) -> Self {
        Measure::Discrete(m)
    }
}

impl From<Density1D> for Measure {
    fn from(d: Density1D) -> Self {
        Measure::Density(d)
    }
}

impl Measure {
    /// `∫ f dR` where `f(node, log r)` returns the weighted value `f(z) r(z)`.
    pub fn integrate_weighted<F: Fn(Node, f64) -> f64>(&self, f: F) -> Result<f64> {
        match self {
            Measure::Discrete(d) => {
                let mut total = 0.0;
                for (node, lr) in d.nodes() {
                    let v = f(node, lr);
                    if v.is_nan() {
                        return Err(Error::InvalidInput(format!("integrand is NaN at z = {}", node.z)));
                    }
                    total += v;
                }
                Ok(total)
            }
            Measure::Density(d) => d.integrate_weighted(f),
        }
    }

    /// `∫_{[lo, hi]} f dR` with the same calling convention.
    pub fn integrate_weighted_range<F: Fn(Node, f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> Result<f64> {
        match self {
            Measure::Discrete(d) => {
                let mut total = 0.0;
                for (node, lr) in d.nodes().filter(|(n, _)| n.z >= lo && n.z <= hi) {
                    total += f(node, lr);
                }
                Ok(total)
            }
            Measure::Density(d) => d.integrate_weighted_range(f, lo, hi),
        }
    }

    /// `∫ f dR` for a plain integrand.
    pub fn integrate<F: Fn(Node) -> f64>(&self, f: F) -> Result<f64> {
        self.integrate_weighted(|n, lr| {
            let v = f(n);
            if v == 0.0 {
                0.0
            } else {
                v * lr.exp()
            }
        })
    }

    pub fn mass(&self) -> Result<f64> {
        match self {
            Measure::Discrete(d) => Ok(d.weights.iter().sum()),
            Measure::Density(d) => Ok(if d.normalized { 1.0 } else { d.kernel_mass }),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Measure::Discrete(d) => {
                let lo = d.points.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = d.points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            Measure::Density(d) => d.support(),
        }
    }

    pub fn is_compact(&self) -> bool {
        let (lo, hi) = self.support();
        lo.is_finite() && hi.is_finite()
    }

    /// Support points at which integrands are probed.
    pub fn probe_nodes(&self) -> Vec<(Node, f64)> {
        match self {
            Measure::Discrete(d) => d.nodes().collect(),
            Measure::Density(d) => d
                .probe_points()
                .into_iter()
                .map(|z| (Node::at(z), d.log_density(z)))
                .filter(|(_, lr)| lr.is_finite())
                .collect(),
        }
    }

    /// Point beyond which the reference tail is negligible.
    pub fn truncation_point(&self) -> f64 {
        match self {
            Measure::Discrete(d) => d.points.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Measure::Density(d) => d.truncation_point(),
        }
    }

    pub fn as_discrete(&self) -> Option<&DiscreteMeasure> {
        match self {
            Measure::Discrete(d) => Some(d),
            Measure::Density(_) => None,
        }
    }

    pub fn as_density(&self) -> Option<&Density1D> {
        match self {
            Measure::Density(d) => Some(d),
            Measure::Discrete(_) => None,
        }
    }
}

/// Scalar test function `u : Z → ℝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Identity,
    Power { k: i32 },
    /// `a z + b`
    Affine { a: f64, b: f64 },
    /// Values at the atoms of a discrete measure, in order.
    GridValues { values: Vec<f64> },
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction::Affine { a: 0.0, b: c }
    }

    pub fn eval(&self, node: Node) -> f64 {
        match self {
            TestFunction::Identity => node.z,
            TestFunction::Power { k } => node.z.powi(*k),
            TestFunction::Affine { a, b } => a * node.z + b,
            TestFunction::GridValues { values } => node.index.and_then(|i| values.get(i).copied()).unwrap_or(f64::NAN),
        }
    }

    /// Checks that the function can be evaluated on the support of `r`.
    pub fn check_against(&self, r: &Measure) -> Result<()> {
        match (self, r) {
            (TestFunction::GridValues { values }, Measure::Discrete(d)) => {
                if values.len() != d.len() {
                    return Err(Error::InvalidInput(format!(
                        "grid test function has {} values for {} atoms",
                        values.len(),
                        d.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("grid test function has non-finite values".into()));
                }
                Ok(())
            }
            (TestFunction::GridValues { .. }, Measure::Density(_)) => {
                Err(Error::InvalidInput("grid test functions need a discrete measure".into()))
            }
            (TestFunction::Power { k }, _) if *k < 0 => {
                let (lo, hi) = r.support();
                if lo <= 0.0 && hi >= 0.0 {
                    Err(Error::InvalidInput(format!("z^{k} is singular on the support")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Whether `sup |u|` over the support of `r` is finite.
    pub fn bounded_on(&self, r: &Measure) -> bool {
        match r {
            Measure::Discrete(_) => true,
            Measure::Density(_) => match self {
                TestFunction::Affine { a, .. } if *a == 0.0 => true,
                TestFunction::Power { k: 0 } => true,
                _ => r.is_compact(),
            },
        }
    }
}
