//! Catalog of entropy integrands.
//!
//! Each entry is a convex integrand `γ*` (the Cramér transform of a weight
//! law) together with its convex conjugate `γ`, the derivatives of `γ`, and
//! the Young functions `λ(s) = γ(s) - m s` and `λ⋄(s) = max(λ(s), λ(-s))`
//! that generate the Orlicz spaces the constraint functions live in.
//!
//! | entry              | `γ*(t)`                                 | `γ(s)`              | `m` |
//! |--------------------|-----------------------------------------|---------------------|-----|
//! | relative           | `t log t - t + 1`, `t ≥ 0`              | `e^s - 1`           | 1   |
//! | reverse relative   | `t - log t - 1`, `t > 0`                | `-log(1 - s)`, `s<1`| 1   |
//! | Fermi-Dirac        | `½[(1+t)log(1+t) + (1-t)log(1-t)]`      | `log cosh s`        | 0   |
//! | `L_p` norm         | `|t|^p / p`                             | `|s|^q / q`         | 0   |
//! | `L_p` entropy      | `t^p / p`, `t ≥ 0`                      | `max(s,0)^q / q`    | 0   |
//!
//! Extended-real results use `f64::INFINITY` as an explicit sentinel: values
//! outside an effective domain are returned as `+∞` by a domain test, never
//! by letting an expression overflow or produce NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the catalog entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    Relative,
    ReverseRelative,
    FermiDirac,
    LpNorm,
    LpEntropy,
}

/// A real interval with explicit open/closed ends; infinite ends are open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub const REAL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_closed: false,
        hi_closed: false,
    };

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn interior_contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// One entry of the entropy catalog.
///
/// `p` is only meaningful for the two `L_p` entries; `q` is the conjugate
/// exponent `1/p + 1/q = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropySpec {
    kind: EntropyKind,
    p: f64,
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn log_cosh(s: f64) -> f64 {
    let a = s.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl EntropySpec {
    pub fn relative() -> Self {
        Self { kind: EntropyKind::Relative, p: f64::NAN }
    }

    pub fn reverse_relative() -> Self {
        Self { kind: EntropyKind::ReverseRelative, p: f64::NAN }
    }

    pub fn fermi_dirac() -> Self {
        Self { kind: EntropyKind::FermiDirac, p: f64::NAN }
    }

    pub fn lp_norm(p: f64) -> Result<Self> {
        Self::with_exponent(EntropyKind::LpNorm, p)
    }

    pub fn lp_entropy(p: f64) -> Result<Self> {
        Self::with_exponent(EntropyKind::LpEntropy, p)
    }

    /// Builds an entry from its name; `p` is required for the `L_p` entries
    /// and ignored otherwise.
    pub fn new(kind: EntropyKind, p: Option<f64>) -> Result<Self> {
        match kind {
            EntropyKind::Relative => Ok(Self::relative()),
            EntropyKind::ReverseRelative => Ok(Self::reverse_relative()),
            EntropyKind::FermiDirac => Ok(Self::fermi_dirac()),
            EntropyKind::LpNorm | EntropyKind::LpEntropy => {
                let p = p.ok_or_else(|| Error::InvalidInput(format!("{kind:?} requires an exponent p")))?;
                Self::with_exponent(kind, p)
            }
        }
    }

    fn with_exponent(kind: EntropyKind, p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidInput(format!("exponent p must be > 1, got {p}")));
        }
        Ok(Self { kind, p })
    }

    pub fn kind(&self) -> EntropyKind {
        self.kind
    }

    pub fn p(&self) -> Option<f64> {
        match self.kind {
            EntropyKind::LpNorm | EntropyKind::LpEntropy => Some(self.p),
            _ => None,
        }
    }

    pub fn q(&self) -> Option<f64> {
        self.p().map(|p| p / (p - 1.0))
    }

    /// Location of the minimum of `γ*`, where `γ*(m) = 0`.
    pub fn m(&self) -> f64 {
        match self.kind {
            EntropyKind::Relative | EntropyKind::ReverseRelative => 1.0,
            _ => 0.0,
        }
    }

    pub fn dom_gamma(&self) -> Interval {
        match self.kind {
            EntropyKind::ReverseRelative => Interval {
                lo: f64::NEG_INFINITY,
                hi: 1.0,
                lo_closed: false,
                hi_closed: false,
            },
            _ => Interval::REAL,
        }
    }

    pub fn dom_gamma_star(&self) -> Interval {
        match self.kind {
            EntropyKind::Relative | EntropyKind::LpEntropy => Interval {
                lo: 0.0,
                hi: f64::INFINITY,
                lo_closed: true,
                hi_closed: false,
            },
            EntropyKind::ReverseRelative => Interval {
                lo: 0.0,
                hi: f64::INFINITY,
                lo_closed: false,
                hi_closed: false,
            },
            EntropyKind::FermiDirac => Interval { lo: -1.0, hi: 1.0, lo_closed: true, hi_closed: true },
            EntropyKind::LpNorm => Interval::REAL,
        }
    }

    /// `lim γ*(t)/|t| = +∞` as `|t| → ∞`.
    pub fn superlinear(&self) -> bool {
        !matches!(self.kind, EntropyKind::ReverseRelative)
    }

    /// Whether `λ⋄` satisfies the Δ₂ growth condition.
    pub fn delta2(&self) -> bool {
        matches!(self.kind, EntropyKind::FermiDirac | EntropyKind::LpNorm | EntropyKind::LpEntropy)
    }

    /// A constant `κ` with `λ⋄(2s) ≤ κ λ⋄(s)`, for entries that satisfy Δ₂.
    pub fn delta2_constant(&self) -> Option<f64> {
        match self.kind {
            EntropyKind::LpNorm | EntropyKind::LpEntropy => Some(2f64.powf(self.p / (self.p - 1.0)) + 1.0),
            EntropyKind::FermiDirac => Some(5.0),
            _ => None,
        }
    }

    pub fn gamma_star(&self, t: f64) -> f64 {
        match self.kind {
            EntropyKind::Relative => {
                if t < 0.0 {
                    f64::INFINITY
                } else if t == 0.0 {
                    1.0
                } else {
                    t * t.ln() - t + 1.0
                }
            }
            EntropyKind::ReverseRelative => {
                if t <= 0.0 {
                    f64::INFINITY
                } else {
                    t - t.ln() - 1.0
                }
            }
            EntropyKind::FermiDirac => {
                if !(-1.0..=1.0).contains(&t) {
                    f64::INFINITY
                } else {
                    0.5 * (xlogx(1.0 + t) + xlogx(1.0 - t))
                }
            }
            EntropyKind::LpNorm => t.abs().powf(self.p) / self.p,
            EntropyKind::LpEntropy => {
                if t < 0.0 {
                    f64::INFINITY
                } else {
                    t.powf(self.p) / self.p
                }
            }
        }
    }

    pub fn gamma(&self, s: f64) -> f64 {
        match self.kind {
            EntropyKind::Relative => s.exp_m1(),
            EntropyKind::ReverseRelative => {
                if s >= 1.0 {
                    f64::INFINITY
                } else {
                    -(-s).ln_1p()
                }
            }
            EntropyKind::FermiDirac => log_cosh(s),
            EntropyKind::LpNorm => {
                let q = self.q().unwrap_or(2.0);
                s.abs().powf(q) / q
            }
            EntropyKind::LpEntropy => {
                let q = self.q().unwrap_or(2.0);
                s.max(0.0).powf(q) / q
            }
        }
    }

    /// `γ'(s)`; an error outside the interior of `dom γ`.
    pub fn gamma_prime(&self, s: f64) -> Result<f64> {
        if !self.dom_gamma().interior_contains(s) {
            return Err(Error::DomainBoundary(s));
        }
        Ok(match self.kind {
            EntropyKind::Relative => s.exp(),
            EntropyKind::ReverseRelative => 1.0 / (1.0 - s),
            EntropyKind::FermiDirac => s.tanh(),
            EntropyKind::LpNorm => {
                let q = self.q().unwrap_or(2.0);
                s.signum() * s.abs().powf(q - 1.0)
            }
            EntropyKind::LpEntropy => {
                let q = self.q().unwrap_or(2.0);
                s.max(0.0).powf(q - 1.0)
            }
        })
    }

    /// `γ''(s)` in closed form; may be `+∞` at `s = 0` for `q < 2`.
    pub fn gamma_second(&self, s: f64) -> f64 {
        if !self.dom_gamma().interior_contains(s) {
            return f64::INFINITY;
        }
        match self.kind {
            EntropyKind::Relative => s.exp(),
            EntropyKind::ReverseRelative => 1.0 / ((1.0 - s) * (1.0 - s)),
            EntropyKind::FermiDirac => {
                let c = s.cosh();
                if c.is_finite() {
                    1.0 / (c * c)
                } else {
                    0.0
                }
            }
            EntropyKind::LpNorm | EntropyKind::LpEntropy => {
                let q = self.q().unwrap_or(2.0);
                if self.kind == EntropyKind::LpEntropy && s < 0.0 {
                    return 0.0;
                }
                let a = s.abs();
                if a == 0.0 {
                    if q < 2.0 {
                        f64::INFINITY
                    } else if q == 2.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (q - 1.0) * a.powf(q - 2.0)
                }
            }
        }
    }

    pub fn lambda(&self, s: f64) -> f64 {
        let g = self.gamma(s);
        if g.is_infinite() {
            return g;
        }
        match self.kind {
            // e^s - s - 1 without cancellation near 0
            EntropyKind::Relative => {
                if s.abs() < 1e-3 {
                    let s2 = s * s;
                    s2 / 2.0 + s2 * s / 6.0 + s2 * s2 / 24.0 + s2 * s2 * s / 120.0
                } else {
                    g - s
                }
            }
            _ => g - self.m() * s,
        }
    }

    pub fn lambda_diamond(&self, s: f64) -> f64 {
        self.lambda(s).max(self.lambda(-s))
    }

    /// `γ(s) r` for a reference density value `r = exp(log_r)`, computed so
    /// that an exponential integrand against an exponential tail does not
    /// overflow. `+∞` propagates whenever `r > 0`.
    pub fn gamma_weighted(&self, s: f64, log_r: f64) -> f64 {
        if log_r == f64::NEG_INFINITY {
            return 0.0;
        }
        match self.kind {
            EntropyKind::Relative => (s + log_r).exp() - log_r.exp(),
            _ => weighted(self.gamma(s), log_r),
        }
    }

    pub fn gamma_prime_weighted(&self, s: f64, log_r: f64) -> Result<f64> {
        if log_r == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        match self.kind {
            EntropyKind::Relative => Ok((s + log_r).exp()),
            _ => Ok(weighted(self.gamma_prime(s)?, log_r)),
        }
    }

    pub fn gamma_second_weighted(&self, s: f64, log_r: f64) -> f64 {
        if log_r == f64::NEG_INFINITY {
            return 0.0;
        }
        match self.kind {
            EntropyKind::Relative => (s + log_r).exp(),
            _ => weighted(self.gamma_second(s), log_r),
        }
    }

    /// `λ⋄(s) r`, stable for exponential growth against an exponential tail.
    pub fn lambda_diamond_weighted(&self, s: f64, log_r: f64) -> f64 {
        if log_r == f64::NEG_INFINITY {
            return 0.0;
        }
        match self.kind {
            EntropyKind::Relative if s.abs() >= 1e-3 => {
                let a = s.abs();
                (a + log_r).exp() - (a + 1.0) * log_r.exp()
            }
            _ => weighted(self.lambda_diamond(s), log_r),
        }
    }

    /// `log λ⋄(s)`, finite even where `λ⋄(s)` itself overflows.
    pub fn log_lambda_diamond(&self, s: f64) -> f64 {
        match self.kind {
            EntropyKind::Relative if s.abs() > 1.0 => {
                let a = s.abs();
                a + (-(a + 1.0) * (-a).exp()).ln_1p()
            }
            _ => self.lambda_diamond(s).ln(),
        }
    }

    /// `γ*(γ'(s)) = s γ'(s) - γ(s)`, the entropy density of the tilted
    /// measure, weighted by `r`.
    pub fn entropy_of_tilt_weighted(&self, s: f64, log_r: f64) -> Result<f64> {
        if log_r == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        match self.kind {
            EntropyKind::Relative => Ok((s - 1.0) * (s + log_r).exp() + log_r.exp()),
            _ => {
                let gp = self.gamma_prime(s)?;
                Ok(weighted(s * gp - self.gamma(s), log_r))
            }
        }
    }

    /// Largest deviation between the closed-form `γ` and a brute-force
    /// supremum `max_t { s t - γ*(t) }` over `t_grid`, taken over `s_grid`.
    pub fn verify_conjugacy(&self, s_grid: &[f64], t_grid: &[f64]) -> f64 {
        s_grid
            .iter()
            .map(|&s| {
                let brute = t_grid
                    .iter()
                    .map(|&t| s * t - self.gamma_star(t))
                    .fold(f64::NEG_INFINITY, f64::max);
                (self.gamma(s) - brute).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EntropyKind::Relative => "relative",
            EntropyKind::ReverseRelative => "reverse_relative",
            EntropyKind::FermiDirac => "fermi_dirac",
            EntropyKind::LpNorm => "lp_norm",
            EntropyKind::LpEntropy => "lp_entropy",
        }
    }
}

fn weighted(v: f64, log_r: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else if v.is_infinite() {
        v
    } else {
        v * log_r.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Vec<EntropySpec> {
        vec![
            EntropySpec::relative(),
            EntropySpec::reverse_relative(),
            EntropySpec::fermi_dirac(),
            EntropySpec::lp_norm(1.5).unwrap(),
            EntropySpec::lp_norm(2.0).unwrap(),
            EntropySpec::lp_norm(3.0).unwrap(),
            EntropySpec::lp_entropy(1.5).unwrap(),
            EntropySpec::lp_entropy(3.0).unwrap(),
        ]
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn gamma_star_values() {
        let rel = EntropySpec::relative();
        assert_eq!(rel.gamma_star(1.0), 0.0);
        assert_eq!(rel.gamma_star(0.0), 1.0);
        assert_eq!(EntropySpec::fermi_dirac().gamma_star(2.0), f64::INFINITY);
        assert_eq!(EntropySpec::reverse_relative().gamma_star(-1.0), f64::INFINITY);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(EntropySpec::relative().gamma(0.0), 0.0);
        assert_eq!(EntropySpec::reverse_relative().gamma(1.0), f64::INFINITY);
        // brute-force supremum over a fine t-grid
        let fd = EntropySpec::fermi_dirac();
        let t = linspace(-1.0, 1.0, 2_000_001);
        let brute = t.iter().map(|&t| t - fd.gamma_star(t)).fold(f64::NEG_INFINITY, f64::max);
        assert!((fd.gamma(1.0) - brute).abs() < 1e-8);
        assert!((fd.gamma(1.0) - 0.433_780_830_483_027).abs() < 1e-12);
    }

    #[test]
    fn gamma_prime_values() {
        assert_eq!(EntropySpec::relative().gamma_prime(0.0).unwrap(), 1.0);
        assert_eq!(EntropySpec::fermi_dirac().gamma_prime(0.0).unwrap(), 0.0);
        let rr = EntropySpec::reverse_relative();
        let h = 1e-6;
        let fd = (rr.gamma(0.5 + h) - rr.gamma(0.5 - h)) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-5);
        assert!((rr.gamma_prime(0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(rr.gamma_prime(1.0), Err(Error::DomainBoundary(_))));
        let lpe = EntropySpec::lp_entropy(3.0).unwrap();
        assert_eq!(lpe.gamma_prime(-2.0).unwrap(), 0.0);
        assert_eq!(lpe.gamma_star(-0.1), f64::INFINITY);
    }

    #[test]
    fn lambda_values() {
        let rel = EntropySpec::relative();
        assert_eq!(rel.lambda(0.0), 0.0);
        assert!((rel.lambda(1.0) - (std::f64::consts::E - 2.0)).abs() < 1e-14);
        let l2 = EntropySpec::lp_norm(2.0).unwrap();
        assert!((l2.lambda(-3.0) - 4.5).abs() < 1e-14);
        assert!((l2.lambda_diamond(-3.0) - 4.5).abs() < 1e-14);
        let s: f64 = -0.7;
        let expect = s.abs().exp() - s.abs() - 1.0;
        assert!((rel.lambda_diamond(s) - expect).abs() < 1e-14);
    }

    #[test]
    fn conjugacy_residuals() {
        let s = linspace(-2.0, 2.0, 101);
        let t_pos: Vec<f64> = (1..=20001).map(|i| 20.0 * i as f64 / 20001.0).collect();
        assert!(EntropySpec::relative().verify_conjugacy(&s, &t_pos) <= 1e-4);
        let t_all = linspace(-20.0, 20.0, 20001);
        assert!(EntropySpec::lp_norm(2.0).unwrap().verify_conjugacy(&s, &t_all) <= 1e-4);
        // at s = 0 the inner max is attained at t = m with value 0
        for e in catalog() {
            let grid: Vec<f64> = vec![e.m() - 0.5, e.m(), e.m() + 0.5];
            let inner = grid.iter().map(|&t| -e.gamma_star(t)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(inner, 0.0, "{}", e.name());
        }
    }

    #[test]
    fn minimum_at_m_and_nonnegative() {
        for e in catalog() {
            assert_eq!(e.gamma_star(e.m()), 0.0, "{}", e.name());
            for t in linspace(-5.0, 5.0, 401) {
                assert!(e.gamma_star(t) >= 0.0, "{} at {t}", e.name());
            }
            assert_eq!(e.gamma(0.0), 0.0);
            assert_eq!(e.lambda(0.0), 0.0);
        }
    }

    #[test]
    fn young_fenchel_equality_at_derivative() {
        for e in catalog() {
            let hi = if e.kind() == EntropyKind::ReverseRelative { 0.9 } else { 3.0 };
            for s in linspace(-3.0, hi, 61) {
                let t = e.gamma_prime(s).unwrap();
                let lhs = s * t;
                let rhs = e.gamma(s) + e.gamma_star(t);
                assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()), "{} s={s}", e.name());
                let via_weighted = e.entropy_of_tilt_weighted(s, 0.0).unwrap();
                assert!((via_weighted - e.gamma_star(t)).abs() <= 1e-8 * (1.0 + via_weighted.abs()));
            }
        }
    }

    #[test]
    fn superlinearity_flags() {
        for e in catalog() {
            let big = 1e6;
            let ratio = e.gamma_star(big).min(e.gamma_star(-big)) / big;
            if e.superlinear() {
                assert!(ratio >= 10.0 || e.gamma_star(big).is_infinite(), "{}", e.name());
            }
        }
        assert!(!EntropySpec::reverse_relative().superlinear());
        // reverse relative grows linearly: γ*(t)/t → 1
        let rr = EntropySpec::reverse_relative();
        assert!(rr.gamma_star(1e6) / 1e6 < 1.0);
    }

    #[test]
    fn delta2_flags() {
        for e in catalog() {
            if let Some(kappa) = e.delta2_constant() {
                assert!(e.delta2());
                for s in linspace(1.0, 50.0, 99) {
                    assert!(e.lambda_diamond(2.0 * s) <= kappa * e.lambda_diamond(s), "{} s={s}", e.name());
                }
            }
        }
        let rel = EntropySpec::relative();
        assert!(!rel.delta2());
        // e^{60} against e^{30}: no fixed κ of moderate size can hold
        assert!(rel.lambda_diamond(60.0) > 1e6 * rel.lambda_diamond(30.0));
        assert!(!EntropySpec::reverse_relative().delta2());
    }

    #[test]
    fn lambda_diamond_dominates_lambda() {
        for e in catalog() {
            for s in linspace(-4.0, 4.0, 81) {
                assert!(e.lambda_diamond(s) >= e.lambda(s));
                assert_eq!(e.lambda_diamond(s), e.lambda_diamond(-s));
                assert!(e.lambda(s) >= 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(EntropySpec::lp_norm(1.0).is_err());
        assert!(EntropySpec::new(EntropyKind::LpEntropy, None).is_err());
    }

    #[test]
    fn weighted_forms_match_plain_products() {
        for e in catalog() {
            for s in linspace(-2.0, 0.8, 15) {
                let lr: f64 = -1.3;
                let r = lr.exp();
                assert!((e.gamma_weighted(s, lr) - e.gamma(s) * r).abs() < 1e-12);
                assert!((e.gamma_prime_weighted(s, lr).unwrap() - e.gamma_prime(s).unwrap() * r).abs() < 1e-12);
            }
        }
        // no overflow for e^{s} against a vanishing density
        let rel = EntropySpec::relative();
        assert_eq!(rel.gamma_weighted(800.0, -801.0), (-1.0f64).exp() - (-801.0f64).exp());
    }
}
