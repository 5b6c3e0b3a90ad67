//! JSON run configuration.

use std::path::{Path, PathBuf};

use entroproj::dual::ConstraintSet;
use entroproj::gibbs::SimConfig;
use entroproj::measures::{Density1D, DensityFamily, DiscreteMeasure, Measure, QuadratureConfig, TestFunction};
use entroproj::{EntropyKind, EntropySpec, Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub analyze: AnalyzeSpec,
    pub gibbs: Option<GibbsSpec>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSpec {
    /// `R ∝ e^{-z}/(1 + z³)`, `θ(z) = z`, `C = [c, ∞)`, probability measures.
    BuiltinCsiszar { c: f64 },
    /// `R = Exp(1)`, `θ(z) = z`, `C = [c, ∞)`, probability measures.
    BuiltinExponential { c: f64 },
    Custom(CustomSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub measure: MeasureSpec,
    pub entropy: EntropyConfig,
    pub theta: Vec<ThetaSpec>,
    pub constraint: ConstraintSet,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeasureSpec {
    Density {
        #[serde(flatten)]
        family: DensityFamily,
        #[serde(default = "yes")]
        normalized: bool,
    },
    Discrete {
        points: Vec<f64>,
        weights: Vec<f64>,
    },
    /// CSV with header `z,weight`.
    Csv {
        path: PathBuf,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    pub name: EntropyKind,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    /// CSV with header `z,value` listing the atoms of a discrete measure.
    GridCsv { grid_csv: PathBuf },
    Function(TestFunction),
}

/// `[lo, hi, points]` grids for the curve sweeps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSpec {
    pub y: Option<(f64, f64, usize)>,
    pub x: Option<(f64, f64, usize)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSpec {
    pub sim: SimConfig,
    #[serde(default)]
    pub singular_diagnostic: bool,
    pub rate_ladder: Option<Vec<usize>>,
}

/// A resolved problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub r: Measure,
    pub spec: EntropySpec,
    pub theta: Vec<TestFunction>,
    pub constraint: ConstraintSet,
    /// `θ[0] ≡ 1` pins the total mass to one.
    pub augmented: bool,
    /// `(θ, c)` when the problem is relative entropy with a scalar moment
    /// constrained to `[c, ∞)`.
    pub scalar: Option<(TestFunction, f64)>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    /// Builds the scenario; relative paths are taken from `base`.
    pub fn scenario(&self, base: &Path) -> Result<Scenario> {
        let builtin = |name: &str, r: Measure, c: f64| -> Result<Scenario> {
            if !c.is_finite() {
                return Err(Error::InvalidInput("c must be finite".into()));
            }
            Ok(Scenario {
                name: name.into(),
                r,
                spec: EntropySpec::relative(),
                theta: vec![TestFunction::constant(1.0), TestFunction::Identity],
                constraint: ConstraintSet::Box { lo: vec![1.0, c], hi: vec![1.0, f64::INFINITY] },
                augmented: true,
                scalar: Some((TestFunction::Identity, c)),
            })
        };
        match &self.scenario {
            ScenarioSpec::BuiltinCsiszar { c } => builtin("builtin_csiszar", Density1D::csiszar(1.0, 3.0, true)?.into(), *c),
            ScenarioSpec::BuiltinExponential { c } => builtin("builtin_exponential", Density1D::exponential(1.0)?.into(), *c),
            ScenarioSpec::Custom(cs) => {
                let r: Measure = match &cs.measure {
                    MeasureSpec::Density { family, normalized } => Density1D::new(*family, *normalized, QuadratureConfig::default())?.into(),
                    MeasureSpec::Discrete { points, weights } => DiscreteMeasure::new(points.clone(), weights.clone())?.into(),
                    MeasureSpec::Csv { path } => DiscreteMeasure::from_csv(base.join(path))?.into(),
                };
                let mut theta = Vec::with_capacity(cs.theta.len());
                for t in &cs.theta {
                    theta.push(match t {
                        ThetaSpec::Function(f) => f.clone(),
                        ThetaSpec::GridCsv { grid_csv } => {
                            let d = r.as_discrete().ok_or_else(|| Error::InvalidInput("grid θ needs a discrete measure".into()))?;
                            TestFunction::grid_from_csv(base.join(grid_csv), d)?
                        }
                    });
                }
                let spec = EntropySpec::new(cs.entropy.name, cs.entropy.p)?;
                let (lo, hi) = cs.constraint.bounds();
                let scalar = (spec.kind() == EntropyKind::Relative && theta.len() == 1 && lo.len() == 1 && hi[0] == f64::INFINITY && lo[0].is_finite())
                    .then(|| (theta[0].clone(), lo[0]));
                Ok(Scenario { name: "custom".into(), r, spec, theta, constraint: cs.constraint.clone(), augmented: false, scalar })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_custom() {
        let text = r#"{
            "scenario": {"kind": "custom",
                "measure": {"type": "density", "family": "uniform", "lo": 0.0, "hi": 1.0},
                "entropy": {"name": "relative"},
                "theta": [{"kind": "identity"}],
                "constraint": {"lower_bounds": [0.7]}},
            "gibbs": {"sim": {"n": 10, "delta": 0.1, "trials": 5, "seed": 1, "bins": [0.0, 0.5, 1.0],
                              "proposal": {"kind": "exponential_tilt", "y": 1.0}}}
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        let sc = cfg.scenario(Path::new(".")).unwrap();
        assert_eq!(sc.scalar, Some((TestFunction::Identity, 0.7)));
        assert!(!sc.augmented);
        assert_eq!(cfg.gibbs.unwrap().sim.n, 10);
    }

    #[test]
    fn builtin_is_augmented() {
        let cfg: RunConfig = serde_json::from_str(r#"{"scenario": {"kind": "builtin_csiszar", "c": 2.0}}"#).unwrap();
        let sc = cfg.scenario(Path::new(".")).unwrap();
        assert!(sc.augmented);
        assert_eq!(sc.theta.len(), 2);
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"scenario": {"kind": "builtin_csiszar", "c": 2.0}, "colour": 1}"#).is_err());
    }
}
