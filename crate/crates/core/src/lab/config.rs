use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basin::{SampleGrid, Verdict, DEFAULT_MIN_HITS};
use crate::error::{Error, FieldError, Result};
use crate::lyapunov::{DEFAULT_QUADRATURE_RESOLUTION, DEFAULT_WARMUP};
use crate::markov::CylinderSource;
use crate::torus::{HyperbolicToralMap, MapSpec, TorusPoint};
use crate::weak_star::{
    empirical_measure, DiscreteMeasure, FamilySpec, MeasureRep, TestFunctionFamily,
};

pub const DEFAULT_MAX_PERIOD: usize = 10_000;
const PERIOD_TOLERANCE: f64 = 1e-9;

/// Measure whose pseudo-basins are measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Lebesgue,
    Dirac {
        point: [f64; 2],
    },
    /// Uniform measure on the orbit of `seed`, which must be periodic.
    PeriodicOrbit {
        seed: [f64; 2],
        #[serde(default = "default_max_period")]
        max_period: usize,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// `σ_n(start)` for a long orbit, a proxy for the physical measure.
    EmpiricalOrbit {
        start: [f64; 2],
        length: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub target: TargetSpec,
}

fn default_max_period() -> usize {
    DEFAULT_MAX_PERIOD
}

/// Orbit of a periodic point, found by iterating until it returns.
pub fn periodic_orbit(
    map: &HyperbolicToralMap,
    seed: TorusPoint,
    max_period: usize,
) -> Result<Vec<TorusPoint>> {
    let mut orbit = vec![seed];
    let mut x = map.step(seed);
    while x.distance(&seed) > PERIOD_TOLERANCE {
        if orbit.len() >= max_period {
            return Err(Error::InvalidArgument(format!(
                "({}, {}) does not return within {max_period} steps",
                seed.x1(),
                seed.x2()
            )));
        }
        orbit.push(x);
        x = map.step(x);
    }
    Ok(orbit)
}

impl TargetSpec {
    pub fn measure(&self, map: &HyperbolicToralMap) -> Result<MeasureRep> {
        Ok(match self {
            TargetSpec::Lebesgue => MeasureRep::LebesgueExact,
            TargetSpec::Dirac { point } => MeasureRep::dirac(TorusPoint::from(*point)),
            TargetSpec::PeriodicOrbit { seed, max_period } => {
                let orbit = periodic_orbit(map, TorusPoint::from(*seed), *max_period)?;
                MeasureRep::Discrete(DiscreteMeasure::uniform(&orbit)?)
            }
            TargetSpec::Mixture { components } => MeasureRep::Mixture(
                components
                    .iter()
                    .map(|c| c.target.measure(map).map(|m| (c.weight, m)))
                    .collect::<Result<_>>()?,
            ),
            TargetSpec::EmpiricalOrbit { start, length } => {
                MeasureRep::Discrete(empirical_measure(map, TorusPoint::from(*start), *length)?)
            }
        })
    }

    /// Sampling scheme for cylinder statistics of this target, with
    /// `samples` sample points in total.
    pub fn cylinder_source(
        &self,
        map: &HyperbolicToralMap,
        samples: u64,
        orbit_start: [f64; 2],
    ) -> Result<CylinderSource> {
        Ok(match self {
            TargetSpec::Lebesgue => CylinderSource::Orbit {
                start: orbit_start.into(),
                length: samples as usize,
            },
            TargetSpec::EmpiricalOrbit { start, .. } => CylinderSource::Orbit {
                start: (*start).into(),
                length: samples as usize,
            },
            TargetSpec::Dirac { .. } | TargetSpec::PeriodicOrbit { .. } => {
                match self.measure(map)? {
                    MeasureRep::Discrete(measure) => CylinderSource::Discrete { measure, samples },
                    _ => unreachable!("point targets are discrete"),
                }
            }
            TargetSpec::Mixture { components } => CylinderSource::Combined(
                components
                    .iter()
                    .map(|c| {
                        let part = (c.weight * samples as f64).round() as u64;
                        c.target.cylinder_source(map, part, orbit_start)
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    fn check(&self, path: &str, errors: &mut Vec<FieldError>) {
        let finite = |p: &[f64; 2]| p.iter().all(|v| v.is_finite());
        match self {
            TargetSpec::Lebesgue => {}
            TargetSpec::Dirac { point } => {
                if !finite(point) {
                    errors.push(FieldError::new(
                        format!("{path}.point"),
                        "coordinates must be finite",
                    ));
                }
            }
            TargetSpec::PeriodicOrbit { seed, max_period } => {
                if !finite(seed) {
                    errors.push(FieldError::new(
                        format!("{path}.seed"),
                        "coordinates must be finite",
                    ));
                }
                if *max_period == 0 {
                    errors.push(FieldError::new(
                        format!("{path}.max_period"),
                        "must be at least 1",
                    ));
                }
            }
            TargetSpec::EmpiricalOrbit { start, length } => {
                if !finite(start) {
                    errors.push(FieldError::new(
                        format!("{path}.start"),
                        "coordinates must be finite",
                    ));
                }
                if *length == 0 {
                    errors.push(FieldError::new(
                        format!("{path}.length"),
                        "must be at least 1",
                    ));
                }
            }
            TargetSpec::Mixture { components } => {
                if components.is_empty() {
                    errors.push(FieldError::new(
                        format!("{path}.components"),
                        "mixture needs at least one component",
                    ));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components
                    .iter()
                    .any(|c| !(c.weight.is_finite() && c.weight >= 0.0))
                {
                    errors.push(FieldError::new(
                        format!("{path}.components"),
                        "weights must be non-negative",
                    ));
                } else if (total - 1.0).abs() > 1e-9 {
                    errors.push(FieldError::new(
                        format!("{path}.components"),
                        format!("weights must sum to 1, got {total}"),
                    ));
                }
                for (i, c) in components.iter().enumerate() {
                    c.target
                        .check(&format!("{path}.components[{i}].target"), errors);
                }
            }
        }
    }
}

/// Either an explicit list or an arithmetic range `start..=end` by `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NValues {
    List(Vec<usize>),
    Range {
        start: usize,
        end: usize,
        step: usize,
    },
}

impl Default for NValues {
    fn default() -> Self {
        NValues::List(Vec::new())
    }
}

impl NValues {
    pub fn values(&self) -> Vec<usize> {
        match self {
            NValues::List(v) => v.clone(),
            NValues::Range { start, end, step } => {
                (*start..=*end).step_by((*step).max(1)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySpec {
    pub depths: Vec<usize>,
    pub samples: u64,
    #[serde(default = "default_orbit_start")]
    pub orbit_start: [f64; 2],
}

pub fn default_orbit_start() -> [f64; 2] {
    [0.211_324_865_405_187_1, std::f64::consts::FRAC_1_SQRT_2]
}

/// Optional pass/fail conditions; a failed one makes the run exit with status 2.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Every valid slope must lie in `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_range: Option<[f64; 2]>,
    /// The slope at the smallest ε must lie in `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_slope_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes_decreasing: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_abs_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_range: Option<[f64; 2]>,
    /// Fraction at the largest `n` of every curve must be at least this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_final_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub map: MapSpec,
    #[serde(default)]
    pub family: FamilySpec,
    pub grid: SampleGrid,
    pub target: TargetSpec,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub n_values: NValues,
    /// Regression window; defaults to the full `n` range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(usize, usize)>,
    #[serde(default = "default_min_hits")]
    pub min_hits: u64,
    #[serde(default = "default_verdict_tolerance")]
    pub verdict_tolerance: f64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_quadrature")]
    pub quadrature_resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropySpec>,
    #[serde(default)]
    pub expectations: Expectations,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_min_hits() -> u64 {
    DEFAULT_MIN_HITS
}
fn default_verdict_tolerance() -> f64 {
    0.01
}
fn default_warmup() -> usize {
    DEFAULT_WARMUP
}
fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_RESOLUTION
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("records")
}

/// A config whose specs have all been turned into live objects.
pub struct Prepared {
    pub map: HyperbolicToralMap,
    pub family: TestFunctionFamily,
    pub target: MeasureRep,
    pub n_values: Vec<usize>,
    pub window: (usize, usize),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::ConfigInvalid(vec![FieldError::new("<document>", e.to_string())]))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Checks every field and builds the map, family and target measure.
    /// All problems are reported together.
    pub fn prepare(&self) -> Result<Prepared> {
        let mut errors = Vec::new();
        if self.name.trim().is_empty() {
            errors.push(FieldError::new("name", "must not be empty"));
        }
        let map = HyperbolicToralMap::try_from(self.map.clone())
            .map_err(|e| errors.push(FieldError::new("map", e.to_string())))
            .ok();
        let family = TestFunctionFamily::from_spec(&self.family)
            .map_err(|e| errors.push(FieldError::new("family", e.to_string())))
            .ok();
        if let Err(e) = self.grid.validate() {
            errors.push(FieldError::new("grid.resolution", e.to_string()));
        }
        self.target.check("target", &mut errors);
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            errors.push(FieldError::new(
                "epsilons",
                "every ε must be positive and finite",
            ));
        }
        if self.epsilons.windows(2).any(|w| w[0] <= w[1]) {
            errors.push(FieldError::new("epsilons", "must be strictly decreasing"));
        }
        let n_values = self.n_values.values();
        let bad_n =
            n_values.is_empty() || n_values[0] == 0 || n_values.windows(2).any(|w| w[0] >= w[1]);
        if !self.epsilons.is_empty() && bad_n {
            errors.push(FieldError::new(
                "n_values",
                "must be non-empty, positive and strictly increasing",
            ));
        }
        let window = self.window.unwrap_or((
            n_values.first().copied().unwrap_or(0),
            n_values.last().copied().unwrap_or(0),
        ));
        if window.0 > window.1 {
            errors.push(FieldError::new("window", "lower end exceeds upper end"));
        }
        if !(self.verdict_tolerance.is_finite() && self.verdict_tolerance >= 0.0) {
            errors.push(FieldError::new("verdict_tolerance", "must be non-negative"));
        }
        if self.warmup == 0 {
            errors.push(FieldError::new("warmup", "must be at least 1"));
        }
        if self.quadrature_resolution == 0 {
            errors.push(FieldError::new(
                "quadrature_resolution",
                "must be at least 1",
            ));
        }
        if let Some(e) = &self.entropy {
            if e.depths.is_empty() || e.depths[0] == 0 || e.depths.windows(2).any(|w| w[0] >= w[1])
            {
                errors.push(FieldError::new(
                    "entropy.depths",
                    "must be non-empty, positive and strictly increasing",
                ));
            }
            if e.samples == 0 {
                errors.push(FieldError::new("entropy.samples", "must be positive"));
            }
        }
        let target = match (&map, errors.is_empty()) {
            (Some(m), true) => self
                .target
                .measure(m)
                .map_err(|e| errors.push(FieldError::new("target", e.to_string())))
                .ok(),
            _ => None,
        };
        match (map, family, target) {
            (Some(map), Some(family), Some(target)) if errors.is_empty() => Ok(Prepared {
                map,
                family,
                target,
                n_values,
                window,
            }),
            _ => Err(Error::ConfigInvalid(errors)),
        }
    }
}
