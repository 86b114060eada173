use std::fmt;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::apf::{ApfConfig, ApfMode};
use crate::constraints::RateBounds;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::perception::{DetectorConfig, LidarSpec, Scene};
use crate::problem::{CostWeights, HorizonConfig, PackingConfig};
use crate::solver::{BoxBounds, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Nmpc,
    #[serde(alias = "apf-baseline")]
    ApfBaseline,
    #[serde(alias = "apf-enhanced")]
    ApfEnhanced,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::Nmpc, Self::ApfBaseline, Self::ApfEnhanced];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Nmpc => "nmpc",
            Self::ApfBaseline => "apf_baseline",
            Self::ApfEnhanced => "apf_enhanced",
        }
    }

    pub fn apf_mode(&self) -> Option<ApfMode> {
        match self {
            Self::Nmpc => None,
            Self::ApfBaseline => Some(ApfMode::Baseline),
            Self::ApfEnhanced => Some(ApfMode::Enhanced),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A closed-loop experiment: scene, mission and every tuning knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub scene: Scene,
    pub start: Vector3<f64>,
    pub setpoint: Vector3<f64>,
    #[serde(default)]
    pub controller: ControllerKind,
    #[serde(default = "defaults::duration_max")]
    pub duration_max: f64,
    #[serde(default = "defaults::arrival_radius")]
    pub arrival_radius: f64,
    /// Time the UAV must stay inside `arrival_radius`, s.
    #[serde(default = "defaults::arrival_dwell")]
    pub arrival_dwell: f64,
    /// True-geometry distance that counts as a collision, m.
    #[serde(default = "defaults::collision_distance")]
    pub collision_distance: f64,
    #[serde(default = "defaults::d_s")]
    pub d_s: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// RK4 substeps per control period.
    #[serde(default = "defaults::plant_substeps")]
    pub plant_substeps: usize,
    /// Disables the solver time budget and leaves solver timings out of the
    /// log, making runs bit-reproducible.
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub record_scans: bool,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub input_bounds: BoxBounds,
    #[serde(default)]
    pub rate_bounds: RateBounds,
    #[serde(default)]
    pub apf: ApfConfig,
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub packing: PackingConfig,
}

mod defaults {
    pub fn duration_max() -> f64 {
        40.0
    }
    pub fn arrival_radius() -> f64 {
        0.2
    }
    pub fn arrival_dwell() -> f64 {
        1.0
    }
    pub fn collision_distance() -> f64 {
        0.05
    }
    pub fn d_s() -> f64 {
        0.4
    }
    pub fn plant_substeps() -> usize {
        4
    }
}

const STOCK: [(&str, &str); 3] = [
    ("cylinder", include_str!("../../scenarios/cylinder.toml")),
    ("two_walls", include_str!("../../scenarios/two_walls.toml")),
    ("opening", include_str!("../../scenarios/opening.toml")),
];

impl ScenarioSpec {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Scenario {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a scenario file; `stock:<name>` selects a bundled scenario.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("stock:")) {
            return Self::stock(name);
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn stock_names() -> impl Iterator<Item = &'static str> {
        STOCK.iter().map(|(n, _)| *n)
    }

    pub fn stock(name: &str) -> Result<Self> {
        let (_, text) = STOCK.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::Scenario {
            path: format!("stock:{name}"),
            message: format!(
                "unknown stock scenario, expected one of {:?}",
                Self::stock_names().collect::<Vec<_>>()
            ),
        })?;
        Self::from_toml_str(text, &format!("stock:{name}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.solver.validate()?;
        self.input_bounds.validate()?;
        self.apf.validate()?;
        self.lidar.validate()?;
        self.scene.validate()?;
        if (self.horizon.ts - self.model.ts).abs() > 1e-12 || self.horizon.n == 0 {
            return Err(Error::InvalidConfig(
                "horizon needs n >= 1 and ts equal to the model sampling time".into(),
            ));
        }
        let positive = [self.duration_max, self.arrival_radius, self.collision_distance];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.arrival_dwell >= 0.0) || !(self.d_s >= 0.0) {
            return Err(Error::InvalidConfig(
                "duration_max, arrival_radius and collision_distance must be positive".into(),
            ));
        }
        if self.plant_substeps == 0 {
            return Err(Error::InvalidConfig("plant_substeps must be >= 1".into()));
        }
        for (label, p) in [("start", &self.start), ("setpoint", &self.setpoint)] {
            self.check_free(label, &p.xy())?;
        }
        Ok(())
    }

    fn check_free(&self, label: &str, p: &Vector2<f64>) -> Result<()> {
        if let Some(b) = &self.scene.bounds {
            if !b.contains(p) {
                return Err(Error::InvalidConfig(format!("{label} {p:?} outside the arena")));
            }
        }
        if self.scene.clearance(p) <= self.d_s {
            return Err(Error::InvalidConfig(format!(
                "{label} {p:?} lies inside an inflated obstacle"
            )));
        }
        Ok(())
    }

    /// Number of control steps that fit in `duration_max`.
    pub fn max_steps(&self) -> usize {
        (self.duration_max / self.model.ts).round() as usize
    }
}
