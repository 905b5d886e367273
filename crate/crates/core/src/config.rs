//! Run configuration.
//!
//! One TOML file drives every pipeline stage. Unknown keys are rejected.
//! All randomness derives from `io.seed`:
//!
//! | stage          | seed                                   |
//! |----------------|----------------------------------------|
//! | scene phases   | `derive_seed(seed, "stage.scene", [])` |
//! | noise, splits  | `derive_seed(seed, "stage.data", [])`  |
//! | training       | `derive_seed(seed, "stage.train", [])` |

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::alista::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{NmseScope, DEFAULT_DETECTION_THRESHOLD};
use crate::hash::{ContentHash, Hasher};
use crate::model::{AcquisitionGeometry, ElevationGrid};
use crate::rng::derive_seed;
use crate::scene::{elevation_grid_for, Labeling, SceneSpec, SelectionCriteria, SplitFractions, DEFAULT_GRID_LEN};
use crate::solvers::{GreedyConfig, IstaConfig, SolverSpec};

pub const CONFIG_VERSION: u32 = 1;

/// Simulation parameters of the synthetic 8-channel building experiment.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

/// Parameters of the 8-channel Ku-band airborne array.
pub const KU_BAND_CONFIG: &str = include_str!("../configs/ku_band.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub geometry: GeometryConfig,
    pub grid: GridConfig,
    pub scene: SceneSpec,
    pub data: DataConfig,
    pub solvers: SolversConfig,
    pub alista: AlistaConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            geometry: GeometryConfig::default(),
            grid: GridConfig::default(),
            scene: SceneSpec::default(),
            data: DataConfig::default(),
            solvers: SolversConfig::default(),
            alista: AlistaConfig::default(),
            eval: EvalConfig::default(),
            io: IoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub num_channels: usize,
    /// Uniform spacing; baseline `n` is `n * baseline_interval`.
    pub baseline_interval: f64,
    /// Explicit baselines, overriding `num_channels` and `baseline_interval`.
    pub baselines: Option<Vec<f64>>,
    pub wavelength: f64,
    /// Informational only; `wavelength` is what the model uses.
    pub carrier_frequency_ghz: Option<f64>,
    pub slant_range: f64,
    pub look_angle_deg: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            num_channels: 8,
            baseline_interval: 0.1,
            baselines: None,
            wavelength: 0.003125,
            carrier_frequency_ghz: Some(5.5),
            slant_range: 400.0,
            look_angle_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub len: usize,
    /// Elevation range in meters; derived from the scene when absent.
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            len: DEFAULT_GRID_LEN,
            min: None,
            max: None,
        }
    }
}

/// Classical solver whose filtered reconstructions form the second,
/// ground-truth-free training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsLabels {
    None,
    #[default]
    Iht,
    Omp,
    Ista,
}

impl CsLabels {
    pub fn solver_name(self) -> Option<&'static str> {
        match self {
            CsLabels::None => None,
            CsLabels::Iht => Some("iht"),
            CsLabels::Omp => Some("omp"),
            CsLabels::Ista => Some("ista"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub snr_db: f64,
    pub cs_labels: CsLabels,
    pub selection: SelectionCriteria,
    pub split: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            cs_labels: CsLabels::Iht,
            selection: SelectionCriteria::default(),
            split: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IstaSection {
    pub alpha: f64,
    /// Step-size constant; `lipschitz_margin * lambda_max(R^H R)` when absent.
    pub lipschitz: Option<f64>,
    pub lipschitz_margin: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for IstaSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lipschitz: None,
            lipschitz_margin: 1.01,
            max_iters: 500,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreedySection {
    pub sparsity: usize,
    pub max_iters: usize,
    pub residual_tolerance: f64,
}

impl GreedySection {
    fn with(sparsity: usize, max_iters: usize) -> Self {
        Self {
            sparsity,
            max_iters,
            residual_tolerance: 0.0,
        }
    }

    pub fn to_config(&self) -> GreedyConfig {
        GreedyConfig {
            sparsity: self.sparsity,
            max_iters: self.max_iters,
            residual_tolerance: self.residual_tolerance,
        }
    }
}

impl Default for GreedySection {
    fn default() -> Self {
        Self::with(2, 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolversConfig {
    pub ista: IstaSection,
    pub omp: GreedySection,
    pub iht: GreedySection,
}

impl Default for SolversConfig {
    fn default() -> Self {
        Self {
            ista: IstaSection::default(),
            omp: GreedySection::with(2, 2),
            iht: GreedySection::with(3, 300),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlistaConfig {
    pub layers: usize,
    pub train: TrainConfig,
    /// Depths visited by `sweep-layers`, inclusive.
    pub sweep_min: usize,
    pub sweep_max: usize,
}

impl Default for AlistaConfig {
    fn default() -> Self {
        Self {
            layers: 10,
            train: TrainConfig::default(),
            sweep_min: 1,
            sweep_max: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub detection_threshold: f64,
    pub nmse_scope: NmseScope,
    /// Pixels scored by `eval` and timed by `bench`.
    pub split: EvalSplit,
    pub bench_repetitions: usize,
    pub bench_lanes: usize,
    /// Caps the number of pixels timed by `bench`; all when absent.
    pub bench_max_pixels: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            nmse_scope: NmseScope::FullProfile,
            split: EvalSplit::Test,
            bench_repetitions: 3,
            bench_lanes: 1,
            bench_max_pixels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub seed: u64,
    /// Worker threads for per-pixel stages; 0 uses every core.
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Writes `value` at the dotted `path` of a TOML table, creating tables on
/// the way. The value is parsed as TOML and falls back to a plain string.
fn set_path(root: &mut toml::Table, path: &str, value: &str) -> Result<()> {
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(path, "empty key segment"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn field_of(err: &toml::de::Error) -> String {
    let msg = err.message();
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides before validation.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(field_of(&e), e.message()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, v)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(field_of(&e), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn bundled() -> Self {
        Self::from_toml(DEFAULT_CONFIG, &[]).expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("this build reads version {CONFIG_VERSION}, got {}", self.version),
            ));
        }
        let geometry = self.geometry()?;
        self.scene.validate().map_err(|e| Error::config("scene", e))?;
        let grid = self.grid()?;
        let top = self.scene.max_elevation(geometry.look_angle_deg());
        if self.scene.building.is_some() && !grid.contains(top) {
            return Err(Error::config(
                "scene.building.height",
                format!(
                    "facade top at elevation {top:.3} m lies outside the grid [{:.3}, {:.3}]",
                    grid.min(),
                    grid.max()
                ),
            ));
        }
        if !grid.contains(0.0) {
            return Err(Error::config("grid.min", "grid must contain elevation 0 (the ground)"));
        }
        if let Some(period) = geometry.ambiguity_period() {
            let span = grid.max() - grid.min();
            if span >= period {
                let field = if self.grid.max.is_some() {
                    "grid.max"
                } else {
                    "scene.building.height"
                };
                return Err(Error::config(
                    field,
                    format!("elevation span {span:.3} m reaches the ambiguity period {period:.3} m"),
                ));
            }
        }
        if !(self.data.snr_db > 0.0) {
            return Err(Error::config("data.snr_db", "must be positive (inf disables noise)"));
        }
        self.data.split.validate()?;
        let sel = &self.data.selection;
        if !(sel.max_residual >= 0.0 && sel.min_peak_ratio >= 1.0) {
            return Err(Error::config(
                "data.selection",
                "need max_residual >= 0 and min_peak_ratio >= 1",
            ));
        }
        let ista = &self.solvers.ista;
        if !(ista.alpha > 0.0) {
            return Err(Error::config("solvers.ista.alpha", "must be positive"));
        }
        if !(ista.lipschitz_margin > 1.0) {
            return Err(Error::config("solvers.ista.lipschitz_margin", "must exceed 1"));
        }
        if ista.max_iters == 0 {
            return Err(Error::config("solvers.ista.max_iters", "must be at least 1"));
        }
        for (name, s) in [("solvers.omp", &self.solvers.omp), ("solvers.iht", &self.solvers.iht)] {
            if s.sparsity == 0 || s.sparsity > geometry.num_channels().min(grid.len()) || s.max_iters < s.sparsity {
                return Err(Error::config(
                    format!("{name}.sparsity"),
                    format!(
                        "need 1 <= sparsity <= min(N, L) = {} and max_iters >= sparsity",
                        geometry.num_channels().min(grid.len())
                    ),
                ));
            }
        }
        self.alista.train.validate(self.alista.layers)?;
        if self.alista.sweep_min == 0 || self.alista.sweep_min > self.alista.sweep_max {
            return Err(Error::config("alista.sweep_min", "need 1 <= sweep_min <= sweep_max"));
        }
        let ev = &self.eval;
        if !(ev.detection_threshold >= 0.0) {
            return Err(Error::config("eval.detection_threshold", "must be >= 0"));
        }
        if ev.bench_repetitions < 3 {
            return Err(Error::config("eval.bench_repetitions", "must be at least 3"));
        }
        if ev.bench_lanes == 0 {
            return Err(Error::config("eval.bench_lanes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<AcquisitionGeometry> {
        let g = &self.geometry;
        let baselines = match &g.baselines {
            Some(b) => b.clone(),
            None => (0..g.num_channels).map(|n| n as f64 * g.baseline_interval).collect(),
        };
        AcquisitionGeometry::new(baselines, g.wavelength, g.slant_range, g.look_angle_deg)
            .map_err(|e| Error::config("geometry", e))
    }

    pub fn grid(&self) -> Result<ElevationGrid> {
        let look = self.geometry.look_angle_deg;
        let grid = match (self.grid.min, self.grid.max) {
            (None, None) => elevation_grid_for(self.scene.max_elevation(look), self.grid.len),
            (Some(lo), Some(hi)) => ElevationGrid::spanning(lo, hi, self.grid.len),
            _ => return Err(Error::config("grid", "set both `min` and `max` or neither")),
        };
        grid.map_err(|e| Error::config("grid", e))
    }

    /// Scene spec with its seed drawn from the root seed.
    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            random_seed: self.scene_seed(),
            ..self.scene.clone()
        }
    }

    pub fn scene_seed(&self) -> u64 {
        derive_seed(self.io.seed, "stage.scene", &[])
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.io.seed, "stage.data", &[])
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.io.seed, "stage.train", &[])
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed(),
            ..self.alista.train.clone()
        }
    }

    pub fn ista_config(&self, lambda_max: f64) -> IstaConfig {
        let s = &self.solvers.ista;
        IstaConfig {
            alpha: s.alpha,
            lipschitz: s.lipschitz.unwrap_or(s.lipschitz_margin * lambda_max),
            max_iters: s.max_iters,
            tolerance: s.tolerance,
        }
    }

    /// Classical solver by name: `ista`, `omp` or `iht`.
    pub fn solver_spec(&self, name: &str, lambda_max: f64) -> Result<SolverSpec> {
        match name {
            "ista" => Ok(SolverSpec::Ista(self.ista_config(lambda_max))),
            "omp" => Ok(SolverSpec::Omp(self.solvers.omp.to_config())),
            "iht" => Ok(SolverSpec::Iht(self.solvers.iht.to_config())),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }

    /// Labeling of the ground-truth-free set, if one is configured.
    pub fn cs_labeling(&self, lambda_max: f64) -> Result<Option<Labeling>> {
        let Some(name) = self.data.cs_labels.solver_name() else {
            return Ok(None);
        };
        Ok(Some(Labeling::CsReconstruction {
            solver: self.solver_spec(name, lambda_max)?,
            criteria: self.data.selection,
        }))
    }

    /// Identifies the results this config produces. `io.workers`,
    /// `io.output_dir` and the `eval.bench_*` keys are excluded since they
    /// cannot change any reproducible artifact.
    pub fn hash(&self) -> ContentHash {
        let mut canonical = self.clone();
        canonical.io.workers = 0;
        canonical.io.output_dir = PathBuf::new();
        let bench = EvalConfig::default();
        canonical.eval.bench_repetitions = bench.bench_repetitions;
        canonical.eval.bench_lanes = bench.bench_lanes;
        canonical.eval.bench_max_pixels = bench.bench_max_pixels;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let mut h = Hasher::new("tomosar.config.v1");
        h.bytes(json.as_bytes());
        h.finish()
    }
}
