//! Synthetic box-building scenes, additive noise and labeled sample sets.
//!
//! Pixels sit on a ground-range lattice `x0 = range * pixel_spacing`. A point
//! at ground range `x` and height `z` falls into the pixel whose iso-range
//! line `(x0 + s sin(look), s cos(look))` passes through it, at elevation
//! `s = z / cos(look)`. A box building then produces:
//!
//! * layover pixels in front of the near facade, holding a facade return and
//!   the ground return at `s = 0`,
//! * roof returns at `s = height / cos(look)`,
//! * pixels with no visible scatterer (footprint minus roof, and shadow);
//!   these carry no signal and never enter a sample set.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::model::{
    AcquisitionGeometry, CVector, ElevationGrid, Measurement, ReflectivityProfile, SteeringMatrix, C64,
};
use crate::rng::{derive_seed, rng_from, unit_from_seed};
use crate::solvers::SolverSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelCoord {
    pub azimuth: u32,
    pub range: u32,
}

impl PixelCoord {
    pub fn new(azimuth: u32, range: u32) -> Self {
        Self { azimuth, range }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildingSpec {
    /// First azimuth row covered by the building.
    pub azimuth_start: u32,
    /// One past the last azimuth row.
    pub azimuth_end: u32,
    /// Ground range of the facade facing the sensor, meters.
    pub near_edge: f64,
    /// Footprint extent in ground range, meters.
    pub depth: f64,
    pub height: f64,
}

impl Default for BuildingSpec {
    fn default() -> Self {
        Self {
            azimuth_start: 8,
            azimuth_end: 40,
            near_edge: 4.0,
            depth: 4.0,
            height: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub azimuth_extent: u32,
    pub range_extent: u32,
    /// Ground-range pixel spacing, meters.
    pub pixel_spacing: f64,
    pub building: Option<BuildingSpec>,
    pub facade_amplitude: f64,
    pub ground_amplitude: f64,
    pub roof_amplitude: f64,
    /// Relative amplitude spread; 0 keeps every scatterer at its nominal amplitude.
    pub amplitude_jitter: f64,
    pub max_scatterers_per_pixel: usize,
    /// Set from the run's root seed, never read from config files.
    #[serde(skip)]
    pub random_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            azimuth_extent: 48,
            range_extent: 96,
            pixel_spacing: 0.125,
            building: Some(BuildingSpec::default()),
            facade_amplitude: 1.0,
            ground_amplitude: 1.0,
            roof_amplitude: 1.0,
            amplitude_jitter: 0.0,
            max_scatterers_per_pixel: 2,
            random_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if self.azimuth_extent == 0 || self.range_extent == 0 {
            return bad("extents must be at least 1 pixel".into());
        }
        if !(self.pixel_spacing > 0.0 && self.pixel_spacing.is_finite()) {
            return bad(format!("pixel_spacing must be positive, got {}", self.pixel_spacing));
        }
        for (name, a) in [
            ("facade_amplitude", self.facade_amplitude),
            ("ground_amplitude", self.ground_amplitude),
            ("roof_amplitude", self.roof_amplitude),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("{name} must be positive, got {a}"));
            }
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return bad(format!(
                "amplitude_jitter must lie in [0, 1), got {}",
                self.amplitude_jitter
            ));
        }
        if !(1..=3).contains(&self.max_scatterers_per_pixel) {
            return bad(format!(
                "max_scatterers_per_pixel must lie in 1..=3, got {}",
                self.max_scatterers_per_pixel
            ));
        }
        if let Some(b) = &self.building {
            if !(b.height > 0.0 && b.height.is_finite()) {
                return bad(format!("building height must be positive, got {}", b.height));
            }
            if !(b.depth > 0.0 && b.depth.is_finite()) || !b.near_edge.is_finite() {
                return bad("building depth must be positive and near_edge finite".into());
            }
            if b.azimuth_start >= b.azimuth_end || b.azimuth_end > self.azimuth_extent {
                return bad(format!(
                    "building azimuth rows {}..{} must be a nonempty range inside 0..{}",
                    b.azimuth_start, b.azimuth_end, self.azimuth_extent
                ));
            }
        }
        Ok(())
    }

    /// Largest elevation any scatterer of this scene can take.
    pub fn max_elevation(&self, look_angle_deg: f64) -> f64 {
        self.building
            .as_ref()
            .map_or(0.0, |b| b.height / look_angle_deg.to_radians().cos())
    }

    pub fn pixel_count(&self) -> usize {
        self.azimuth_extent as usize * self.range_extent as usize
    }
}

/// Default number of elevation samples; about 2.5 per Rayleigh cell for the
/// default scene and array.
pub const DEFAULT_GRID_LEN: usize = 16;

/// Grid covering `[0, extent]` with 25% margin split evenly below and above.
pub fn elevation_grid_for(extent: f64, count: usize) -> Result<ElevationGrid> {
    if !(extent > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "elevation extent must be positive, got {extent}"
        )));
    }
    ElevationGrid::spanning(-0.125 * extent, 1.125 * extent, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScattererKind {
    Facade,
    Ground,
    Roof,
}

/// Visible scatterers of one pixel as `(kind, elevation)`, in priority order
/// facade, ground, roof, before any truncation.
pub fn visible_scatterers(spec: &SceneSpec, look_angle_deg: f64, coord: PixelCoord) -> Vec<(ScattererKind, f64)> {
    let x0 = coord.range as f64 * spec.pixel_spacing;
    let Some(b) = spec
        .building
        .as_ref()
        .filter(|b| (b.azimuth_start..b.azimuth_end).contains(&coord.azimuth))
    else {
        return vec![(ScattererKind::Ground, 0.0)];
    };
    let look = look_angle_deg.to_radians();
    let (sin, cos, tan) = (look.sin(), look.cos(), look.tan());
    let layover = b.height * tan;
    let shadow = b.height / tan;
    let mut out = Vec::with_capacity(3);
    if x0 >= b.near_edge - layover && x0 < b.near_edge {
        out.push((ScattererKind::Facade, (b.near_edge - x0) / sin));
    }
    if x0 < b.near_edge || x0 >= b.near_edge + b.depth + shadow {
        out.push((ScattererKind::Ground, 0.0));
    }
    if x0 >= b.near_edge - layover && x0 < b.near_edge + b.depth - layover {
        out.push((ScattererKind::Roof, b.height / cos));
    }
    out
}

/// Per-pixel true profiles of a generated scene, row-major in (azimuth, range).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    azimuth_extent: u32,
    range_extent: u32,
    profiles: Vec<ReflectivityProfile>,
}

impl Scene {
    pub fn get(&self, coord: PixelCoord) -> Option<&ReflectivityProfile> {
        if coord.azimuth >= self.azimuth_extent || coord.range >= self.range_extent {
            return None;
        }
        self.profiles
            .get(coord.azimuth as usize * self.range_extent as usize + coord.range as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PixelCoord, &ReflectivityProfile)> {
        let width = self.range_extent;
        self.profiles
            .iter()
            .enumerate()
            .map(move |(i, p)| (PixelCoord::new(i as u32 / width, i as u32 % width), p))
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn extents(&self) -> (u32, u32) {
        (self.azimuth_extent, self.range_extent)
    }

    pub fn to_map(&self) -> BTreeMap<PixelCoord, ReflectivityProfile> {
        self.iter().map(|(c, p)| (c, p.clone())).collect()
    }
}

pub fn generate_scene(spec: &SceneSpec, geometry: &AcquisitionGeometry, grid: &ElevationGrid) -> Result<Scene> {
    spec.validate()?;
    let look = geometry.look_angle_deg();
    let top = spec.max_elevation(look);
    if !grid.contains(0.0) || !grid.contains(top) {
        return Err(Error::InvalidScene(format!(
            "building elevation extent [0, {top:.4}] m exceeds grid [{:.4}, {:.4}] m",
            grid.min(),
            grid.max()
        )));
    }
    let coords: Vec<PixelCoord> = (0..spec.azimuth_extent)
        .flat_map(|a| (0..spec.range_extent).map(move |r| PixelCoord::new(a, r)))
        .collect();
    let profiles = coords
        .par_iter()
        .map(|&c| pixel_profile(spec, look, grid, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        azimuth_extent: spec.azimuth_extent,
        range_extent: spec.range_extent,
        profiles,
    })
}

fn pixel_profile(spec: &SceneSpec, look: f64, grid: &ElevationGrid, coord: PixelCoord) -> Result<ReflectivityProfile> {
    let mut rng = rng_from(derive_seed(
        spec.random_seed,
        "scene.scatterer",
        &[coord.azimuth as u64, coord.range as u64],
    ));
    let mut values = CVector::zeros(grid.len());
    let mut placed = 0;
    for (kind, s) in visible_scatterers(spec, look, coord) {
        if placed == spec.max_scatterers_per_pixel {
            break;
        }
        let idx = grid.nearest_index(s);
        // the draws happen unconditionally so streams do not depend on collisions
        let jitter: f64 = rng.random_range(-1.0..1.0);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        if values[idx] != C64::new(0.0, 0.0) {
            continue;
        }
        let base = match kind {
            ScattererKind::Facade => spec.facade_amplitude,
            ScattererKind::Ground => spec.ground_amplitude,
            ScattererKind::Roof => spec.roof_amplitude,
        };
        values[idx] = C64::from_polar(base * (1.0 + spec.amplitude_jitter * jitter), phase);
        placed += 1;
    }
    ReflectivityProfile::new(values)
}

/// Adds circular complex white Gaussian noise with per-channel variance
/// `||y||^2 / (N 10^(snr/10))`. An infinite SNR returns the input unchanged.
pub fn add_noise(y_clean: &Measurement, snr_db: f64, seed: u64) -> Result<Measurement> {
    if snr_db == f64::INFINITY {
        return Ok(y_clean.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "SNR must be finite or +inf, got {snr_db}"
        )));
    }
    let energy = y_clean.energy();
    if energy == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let n = y_clean.len();
    let sigma2 = energy / (n as f64 * 10f64.powf(snr_db / 10.0));
    let scale = (sigma2 / 2.0).sqrt();
    let mut rng = rng_from(seed);
    let noisy = y_clean.values().map(|z| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        z + C64::new(re, im) * scale
    });
    Measurement::new(noisy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelProvenance {
    GroundTruth,
    CsReconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.validation >= 0.0 && self.train + self.validation <= 1.0) {
            return Err(Error::config(
                "split",
                format!("need train > 0, validation >= 0, train + validation <= 1; got {self:?}"),
            ));
        }
        Ok(())
    }

    /// Split of a pixel; depends only on the seed and the coordinates, so
    /// sets built with different labelings agree on every pixel.
    pub fn assign(&self, seed: u64, coord: PixelCoord) -> Split {
        let u = unit_from_seed(derive_seed(
            seed,
            "sample.split",
            &[coord.azimuth as u64, coord.range as u64],
        ));
        if u < self.train {
            Split::Train
        } else if u < self.train + self.validation {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionCriteria {
    /// Largest accepted `||y - R g|| / ||y||`.
    pub max_residual: f64,
    /// Smallest accepted ratio between the two largest estimate moduli.
    pub min_peak_ratio: f64,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            max_residual: 0.1,
            min_peak_ratio: 2.0,
        }
    }
}

impl SelectionCriteria {
    pub fn accepts(&self, y: &Measurement, r: &SteeringMatrix, estimate: &ReflectivityProfile) -> bool {
        let resid = (y.values() - r.entries() * estimate.values()).norm();
        let y_norm = y.values().norm();
        let ratio = if y_norm > 0.0 {
            resid / y_norm
        } else if resid == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if !(ratio <= self.max_residual) {
            return false;
        }
        let mut mags: Vec<f64> = estimate
            .values()
            .iter()
            .map(|z| z.norm())
            .filter(|m| *m > 0.0)
            .collect();
        if mags.len() <= 1 {
            return true;
        }
        mags.sort_by(|a, b| b.total_cmp(a));
        mags[0] / mags[1] >= self.min_peak_ratio
    }
}

/// Keeps reconstructions with small relative residual and a dominant peak.
pub fn select_cs_labels(
    reconstructions: &BTreeMap<PixelCoord, ReflectivityProfile>,
    measurements: &BTreeMap<PixelCoord, Measurement>,
    r: &SteeringMatrix,
    criteria: &SelectionCriteria,
) -> Result<BTreeMap<PixelCoord, ReflectivityProfile>> {
    let mut kept = BTreeMap::new();
    for (coord, estimate) in reconstructions {
        let y = measurements
            .get(coord)
            .ok_or_else(|| Error::InvalidArgument(format!("no measurement for pixel {coord:?}")))?;
        if criteria.accepts(y, r, estimate) {
            kept.insert(*coord, estimate.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Labeling {
    GroundTruth,
    CsReconstruction {
        solver: SolverSpec,
        criteria: SelectionCriteria,
    },
}

impl Labeling {
    pub fn provenance(&self) -> LabelProvenance {
        match self {
            Labeling::GroundTruth => LabelProvenance::GroundTruth,
            Labeling::CsReconstruction { .. } => LabelProvenance::CsReconstruction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub coords: PixelCoord,
    pub measurement: Measurement,
    pub label: ReflectivityProfile,
    pub provenance: LabelProvenance,
    pub snr_db: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<PixelSample>,
    pub geometry_hash: ContentHash,
    pub grid_hash: ContentHash,
    pub labeling: LabelProvenance,
    pub seed: u64,
    pub num_channels: usize,
    pub grid_len: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PixelSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Copy restricted to the given splits.
    pub fn subset(&self, splits: &[Split]) -> SampleSet {
        SampleSet {
            samples: self
                .samples
                .iter()
                .filter(|s| splits.contains(&s.split))
                .cloned()
                .collect(),
            ..self.clone_header()
        }
    }

    pub fn clone_header(&self) -> SampleSet {
        SampleSet {
            samples: Vec::new(),
            geometry_hash: self.geometry_hash,
            grid_hash: self.grid_hash,
            labeling: self.labeling,
            seed: self.seed,
            num_channels: self.num_channels,
            grid_len: self.grid_len,
        }
    }

    pub fn check_against(
        &self,
        r: &SteeringMatrix,
        geometry: &AcquisitionGeometry,
        grid: &ElevationGrid,
    ) -> Result<()> {
        let pairs = [
            ("geometry", self.geometry_hash, geometry.content_hash()),
            ("grid", self.grid_hash, grid.content_hash()),
        ];
        for (what, found, expected) in pairs {
            if found != expected {
                return Err(Error::HashMismatch {
                    what,
                    expected: expected.to_hex(),
                    found: found.to_hex(),
                });
            }
        }
        if self.num_channels != r.num_channels() || self.grid_len != r.grid_len() {
            return Err(Error::DimensionMismatch {
                what: "sample set",
                expected: r.num_channels() * r.grid_len(),
                found: self.num_channels * self.grid_len,
            });
        }
        Ok(())
    }
}

/// Noisy measurement of one pixel; the noise stream depends only on the
/// seed and the coordinates.
pub fn simulate_measurement(
    r: &SteeringMatrix,
    truth: &ReflectivityProfile,
    snr_db: f64,
    seed: u64,
    coord: PixelCoord,
) -> Result<Measurement> {
    let clean = r.forward(truth)?;
    let noise_seed = derive_seed(seed, "sample.noise", &[coord.azimuth as u64, coord.range as u64]);
    add_noise(&clean, snr_db, noise_seed)
}

/// Builds the labeled sample set of a scene. Pixels without any visible
/// scatterer are skipped because their SNR is undefined.
#[allow(clippy::too_many_arguments)]
pub fn build_sample_set(
    scene: &Scene,
    geometry: &AcquisitionGeometry,
    grid: &ElevationGrid,
    r: &SteeringMatrix,
    snr_db: f64,
    labeling: &Labeling,
    splits: &SplitFractions,
    seed: u64,
) -> Result<SampleSet> {
    splits.validate()?;
    let expected = ContentHash::combine("tomosar.steering.v1", &[geometry.content_hash(), grid.content_hash()]);
    if r.hash() != expected {
        return Err(Error::HashMismatch {
            what: "steering matrix",
            expected: expected.to_hex(),
            found: r.hash().to_hex(),
        });
    }
    let pixels: Vec<(PixelCoord, &ReflectivityProfile)> = scene.iter().filter(|(_, p)| p.energy() > 0.0).collect();
    let measured = pixels
        .par_iter()
        .map(|(c, truth)| Ok((*c, simulate_measurement(r, truth, snr_db, seed, *c)?)))
        .collect::<Result<Vec<_>>>()?;

    let header = SampleSet {
        samples: Vec::new(),
        geometry_hash: geometry.content_hash(),
        grid_hash: grid.content_hash(),
        labeling: labeling.provenance(),
        seed,
        num_channels: r.num_channels(),
        grid_len: r.grid_len(),
    };
    let make = |coords: PixelCoord, measurement: Measurement, label: ReflectivityProfile| PixelSample {
        coords,
        measurement,
        label,
        provenance: labeling.provenance(),
        snr_db,
        split: splits.assign(seed, coords),
    };

    let samples = match labeling {
        Labeling::GroundTruth => pixels
            .iter()
            .zip(measured)
            .map(|((c, truth), (_, y))| make(*c, y, (*truth).clone()))
            .collect(),
        Labeling::CsReconstruction { solver, criteria } => {
            let solver = solver.build(r)?;
            let estimates = measured
                .par_iter()
                .map(|(c, y)| Ok((*c, solver.solve(y)?.estimate)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let measurements: BTreeMap<_, _> = measured.into_iter().collect();
            let kept = select_cs_labels(&estimates, &measurements, r, criteria)?;
            kept.into_iter()
                .map(|(c, label)| make(c, measurements[&c].clone(), label))
                .collect()
        }
    };
    Ok(SampleSet { samples, ..header })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::GreedyConfig;

    fn geometry() -> AcquisitionGeometry {
        AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap()
    }

    fn grid_for(spec: &SceneSpec) -> ElevationGrid {
        elevation_grid_for(spec.max_elevation(45.0), DEFAULT_GRID_LEN).unwrap()
    }

    #[test]
    fn flat_ground_is_one_sparse_at_zero() {
        let spec = SceneSpec {
            building: None,
            max_scatterers_per_pixel: 1,
            azimuth_extent: 4,
            range_extent: 5,
            ..SceneSpec::default()
        };
        let grid = elevation_grid_for(3.0, 64).unwrap();
        let scene = generate_scene(&spec, &geometry(), &grid).unwrap();
        let zero_idx = grid.nearest_index(0.0);
        assert_eq!(scene.len(), 20);
        for (_, p) in scene.iter() {
            assert_eq!(p.support(), vec![zero_idx]);
            assert!((p.values()[zero_idx].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SceneSpec::default();
        let grid = grid_for(&spec);
        let a = generate_scene(&spec, &geometry(), &grid).unwrap();
        let b = generate_scene(&spec, &geometry(), &grid).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneSpec { random_seed: 1, ..spec }, &geometry(), &grid).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sparsity_never_exceeds_cap() {
        for cap in 1..=3 {
            let spec = SceneSpec {
                max_scatterers_per_pixel: cap,
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec, &geometry(), &grid_for(&spec)).unwrap();
            let max = scene.iter().map(|(_, p)| p.support().len()).max().unwrap();
            assert_eq!(max, cap);
        }
    }

    #[test]
    fn building_taller_than_grid_rejected() {
        let spec = SceneSpec::default();
        let grid = elevation_grid_for(2.0, 64).unwrap();
        assert!(matches!(
            generate_scene(&spec, &geometry(), &grid),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn noise_disabled_is_identity() {
        let y = Measurement::new(CVector::from_element(8, C64::new(0.3, -1.0))).unwrap();
        assert_eq!(add_noise(&y, f64::INFINITY, 3).unwrap(), y);
        assert!(matches!(
            add_noise(&Measurement::zeros(8), 20.0, 3),
            Err(Error::ZeroSignal)
        ));
        assert_eq!(
            add_noise(&Measurement::zeros(8), f64::INFINITY, 3).unwrap(),
            Measurement::zeros(8)
        );
    }

    #[test]
    fn noise_scales_with_signal() {
        let y = Measurement::new(CVector::from_fn(8, |i, _| C64::new(i as f64, 1.0))).unwrap();
        let y2 = y.scaled(C64::new(2.0, 0.0));
        let e1 = add_noise(&y, 20.0, 11).unwrap().values() - y.values();
        let e2 = add_noise(&y2, 20.0, 11).unwrap().values() - y2.values();
        assert!((&e1 * C64::new(2.0, 0.0) - e2).norm() < 1e-12);
    }

    #[test]
    fn snr_calibration_monte_carlo() {
        let y = Measurement::new(CVector::from_fn(8, |i, _| {
            C64::from_polar(1.0 + 0.1 * i as f64, i as f64)
        }))
        .unwrap();
        let trials = 100_000;
        let noise_energy: f64 = (0..trials)
            .into_par_iter()
            .map(|t| (add_noise(&y, 20.0, t as u64).unwrap().values() - y.values()).norm_squared())
            .sum();
        let realized = 10.0 * (y.energy() / (noise_energy / trials as f64)).log10();
        assert!((realized - 20.0).abs() < 0.1, "realized SNR {realized}");
    }

    #[test]
    fn ground_truth_noiseless_is_consistent() {
        let spec = SceneSpec {
            azimuth_extent: 10,
            building: Some(BuildingSpec {
                azimuth_start: 2,
                azimuth_end: 8,
                ..SceneSpec::default().building.unwrap()
            }),
            ..SceneSpec::default()
        };
        let geom = geometry();
        let grid = grid_for(&spec);
        let r = SteeringMatrix::build(&geom, &grid);
        let scene = generate_scene(&spec, &geom, &grid).unwrap();
        let set = build_sample_set(
            &scene,
            &geom,
            &grid,
            &r,
            f64::INFINITY,
            &Labeling::GroundTruth,
            &SplitFractions::default(),
            5,
        )
        .unwrap();
        let nonempty = scene.iter().filter(|(_, p)| p.energy() > 0.0).count();
        assert_eq!(set.len(), nonempty);
        for s in &set.samples {
            assert_eq!(r.forward(&s.label).unwrap(), s.measurement);
            assert_eq!(&s.label, scene.get(s.coords).unwrap());
            assert_eq!(s.provenance, LabelProvenance::GroundTruth);
        }
        let splits: usize = [Split::Train, Split::Validation, Split::Test]
            .iter()
            .map(|&sp| set.split_count(sp))
            .sum();
        assert_eq!(splits, set.len());
    }

    #[test]
    fn selection_keeps_perfect_and_rejects_zero() {
        let geom = geometry();
        let grid = elevation_grid_for(4.0, 64).unwrap();
        let r = SteeringMatrix::build(&geom, &grid);
        let truth = ReflectivityProfile::sparse(64, &[(10, C64::new(1.0, 0.0))]).unwrap();
        let y = r.forward(&truth).unwrap();
        let crit = SelectionCriteria::default();
        assert!(crit.accepts(&y, &r, &truth));
        assert!(!crit.accepts(&y, &r, &ReflectivityProfile::zeros(64)));
        let mut recon = BTreeMap::new();
        let mut meas = BTreeMap::new();
        recon.insert(PixelCoord::new(0, 0), ReflectivityProfile::zeros(64));
        meas.insert(PixelCoord::new(0, 0), y.clone());
        assert!(matches!(
            select_cs_labels(&recon, &meas, &r, &crit),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn cs_labels_pass_filter() {
        let spec = SceneSpec {
            azimuth_extent: 6,
            building: Some(BuildingSpec {
                azimuth_start: 1,
                azimuth_end: 5,
                ..SceneSpec::default().building.unwrap()
            }),
            ..SceneSpec::default()
        };
        let geom = geometry();
        let grid = grid_for(&spec);
        let r = SteeringMatrix::build(&geom, &grid);
        let scene = generate_scene(&spec, &geom, &grid).unwrap();
        let criteria = SelectionCriteria::default();
        let labeling = Labeling::CsReconstruction {
            solver: SolverSpec::Iht(GreedyConfig::new(3, 200)),
            criteria,
        };
        let set = build_sample_set(&scene, &geom, &grid, &r, 20.0, &labeling, &SplitFractions::default(), 9).unwrap();
        assert!(!set.is_empty());
        for s in &set.samples {
            assert_eq!(s.provenance, LabelProvenance::CsReconstruction);
            assert!(criteria.accepts(&s.measurement, &r, &s.label));
        }
    }
}
