//! Config-driven stages behind the command-line tool.
//!
//! Every stage reads and writes files under `io.output_dir`. Each binary
//! artifact carries the config hash and gets a `<file>.manifest.json`
//! sidecar listing the command, versions, seeds and the SHA-256 of every
//! input and output. Manifests hold file names only, never directories or
//! timestamps, so reruns are byte-identical.
//!
//! | stage         | writes                                                  |
//! |---------------|---------------------------------------------------------|
//! | `simulate`    | `dataset-gt.bin`, `dataset-<cs solver>.bin`             |
//! | `precompute`  | `steering.bin`, `weights.bin`                           |
//! | `train`       | `model-<tag>.bin`, `loss-<tag>.csv`                     |
//! | `sweep`       | `sweep-<tag>.csv`                                       |
//! | `reconstruct` | `estimates-<name>.bin`, `cloud-<name>.xyz`, `.ply`      |
//! | `evaluate`    | `nmse.txt`, `nmse.json`                                 |
//! | `bench`       | `bench.txt`, `bench.json` (timings, not reproducible)   |
//!
//! `<tag>` is the dataset stem without its `dataset-` prefix, so training
//! on `dataset-iht.bin` yields `model-iht.bin` and reconstructing with it
//! yields `estimates-alista-iht.bin`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::alista::{sweep_layers, train, AlistaModel, AlistaSolver, AnalyticWeights};
use crate::config::{EvalSplit, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{benchmark, comparison_table, nmse_db, ordering_summary, to_point_cloud, BenchReport, NmseReport};
use crate::hash::ContentHash;
use crate::io::{self, EstimateSet, FORMAT_VERSION};
use crate::model::{AcquisitionGeometry, ElevationGrid, Measurement, ReflectivityProfile, SteeringMatrix};
use crate::scene::{build_sample_set, generate_scene, LabelProvenance, Labeling, PixelSample, SampleSet, Split};
use crate::solvers::{PixelSolver, SolverSpec};

pub const STEERING_FILE: &str = "steering.bin";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const GT_DATASET_FILE: &str = "dataset-gt.bin";

/// Name accepted by `reconstruct` that copies the ground-truth labels.
pub const TRUTH_SOLVER: &str = "truth";

#[derive(Serialize)]
struct FileDigest {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Seeds {
    root: u64,
    scene: u64,
    data: u64,
    train: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    format_version: u32,
    config_hash: String,
    seeds: Seeds,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    details: BTreeMap<&'a str, serde_json::Value>,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        file: file_name(path),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Dataset stem without the `dataset-` prefix.
fn tag_of(path: &Path, prefix: &str) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_prefix(prefix).map(str::to_string).unwrap_or(stem)
}

/// Derived geometry objects of one config.
struct Setup {
    geometry: AcquisitionGeometry,
    grid: ElevationGrid,
    r: SteeringMatrix,
}

/// One configuration bound to an output directory and a worker pool.
pub struct Pipeline {
    cfg: RunConfig,
    hash: ContentHash,
    out: PathBuf,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.io.workers)
            .build()
            .map_err(|e| Error::config("io.workers", e))?;
        Ok(Self {
            hash: cfg.hash(),
            out: cfg.io.output_dir.clone(),
            cfg,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> ContentHash {
        self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    /// Path of a file inside the output directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn setup(&self) -> Result<Setup> {
        let geometry = self.cfg.geometry()?;
        let grid = self.cfg.grid()?;
        let r = SteeringMatrix::build(&geometry, &grid);
        Ok(Setup { geometry, grid, r })
    }

    fn write_manifest(
        &self,
        command: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        details: BTreeMap<&str, serde_json::Value>,
    ) -> Result<()> {
        let manifest = Manifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            format_version: FORMAT_VERSION,
            config_hash: self.hash.to_hex(),
            seeds: Seeds {
                root: self.cfg.io.seed,
                scene: self.cfg.scene_seed(),
                data: self.cfg.data_seed(),
                train: self.cfg.train_seed(),
            },
            inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            details,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let mut path = outputs[0].as_os_str().to_owned();
        path.push(".manifest.json");
        io::write_file(Path::new(&path), text.as_bytes())
    }

    fn load_dataset(&self, path: &Path, s: &Setup) -> Result<SampleSet> {
        let (set, hash) = io::decode_dataset(&read(path)?)?;
        io::expect_config("dataset config", hash, self.hash)?;
        set.check_against(&s.r, &s.geometry, &s.grid)?;
        Ok(set)
    }

    fn load_weights(&self, path: &Path, s: &Setup) -> Result<AnalyticWeights> {
        let (w, hash) = io::decode_weights(&read(path)?, &s.r)?;
        io::expect_config("weights config", hash, self.hash)?;
        Ok(w)
    }

    fn load_model(&self, path: &Path, s: &Setup) -> Result<AlistaModel> {
        let (m, hash) = io::decode_model(&read(path)?, &s.r)?;
        io::expect_config("model config", hash, self.hash)?;
        Ok(m)
    }

    fn eval_pixels<'a>(&self, set: &'a SampleSet) -> Vec<&'a PixelSample> {
        match self.cfg.eval.split {
            EvalSplit::Test => set.split(Split::Test).collect(),
            EvalSplit::All => set.samples.iter().collect(),
        }
    }

    /// Simulates the scene and writes the ground-truth dataset plus, when
    /// `data.cs_labels` names a solver, the CS-labeled dataset built from
    /// the same measurements.
    pub fn simulate(&self) -> Result<Vec<PathBuf>> {
        self.pool.install(|| {
            let s = self.setup()?;
            let scene = generate_scene(&self.cfg.scene_spec(), &s.geometry, &s.grid)?;
            let mut labelings = vec![("gt".to_string(), Labeling::GroundTruth)];
            if let Some(l) = self.cfg.cs_labeling(s.r.lambda_max())? {
                let name = self.cfg.data.cs_labels.solver_name().unwrap_or("cs");
                labelings.push((name.to_string(), l));
            }
            let mut written = Vec::new();
            for (name, labeling) in labelings {
                let set = build_sample_set(
                    &scene,
                    &s.geometry,
                    &s.grid,
                    &s.r,
                    self.cfg.data.snr_db,
                    &labeling,
                    &self.cfg.data.split,
                    self.cfg.data_seed(),
                )?;
                let path = self.path(&format!("dataset-{name}.bin"));
                io::write_file(&path, &io::encode_dataset(&set, self.hash))?;
                let details = BTreeMap::from([
                    ("labels", serde_json::json!(name)),
                    ("pixels", serde_json::json!(set.len())),
                    ("train_pixels", serde_json::json!(set.split_count(Split::Train))),
                    (
                        "validation_pixels",
                        serde_json::json!(set.split_count(Split::Validation)),
                    ),
                    ("test_pixels", serde_json::json!(set.split_count(Split::Test))),
                    ("num_channels", serde_json::json!(set.num_channels)),
                    ("grid_len", serde_json::json!(set.grid_len)),
                ]);
                self.write_manifest("simulate", &[], &[&path], details)?;
                written.push(path);
            }
            Ok(written)
        })
    }

    /// Writes the steering matrix and its coherence-minimizing weights.
    pub fn precompute(&self) -> Result<(PathBuf, PathBuf)> {
        self.pool.install(|| {
            let s = self.setup()?;
            let w = AnalyticWeights::compute(&s.r)?;
            let rp = self.path(STEERING_FILE);
            let wp = self.path(WEIGHTS_FILE);
            io::write_file(&rp, &io::encode_steering(&s.r, self.hash))?;
            io::write_file(&wp, &io::encode_weights(&w, self.hash))?;
            let steering = BTreeMap::from([
                ("num_channels", serde_json::json!(s.r.num_channels())),
                ("grid_len", serde_json::json!(s.r.grid_len())),
                ("steering_hash", serde_json::json!(s.r.hash().to_hex())),
                ("lambda_max", serde_json::json!(s.r.lambda_max())),
            ]);
            self.write_manifest("precompute", &[], &[&rp], steering)?;
            let weights = BTreeMap::from([
                ("steering_hash", serde_json::json!(w.source_hash().to_hex())),
                ("objective_value", serde_json::json!(w.objective_value())),
                (
                    "constraint_violation",
                    serde_json::json!(w.constraint_violation(s.r.entries())),
                ),
            ]);
            self.write_manifest("precompute", &[&rp], &[&wp], weights)?;
            Ok((rp, wp))
        })
    }

    /// Trains `alista.layers` layers on a dataset and writes the model and
    /// its loss curve.
    pub fn train(&self, dataset: &Path, weights: &Path) -> Result<PathBuf> {
        self.pool.install(|| {
            let s = self.setup()?;
            let set = self.load_dataset(dataset, &s)?;
            let w = self.load_weights(weights, &s)?;
            let model = train(&set, &s.r, &w, self.cfg.alista.layers, &self.cfg.train_config())?;
            let tag = tag_of(dataset, "dataset-");
            let mp = self.path(&format!("model-{tag}.bin"));
            let lp = self.path(&format!("loss-{tag}.csv"));
            io::write_file(&mp, &io::encode_model(&model, self.hash))?;
            io::write_file(&lp, loss_curve_csv(&model).as_bytes())?;
            let details = BTreeMap::from([
                ("layers", serde_json::json!(model.layers())),
                ("best_epoch", serde_json::json!(model.metadata.best_epoch)),
                ("theta", serde_json::json!(model.theta())),
                ("eta", serde_json::json!(model.eta())),
            ]);
            self.write_manifest("train", &[dataset, weights], &[&mp, &lp], details)?;
            Ok(mp)
        })
    }

    /// Trains one model per depth in `alista.sweep_min..=sweep_max` and
    /// writes their validation NMSE.
    pub fn sweep(&self, dataset: &Path, weights: &Path) -> Result<PathBuf> {
        self.pool.install(|| {
            let s = self.setup()?;
            let set = self.load_dataset(dataset, &s)?;
            let w = self.load_weights(weights, &s)?;
            let depths: Vec<usize> = (self.cfg.alista.sweep_min..=self.cfg.alista.sweep_max).collect();
            let rows = sweep_layers(&set, &s.r, &w, &depths, &self.cfg.train_config())?;
            let mut csv = String::from("layers,validation_nmse_ratio,validation_nmse_db\n");
            for (k, ratio) in &rows {
                writeln!(csv, "{k},{ratio},{}", crate::eval::ratio_to_db(*ratio)).unwrap();
            }
            let path = self.path(&format!("sweep-{}.csv", tag_of(dataset, "dataset-")));
            io::write_file(&path, csv.as_bytes())?;
            self.write_manifest("sweep-layers", &[dataset, weights], &[&path], BTreeMap::new())?;
            Ok(path)
        })
    }

    /// Reconstructs every pixel of a dataset with a classical solver,
    /// a trained model (`alista`) or the labels themselves (`truth`), and
    /// writes the estimates and point clouds.
    pub fn reconstruct(&self, dataset: &Path, solver: &str, model: Option<&Path>) -> Result<PathBuf> {
        self.pool.install(|| {
            let s = self.setup()?;
            let set = self.load_dataset(dataset, &s)?;
            let mut inputs = vec![dataset];
            let (name, estimates) = match solver {
                TRUTH_SOLVER => {
                    if set.labeling != LabelProvenance::GroundTruth {
                        return Err(Error::InvalidArgument(
                            "solver `truth` needs a ground-truth dataset".into(),
                        ));
                    }
                    let est = set.samples.iter().map(|p| (p.coords, p.label.clone())).collect();
                    (TRUTH_SOLVER.to_string(), est)
                }
                "alista" => {
                    let path = model
                        .ok_or_else(|| Error::InvalidArgument("solver `alista` needs a trained model file".into()))?;
                    inputs.push(path);
                    let m = self.load_model(path, &s)?;
                    let name = format!("alista-{}", tag_of(path, "model-"));
                    (name, solve_all(&AlistaSolver::new(&m, &s.r)?, &set)?)
                }
                other => {
                    let spec = self.cfg.solver_spec(other, s.r.lambda_max())?;
                    (other.to_string(), solve_all(spec.build(&s.r)?.as_ref(), &set)?)
                }
            };
            let est = EstimateSet {
                solver: name.clone(),
                steering_hash: s.r.hash(),
                grid_len: s.r.grid_len(),
                estimates,
            };
            let ep = self.path(&format!("estimates-{name}.bin"));
            io::write_file(&ep, &io::encode_estimates(&est, self.hash))?;
            let cloud = to_point_cloud(
                &est.estimates,
                &s.grid,
                &s.geometry,
                self.cfg.scene.pixel_spacing,
                self.cfg.eval.detection_threshold,
            )?;
            let xp = self.path(&format!("cloud-{name}.xyz"));
            let pp = self.path(&format!("cloud-{name}.ply"));
            let mut xyz = Vec::new();
            cloud.write_xyz(&mut xyz)?;
            io::write_file(&xp, &xyz)?;
            let mut ply = Vec::new();
            cloud.write_ply(&mut ply)?;
            io::write_file(&pp, &ply)?;
            let details = BTreeMap::from([
                ("solver", serde_json::json!(name)),
                ("pixels", serde_json::json!(est.estimates.len())),
                ("points", serde_json::json!(cloud.len())),
                (
                    "detection_threshold",
                    serde_json::json!(self.cfg.eval.detection_threshold),
                ),
            ]);
            self.write_manifest("reconstruct", &inputs, &[&ep, &xp, &pp], details)?;
            Ok(ep)
        })
    }

    /// Scores estimate files against the labels of a ground-truth dataset
    /// on the `eval.split` pixels.
    pub fn evaluate(&self, dataset: &Path, estimates: &[PathBuf]) -> Result<(Vec<NmseReport>, PathBuf)> {
        self.pool.install(|| {
            if estimates.is_empty() {
                return Err(Error::InvalidArgument("no estimate files given".into()));
            }
            let s = self.setup()?;
            let set = self.load_dataset(dataset, &s)?;
            if set.labeling != LabelProvenance::GroundTruth {
                return Err(Error::InvalidArgument("evaluation needs a ground-truth dataset".into()));
            }
            let pixels = self.eval_pixels(&set);
            let truths: Vec<ReflectivityProfile> = pixels.iter().map(|p| p.label.clone()).collect();
            let mut reports = Vec::new();
            for path in estimates {
                let (est, hash) = io::decode_estimates(&read(path)?)?;
                io::expect_config("estimates config", hash, self.hash)?;
                io::expect_config("estimates steering", est.steering_hash, s.r.hash())?;
                let picked = pixels
                    .iter()
                    .map(|p| {
                        est.estimates.get(&p.coords).cloned().ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "{} has no estimate for pixel {:?}",
                                file_name(path),
                                p.coords
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                reports.push(nmse_db(&est.solver, &picked, &truths, self.cfg.eval.nmse_scope)?);
            }
            let mut text = comparison_table(&reports);
            writeln!(text, "ordering: {}", ordering_summary(&reports)).unwrap();
            let tp = self.path("nmse.txt");
            let jp = self.path("nmse.json");
            io::write_file(&tp, text.as_bytes())?;
            let mut json = serde_json::to_string_pretty(&reports).expect("reports serialize");
            json.push('\n');
            io::write_file(&jp, json.as_bytes())?;
            let mut inputs: Vec<&Path> = vec![dataset];
            inputs.extend(estimates.iter().map(PathBuf::as_path));
            self.write_manifest("eval", &inputs, &[&tp, &jp], BTreeMap::new())?;
            Ok((reports, tp))
        })
    }

    /// Times classical solvers by name and trained models on the
    /// `eval.split` measurements. ISTA runs with tolerance 0 so every pixel
    /// uses exactly `solvers.ista.max_iters` iterations.
    pub fn bench(&self, dataset: &Path, solvers: &[String], models: &[PathBuf]) -> Result<(Vec<BenchReport>, PathBuf)> {
        let s = self.setup()?;
        let set = self.load_dataset(dataset, &s)?;
        let mut ys: Vec<Measurement> = self.eval_pixels(&set).iter().map(|p| p.measurement.clone()).collect();
        if let Some(max) = self.cfg.eval.bench_max_pixels {
            ys.truncate(max);
        }
        let ev = &self.cfg.eval;
        let mut reports = Vec::new();
        for name in solvers {
            let spec = match self.cfg.solver_spec(name, s.r.lambda_max())? {
                SolverSpec::Ista(mut c) => {
                    c.tolerance = 0.0;
                    SolverSpec::Ista(c)
                }
                other => other,
            };
            let budget = match spec {
                SolverSpec::Ista(c) => c.max_iters,
                SolverSpec::Omp(c) => c.sparsity,
                SolverSpec::Iht(c) => c.max_iters,
            };
            let solver = spec.build(&s.r)?;
            reports.push(benchmark(
                solver.as_ref(),
                &ys,
                ev.bench_repetitions,
                ev.bench_lanes,
                Some(budget),
            )?);
        }
        for path in models {
            let m = self.load_model(path, &s)?;
            let solver = AlistaSolver::new(&m, &s.r)?;
            let mut report = benchmark(&solver, &ys, ev.bench_repetitions, ev.bench_lanes, Some(m.layers()))?;
            report.solver = format!("alista-{}", tag_of(path, "model-"));
            reports.push(report);
        }
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no solvers given".into()));
        }
        let tp = self.path("bench.txt");
        let jp = self.path("bench.json");
        io::write_file(&tp, BenchReport::table(&reports).as_bytes())?;
        let mut json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        json.push('\n');
        io::write_file(&jp, json.as_bytes())?;
        Ok((reports, tp))
    }
}

fn solve_all(
    solver: &dyn PixelSolver,
    set: &SampleSet,
) -> Result<BTreeMap<crate::scene::PixelCoord, ReflectivityProfile>> {
    set.samples
        .par_iter()
        .map(|p| Ok((p.coords, solver.solve(&p.measurement)?.estimate)))
        .collect()
}

/// `epoch,train_loss,validation_loss` with shortest round-trip floats.
pub fn loss_curve_csv(model: &AlistaModel) -> String {
    let md = &model.metadata;
    let mut csv = String::from("epoch,train_loss,validation_loss\n");
    for (i, (t, v)) in md.train_loss.iter().zip(&md.validation_loss).enumerate() {
        writeln!(csv, "{i},{t},{v}").unwrap();
    }
    csv
}
