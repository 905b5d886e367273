//! Binary artifact formats.
//!
//! Every file starts with an 8-byte magic, a little-endian `u32` format
//! version and the 32-byte hash of the run configuration that produced it.
//! All integers and floats are little-endian; complex numbers are stored as
//! `(re, im)` pairs of `f64`; matrices are row-major.
//!
//! | file      | magic      | body                                                                  |
//! |-----------|------------|-----------------------------------------------------------------------|
//! | steering  | `TSRSTEER` | hash, N, L, N*L complex                                               |
//! | weights   | `TSRWEIGH` | source hash, objective, N, L, N*L complex                             |
//! | dataset   | `TSRDATA1` | geometry/grid hash, labeling, seed, N, L, count, samples              |
//! | model     | `TSRMODEL` | source hash, K, N, L, theta[K], eta[K], objective, W, key-value block |
//! | estimates | `TSRESTIM` | steering hash, solver name, L, count, sparse profiles                 |
//!
//! A dataset sample is `azimuth u32, range u32, split u8, provenance u8,
//! snr f64, y (N complex), nnz u32, nnz * (index u32, complex)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::alista::{AlistaModel, AnalyticWeights, LossKind, ParamMode, TrainingMetadata, WEIGHT_CONSTRAINT};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::model::{CMatrix, CVector, Measurement, ReflectivityProfile, SteeringMatrix, C64};
use crate::scene::{LabelProvenance, PixelCoord, PixelSample, SampleSet, Split};

pub const FORMAT_VERSION: u32 = 1;

const STEERING_MAGIC: &[u8; 8] = b"TSRSTEER";
const WEIGHTS_MAGIC: &[u8; 8] = b"TSRWEIGH";
const DATASET_MAGIC: &[u8; 8] = b"TSRDATA1";
const MODEL_MAGIC: &[u8; 8] = b"TSRMODEL";
const ESTIMATES_MAGIC: &[u8; 8] = b"TSRESTIM";

/// Largest dimension accepted from a file, guarding allocations.
const MAX_DIM: u64 = 1 << 24;

/// Per-pixel reconstructions from one solver.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub solver: String,
    pub steering_hash: ContentHash,
    pub grid_len: usize,
    pub estimates: BTreeMap<PixelCoord, ReflectivityProfile>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        fmt_err("file is truncated")
    } else {
        Error::Io(e)
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn new(magic: &[u8; 8], config_hash: ContentHash) -> Self {
        let mut e = Enc(Vec::new());
        e.0.extend_from_slice(magic);
        e.u32(FORMAT_VERSION);
        e.hash(config_hash);
        e
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.write_u32::<LE>(v).unwrap();
    }

    fn u64(&mut self, v: u64) {
        self.0.write_u64::<LE>(v).unwrap();
    }

    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LE>(v).unwrap();
    }

    fn c64(&mut self, v: C64) {
        self.f64(v.re);
        self.f64(v.im);
    }

    fn hash(&mut self, h: ContentHash) {
        self.0.extend_from_slice(&h.0);
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn matrix(&mut self, m: &CMatrix) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.c64(m[(i, j)]);
            }
        }
    }

    fn sparse(&mut self, p: &ReflectivityProfile) {
        let nz = p.nonzeros();
        self.u32(nz.len() as u32);
        for (i, v) in nz {
            self.u32(i as u32);
            self.c64(v);
        }
    }
}

struct Dec<'a>(Cursor<&'a [u8]>);

impl<'a> Dec<'a> {
    /// Checks magic and version, returns the config hash.
    fn open(bytes: &'a [u8], magic: &[u8; 8], what: &str) -> Result<(Self, ContentHash)> {
        let mut d = Dec(Cursor::new(bytes));
        let mut m = [0u8; 8];
        d.0.read_exact(&mut m)
            .map_err(|_| fmt_err(format!("not a {what} file (too short)")))?;
        if &m != magic {
            return Err(fmt_err(format!("not a {what} file (bad magic)")));
        }
        let version = d.u32()?;
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!(
                "{what} file has format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let h = d.hash()?;
        Ok((d, h))
    }

    fn finish(&self) -> Result<()> {
        if (self.0.position() as usize) != self.0.get_ref().len() {
            return Err(fmt_err("trailing bytes after end of record"));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(read_err)
    }

    fn u32(&mut self) -> Result<u32> {
        self.0.read_u32::<LE>().map_err(read_err)
    }

    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(read_err)
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_DIM {
            return Err(fmt_err(format!("dimension {v} is implausibly large")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LE>().map_err(read_err)
    }

    fn c64(&mut self) -> Result<C64> {
        Ok(C64::new(self.f64()?, self.f64()?))
    }

    fn hash(&mut self) -> Result<ContentHash> {
        let mut b = [0u8; 32];
        self.0.read_exact(&mut b).map_err(read_err)?;
        Ok(ContentHash(b))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let remaining = self.0.get_ref().len() - self.0.position() as usize;
        if n > remaining {
            return Err(fmt_err("file is truncated"));
        }
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).map_err(read_err)?;
        String::from_utf8(b).map_err(|_| fmt_err("string is not UTF-8"))
    }

    fn matrix(&mut self) -> Result<CMatrix> {
        let (n, l) = (self.dim()?, self.dim()?);
        let mut entries = Vec::with_capacity(n * l);
        for _ in 0..n * l {
            entries.push(self.c64()?);
        }
        Ok(CMatrix::from_row_slice(n, l, &entries))
    }

    fn sparse(&mut self, len: usize) -> Result<ReflectivityProfile> {
        let nnz = self.u32()? as usize;
        if nnz > len {
            return Err(fmt_err(format!("{nnz} nonzeros in a profile of length {len}")));
        }
        let mut entries = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let idx = self.u32()? as usize;
            entries.push((idx, self.c64()?));
        }
        ReflectivityProfile::sparse(len, &entries).map_err(|e| fmt_err(format!("bad profile: {e}")))
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Rejects an artifact produced under a different configuration.
pub fn expect_config(what: &'static str, found: ContentHash, expected: ContentHash) -> Result<()> {
    if found != expected {
        return Err(Error::HashMismatch {
            what,
            expected: expected.to_hex(),
            found: found.to_hex(),
        });
    }
    Ok(())
}

pub fn encode_steering(r: &SteeringMatrix, config_hash: ContentHash) -> Vec<u8> {
    let mut e = Enc::new(STEERING_MAGIC, config_hash);
    e.hash(r.hash());
    e.matrix(r.entries());
    e.0
}

pub fn decode_steering(bytes: &[u8]) -> Result<(SteeringMatrix, ContentHash)> {
    let (mut d, config) = Dec::open(bytes, STEERING_MAGIC, "steering matrix")?;
    let hash = d.hash()?;
    let entries = d.matrix()?;
    d.finish()?;
    Ok((SteeringMatrix::from_parts(entries, hash)?, config))
}

pub fn encode_weights(w: &AnalyticWeights, config_hash: ContentHash) -> Vec<u8> {
    let mut e = Enc::new(WEIGHTS_MAGIC, config_hash);
    e.hash(w.source_hash());
    e.f64(w.objective_value());
    e.matrix(w.entries());
    e.0
}

/// Also re-checks the hash pairing and the unit-diagonal constraint.
pub fn decode_weights(bytes: &[u8], r: &SteeringMatrix) -> Result<(AnalyticWeights, ContentHash)> {
    let (mut d, config) = Dec::open(bytes, WEIGHTS_MAGIC, "weights")?;
    let source = d.hash()?;
    let objective = d.f64()?;
    let entries = d.matrix()?;
    d.finish()?;
    Ok((AnalyticWeights::from_parts(entries, source, objective, r)?, config))
}

fn split_code(s: Split) -> u8 {
    match s {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }
}

fn split_from(c: u8) -> Result<Split> {
    match c {
        0 => Ok(Split::Train),
        1 => Ok(Split::Validation),
        2 => Ok(Split::Test),
        _ => Err(fmt_err(format!("unknown split tag {c}"))),
    }
}

fn provenance_code(p: LabelProvenance) -> u8 {
    match p {
        LabelProvenance::GroundTruth => 0,
        LabelProvenance::CsReconstruction => 1,
    }
}

fn provenance_from(c: u8) -> Result<LabelProvenance> {
    match c {
        0 => Ok(LabelProvenance::GroundTruth),
        1 => Ok(LabelProvenance::CsReconstruction),
        _ => Err(fmt_err(format!("unknown label provenance tag {c}"))),
    }
}

pub fn encode_dataset(set: &SampleSet, config_hash: ContentHash) -> Vec<u8> {
    let mut e = Enc::new(DATASET_MAGIC, config_hash);
    e.hash(set.geometry_hash);
    e.hash(set.grid_hash);
    e.u8(provenance_code(set.labeling));
    e.u64(set.seed);
    e.u64(set.num_channels as u64);
    e.u64(set.grid_len as u64);
    e.u64(set.samples.len() as u64);
    for s in &set.samples {
        e.u32(s.coords.azimuth);
        e.u32(s.coords.range);
        e.u8(split_code(s.split));
        e.u8(provenance_code(s.provenance));
        e.f64(s.snr_db);
        for v in s.measurement.values().iter() {
            e.c64(*v);
        }
        e.sparse(&s.label);
    }
    e.0
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(SampleSet, ContentHash)> {
    let (mut d, config) = Dec::open(bytes, DATASET_MAGIC, "dataset")?;
    let geometry_hash = d.hash()?;
    let grid_hash = d.hash()?;
    let labeling = provenance_from(d.u8()?)?;
    let seed = d.u64()?;
    let (n, l, count) = (d.dim()?, d.dim()?, d.dim()?);
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let coords = PixelCoord::new(d.u32()?, d.u32()?);
        let split = split_from(d.u8()?)?;
        let provenance = provenance_from(d.u8()?)?;
        let snr_db = d.f64()?;
        let mut y = CVector::zeros(n);
        for v in y.iter_mut() {
            *v = d.c64()?;
        }
        let label = d.sparse(l)?;
        samples.push(PixelSample {
            coords,
            measurement: Measurement::new(y).map_err(|e| fmt_err(format!("bad measurement: {e}")))?,
            label,
            provenance,
            snr_db,
            split,
        });
    }
    d.finish()?;
    Ok((
        SampleSet {
            samples,
            geometry_hash,
            grid_hash,
            labeling,
            seed,
            num_channels: n,
            grid_len: l,
        },
        config,
    ))
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| fmt_err(format!("bad number `{x}` in metadata")))
        })
        .collect()
}

fn to_token<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn from_token<T: serde::de::DeserializeOwned>(key: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| fmt_err(format!("bad value `{s}` for metadata key {key}")))
}

fn metadata_block(meta: &TrainingMetadata) -> BTreeMap<String, String> {
    let mut kv = meta.extra.clone();
    kv.insert("weight_constraint".into(), WEIGHT_CONSTRAINT.into());
    kv.insert("seed".into(), meta.seed.to_string());
    kv.insert("best_epoch".into(), meta.best_epoch.to_string());
    kv.insert("param_mode".into(), to_token(&meta.param_mode));
    kv.insert("loss".into(), to_token(&meta.loss));
    kv.insert(
        "label_provenance".into(),
        meta.label_provenance.map(|p| to_token(&p)).unwrap_or_default(),
    );
    kv.insert("train_loss".into(), join_f64(&meta.train_loss));
    kv.insert("validation_loss".into(), join_f64(&meta.validation_loss));
    kv
}

fn metadata_from(mut kv: BTreeMap<String, String>) -> Result<TrainingMetadata> {
    let mut take = |k: &str| {
        kv.remove(k)
            .ok_or_else(|| fmt_err(format!("model metadata lacks `{k}`")))
    };
    let constraint = take("weight_constraint")?;
    if constraint != WEIGHT_CONSTRAINT {
        return Err(fmt_err(format!(
            "model was built under a different weight constraint: {constraint}"
        )));
    }
    let seed = take("seed")?;
    let best_epoch = take("best_epoch")?;
    let param_mode: ParamMode = from_token("param_mode", &take("param_mode")?)?;
    let loss: LossKind = from_token("loss", &take("loss")?)?;
    let prov = take("label_provenance")?;
    let train_loss = parse_f64_list(&take("train_loss")?)?;
    let validation_loss = parse_f64_list(&take("validation_loss")?)?;
    Ok(TrainingMetadata {
        seed: seed.parse().map_err(|_| fmt_err("bad seed in metadata"))?,
        best_epoch: best_epoch.parse().map_err(|_| fmt_err("bad best_epoch in metadata"))?,
        param_mode,
        loss,
        label_provenance: if prov.is_empty() {
            None
        } else {
            Some(from_token("label_provenance", &prov)?)
        },
        train_loss,
        validation_loss,
        extra: kv,
    })
}

pub fn encode_model(model: &AlistaModel, config_hash: ContentHash) -> Vec<u8> {
    let mut e = Enc::new(MODEL_MAGIC, config_hash);
    let w = model.weights();
    e.hash(w.source_hash());
    e.u64(model.layers() as u64);
    for t in model.theta() {
        e.f64(*t);
    }
    for h in model.eta() {
        e.f64(*h);
    }
    e.f64(w.objective_value());
    e.matrix(w.entries());
    let kv = metadata_block(&model.metadata);
    e.u32(kv.len() as u32);
    for (k, v) in &kv {
        e.str(k);
        e.str(v);
    }
    e.0
}

/// Validates the weights against `r` before returning the model.
pub fn decode_model(bytes: &[u8], r: &SteeringMatrix) -> Result<(AlistaModel, ContentHash)> {
    let (mut d, config) = Dec::open(bytes, MODEL_MAGIC, "model")?;
    let source = d.hash()?;
    let k = d.dim()?;
    let theta = (0..k).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
    let eta = (0..k).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
    let objective = d.f64()?;
    let entries = d.matrix()?;
    let pairs = d.u32()?;
    let mut kv = BTreeMap::new();
    for _ in 0..pairs {
        let key = d.str()?;
        kv.insert(key, d.str()?);
    }
    d.finish()?;
    let weights = AnalyticWeights::from_parts(entries, source, objective, r)?;
    let mut model = AlistaModel::new(weights, theta, eta).map_err(|e| fmt_err(format!("bad model: {e}")))?;
    model.metadata = metadata_from(kv)?;
    Ok((model, config))
}

pub fn encode_estimates(set: &EstimateSet, config_hash: ContentHash) -> Vec<u8> {
    let mut e = Enc::new(ESTIMATES_MAGIC, config_hash);
    e.hash(set.steering_hash);
    e.str(&set.solver);
    e.u64(set.grid_len as u64);
    e.u64(set.estimates.len() as u64);
    for (c, p) in &set.estimates {
        e.u32(c.azimuth);
        e.u32(c.range);
        e.sparse(p);
    }
    e.0
}

pub fn decode_estimates(bytes: &[u8]) -> Result<(EstimateSet, ContentHash)> {
    let (mut d, config) = Dec::open(bytes, ESTIMATES_MAGIC, "estimates")?;
    let steering_hash = d.hash()?;
    let solver = d.str()?;
    let (l, count) = (d.dim()?, d.dim()?);
    let mut estimates = BTreeMap::new();
    for _ in 0..count {
        let c = PixelCoord::new(d.u32()?, d.u32()?);
        estimates.insert(c, d.sparse(l)?);
    }
    d.finish()?;
    Ok((
        EstimateSet {
            solver,
            steering_hash,
            grid_len: l,
            estimates,
        },
        config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AcquisitionGeometry, ElevationGrid};
    use crate::scene::{build_sample_set, elevation_grid_for, generate_scene, Labeling, SceneSpec, SplitFractions};

    fn setup() -> (AcquisitionGeometry, ElevationGrid, SteeringMatrix) {
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let spec = SceneSpec::default();
        let grid = elevation_grid_for(spec.max_elevation(45.0), 16).unwrap();
        let r = SteeringMatrix::build(&g, &grid);
        (g, grid, r)
    }

    fn cfg_hash() -> ContentHash {
        ContentHash([7; 32])
    }

    #[test]
    fn steering_round_trip() {
        let (_, _, r) = setup();
        let bytes = encode_steering(&r, cfg_hash());
        let (back, h) = decode_steering(&bytes).unwrap();
        assert_eq!(h, cfg_hash());
        assert_eq!(back.entries(), r.entries());
        assert_eq!(back.hash(), r.hash());
    }

    #[test]
    fn weights_round_trip_and_tamper() {
        let (_, _, r) = setup();
        let w = AnalyticWeights::compute(&r).unwrap();
        let mut bytes = encode_weights(&w, cfg_hash());
        let (back, _) = decode_weights(&bytes, &r).unwrap();
        assert_eq!(back, w);
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(decode_weights(&bytes, &r).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let (g, grid, r) = setup();
        let spec = SceneSpec {
            azimuth_extent: 4,
            range_extent: 20,
            building: None,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec, &g, &grid).unwrap();
        let set = build_sample_set(
            &scene,
            &g,
            &grid,
            &r,
            20.0,
            &Labeling::GroundTruth,
            &SplitFractions::default(),
            3,
        )
        .unwrap();
        let bytes = encode_dataset(&set, cfg_hash());
        let (back, _) = decode_dataset(&bytes).unwrap();
        assert_eq!(back.samples, set.samples);
        assert_eq!(encode_dataset(&back, cfg_hash()), bytes);
    }

    #[test]
    fn model_round_trip_keeps_metadata() {
        let (_, _, r) = setup();
        let w = AnalyticWeights::compute(&r).unwrap();
        let mut m = AlistaModel::new(w, vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        m.metadata.train_loss = vec![1.0, 0.1 + 0.2];
        m.metadata.validation_loss = vec![0.5, 1e-300];
        m.metadata.label_provenance = Some(LabelProvenance::CsReconstruction);
        m.metadata.extra.insert("note".into(), "x y".into());
        let bytes = encode_model(&m, cfg_hash());
        let (back, _) = decode_model(&bytes, &r).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn model_rejects_other_steering_matrix() {
        let (g, _, r) = setup();
        let w = AnalyticWeights::compute(&r).unwrap();
        let m = AlistaModel::new(w, vec![0.1], vec![0.3]).unwrap();
        let other = SteeringMatrix::build(&g, &ElevationGrid::spanning(0.0, 4.0, 16).unwrap());
        assert!(matches!(
            decode_model(&encode_model(&m, cfg_hash()), &other),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn estimates_round_trip() {
        let set = EstimateSet {
            solver: "omp".into(),
            steering_hash: ContentHash([1; 32]),
            grid_len: 5,
            estimates: BTreeMap::from([
                (
                    PixelCoord::new(0, 1),
                    ReflectivityProfile::sparse(5, &[(2, C64::new(1.0, -1.0))]).unwrap(),
                ),
                (PixelCoord::new(3, 0), ReflectivityProfile::zeros(5)),
            ]),
        };
        let (back, h) = decode_estimates(&encode_estimates(&set, cfg_hash())).unwrap();
        assert_eq!((back, h), (set, cfg_hash()));
    }

    #[test]
    fn wrong_kind_truncation_and_version_rejected() {
        let (_, _, r) = setup();
        let bytes = encode_steering(&r, cfg_hash());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
        assert!(matches!(
            decode_steering(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode_steering(&v2), Err(Error::Format(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_steering(&extra), Err(Error::Format(_))));
    }
}
