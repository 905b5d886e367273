//! Mini-batch training of the per-layer scalars.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{AlistaModel, LossKind, ParamGradient, ParamMode, TrainingMetadata};
use super::weights::AnalyticWeights;
use crate::error::{Error, Result};
use crate::model::{Measurement, ReflectivityProfile, SteeringMatrix};
use crate::rng::{derive_seed, rng_from};
use crate::scene::{SampleSet, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Set from the run's root seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub gradient_mode: GradientMode,
    /// Share of training pixels held out when the set has no validation split.
    pub validation_fraction: f64,
    /// Progressive growth: train the first `k` layers for each listed `k`
    /// in turn, the last entry being the full depth.
    pub layer_schedule: Option<Vec<usize>>,
    pub optimizer: Optimizer,
    pub param_mode: ParamMode,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            gradient_mode: GradientMode::Analytic,
            validation_fraction: 0.15,
            layer_schedule: None,
            optimizer: Optimizer::default(),
            param_mode: ParamMode::PerLayer,
            loss: LossKind::Complex,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, layers: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("alista.train.learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("alista.train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("alista.train.batch_size", "must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("alista.train.validation_fraction", "must lie in (0, 1)"));
        }
        if layers == 0 {
            return Err(Error::config("alista.layers", "must be at least 1"));
        }
        if let Some(schedule) = &self.layer_schedule {
            let increasing = schedule.windows(2).all(|w| w[0] < w[1]);
            if schedule.is_empty() || !increasing || schedule[0] == 0 || *schedule.last().unwrap() != layers {
                return Err(Error::config(
                    "alista.train.layer_schedule",
                    format!("must be strictly increasing, start at >= 1 and end at {layers}"),
                ));
            }
        }
        match self.optimizer {
            Optimizer::Sgd => {}
            Optimizer::Momentum { beta } if (0.0..1.0).contains(&beta) => {}
            Optimizer::Adam { beta1, beta2, epsilon }
                if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0 => {}
            _ => {
                return Err(Error::config(
                    "alista.train.optimizer",
                    "betas must lie in [0, 1) and epsilon > 0",
                ))
            }
        }
        Ok(())
    }
}

type Pair<'a> = (&'a Measurement, &'a ReflectivityProfile);

/// Training and validation pairs. Uses the set's own validation split when
/// present, otherwise holds out a seeded `validation_fraction` of training
/// pixels. Test pixels are never touched.
fn partition<'a>(dataset: &'a SampleSet, cfg: &TrainConfig) -> Result<(Vec<Pair<'a>>, Vec<Pair<'a>>)> {
    let pair = |s: &'a crate::scene::PixelSample| (&s.measurement, &s.label);
    let mut train: Vec<Pair> = dataset.split(Split::Train).map(pair).collect();
    let mut val: Vec<Pair> = dataset.split(Split::Validation).map(pair).collect();
    if val.is_empty() {
        let mut rng = rng_from(derive_seed(cfg.seed, "train.holdout", &[]));
        train.shuffle(&mut rng);
        let n_val = ((train.len() as f64) * cfg.validation_fraction).round() as usize;
        val = train.split_off(train.len() - n_val.min(train.len()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need nonempty training and validation pixels, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}

/// Starting point in the ISTA regime: `eta = 1 / lambda_max(R^H R)` and
/// `theta = 0.1 eta median|W^H y|` over the training measurements.
pub fn initial_parameters(weights: &AnalyticWeights, r: &SteeringMatrix, ys: &[&Measurement]) -> (f64, f64) {
    let eta = 1.0 / r.lambda_max();
    let mut mags: Vec<f64> = ys
        .iter()
        .flat_map(|y| {
            weights
                .entries()
                .ad_mul(y.values())
                .iter()
                .map(|z| z.norm())
                .collect::<Vec<_>>()
        })
        .collect();
    if mags.is_empty() {
        return (0.0, eta);
    }
    mags.sort_by(f64::total_cmp);
    let mid = mags.len() / 2;
    let median = if mags.len().is_multiple_of(2) {
        0.5 * (mags[mid - 1] + mags[mid])
    } else {
        mags[mid]
    };
    (0.1 * eta * median, eta)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        for i in 0..params.len() {
            let g = grad[i];
            params[i] -= match self.kind {
                Optimizer::Sgd => self.lr * g,
                Optimizer::Momentum { beta } => {
                    self.m[i] = beta * self.m[i] + g;
                    self.lr * self.m[i]
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / (1.0 - beta1.powi(self.step));
                    let v_hat = self.v[i] / (1.0 - beta2.powi(self.step));
                    self.lr * m_hat / (v_hat.sqrt() + epsilon)
                }
            };
        }
    }
}

fn to_divergence(e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence(format!(
            "{what}; lower the learning rate or the step-size initialization"
        )),
        other => other,
    }
}

/// Flattened trainable vector: `[theta.., eta..]`, one pair when tied.
fn pack(model: &AlistaModel, mode: ParamMode) -> Vec<f64> {
    match mode {
        ParamMode::PerLayer => model.theta().iter().chain(model.eta()).copied().collect(),
        ParamMode::Tied => vec![model.theta()[0], model.eta()[0]],
    }
}

fn unpack(params: &[f64], k: usize, mode: ParamMode) -> (Vec<f64>, Vec<f64>) {
    match mode {
        ParamMode::PerLayer => (params[..k].to_vec(), params[k..].to_vec()),
        ParamMode::Tied => (vec![params[0]; k], vec![params[1]; k]),
    }
}

fn flatten_grad(g: &ParamGradient, mode: ParamMode) -> Vec<f64> {
    match mode {
        ParamMode::PerLayer => g.theta.iter().chain(&g.eta).copied().collect(),
        ParamMode::Tied => vec![g.theta.iter().sum(), g.eta.iter().sum()],
    }
}

/// Trains a `layers`-deep model on the set's training pixels and returns
/// the parameters with the lowest validation loss, counting the
/// initialization as epoch 0.
pub fn train(
    dataset: &SampleSet,
    r: &SteeringMatrix,
    weights: &AnalyticWeights,
    layers: usize,
    cfg: &TrainConfig,
) -> Result<AlistaModel> {
    cfg.validate(layers)?;
    weights.check_pairing(r)?;
    if dataset.num_channels != r.num_channels() || dataset.grid_len != r.grid_len() {
        return Err(Error::DimensionMismatch {
            what: "dataset vs steering matrix",
            expected: r.num_channels() * r.grid_len(),
            found: dataset.num_channels * dataset.grid_len,
        });
    }
    let (train_set, val_set) = partition(dataset, cfg)?;
    let ys: Vec<&Measurement> = train_set.iter().map(|p| p.0).collect();
    let (theta0, eta0) = initial_parameters(weights, r, &ys);

    let schedule = cfg.layer_schedule.clone().unwrap_or_else(|| vec![layers]);
    let mut metadata = TrainingMetadata {
        seed: cfg.seed,
        label_provenance: Some(dataset.labeling),
        param_mode: cfg.param_mode,
        loss: cfg.loss,
        ..TrainingMetadata::default()
    };
    let mut model = AlistaModel::new(weights.clone(), vec![theta0; schedule[0]], vec![eta0; schedule[0]])?;
    for (stage, &depth) in schedule.iter().enumerate() {
        if depth > model.layers() {
            // new layers start from the deepest trained layer
            let (t, e) = (*model.theta().last().unwrap(), *model.eta().last().unwrap());
            let mut theta = model.theta().to_vec();
            let mut eta = model.eta().to_vec();
            theta.resize(depth, t);
            eta.resize(depth, e);
            model = AlistaModel::new(weights.clone(), theta, eta)?;
        }
        model = train_stage(model, r, &train_set, &val_set, cfg, stage as u64, &mut metadata)?;
    }
    model.metadata = metadata;
    Ok(model)
}

fn train_stage(
    mut model: AlistaModel,
    r: &SteeringMatrix,
    train_set: &[Pair],
    val_set: &[Pair],
    cfg: &TrainConfig,
    stage: u64,
    metadata: &mut TrainingMetadata,
) -> Result<AlistaModel> {
    let k = model.layers();
    let mode = cfg.param_mode;
    if mode == ParamMode::Tied {
        let (t, e) = unpack(&pack(&model, mode), k, mode);
        model.set_params(&t, &e);
    }
    let mut params = pack(&model, mode);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());

    let eval = |m: &AlistaModel, set: &[Pair]| m.batch_loss(set, r, cfg.loss).map_err(to_divergence);
    let mut best_val = eval(&model, val_set)?;
    let mut best = model.clone();
    let first_epoch = metadata.train_loss.len();
    metadata.train_loss.push(eval(&model, train_set)?);
    metadata.validation_loss.push(best_val);
    metadata.best_epoch = first_epoch;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_from(derive_seed(cfg.seed, "train.shuffle", &[stage, epoch as u64]));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Pair> = chunk.iter().map(|&i| train_set[i]).collect();
            let grad = match cfg.gradient_mode {
                GradientMode::Analytic => model.loss_and_gradient(&batch, r, cfg.loss).map(|(_, g)| g),
                GradientMode::FiniteDifference => model.finite_difference_gradient(&batch, r, cfg.loss, 1e-5),
            }
            .map_err(to_divergence)?;
            opt.update(&mut params, &flatten_grad(&grad, mode));
            let theta_len = if mode == ParamMode::Tied { 1 } else { k };
            for t in &mut params[..theta_len] {
                *t = t.max(0.0);
            }
            let (t, e) = unpack(&params, k, mode);
            model.set_params(&t, &e);
        }
        let train_loss = eval(&model, train_set)?;
        let val_loss = eval(&model, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "validation loss became {val_loss} at epoch {epoch}"
            )));
        }
        metadata.train_loss.push(train_loss);
        metadata.validation_loss.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            metadata.best_epoch = first_epoch + epoch;
        }
    }
    Ok(best)
}

/// Validation NMSE (aggregate ratio, not dB) of one model per depth.
pub fn sweep_layers(
    dataset: &SampleSet,
    r: &SteeringMatrix,
    weights: &AnalyticWeights,
    depths: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    if depths.is_empty() {
        return Err(Error::InvalidArgument("layer range is empty".into()));
    }
    let mut cfg = cfg.clone();
    cfg.layer_schedule = None;
    let (_, val_set) = partition(dataset, &cfg)?;
    depths
        .iter()
        .map(|&k| {
            let model = train(dataset, r, weights, k, &cfg)?;
            let (mut err, mut energy) = (0.0, 0.0);
            for (y, label) in &val_set {
                let est = model.forward(y, r)?;
                err += (est.values() - label.values()).norm_squared();
                energy += label.energy();
            }
            Ok((k, err / energy))
        })
        .collect()
}
