//! Unrolled forward pass and reverse-mode gradients over the per-layer scalars.
//!
//! Layer `k` maps `g_k` to `g_{k+1} = soft(g_k + eta_k W^H (y - R g_k), theta_k)`
//! starting from `g_0 = 0`. Gradients use the convention
//! `dL/dz = dL/dRe(z) + i dL/dIm(z)`, so a complex-linear map `A` pulls a
//! gradient back through `A^H`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::weights::AnalyticWeights;
use crate::error::{Error, Result};
use crate::linalg::is_finite;
use crate::model::{CVector, Measurement, ReflectivityProfile, SteeringMatrix, C64};
use crate::scene::LabelProvenance;
use crate::solvers::{soft_threshold, PixelSolver, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    /// Independent `theta_k`, `eta_k` per layer.
    #[default]
    PerLayer,
    /// One `theta` and one `eta` shared by every layer.
    Tied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared modulus of the complex difference.
    #[default]
    Complex,
    /// Squared difference of moduli.
    Magnitude,
}

impl LossKind {
    pub fn sample_loss(self, estimate: &CVector, label: &CVector) -> f64 {
        match self {
            LossKind::Complex => (estimate - label).norm_squared(),
            LossKind::Magnitude => estimate
                .iter()
                .zip(label.iter())
                .map(|(a, b)| (a.norm() - b.norm()).powi(2))
                .sum(),
        }
    }

    /// `dL/d estimate` for one sample, before batch averaging.
    fn sample_grad(self, estimate: &CVector, label: &CVector) -> CVector {
        match self {
            LossKind::Complex => (estimate - label) * C64::new(2.0, 0.0),
            LossKind::Magnitude => estimate.zip_map(label, |a, b| {
                let m = a.norm();
                if m == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    a * (2.0 * (m - b.norm()) / m)
                }
            }),
        }
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMetadata {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub seed: u64,
    pub label_provenance: Option<LabelProvenance>,
    pub param_mode: ParamMode,
    pub loss: LossKind,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlistaModel {
    weights: AnalyticWeights,
    theta: Vec<f64>,
    eta: Vec<f64>,
    pub metadata: TrainingMetadata,
}

/// Gradient of the batch loss with respect to every layer's scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ParamGradient {
    fn zeros(k: usize) -> Self {
        Self {
            theta: vec![0.0; k],
            eta: vec![0.0; k],
        }
    }

    fn add_scaled(&mut self, other: &ParamGradient, scale: f64) {
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += scale * b;
        }
        for (a, b) in self.eta.iter_mut().zip(&other.eta) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.eta).all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.theta.iter().chain(&self.eta).fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl AlistaModel {
    pub fn new(weights: AnalyticWeights, theta: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.len() != eta.len() {
            return Err(Error::InvalidArgument(format!(
                "need K >= 1 layers with matching theta/eta lengths, got {} and {}",
                theta.len(),
                eta.len()
            )));
        }
        if let Some(t) = theta.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must be finite and >= 0, got {t}"
            )));
        }
        if let Some(e) = eta.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument(format!("step sizes must be finite, got {e}")));
        }
        Ok(Self {
            weights,
            theta,
            eta,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn layers(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn weights(&self) -> &AnalyticWeights {
        &self.weights
    }

    pub(crate) fn set_params(&mut self, theta: &[f64], eta: &[f64]) {
        self.theta.copy_from_slice(theta);
        self.eta.copy_from_slice(eta);
    }

    fn check(&self, y: &Measurement, r: &SteeringMatrix) -> Result<()> {
        self.weights.check_pairing(r)?;
        y.check_len(r.num_channels())
    }

    /// Runs all layers from zero and returns the final estimate.
    pub fn forward(&self, y: &Measurement, r: &SteeringMatrix) -> Result<ReflectivityProfile> {
        self.check(y, r)?;
        let (w, rm) = (self.weights.entries(), r.entries());
        let mut g = CVector::zeros(rm.ncols());
        for (k, (&theta, &eta)) in self.theta.iter().zip(&self.eta).enumerate() {
            let resid = y.values() - rm * &g;
            g += w.ad_mul(&resid) * C64::new(eta, 0.0);
            for z in g.iter_mut() {
                *z = soft_threshold(*z, theta);
            }
            if !is_finite(&g) {
                return Err(Error::NonFinite(format!("ALISTA layer {k}")));
            }
        }
        ReflectivityProfile::new(g)
    }

    /// Forward pass keeping what the backward pass needs.
    fn forward_cached(&self, y: &Measurement, r: &SteeringMatrix) -> Result<Tape> {
        let (w, rm) = (self.weights.entries(), r.entries());
        let mut g = CVector::zeros(rm.ncols());
        let mut layers = Vec::with_capacity(self.layers());
        for (k, (&theta, &eta)) in self.theta.iter().zip(&self.eta).enumerate() {
            let corr = w.ad_mul(&(y.values() - rm * &g));
            let pre = &g + &corr * C64::new(eta, 0.0);
            if !is_finite(&pre) {
                return Err(Error::NonFinite(format!("ALISTA layer {k}")));
            }
            g = pre.map(|z| soft_threshold(z, theta));
            layers.push(LayerTape { corr, pre });
        }
        Ok(Tape { layers, output: g })
    }

    /// Batch-mean loss and its gradient over every layer's scalars.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&Measurement, &ReflectivityProfile)],
        r: &SteeringMatrix,
        loss: LossKind,
    ) -> Result<(f64, ParamGradient)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        self.weights.check_pairing(r)?;
        let scale = 1.0 / batch.len() as f64;
        let per_sample = {
            use rayon::prelude::*;
            batch
                .par_iter()
                .map(|(y, label)| self.sample_gradient(y, label, r, loss))
                .collect::<Result<Vec<_>>>()?
        };
        // fixed summation order keeps results independent of thread count
        let mut total = 0.0;
        let mut grad = ParamGradient::zeros(self.layers());
        for (l, g) in &per_sample {
            total += l * scale;
            grad.add_scaled(g, scale);
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("ALISTA gradient (step sizes diverging?)".into()));
        }
        Ok((total, grad))
    }

    fn sample_gradient(
        &self,
        y: &Measurement,
        label: &ReflectivityProfile,
        r: &SteeringMatrix,
        loss: LossKind,
    ) -> Result<(f64, ParamGradient)> {
        self.check(y, r)?;
        let (w, rm) = (self.weights.entries(), r.entries());
        let tape = self.forward_cached(y, r)?;
        let value = loss.sample_loss(&tape.output, label.values());
        let mut upstream = loss.sample_grad(&tape.output, label.values());
        let mut grad = ParamGradient::zeros(self.layers());
        for k in (0..self.layers()).rev() {
            let LayerTape { corr, pre } = &tape.layers[k];
            let theta = self.theta[k];
            let mut d_theta = 0.0;
            let d_pre = pre.zip_map(&upstream, |z, up| {
                let m = z.norm();
                if m <= theta {
                    return C64::new(0.0, 0.0);
                }
                let u = z / m;
                let radial = (u.conj() * up).re;
                d_theta -= radial;
                u * radial + (up - u * radial) * (1.0 - theta / m)
            });
            grad.theta[k] = d_theta;
            grad.eta[k] = d_pre.iter().zip(corr.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            // z = g + eta W^H (y - R g)  =>  dL/dg = dL/dz - eta R^H W dL/dz
            let back = rm.ad_mul(&(w * &d_pre));
            upstream = d_pre - back * C64::new(self.eta[k], 0.0);
        }
        Ok((value, grad))
    }

    /// Batch-mean loss only.
    pub fn batch_loss(
        &self,
        batch: &[(&Measurement, &ReflectivityProfile)],
        r: &SteeringMatrix,
        loss: LossKind,
    ) -> Result<f64> {
        use rayon::prelude::*;
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let losses = batch
            .par_iter()
            .map(|(y, label)| Ok(loss.sample_loss(self.forward(y, r)?.values(), label.values())))
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / batch.len() as f64)
    }

    /// Central finite differences with relative step `rel_step`.
    pub fn finite_difference_gradient(
        &self,
        batch: &[(&Measurement, &ReflectivityProfile)],
        r: &SteeringMatrix,
        loss: LossKind,
        rel_step: f64,
    ) -> Result<ParamGradient> {
        let k = self.layers();
        let mut grad = ParamGradient::zeros(k);
        let eval = |theta: &[f64], eta: &[f64]| -> Result<f64> {
            let mut m = self.clone();
            m.set_params(theta, eta);
            m.batch_loss(batch, r, loss)
        };
        for i in 0..2 * k {
            let (mut tp, mut tm) = (self.theta.clone(), self.theta.clone());
            let (mut ep, mut em) = (self.eta.clone(), self.eta.clone());
            let (base, plus, minus) = if i < k {
                (self.theta[i], &mut tp[i], &mut tm[i])
            } else {
                (self.eta[i - k], &mut ep[i - k], &mut em[i - k])
            };
            let h = rel_step * base.abs().max(1e-3);
            *plus = base + h;
            *minus = base - h;
            let d = (eval(&tp, &ep)? - eval(&tm, &em)?) / (2.0 * h);
            if i < k {
                grad.theta[i] = d;
            } else {
                grad.eta[i - k] = d;
            }
        }
        Ok(grad)
    }

    /// Smallest `| |pre-activation| - theta_k |` over the batch; finite
    /// differences are only trustworthy when this is bounded away from 0.
    pub fn kink_margin(&self, ys: &[&Measurement], r: &SteeringMatrix) -> Result<f64> {
        let mut margin = f64::INFINITY;
        for y in ys {
            self.check(y, r)?;
            let tape = self.forward_cached(y, r)?;
            for (layer, &theta) in tape.layers.iter().zip(&self.theta) {
                for z in layer.pre.iter() {
                    margin = margin.min((z.norm() - theta).abs());
                }
            }
        }
        Ok(margin)
    }
}

struct LayerTape {
    /// `W^H (y - R g_k)`
    corr: CVector,
    /// `g_k + eta_k corr`
    pre: CVector,
}

struct Tape {
    layers: Vec<LayerTape>,
    output: CVector,
}

/// A trained model bound to its steering matrix, usable wherever a
/// classical solver is.
pub struct AlistaSolver<'a> {
    model: &'a AlistaModel,
    r: &'a SteeringMatrix,
}

impl<'a> AlistaSolver<'a> {
    pub fn new(model: &'a AlistaModel, r: &'a SteeringMatrix) -> Result<Self> {
        model.weights.check_pairing(r)?;
        Ok(Self { model, r })
    }
}

impl PixelSolver for AlistaSolver<'_> {
    fn solve(&self, y: &Measurement) -> Result<SolveResult> {
        let estimate = self.model.forward(y, self.r)?;
        let final_residual_norm = (y.values() - self.r.entries() * estimate.values()).norm();
        Ok(SolveResult {
            estimate,
            iterations_used: self.model.layers(),
            final_residual_norm,
            objective_trace: Vec::new(),
        })
    }

    fn name(&self) -> &str {
        "alista"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AcquisitionGeometry, ElevationGrid};

    fn setup() -> (SteeringMatrix, AnalyticWeights) {
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let grid = ElevationGrid::spanning(-0.5, 4.5, 48).unwrap();
        let r = SteeringMatrix::build(&g, &grid);
        let w = AnalyticWeights::compute(&r).unwrap();
        (r, w)
    }

    fn measurement(r: &SteeringMatrix, entries: &[(usize, C64)]) -> Measurement {
        r.forward(&ReflectivityProfile::sparse(r.grid_len(), entries).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_measurement_gives_zero() {
        let (r, w) = setup();
        let m = AlistaModel::new(w, vec![0.0, 0.3], vec![0.7, -0.2]).unwrap();
        assert_eq!(m.forward(&Measurement::zeros(8), &r).unwrap().energy(), 0.0);
    }

    #[test]
    fn single_layer_no_threshold_is_w_adjoint_y() {
        let (r, w) = setup();
        let y = measurement(&r, &[(4, C64::new(1.0, 0.3)), (30, C64::new(-0.2, 0.9))]);
        let expected = w.entries().ad_mul(y.values());
        let m = AlistaModel::new(w, vec![0.0], vec![1.0]).unwrap();
        let out = m.forward(&y, &r).unwrap();
        assert!((out.values() - expected).norm() < 1e-12);
    }

    #[test]
    fn dominating_thresholds_give_zero_and_flat_gradient() {
        let (r, w) = setup();
        let y = measurement(&r, &[(10, C64::new(1.0, 0.0))]);
        let big = 10.0
            * w.entries()
                .ad_mul(y.values())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
        let m = AlistaModel::new(w, vec![big; 3], vec![1.0; 3]).unwrap();
        assert_eq!(m.forward(&y, &r).unwrap().energy(), 0.0);
        let label = ReflectivityProfile::sparse(48, &[(10, C64::new(1.0, 0.0))]).unwrap();
        let (_, g) = m.loss_and_gradient(&[(&y, &label)], &r, LossKind::Complex).unwrap();
        assert!(g.theta.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn hash_mismatch_rejected() {
        let (r, w) = setup();
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 401.0, 45.0).unwrap();
        let other = SteeringMatrix::build(&g, &ElevationGrid::spanning(-0.5, 4.5, 48).unwrap());
        let m = AlistaModel::new(w, vec![0.1], vec![0.1]).unwrap();
        assert!(matches!(
            m.forward(&Measurement::zeros(8), &other),
            Err(Error::HashMismatch { .. })
        ));
        assert!(m.forward(&Measurement::zeros(8), &r).is_ok());
    }

    #[test]
    fn invalid_parameters_rejected() {
        let (_, w) = setup();
        assert!(AlistaModel::new(w.clone(), vec![], vec![]).is_err());
        assert!(AlistaModel::new(w.clone(), vec![0.1], vec![0.1, 0.2]).is_err());
        assert!(AlistaModel::new(w, vec![-0.1], vec![0.1]).is_err());
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let (r, w) = setup();
        let y1 = measurement(&r, &[(10, C64::new(1.0, 0.2))]);
        let y2 = measurement(&r, &[(3, C64::new(0.0, 1.0)), (40, C64::new(0.5, 0.5))]);
        let l1 = ReflectivityProfile::sparse(48, &[(10, C64::new(1.0, 0.2))]).unwrap();
        let l2 = ReflectivityProfile::sparse(48, &[(3, C64::new(0.0, 1.0)), (40, C64::new(0.5, 0.5))]).unwrap();
        let m = AlistaModel::new(w, vec![0.01, 0.02, 0.005], vec![0.05, 0.04, 0.06]).unwrap();
        let once = [(&y1, &l1), (&y2, &l2)];
        let twice = [(&y1, &l1), (&y2, &l2), (&y1, &l1), (&y2, &l2)];
        let (a, ga) = m.loss_and_gradient(&once, &r, LossKind::Complex).unwrap();
        let (b, gb) = m.loss_and_gradient(&twice, &r, LossKind::Complex).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
        for (x, y) in ga.theta.iter().chain(&ga.eta).zip(gb.theta.iter().chain(&gb.eta)) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (r, w) = setup();
        let y1 = measurement(&r, &[(10, C64::new(1.0, 0.2))]);
        let y2 = measurement(&r, &[(3, C64::new(0.0, 1.0)), (40, C64::new(0.5, 0.5))]);
        let l1 = ReflectivityProfile::sparse(48, &[(10, C64::new(1.0, 0.2))]).unwrap();
        let l2 = ReflectivityProfile::sparse(48, &[(3, C64::new(0.0, 1.0)), (40, C64::new(0.5, 0.5))]).unwrap();
        let batch = [(&y1, &l1), (&y2, &l2)];
        for loss in [LossKind::Complex, LossKind::Magnitude] {
            let m = AlistaModel::new(w.clone(), vec![0.11, 0.07, 0.031], vec![0.05, 0.045, 0.06]).unwrap();
            assert!(m.kink_margin(&[&y1, &y2], &r).unwrap() > 1e-3);
            let (_, g) = m.loss_and_gradient(&batch, &r, loss).unwrap();
            let fd = m.finite_difference_gradient(&batch, &r, loss, 1e-5).unwrap();
            for (a, b) in g.theta.iter().chain(&g.eta).zip(fd.theta.iter().chain(&fd.eta)) {
                assert!(
                    (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-6),
                    "{a} vs {b} ({loss:?})"
                );
            }
        }
    }

    #[test]
    fn phase_equivariant_forward() {
        let (r, w) = setup();
        let y = measurement(&r, &[(5, C64::new(1.0, 0.2)), (33, C64::new(-0.4, 0.6))]);
        let m = AlistaModel::new(w, vec![0.02; 4], vec![0.06; 4]).unwrap();
        let c = C64::from_polar(1.0, 1.234);
        let a = m.forward(&y.scaled(c), &r).unwrap();
        let b = m.forward(&y, &r).unwrap();
        assert!((a.values() - b.values() * c).norm() < 1e-10);
    }
}
