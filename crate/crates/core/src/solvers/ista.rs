use serde::{Deserialize, Serialize};

use super::{soft_threshold_vec, PixelSolver, SolveResult};
use crate::error::{Error, Result};
use crate::linalg::is_finite;
use crate::model::{CVector, Measurement, SteeringMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IstaConfig {
    /// l1 weight; the per-iteration threshold is `alpha / lipschitz`.
    pub alpha: f64,
    pub lipschitz: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once `||x_{k+1} - x_k|| <= tolerance * ||x_{k+1}||`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_iters() -> usize {
    500
}

fn default_tolerance() -> f64 {
    1e-6
}

impl IstaConfig {
    pub fn new(alpha: f64, lipschitz: f64) -> Self {
        Self {
            alpha,
            lipschitz,
            max_iters: default_max_iters(),
            tolerance: default_tolerance(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.alpha / self.lipschitz
    }
}

/// ISTA bound to one steering matrix; the Lipschitz check runs once here.
#[derive(Debug, Clone)]
pub struct IstaSolver<'a> {
    r: &'a SteeringMatrix,
    cfg: IstaConfig,
}

impl<'a> IstaSolver<'a> {
    pub fn new(r: &'a SteeringMatrix, cfg: IstaConfig) -> Result<Self> {
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("must be positive, got {}", cfg.alpha)));
        }
        if !(cfg.tolerance >= 0.0) {
            return Err(Error::config("tolerance", "must be nonnegative"));
        }
        let lambda_max = r.lambda_max();
        if !(cfg.lipschitz > lambda_max) {
            return Err(Error::LipschitzTooSmall {
                lipschitz: cfg.lipschitz,
                lambda_max,
            });
        }
        Ok(Self { r, cfg })
    }

    pub fn config(&self) -> &IstaConfig {
        &self.cfg
    }
}

impl PixelSolver for IstaSolver<'_> {
    fn solve(&self, y: &Measurement) -> Result<SolveResult> {
        let r = self.r.entries();
        y.check_len(r.nrows())?;
        let step = 1.0 / self.cfg.lipschitz;
        let theta = self.cfg.threshold();
        let alpha = self.cfg.alpha;
        let objective =
            |resid: &CVector, x: &CVector| 0.5 * resid.norm_squared() + alpha * x.iter().map(|z| z.norm()).sum::<f64>();

        let mut x = CVector::zeros(r.ncols());
        let mut resid = y.values().clone();
        let mut trace = vec![objective(&resid, &x)];
        let mut iters = 0;
        while iters < self.cfg.max_iters {
            iters += 1;
            let mut next = &x + r.ad_mul(&resid) * C64::from(step);
            soft_threshold_vec(&mut next, theta);
            if !is_finite(&next) {
                return Err(Error::NonFinite(format!("ISTA iterate {iters}")));
            }
            let change = (&next - &x).norm();
            x = next;
            resid = y.values() - r * &x;
            trace.push(objective(&resid, &x));
            if change <= self.cfg.tolerance * x.norm() {
                break;
            }
        }
        SolveResult::new(self.r, y, x, iters, trace)
    }

    fn name(&self) -> &str {
        "ista"
    }
}

/// One-shot ISTA; prefer [`IstaSolver`] when solving many pixels.
pub fn ista_solve(y: &Measurement, r: &SteeringMatrix, cfg: &IstaConfig) -> Result<SolveResult> {
    IstaSolver::new(r, *cfg)?.solve(y)
}
