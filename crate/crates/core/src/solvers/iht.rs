use super::{GreedyConfig, PixelSolver, SolveResult};
use crate::error::{Error, Result};
use crate::linalg::is_finite;
use crate::model::{CVector, Measurement, SteeringMatrix, C64};

/// Default step margin over `lambda_max(R^H R)`.
const DEFAULT_LIPSCHITZ_MARGIN: f64 = 1.01;

#[derive(Debug, Clone)]
pub struct IhtSolver<'a> {
    r: &'a SteeringMatrix,
    cfg: GreedyConfig,
    lipschitz: f64,
}

impl<'a> IhtSolver<'a> {
    /// Uses step `1 / (1.01 lambda_max)`.
    pub fn new(r: &'a SteeringMatrix, cfg: GreedyConfig) -> Result<Self> {
        let lipschitz = r.lambda_max() * DEFAULT_LIPSCHITZ_MARGIN;
        Self::with_lipschitz(r, cfg, lipschitz)
    }

    pub fn with_lipschitz(r: &'a SteeringMatrix, cfg: GreedyConfig, lipschitz: f64) -> Result<Self> {
        cfg.validate(r)?;
        let lambda_max = r.lambda_max();
        if !(lipschitz > lambda_max) {
            return Err(Error::LipschitzTooSmall { lipschitz, lambda_max });
        }
        Ok(Self { r, cfg, lipschitz })
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Keeps the `k` largest-modulus entries; ties go to the lowest index.
pub(crate) fn hard_threshold(v: &mut CVector, k: usize) {
    if k >= v.len() {
        return;
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    // stable sort keeps ascending index order among equal moduli
    order.sort_by(|&a, &b| v[b].norm_sqr().total_cmp(&v[a].norm_sqr()));
    for &i in &order[k..] {
        v[i] = C64::new(0.0, 0.0);
    }
}

impl PixelSolver for IhtSolver<'_> {
    fn solve(&self, y: &Measurement) -> Result<SolveResult> {
        let r = self.r.entries();
        y.check_len(r.nrows())?;
        let step = 1.0 / self.lipschitz;
        let mut x = CVector::zeros(r.ncols());
        let mut resid = y.values().clone();
        let mut iters = 0;
        while iters < self.cfg.max_iters && resid.norm() > self.cfg.residual_tolerance {
            iters += 1;
            x += r.ad_mul(&resid) * C64::from(step);
            hard_threshold(&mut x, self.cfg.sparsity);
            if !is_finite(&x) {
                return Err(Error::NonFinite(format!("IHT iterate {iters}")));
            }
            resid = y.values() - r * &x;
        }
        SolveResult::new(self.r, y, x, iters, Vec::new())
    }

    fn name(&self) -> &str {
        "iht"
    }
}

pub fn iht_solve(y: &Measurement, r: &SteeringMatrix, cfg: &GreedyConfig) -> Result<SolveResult> {
    IhtSolver::new(r, *cfg)?.solve(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AcquisitionGeometry, ElevationGrid};

    fn matrix() -> SteeringMatrix {
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let grid = ElevationGrid::uniform(0.0, 6.25 / 24.0, 24).unwrap();
        SteeringMatrix::build(&g, &grid)
    }

    #[test]
    fn hard_threshold_ties_lowest_index() {
        let mut v = CVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 2.0),
            C64::new(-1.0, 0.0),
            C64::new(0.0, 1.0),
        ]);
        hard_threshold(&mut v, 2);
        assert_eq!(v[1], C64::new(0.0, 2.0));
        assert_eq!(v[0], C64::new(1.0, 0.0));
        assert_eq!(v[2], C64::new(0.0, 0.0));
        assert_eq!(v[3], C64::new(0.0, 0.0));
    }

    #[test]
    fn exact_atom_within_50_iterations() {
        let r = matrix();
        let y = Measurement::new(r.column(11)).unwrap();
        let mut cfg = GreedyConfig::new(1, 50);
        cfg.residual_tolerance = 1e-9;
        let res = iht_solve(&y, &r, &cfg).unwrap();
        assert_eq!(res.estimate.support(), vec![11]);
        assert!(res.iterations_used <= 50);
    }

    #[test]
    fn output_is_k_sparse() {
        let r = matrix();
        let y =
            Measurement::new(r.column(1) + r.column(9) * C64::from(0.5) + r.column(20) * C64::new(0.0, 0.7)).unwrap();
        for k in 1..=4 {
            let res = iht_solve(&y, &r, &GreedyConfig::new(k, 100)).unwrap();
            assert!(res.estimate.support().len() <= k);
        }
    }
}
