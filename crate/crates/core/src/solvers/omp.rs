use super::{GreedyConfig, PixelSolver, SolveResult};
use crate::error::{Error, Result};
use crate::model::{CMatrix, CVector, Measurement, SteeringMatrix};

/// Relative pivot size below which the active set is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OmpSolver<'a> {
    r: &'a SteeringMatrix,
    cfg: GreedyConfig,
    column_norms: Vec<f64>,
}

impl<'a> OmpSolver<'a> {
    pub fn new(r: &'a SteeringMatrix, cfg: GreedyConfig) -> Result<Self> {
        cfg.validate(r)?;
        let column_norms: Vec<f64> = r.entries().column_iter().map(|c| c.norm()).collect();
        if let Some(l) = column_norms.iter().position(|&n| n == 0.0) {
            return Err(Error::RankDeficient(format!("column {l} is zero")));
        }
        Ok(Self { r, cfg, column_norms })
    }

    /// Least-squares amplitudes on `support`, via QR of the active columns.
    fn refit(&self, y: &CVector, support: &[usize]) -> Result<CVector> {
        let r = self.r.entries();
        let active = CMatrix::from_fn(r.nrows(), support.len(), |n, k| r[(n, support[k])]);
        let qr = active.qr();
        let upper = qr.r();
        let diag: Vec<f64> = (0..support.len()).map(|k| upper[(k, k)].norm()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| d <= RANK_TOL * max) {
            return Err(Error::RankDeficient(format!(
                "active set {support:?} has linearly dependent columns (duplicate grid columns?)"
            )));
        }
        let rhs = qr.q().ad_mul(y);
        upper
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::RankDeficient(format!("active set {support:?}")))
    }
}

impl PixelSolver for OmpSolver<'_> {
    fn solve(&self, y: &Measurement) -> Result<SolveResult> {
        let r = self.r.entries();
        y.check_len(r.nrows())?;
        let yv = y.values();
        let mut support: Vec<usize> = Vec::with_capacity(self.cfg.sparsity);
        let mut x = CVector::zeros(r.ncols());
        let mut resid = yv.clone();
        let mut iters = 0;
        while support.len() < self.cfg.sparsity && iters < self.cfg.max_iters {
            // a residual at rounding level carries no information
            if resid.norm() <= self.cfg.residual_tolerance.max(RESIDUAL_FLOOR * yv.norm()) {
                break;
            }
            iters += 1;
            let corr = r.ad_mul(&resid);
            let mut best: Option<(usize, f64)> = None;
            for (l, c) in corr.iter().enumerate() {
                if support.contains(&l) {
                    continue;
                }
                let score = c.norm() / self.column_norms[l];
                // strict comparison keeps the lowest index on ties
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((l, score));
                }
            }
            let Some((l, _)) = best else { break };
            support.push(l);
            let amps = self.refit(yv, &support)?;
            x.fill(Default::default());
            for (k, &l) in support.iter().enumerate() {
                x[l] = amps[k];
            }
            resid = yv - r * &x;
        }
        SolveResult::new(self.r, y, x, iters, Vec::new())
    }

    fn name(&self) -> &str {
        "omp"
    }
}

pub fn omp_solve(y: &Measurement, r: &SteeringMatrix, cfg: &GreedyConfig) -> Result<SolveResult> {
    OmpSolver::new(r, *cfg)?.solve(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AcquisitionGeometry, ElevationGrid, C64};

    fn matrix(l: usize, span: f64) -> SteeringMatrix {
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let grid = ElevationGrid::uniform(0.0, span / l as f64, l).unwrap();
        SteeringMatrix::build(&g, &grid)
    }

    #[test]
    fn exact_atom() {
        let r = matrix(16, 6.25);
        let y = Measurement::new(r.column(7)).unwrap();
        let res = omp_solve(&y, &r, &GreedyConfig::new(1, 1)).unwrap();
        assert_eq!(res.estimate.support(), vec![7]);
        assert!((res.estimate.values()[7] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(res.final_residual_norm < 1e-12);
    }

    #[test]
    fn zero_measurement_empty_support() {
        let r = matrix(16, 6.25);
        let res = omp_solve(&Measurement::zeros(8), &r, &GreedyConfig::new(2, 2)).unwrap();
        assert!(res.estimate.support().is_empty());
        assert_eq!(res.iterations_used, 0);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        // grid spanning two ambiguity periods duplicates every column
        let r = matrix(16, 12.5);
        let solver = OmpSolver::new(&r, GreedyConfig::new(3, 3)).unwrap();
        let y = r.column(2) + r.column(5);
        let err = solver.refit(&y, &[2, 10]);
        assert!(matches!(err, Err(Error::RankDeficient(_))), "{err:?}");
        // exact fit stops before rounding noise can select a duplicate
        let res = solver.solve(&Measurement::new(y).unwrap()).unwrap();
        assert_eq!(res.estimate.support().len(), 2);
    }

    #[test]
    fn residual_orthogonal_to_active_columns() {
        let r = matrix(32, 6.0);
        let y = Measurement::new(
            r.column(3) * C64::new(0.6, 0.2) + r.column(20) * C64::new(-1.0, 0.4) + r.column(9) * C64::from(0.3),
        )
        .unwrap();
        let res = omp_solve(&y, &r, &GreedyConfig::new(3, 3)).unwrap();
        let resid = y.values() - r.entries() * res.estimate.values();
        for l in res.estimate.support() {
            assert!(r.column(l).dotc(&resid).norm() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let r = matrix(16, 6.25);
        assert!(OmpSolver::new(&r, GreedyConfig::new(0, 3)).is_err());
        assert!(OmpSolver::new(&r, GreedyConfig::new(9, 9)).is_err());
        assert!(OmpSolver::new(&r, GreedyConfig::new(3, 2)).is_err());
    }
}
