//! Classical per-pixel sparse recovery: ISTA, OMP and IHT.

mod iht;
mod ista;
mod omp;

pub use iht::{iht_solve, IhtSolver};
pub use ista::{ista_solve, IstaConfig, IstaSolver};
pub use omp::{omp_solve, OmpSolver};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CVector, Measurement, ReflectivityProfile, SteeringMatrix, C64};

/// Complex soft-threshold `sign(x) * max(|x| - theta, 0)` with `sign(x) = x / |x|`.
#[inline]
pub fn soft_threshold(x: C64, theta: f64) -> C64 {
    let m = x.norm();
    if m <= theta {
        C64::new(0.0, 0.0)
    } else {
        x * ((m - theta) / m)
    }
}

pub fn soft_threshold_vec(v: &mut CVector, theta: f64) {
    for z in v.iter_mut() {
        *z = soft_threshold(*z, theta);
    }
}

/// Sparsity budget shared by OMP and IHT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyConfig {
    pub sparsity: usize,
    pub max_iters: usize,
    #[serde(default)]
    pub residual_tolerance: f64,
}

impl GreedyConfig {
    pub fn new(sparsity: usize, max_iters: usize) -> Self {
        Self {
            sparsity,
            max_iters,
            residual_tolerance: 0.0,
        }
    }

    pub fn validate(&self, r: &SteeringMatrix) -> Result<()> {
        let cap = r.num_channels().min(r.grid_len());
        if self.sparsity == 0 || self.sparsity > cap {
            return Err(Error::config(
                "sparsity",
                format!("must lie in 1..={cap}, got {}", self.sparsity),
            ));
        }
        if self.max_iters < self.sparsity {
            return Err(Error::config(
                "max_iters",
                format!("must be at least sparsity {}", self.sparsity),
            ));
        }
        if !(self.residual_tolerance >= 0.0) {
            return Err(Error::config("residual_tolerance", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub estimate: ReflectivityProfile,
    pub iterations_used: usize,
    pub final_residual_norm: f64,
    /// ISTA objective per iterate, starting at the zero initial point; empty for greedy solvers.
    pub objective_trace: Vec<f64>,
}

impl SolveResult {
    fn new(
        r: &SteeringMatrix,
        y: &Measurement,
        estimate: CVector,
        iterations_used: usize,
        objective_trace: Vec<f64>,
    ) -> Result<Self> {
        let residual = y.values() - r.entries() * &estimate;
        Ok(Self {
            estimate: ReflectivityProfile::new(estimate)?,
            iterations_used,
            final_residual_norm: residual.norm(),
            objective_trace,
        })
    }
}

/// Classical solver choice with its configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverSpec {
    Ista(IstaConfig),
    Omp(GreedyConfig),
    Iht(GreedyConfig),
}

impl SolverSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SolverSpec::Ista(_) => "ista",
            SolverSpec::Omp(_) => "omp",
            SolverSpec::Iht(_) => "iht",
        }
    }

    pub fn build<'a>(&self, r: &'a SteeringMatrix) -> Result<Box<dyn PixelSolver + 'a>> {
        Ok(match *self {
            SolverSpec::Ista(cfg) => Box::new(IstaSolver::new(r, cfg)?),
            SolverSpec::Omp(cfg) => Box::new(OmpSolver::new(r, cfg)?),
            SolverSpec::Iht(cfg) => Box::new(IhtSolver::new(r, cfg)?),
        })
    }
}

/// A solver that has already validated itself against one steering matrix.
pub trait PixelSolver: Sync {
    fn solve(&self, y: &Measurement) -> Result<SolveResult>;
    fn name(&self) -> &str;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(C64::new(0.0, 0.0), 0.3), C64::new(0.0, 0.0));
        assert_eq!(soft_threshold(C64::new(0.0, 0.0), 0.0), C64::new(0.0, 0.0));
        assert_eq!(soft_threshold(C64::new(0.3, -0.4), 0.5), C64::new(0.0, 0.0));
        assert_eq!(soft_threshold(C64::new(0.3, -0.4), 0.6), C64::new(0.0, 0.0));
        // polar oracle: modulus 5 shrinks to 3 with the phase of 3+4j
        let z = soft_threshold(C64::new(3.0, 4.0), 2.0);
        let phase = 4f64.atan2(3.0);
        let oracle = C64::from_polar(3.0, phase);
        assert!((z - oracle).norm() < 1e-12);
        assert!((z - C64::new(1.8, 2.4)).norm() < 1e-12);
    }

    fn arb_c64() -> impl Strategy<Value = C64> {
        (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| C64::new(a, b))
    }

    proptest! {
        #[test]
        fn soft_threshold_nonexpansive(a in arb_c64(), b in arb_c64(), theta in 0.0f64..4.0) {
            let d = (soft_threshold(a, theta) - soft_threshold(b, theta)).norm();
            prop_assert!(d <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn soft_threshold_phase_equivariant(a in arb_c64(), phi in 0.0f64..6.3, theta in 0.0f64..4.0) {
            let c = C64::from_polar(1.0, phi);
            let d = (soft_threshold(a * c, theta) - soft_threshold(a, theta) * c).norm();
            prop_assert!(d < 1e-12);
        }
    }
}
