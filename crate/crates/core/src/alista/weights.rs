//! Coherence-minimizing analytic weights.
//!
//! Each column solves `min ||R^H w_i||^2  s.t.  w_i^H r_i = 1`, whose
//! minimizer is `w_i = G^-1 r_i / (r_i^H G^-1 r_i)` with `G = R R^H`.

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::model::{CMatrix, SteeringMatrix, C64};

/// Largest accepted condition number of `R R^H`.
pub const MAX_CONDITION: f64 = 1e12;

/// Human-readable statement of the constraint, stored with every model.
pub const WEIGHT_CONSTRAINT: &str = "w_i^H r_i = 1 for every column i (unit diagonal of W^H R)";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticWeights {
    entries: CMatrix,
    source_hash: ContentHash,
    objective_value: f64,
}

impl AnalyticWeights {
    pub fn compute(r: &SteeringMatrix) -> Result<Self> {
        let (entries, objective_value) = coherence_minimizing_weights(r.entries())?;
        Ok(Self {
            entries,
            source_hash: r.hash(),
            objective_value,
        })
    }

    /// Reassembles weights loaded from disk, re-checking them against `r`.
    pub fn from_parts(
        entries: CMatrix,
        source_hash: ContentHash,
        objective_value: f64,
        r: &SteeringMatrix,
    ) -> Result<Self> {
        if source_hash != r.hash() {
            return Err(Error::HashMismatch {
                what: "weights source steering matrix",
                expected: r.hash().to_hex(),
                found: source_hash.to_hex(),
            });
        }
        if entries.shape() != r.entries().shape() {
            return Err(Error::DimensionMismatch {
                what: "weight matrix",
                expected: r.entries().len(),
                found: entries.len(),
            });
        }
        let w = Self {
            entries,
            source_hash,
            objective_value,
        };
        let violation = w.constraint_violation(r.entries());
        if !(violation < 1e-8) {
            return Err(Error::Format(format!(
                "weights violate the unit-diagonal constraint by {violation:.3e}"
            )));
        }
        Ok(w)
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn source_hash(&self) -> ContentHash {
        self.source_hash
    }

    pub fn objective_value(&self) -> f64 {
        self.objective_value
    }

    /// `max_i |w_i^H r_i - 1|`.
    pub fn constraint_violation(&self, r: &CMatrix) -> f64 {
        constraint_violation(&self.entries, r)
    }

    pub fn check_pairing(&self, r: &SteeringMatrix) -> Result<()> {
        if self.source_hash != r.hash() {
            return Err(Error::HashMismatch {
                what: "steering matrix for weights",
                expected: self.source_hash.to_hex(),
                found: r.hash().to_hex(),
            });
        }
        Ok(())
    }
}

/// `||W^H R||_F^2`.
pub fn coherence_objective(w: &CMatrix, r: &CMatrix) -> f64 {
    w.ad_mul(r).norm_squared()
}

pub fn constraint_violation(w: &CMatrix, r: &CMatrix) -> f64 {
    w.column_iter()
        .zip(r.column_iter())
        .map(|(wc, rc)| (wc.dotc(&rc) - C64::new(1.0, 0.0)).norm())
        .fold(0.0, f64::max)
}

/// Closed-form weights for any matrix with full row rank.
pub fn coherence_minimizing_weights(r: &CMatrix) -> Result<(CMatrix, f64)> {
    let gram = r * r.adjoint();
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if !(min > 0.0) {
        return Err(Error::RankDeficient(format!(
            "R R^H is singular (smallest eigenvalue {min:.3e})"
        )));
    }
    let cond = max / min;
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("R R^H is not positive definite".into()))?;
    let mut w = chol.solve(r);
    for (mut wc, rc) in w.column_iter_mut().zip(r.column_iter()) {
        // r^H G^-1 r is real and positive
        let d = rc.dotc(&wc).re;
        wc /= C64::new(d, 0.0);
    }
    let objective = coherence_objective(&w, r);
    Ok((w, objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AcquisitionGeometry, ElevationGrid};
    use std::f64::consts::PI;

    #[test]
    fn unitary_matrix_is_its_own_weight() {
        let n = 6;
        let u = CMatrix::from_fn(n, n, |i, j| {
            C64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * PI * (i * j) as f64 / n as f64)
        });
        let (w, obj) = coherence_minimizing_weights(&u).unwrap();
        assert!((&w - &u).norm() < 1e-12);
        // W^H R = I
        assert!((obj - n as f64).abs() < 1e-10);
    }

    #[test]
    fn unit_diagonal_on_reference_grid() {
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let grid = ElevationGrid::spanning(-0.53, 4.77, 128).unwrap();
        let r = SteeringMatrix::build(&g, &grid);
        let w = AnalyticWeights::compute(&r).unwrap();
        assert!(w.constraint_violation(r.entries()) < 1e-8);
        assert!((coherence_objective(w.entries(), r.entries()) - w.objective_value()).abs() < 1e-10);
        assert!(AnalyticWeights::from_parts(w.entries().clone(), r.hash(), w.objective_value(), &r).is_ok());
    }

    #[test]
    fn rank_deficient_rejected() {
        // two identical channels
        let g = AcquisitionGeometry::new(vec![0.0, 0.1, 0.1], 0.003125, 400.0, 45.0).unwrap();
        let grid = ElevationGrid::spanning(0.0, 5.0, 32).unwrap();
        let r = SteeringMatrix::build(&g, &grid);
        let err = AnalyticWeights::compute(&r).unwrap_err();
        assert!(
            matches!(err, Error::RankDeficient(_) | Error::IllConditioned(_)),
            "{err}"
        );
    }

    #[test]
    fn tampered_weights_rejected_on_load() {
        let g = AcquisitionGeometry::uniform_array(4, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let grid = ElevationGrid::spanning(0.0, 5.0, 16).unwrap();
        let r = SteeringMatrix::build(&g, &grid);
        let w = AnalyticWeights::compute(&r).unwrap();
        let mut bad = w.entries().clone();
        bad[(0, 0)] += C64::new(1e-3, 0.0);
        assert!(AnalyticWeights::from_parts(bad, r.hash(), 0.0, &r).is_err());
        assert!(AnalyticWeights::from_parts(w.entries().clone(), ContentHash::default(), 0.0, &r).is_err());
    }
}
