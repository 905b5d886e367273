use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReflectivityProfile;

/// Upper bound reported for an exact match.
pub const NMSE_DB_CAP: f64 = 300.0;

/// Which entries enter the error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmseScope {
    /// Whole profiles.
    #[default]
    FullProfile,
    /// Only grid cells where the truth is nonzero.
    TruthSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmseReport {
    pub solver: String,
    pub scope: NmseScope,
    pub sample_count: usize,
    /// Per-pixel `||g_hat - g||^2`.
    pub error_energy: Vec<f64>,
    /// Per-pixel `||g||^2`.
    pub truth_energy: Vec<f64>,
    pub aggregate_ratio: f64,
    /// `-10 log10(aggregate_ratio)`, larger is better.
    pub aggregate_db: f64,
}

/// `-10 log10(ratio)`, capped at [`NMSE_DB_CAP`].
pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        NMSE_DB_CAP
    } else {
        (-10.0 * ratio.log10()).min(NMSE_DB_CAP)
    }
}

impl NmseReport {
    /// Per-pixel error ratios; a pixel with zero truth energy gives 0 when
    /// the estimate is also zero and infinity otherwise.
    pub fn per_pixel_ratio(&self) -> Vec<f64> {
        self.error_energy
            .iter()
            .zip(&self.truth_energy)
            .map(|(&e, &t)| {
                if t > 0.0 {
                    e / t
                } else if e == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    pub fn per_pixel_db(&self) -> Vec<f64> {
        self.per_pixel_ratio().into_iter().map(ratio_to_db).collect()
    }

    /// Aggregate recomputed from the stored per-pixel energies.
    pub fn recomputed_ratio(&self) -> f64 {
        self.error_energy.iter().sum::<f64>() / self.truth_energy.iter().sum::<f64>()
    }
}

pub fn nmse_db(
    solver: &str,
    estimates: &[ReflectivityProfile],
    truths: &[ReflectivityProfile],
    scope: NmseScope,
) -> Result<NmseReport> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate count",
            expected: truths.len(),
            found: estimates.len(),
        });
    }
    let mut error_energy = Vec::with_capacity(truths.len());
    let mut truth_energy = Vec::with_capacity(truths.len());
    for (est, truth) in estimates.iter().zip(truths) {
        if est.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                what: "profile length",
                expected: truth.len(),
                found: est.len(),
            });
        }
        let err = est.values().zip_fold(truth.values(), 0.0, |acc, a, b| {
            let counted = scope == NmseScope::FullProfile || b.norm_sqr() > 0.0;
            if counted {
                acc + (a - b).norm_sqr()
            } else {
                acc
            }
        });
        error_energy.push(err);
        truth_energy.push(truth.energy());
    }
    let total: f64 = truth_energy.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "NMSE is undefined for an all-zero truth set".into(),
        ));
    }
    let aggregate_ratio = error_energy.iter().sum::<f64>() / total;
    Ok(NmseReport {
        solver: solver.to_string(),
        scope,
        sample_count: truths.len(),
        error_energy,
        truth_energy,
        aggregate_ratio,
        aggregate_db: ratio_to_db(aggregate_ratio),
    })
}

/// Plain-text table, one row per report.
pub fn comparison_table(reports: &[NmseReport]) -> String {
    let mut out = format!(
        "{:<16} {:>8} {:>12} {:>14}\n",
        "solver", "pixels", "NMSE (-dB)", "ratio"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<16} {:>8} {:>12.4} {:>14.6e}\n",
            r.solver, r.sample_count, r.aggregate_db, r.aggregate_ratio
        ));
    }
    out
}

/// Solvers from best to worst, e.g. `alista-gt > ista > omp`.
pub fn ordering_summary(reports: &[NmseReport]) -> String {
    let mut sorted: Vec<&NmseReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        b.aggregate_db
            .total_cmp(&a.aggregate_db)
            .then_with(|| a.solver.cmp(&b.solver))
    });
    sorted.iter().map(|r| r.solver.as_str()).collect::<Vec<_>>().join(" > ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CVector, C64};
    use proptest::prelude::*;

    fn profile(v: &[(f64, f64)]) -> ReflectivityProfile {
        ReflectivityProfile::new(CVector::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))).unwrap()
    }

    #[test]
    fn exact_match_is_capped() {
        let t = vec![profile(&[(1.0, 0.0), (0.0, 2.0)])];
        let r = nmse_db("x", &t, &t, NmseScope::FullProfile).unwrap();
        assert_eq!(r.aggregate_db, NMSE_DB_CAP);
        assert_eq!(r.per_pixel_db(), vec![NMSE_DB_CAP]);
    }

    #[test]
    fn zero_estimate_is_zero_db() {
        let t = vec![profile(&[(1.0, 0.0), (0.0, 2.0)]), profile(&[(0.0, 0.0), (3.0, 0.0)])];
        let e = vec![ReflectivityProfile::zeros(2); 2];
        let r = nmse_db("x", &e, &t, NmseScope::FullProfile).unwrap();
        assert!(r.aggregate_db.abs() < 1e-12);
    }

    #[test]
    fn ninety_percent_is_twenty_db() {
        let t = vec![profile(&[(1.0, -0.5), (0.3, 2.0)])];
        let e = vec![ReflectivityProfile::new(t[0].values() * C64::new(0.9, 0.0)).unwrap()];
        let r = nmse_db("x", &e, &t, NmseScope::FullProfile).unwrap();
        assert!((r.aggregate_db - 20.0).abs() < 1e-10);
    }

    #[test]
    fn all_zero_truth_rejected() {
        let t = vec![ReflectivityProfile::zeros(3)];
        assert!(nmse_db("x", &t, &t, NmseScope::FullProfile).is_err());
    }

    #[test]
    fn support_scope_ignores_off_support_leakage() {
        let t = vec![profile(&[(1.0, 0.0), (0.0, 0.0)])];
        let e = vec![profile(&[(1.0, 0.0), (0.5, 0.0)])];
        assert_eq!(
            nmse_db("x", &e, &t, NmseScope::TruthSupport).unwrap().aggregate_db,
            NMSE_DB_CAP
        );
        assert!(nmse_db("x", &e, &t, NmseScope::FullProfile).unwrap().aggregate_db < 10.0);
    }

    #[test]
    fn table_and_ordering() {
        let t = vec![profile(&[(1.0, 0.0)])];
        let a = nmse_db("a", &[profile(&[(0.5, 0.0)])], &t, NmseScope::FullProfile).unwrap();
        let b = nmse_db("b", &[profile(&[(0.9, 0.0)])], &t, NmseScope::FullProfile).unwrap();
        assert_eq!(comparison_table(&[a.clone(), b.clone()]).lines().count(), 3);
        assert_eq!(ordering_summary(&[a, b]), "b > a");
    }

    type Pixel = (Vec<(f64, f64)>, Vec<(f64, f64)>);

    fn pixels() -> impl Strategy<Value = Vec<Pixel>> {
        let entry = (-2.0..2.0f64, -2.0..2.0f64);
        prop::collection::vec(
            (prop::collection::vec(entry.clone(), 4), prop::collection::vec(entry, 4)),
            1..12,
        )
    }

    proptest! {
        #[test]
        fn scale_invariant(px in pixels(), mag in 0.1..10.0f64, phase in 0.0..std::f64::consts::TAU) {
            let est: Vec<_> = px.iter().map(|p| profile(&p.0)).collect();
            let tru: Vec<_> = px.iter().map(|p| profile(&p.1)).collect();
            prop_assume!(tru.iter().map(|t| t.energy()).sum::<f64>() > 1e-6);
            let c = C64::from_polar(mag, phase);
            let scale = |v: &[ReflectivityProfile]| -> Vec<_> {
                v.iter().map(|p| ReflectivityProfile::new(p.values() * c).unwrap()).collect()
            };
            let a = nmse_db("x", &est, &tru, NmseScope::FullProfile).unwrap();
            let b = nmse_db("x", &scale(&est), &scale(&tru), NmseScope::FullProfile).unwrap();
            prop_assert!((a.aggregate_ratio - b.aggregate_ratio).abs() <= 1e-10 * a.aggregate_ratio.max(1.0));
        }

        #[test]
        fn permutation_invariant_and_recomputable(px in pixels(), rot in 0usize..12) {
            let est: Vec<_> = px.iter().map(|p| profile(&p.0)).collect();
            let tru: Vec<_> = px.iter().map(|p| profile(&p.1)).collect();
            prop_assume!(tru.iter().map(|t| t.energy()).sum::<f64>() > 1e-6);
            let k = rot % est.len();
            let (mut e2, mut t2) = (est.clone(), tru.clone());
            e2.rotate_left(k);
            t2.rotate_left(k);
            let a = nmse_db("x", &est, &tru, NmseScope::FullProfile).unwrap();
            let b = nmse_db("x", &e2, &t2, NmseScope::FullProfile).unwrap();
            prop_assert!((a.aggregate_ratio - b.aggregate_ratio).abs() <= 1e-12 * a.aggregate_ratio.max(1.0));
            prop_assert!((a.recomputed_ratio() - a.aggregate_ratio).abs() <= 1e-10 * a.aggregate_ratio.max(1.0));
        }
    }
}
