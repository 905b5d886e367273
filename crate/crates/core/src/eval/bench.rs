use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Measurement;
use crate::solvers::PixelSolver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub solver: String,
    pub pixels: usize,
    pub repetitions: usize,
    pub lanes: usize,
    /// Iterations (or layers) per pixel, as configured.
    pub iteration_budget: Option<usize>,
    /// Wall time of every timed pass.
    pub pass_wall_s: Vec<f64>,
    /// Median pass wall time.
    pub wall_s: f64,
    /// Summed per-pixel solve time of the median pass, across lanes.
    pub lane_s: f64,
    pub per_pixel_mean_s: f64,
    pub per_pixel_median_s: f64,
}

impl BenchReport {
    pub fn table(reports: &[BenchReport]) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>8} {:>6} {:>12} {:>12} {:>14}\n",
            "solver", "pixels", "budget", "lanes", "wall (s)", "lane (s)", "per pixel (s)"
        );
        for r in reports {
            let budget = r.iteration_budget.map_or("-".to_string(), |b| b.to_string());
            out.push_str(&format!(
                "{:<16} {:>8} {:>8} {:>6} {:>12.6} {:>12.6} {:>14.3e}\n",
                r.solver, r.pixels, budget, r.lanes, r.wall_s, r.lane_s, r.per_pixel_mean_s
            ));
        }
        out
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// One untimed warm-up pass, then `repetitions` timed passes over `ys` on
/// `lanes` worker threads. Reports the median pass.
pub fn benchmark(
    solver: &dyn PixelSolver,
    ys: &[Measurement],
    repetitions: usize,
    lanes: usize,
    iteration_budget: Option<usize>,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 repetitions, got {repetitions}"
        )));
    }
    if lanes == 0 {
        return Err(Error::InvalidArgument("need at least one lane".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(lanes)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {lanes} worker threads: {e}")))?;
    let pass = || -> Result<(f64, Vec<f64>)> {
        let start = Instant::now();
        let times = pool.install(|| {
            ys.par_iter()
                .map(|y| {
                    let t = Instant::now();
                    solver.solve(y)?;
                    Ok(t.elapsed().as_secs_f64())
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        Ok((start.elapsed().as_secs_f64(), times))
    };
    pass()?;
    let mut runs = (0..repetitions).map(|_| pass()).collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pass_wall_s = runs.iter().map(|r| r.0).collect::<Vec<_>>();
    let (wall_s, pixel_times) = runs.swap_remove(repetitions / 2);
    let lane_s: f64 = pixel_times.iter().sum();
    let pixels = ys.len();
    Ok(BenchReport {
        solver: solver.name().to_string(),
        pixels,
        repetitions,
        lanes,
        iteration_budget,
        pass_wall_s,
        wall_s: if pixels == 0 { 0.0 } else { wall_s },
        lane_s,
        per_pixel_mean_s: if pixels == 0 { 0.0 } else { lane_s / pixels as f64 },
        per_pixel_median_s: median(&pixel_times),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AcquisitionGeometry, ElevationGrid, SteeringMatrix};
    use crate::solvers::{IstaConfig, IstaSolver};

    #[test]
    fn empty_set_reports_zero() {
        let g = AcquisitionGeometry::uniform_array(8, 0.1, 0.003125, 400.0, 45.0).unwrap();
        let r = SteeringMatrix::build(&g, &ElevationGrid::spanning(0.0, 4.0, 16).unwrap());
        let s = IstaSolver::new(&r, IstaConfig::new(0.5, 1.01 * r.lambda_max())).unwrap();
        let rep = benchmark(&s, &[], 3, 1, Some(500)).unwrap();
        assert_eq!((rep.pixels, rep.wall_s, rep.lane_s), (0, 0.0, 0.0));
        assert_eq!(rep.iteration_budget, Some(500));
        assert!(benchmark(&s, &[], 2, 1, None).is_err());
    }
}
