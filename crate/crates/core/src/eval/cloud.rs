use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AcquisitionGeometry, ElevationGrid, ReflectivityProfile};
use crate::scene::PixelCoord;

/// Relative to the strongest estimate in the set.
pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    /// Azimuth, m.
    pub x: f64,
    /// Ground range, m.
    pub y: f64,
    /// Height, m.
    pub z: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

/// Maps every entry with `|g_l| >= threshold * max|g|` to a point. A pixel
/// at ground range `x0` and elevation `s` lands at height `s cos(look)` and
/// ground range `x0 + s sin(look)`.
pub fn to_point_cloud(
    estimates: &BTreeMap<PixelCoord, ReflectivityProfile>,
    grid: &ElevationGrid,
    geometry: &AcquisitionGeometry,
    pixel_spacing: f64,
    detection_threshold: f64,
) -> Result<PointCloud> {
    if !(detection_threshold >= 0.0 && detection_threshold.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "detection threshold must be finite and >= 0, got {detection_threshold}"
        )));
    }
    if !(pixel_spacing > 0.0 && pixel_spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel spacing must be positive, got {pixel_spacing}"
        )));
    }
    let peak = estimates
        .values()
        .flat_map(|p| p.values().iter().map(|z| z.norm()))
        .fold(0.0, f64::max);
    let floor = detection_threshold * peak;
    let (sin, cos) = geometry.look_angle_rad().sin_cos();
    let mut points = Vec::new();
    for (coord, profile) in estimates {
        if profile.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "estimate length",
                expected: grid.len(),
                found: profile.len(),
            });
        }
        let x = coord.azimuth as f64 * pixel_spacing;
        let x0 = coord.range as f64 * pixel_spacing;
        for (value, &s) in profile.values().iter().zip(grid.samples()) {
            let amplitude = value.norm();
            if amplitude > 0.0 && amplitude >= floor {
                points.push(Point {
                    x,
                    y: x0 + s * sin,
                    z: s * cos,
                    amplitude,
                });
            }
        }
    }
    Ok(PointCloud { points })
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One `x y z amplitude` line per point.
    pub fn write_xyz(&self, mut w: impl Write) -> Result<()> {
        for p in &self.points {
            writeln!(w, "{:.6} {:.6} {:.6} {:.9}", p.x, p.y, p.z, p.amplitude)?;
        }
        Ok(())
    }

    /// ASCII PLY with an `amplitude` vertex property.
    pub fn write_ply(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.points.len())?;
        for name in ["x", "y", "z", "amplitude"] {
            writeln!(w, "property double {name}")?;
        }
        writeln!(w, "end_header")?;
        self.write_xyz(w)
    }
}
