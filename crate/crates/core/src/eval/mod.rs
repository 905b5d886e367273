//! Metrics, timing and point-cloud export.

mod bench;
mod cloud;
mod nmse;

pub use bench::{benchmark, BenchReport};
pub use cloud::{to_point_cloud, Point, PointCloud, DEFAULT_DETECTION_THRESHOLD};
pub use nmse::{comparison_table, nmse_db, ordering_summary, ratio_to_db, NmseReport, NmseScope, NMSE_DB_CAP};
