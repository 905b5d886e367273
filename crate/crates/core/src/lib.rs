//! Sparse elevation reconstruction for multi-baseline SAR tomography.
//!
//! The crate covers the forward model ([`model`]), a synthetic scene
//! simulator ([`scene`]), classical solvers ([`solvers`]), the analytic
//! unrolled ISTA network ([`alista`]), metrics and exports ([`eval`]), the
//! on-disk formats ([`io`]) and the config-driven pipeline ([`pipeline`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alista;
pub mod config;
pub mod error;
pub mod eval;
pub mod hash;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod solvers;

pub use error::{Error, Result};
pub use hash::ContentHash;
pub use model::{
    AcquisitionGeometry, CMatrix, CVector, ElevationGrid, Measurement, ReflectivityProfile, SteeringMatrix, C64,
};
