//! Rigid 3D point-set registration.
//!
//! Two registration engines over a shared geometry core:
//!
//! * [`registration`] — adversarial alignment: a small critic network is
//!   trained to tell the two clouds apart while the six rigid-transform
//!   parameters are optimized to fool it, driving an estimate of the
//!   Wasserstein-1 distance between the clouds to zero. No point
//!   correspondences are ever formed, so it tolerates noise, outliers,
//!   and partial overlap.
//! * [`icp`] — classic iterative closest point with an exact kd-tree and
//!   an SVD-based rigid fit, as the correspondence-based baseline.
//!
//! [`benchmark`] generates synthetic registration problems of graded
//! difficulty and compares both engines; [`selfcheck`] validates every
//! hand-written gradient in the crate against finite differences.

pub mod benchmark;
pub mod critic;
pub mod error;
pub mod geometry;
pub mod icp;
pub mod losses;
pub mod optim;
pub mod pointcloud;
pub mod registration;
pub mod selfcheck;

pub use error::{Error, Result};
pub use geometry::{Mat3, RigidTransform, Vec3};
pub use pointcloud::PointCloud;
