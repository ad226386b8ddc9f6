//! Quad-based room layout estimation building blocks: quad geometry and
//! point-to-quad metrics, scene transformations, teacher/student quad matching
//! and losses, mixture-model pseudo-label refinement, a synthetic scene
//! generator, F1 evaluation and a small mean-teacher trainer.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gmf;
pub mod io;
pub mod matching;
pub mod synth;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use geometry::{OrientedPoint, Point3, PointCloud, PseudoLabel, Quad, Vec2, Vec3};
