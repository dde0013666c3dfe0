//! Simulated randomized bin-picking, end to end.
//!
//! The crate closes the full loop of a learning-based bin-picking system
//! against a deterministic simulated oracle instead of a physical robot:
//!
//! 1. [`scene`] generates ground-truth piles of parts lying in a bin.
//! 2. [`sensing`] ray-casts depth images from wrist-mounted sensor poses
//!    sampled on a regular polyhedron around the bin.
//! 3. [`occupancy`] maintains the voxel grid of occupied/occluded/free cells
//!    and selects the next sensor pose that reveals the most occluded volume.
//! 4. [`fusion`] merges the current capture with still-valid segments of the
//!    previous one, clusters the result and estimates object poses (PCA + ICP,
//!    reusing previous estimates where the cloud did not change).
//! 5. [`features`] bins the neighbor points inside the gripper's finger swept
//!    volume into the histogram consumed by the forest.
//! 6. [`forest`] is a from-scratch random forest predicting pick success.
//! 7. [`pipeline`] stages grasp candidates by quality, scores them with the
//!    forest minus an occlusion penalty, re-views on predicted failure and
//!    executes the pick against the traversability oracle.
//!
//! The `binpick` CLI (separate crate) wires these into reproducible
//! experiments. Everything is deterministic for fixed seeds.

pub mod cloud;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod geometry;
pub mod occupancy;
pub mod pipeline;
pub mod ply;
pub mod scene;
pub mod sensing;

mod seed;

pub use cloud::PointCloud;
pub use geometry::{BinBox, Point3, RigidTransform, Shape, ShapeCatalog, Vec3};
pub use seed::derive_seed;
