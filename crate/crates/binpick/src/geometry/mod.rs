//! Rigid transforms, primitive shapes and the distance / ray queries every
//! other module is built on.
//!
//! World frame convention: the bin-bottom center is the origin with z up.

mod catalog;
mod mesh;
mod shape;

pub use catalog::{CatalogError, ShapeCatalog};
pub use mesh::TriangleMesh;
pub use shape::{obbs_intersect, Aabb, Shape};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal with det +1 (defect {0:.3e})")]
    NonOrthonormalRotation(f64),
    #[error("shape dimension must be positive, got {0}")]
    NonPositiveDimension(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid homogeneous matrix: bottom row must be [0,0,0,1]")]
    BadHomogeneousRow,
}

/// A proper rigid transform: `p -> R p + t` with `R` orthonormal, det +1.
///
/// Serialized as a 4x4 homogeneous matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRows", into = "PoseRows")]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

type PoseRows = [[f64; 4]; 4];

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validates orthonormality (`R^T R = I` within 1e-9) and `det R = +1`.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let defect = orthonormality_defect(&rotation);
        if defect > ROTATION_TOL {
            return Err(GeometryError::NonOrthonormalRotation(defect));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Skips validation; for matrices produced by composition of valid ones.
    pub(crate) fn from_parts(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::from_parts(Mat3::identity(), translation)
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        );
        Self::from_parts(rot.into_inner(), Vec3::zeros())
    }

    pub fn from_rotation_z(yaw: f64) -> Self {
        Self::from_axis_angle(Vec3::z(), yaw)
    }

    /// Builds a frame from orthonormal column axes and an origin.
    pub fn from_axes(
        x: Vec3,
        y: Vec3,
        z: Vec3,
        origin: Point3,
    ) -> Result<Self, GeometryError> {
        Self::new(Mat3::from_columns(&[x, y, z]), origin.coords)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// `R p + t`.
    pub fn apply(&self, p: Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotation only, for directions.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        Self::from_parts(rot_inv, -(rot_inv * self.translation))
    }

    /// Composition: `(a.compose(&b))(p) = a(b(p))`.
    pub fn compose(&self, inner: &RigidTransform) -> Self {
        Self::from_parts(
            self.rotation * inner.rotation,
            self.rotation * inner.translation + self.translation,
        )
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn to_rows(&self) -> PoseRows {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_rows(rows: PoseRows) -> Result<Self, GeometryError> {
        if rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::BadHomogeneousRow);
        }
        let rotation = Mat3::new(
            rows[0][0], rows[0][1], rows[0][2], //
            rows[1][0], rows[1][1], rows[1][2], //
            rows[2][0], rows[2][1], rows[2][2],
        );
        let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }
}

impl From<RigidTransform> for PoseRows {
    fn from(t: RigidTransform) -> Self {
        t.to_rows()
    }
}

impl TryFrom<PoseRows> for RigidTransform {
    type Error = GeometryError;
    fn try_from(rows: PoseRows) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

fn orthonormality_defect(r: &Mat3) -> f64 {
    let gram = r.transpose() * r;
    let mut defect = (gram - Mat3::identity()).abs().max();
    defect = defect.max((r.determinant() - 1.0).abs());
    defect
}

/// The storage box. Inner volume spans `[-w/2, w/2] x [-d/2, d/2] x [0, h]`
/// in the bin frame; the bottom surface is the z = 0 plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinBox {
    inner_extents: [f64; 3],
    wall_thickness: f64,
    pose: RigidTransform,
}

impl BinBox {
    pub fn new(
        inner_extents: [f64; 3],
        wall_thickness: f64,
        pose: RigidTransform,
    ) -> Result<Self, GeometryError> {
        for &e in inner_extents.iter().chain([&wall_thickness]) {
            if !(e > 0.0) || !e.is_finite() {
                return Err(GeometryError::NonPositiveDimension(e));
            }
        }
        Ok(Self {
            inner_extents,
            wall_thickness,
            pose,
        })
    }

    pub fn inner_extents(&self) -> [f64; 3] {
        self.inner_extents
    }

    pub fn wall_thickness(&self) -> f64 {
        self.wall_thickness
    }

    pub fn pose(&self) -> &RigidTransform {
        &self.pose
    }

    /// Bottom slab plus the four side walls, as world-posed boxes.
    pub fn wall_shapes(&self) -> Vec<(Shape, RigidTransform)> {
        let [w, d, h] = self.inner_extents;
        let t = self.wall_thickness;
        let slab = |extents: Vec3, center: Vec3| {
            (
                Shape::box_extents(extents.x, extents.y, extents.z).expect("positive"),
                self.pose
                    .compose(&RigidTransform::from_translation(center)),
            )
        };
        vec![
            // bottom
            slab(
                Vec3::new(w + 2.0 * t, d + 2.0 * t, t),
                Vec3::new(0.0, 0.0, -t / 2.0),
            ),
            // +x / -x walls
            slab(
                Vec3::new(t, d + 2.0 * t, h),
                Vec3::new(w / 2.0 + t / 2.0, 0.0, h / 2.0),
            ),
            slab(
                Vec3::new(t, d + 2.0 * t, h),
                Vec3::new(-(w / 2.0 + t / 2.0), 0.0, h / 2.0),
            ),
            // +y / -y walls
            slab(
                Vec3::new(w + 2.0 * t, t, h),
                Vec3::new(0.0, d / 2.0 + t / 2.0, h / 2.0),
            ),
            slab(
                Vec3::new(w + 2.0 * t, t, h),
                Vec3::new(0.0, -(d / 2.0 + t / 2.0), h / 2.0),
            ),
        ]
    }

    /// True if `p` (world frame) lies inside the inner storage volume.
    pub fn contains_interior(&self, p: Point3) -> bool {
        let local = self.pose.inverse().apply(p);
        let [w, d, h] = self.inner_extents;
        local.x.abs() <= w / 2.0 && local.y.abs() <= d / 2.0 && local.z >= 0.0 && local.z <= h
    }

    /// Clearance of a bin-frame point to the inner walls and bottom
    /// (positive inside the storage volume, negative outside).
    pub fn interior_clearance_local(&self, local: Point3) -> f64 {
        let [w, d, h] = self.inner_extents;
        let dx = w / 2.0 - local.x.abs();
        let dy = d / 2.0 - local.y.abs();
        let dz_low = local.z;
        let dz_high = h - local.z;
        dx.min(dy).min(dz_low).min(dz_high)
    }
}
