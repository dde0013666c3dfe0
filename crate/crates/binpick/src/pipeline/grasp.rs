//! Object-frame grasp database and its parametric generator.
//!
//! Entries are antipodal parallel-jaw grasps: the grasp frame approaches
//! along z, closes along y and slides along the remaining free direction.
//! Boxes get one approach per face with every finger-feasible closing
//! axis. Cylinders are roll-symmetric and their estimated roll is
//! arbitrary, so radial approaches are sampled densely around the axis
//! (plus end-on approaches through the caps); whatever roll the pose
//! estimate picked, some entry approaches from nearly straight above.
//!
//! The stability index favors large finger contact patches and grasps
//! near the center of mass; it stages candidate evaluation, nothing else.

use crate::features::GripperModel;
use crate::geometry::{Mat3, RigidTransform, Shape, Vec3};
use serde::{Deserialize, Serialize};

use super::PipelineError;

/// One stable grasp in the object frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraspEntry {
    /// Grasp frame relative to the object frame (z = approach, y = close).
    pub offset: RigidTransform,
    /// Finger gap when closed on the object, meters.
    pub closing_width: f64,
    /// Grasp stability index; higher is better.
    pub quality: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraspDatabase {
    pub shape: String,
    pub entries: Vec<GraspEntry>,
}

impl GraspDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::BadGraspDatabase(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraspGenParams {
    /// Grasp-center samples along the free axis.
    pub offsets_per_axis: usize,
    /// Radial approach directions around a cylinder axis.
    pub azimuth_steps: usize,
    /// Fingertips reach this far past the object center plane.
    pub grip_past_center: f64,
    /// Required preshape clearance around the object width.
    pub width_clearance: f64,
}

impl Default for GraspGenParams {
    fn default() -> Self {
        Self {
            offsets_per_axis: 7,
            azimuth_steps: 16,
            grip_past_center: 0.005,
            width_clearance: 0.004,
        }
    }
}

/// Generates the grasp set for a part. Deterministic; entries whose
/// closing width does not fit the gripper preshape are skipped.
pub fn generate_grasp_database(
    shape_name: &str,
    shape: &Shape,
    gripper: &GripperModel,
    params: &GraspGenParams,
) -> Result<GraspDatabase, PipelineError> {
    gripper
        .validate()
        .map_err(|e| PipelineError::BadGraspDatabase(e.to_string()))?;
    let entries = match shape {
        Shape::Cylinder { radius, height } => {
            cylinder_entries(*radius, *height, gripper, params)
        }
        _ => box_like_entries(shape.aabb_local().extents(), gripper, params),
    };
    if entries.is_empty() {
        return Err(PipelineError::BadGraspDatabase(format!(
            "no graspable width on '{shape_name}' fits the gripper opening"
        )));
    }
    Ok(GraspDatabase {
        shape: shape_name.to_string(),
        entries,
    })
}

fn fits(width: f64, gripper: &GripperModel, params: &GraspGenParams) -> bool {
    width + params.width_clearance <= gripper.preshape_opening
}

fn offsets(span: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    if n == 1 || span <= 0.0 {
        return vec![0.0];
    }
    (0..n)
        .map(|k| -span / 2.0 + span * k as f64 / (n - 1) as f64)
        .collect()
}

/// Stability proxy: normalized finger contact patch, discounted by the
/// torque arm of the grasp-center offset from the centroid.
fn quality(along_approach: f64, offset: f64, gripper: &GripperModel, params: &GraspGenParams) -> f64 {
    let contact_height =
        (params.grip_past_center + along_approach / 2.0).min(gripper.finger_length);
    let patch = gripper.finger_width * contact_height;
    let patch_norm = patch / (gripper.finger_width * gripper.finger_length);
    patch_norm / (1.0 + offset.abs() / 0.02)
}

fn entry_from_frame(
    approach: Vec3,
    closing: Vec3,
    center_offset: Vec3,
    width: f64,
    along_approach: f64,
    offset_magnitude: f64,
    gripper: &GripperModel,
    params: &GraspGenParams,
) -> GraspEntry {
    let z = approach;
    let y = closing;
    let x = y.cross(&z);
    let rotation = Mat3::from_columns(&[x, y, z]);
    // Fingertips end `grip_past_center` beyond the object center plane.
    let translation = center_offset + z * (params.grip_past_center - gripper.tip_extension);
    GraspEntry {
        offset: RigidTransform::from_parts(rotation, translation),
        closing_width: width,
        quality: quality(along_approach, offset_magnitude, gripper, params),
    }
}

/// One approach per face, closing along each finger-feasible perpendicular
/// axis, sliding along the remaining one.
fn box_like_entries(
    extents: Vec3,
    gripper: &GripperModel,
    params: &GraspGenParams,
) -> Vec<GraspEntry> {
    let mut out = Vec::new();
    for approach_axis in 0..3usize {
        for approach_sign in [1.0, -1.0] {
            for closing_axis in 0..3usize {
                if closing_axis == approach_axis {
                    continue;
                }
                let width = extents[closing_axis];
                if !fits(width, gripper, params) {
                    continue;
                }
                let free_axis = 3 - approach_axis - closing_axis;
                let span = (extents[free_axis] - gripper.finger_width).max(0.0);
                for offset in offsets(span, params.offsets_per_axis) {
                    let mut approach = Vec3::zeros();
                    approach[approach_axis] = -approach_sign;
                    let mut closing = Vec3::zeros();
                    closing[closing_axis] = 1.0;
                    let mut center = Vec3::zeros();
                    center[free_axis] = offset;
                    out.push(entry_from_frame(
                        approach,
                        closing,
                        center,
                        width,
                        extents[approach_axis],
                        offset,
                        gripper,
                        params,
                    ));
                }
            }
        }
    }
    out
}

/// Radial approaches sampled around the axis (the estimated roll of a
/// cylinder is arbitrary), plus end-on approaches through both caps.
fn cylinder_entries(
    radius: f64,
    height: f64,
    gripper: &GripperModel,
    params: &GraspGenParams,
) -> Vec<GraspEntry> {
    let mut out = Vec::new();
    let diameter = 2.0 * radius;

    if fits(diameter, gripper, params) {
        // Side grasps: approach at azimuth phi toward the axis, fingers
        // closing tangentially, sliding along the axis.
        let span = (height - gripper.finger_width).max(0.0);
        for step in 0..params.azimuth_steps.max(1) {
            let phi = std::f64::consts::TAU * step as f64 / params.azimuth_steps.max(1) as f64;
            let approach = -Vec3::new(phi.cos(), phi.sin(), 0.0);
            let closing = Vec3::z().cross(&approach);
            for offset in offsets(span, params.offsets_per_axis) {
                out.push(entry_from_frame(
                    approach,
                    closing,
                    Vec3::new(0.0, 0.0, offset),
                    diameter,
                    diameter,
                    offset,
                    gripper,
                    params,
                ));
            }
        }
        // End-on grasps through the caps; the closing azimuth is
        // irrelevant by symmetry, so sample two.
        for cap_sign in [1.0, -1.0] {
            for psi in [0.0, std::f64::consts::FRAC_PI_2] {
                let approach = Vec3::new(0.0, 0.0, -cap_sign);
                let closing = Vec3::new(psi.cos(), psi.sin(), 0.0);
                out.push(entry_from_frame(
                    approach,
                    closing,
                    Vec3::zeros(),
                    diameter,
                    height,
                    0.0,
                    gripper,
                    params,
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ShapeCatalog;

    #[test]
    fn cylinder_database_covers_the_roll_circle() {
        let cat = ShapeCatalog::builtin();
        let g = GripperModel::default();
        let db = generate_grasp_database(
            "cylinder",
            cat.get("cylinder").unwrap(),
            &g,
            &GraspGenParams::default(),
        )
        .unwrap();
        // 16 azimuths x 7 offsets + 4 end-on entries.
        assert_eq!(db.len(), 16 * 7 + 4);
        for e in &db.entries {
            assert!(e.closing_width < g.preshape_opening);
            assert!(e.quality.is_finite() && e.quality > 0.0);
            let rot = e.offset.rotation();
            assert!((rot.determinant() - 1.0).abs() < 1e-9);
        }
        // Whatever roll the pose estimate picked, some radial approach is
        // within one azimuth step of any requested direction.
        let target = Vec3::new(0.3, -0.8, 0.0).normalize();
        let best = db
            .entries
            .iter()
            .map(|e| e.offset.rotate(Vec3::z()).dot(&target))
            .fold(f64::MIN, f64::max);
        let step = std::f64::consts::TAU / 16.0;
        assert!(best >= (step / 2.0).cos() - 1e-9);
    }

    #[test]
    fn box_database_skips_oversized_widths() {
        let cat = ShapeCatalog::builtin();
        let db = generate_grasp_database(
            "box",
            cat.get("box").unwrap(),
            &GripperModel::default(),
            &GraspGenParams::default(),
        )
        .unwrap();
        // Closing widths are the two graspable extents only (90 mm never
        // fits a 60 mm opening).
        for e in &db.entries {
            assert!(e.closing_width <= 0.04 + 1e-12);
        }
        // Centered grasps outrank edge grasps.
        let q_max = db.entries.iter().map(|e| e.quality).fold(f64::MIN, f64::max);
        let centered = db
            .entries
            .iter()
            .filter(|e| {
                let t = e.offset.translation();
                t.x.abs() < 1e-9 && t.y.abs() < 1e-9
            })
            .map(|e| e.quality)
            .fold(f64::MIN, f64::max);
        assert!((centered - q_max).abs() < 1e-12);
    }

    #[test]
    fn database_json_roundtrip() {
        let cat = ShapeCatalog::builtin();
        let db = generate_grasp_database(
            "cylinder",
            cat.get("cylinder").unwrap(),
            &GripperModel::default(),
            &GraspGenParams::default(),
        )
        .unwrap();
        let back = GraspDatabase::from_json(&db.to_json()).unwrap();
        assert_eq!(db.len(), back.len());
        assert_eq!(db.shape, back.shape);
    }

    #[test]
    fn too_small_gripper_is_an_error() {
        let cat = ShapeCatalog::builtin();
        let tiny = GripperModel {
            preshape_opening: 0.01,
            closed_opening: 0.0,
            ..Default::default()
        };
        assert!(generate_grasp_database(
            "cylinder",
            cat.get("cylinder").unwrap(),
            &tiny,
            &GraspGenParams::default()
        )
        .is_err());
    }
}
