//! Deterministic ground-truth pick simulator.
//!
//! A pick succeeds iff every neighboring object the finger sweep touches
//! is traversable (it yields when pushed) and the pose estimate driving
//! the grasp is accurate enough that the object actually ends up between
//! the fingers. The oracle reads only the hidden scene, never the learner.

use crate::features::{build_swept_volume, GripperModel};
use crate::fusion::PoseEstimate;
use crate::geometry::{Point3, ShapeCatalog};
use crate::scene::Scene;

use super::{GraspCandidate, PipelineError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleOutcome {
    pub success: bool,
    pub contacted_neighbor: bool,
    pub target_id: u32,
}

/// Matching radius when resolving a pose estimate to the true object.
const TARGET_RESOLVE_RADIUS: f64 = 0.05;
/// Surface sampling for the sweep contact test.
const CONTACT_SAMPLE_SPACING: f64 = 0.003;

/// Executes a grasp against the ground truth.
pub fn oracle_execute(
    scene: &Scene,
    catalog: &ShapeCatalog,
    target_estimate: &PoseEstimate,
    candidate: &GraspCandidate,
    gripper: &GripperModel,
) -> Result<OracleOutcome, PipelineError> {
    // Resolve the estimate to the nearest true object.
    let est_pos = Point3::from(target_estimate.pose.translation());
    let target = scene
        .objects
        .iter()
        .map(|o| (o, (o.pose.translation() - est_pos.coords).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|(_, d)| *d <= TARGET_RESOLVE_RADIUS)
        .map(|(o, _)| o)
        .ok_or(PipelineError::UnknownTarget)?;

    // Physical sweep: no sensing margin.
    let sweep = build_swept_volume(&candidate.wrist_pose, gripper, 0.0);

    let mut contacted_neighbor = false;
    let mut blocked = false;
    for obj in &scene.objects {
        if obj.id == target.id {
            continue;
        }
        let shape = catalog
            .get(&obj.shape)
            .ok_or_else(|| PipelineError::UnknownShape(obj.shape.clone()))?;
        let touched = shape
            .surface_samples(CONTACT_SAMPLE_SPACING)
            .iter()
            .any(|&p| sweep.contains_world(obj.pose.apply(p)));
        if touched {
            contacted_neighbor = true;
            if !obj.traversable {
                blocked = true;
            }
        }
    }

    // The grasp tolerates estimate error up to half the finger clearance.
    let clearance = gripper.preshape_opening - candidate.closing_width;
    let pose_error = (target.pose.translation() - target_estimate.pose.translation()).norm();
    let grasp_ok = pose_error <= clearance / 2.0;

    Ok(OracleOutcome {
        success: grasp_ok && !blocked,
        contacted_neighbor,
        target_id: target.id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::EstimateSource;
    use crate::geometry::{BinBox, RigidTransform, Vec3};
    use crate::scene::SceneObject;

    fn bin() -> BinBox {
        BinBox::new([0.3, 0.3, 0.1], 0.01, RigidTransform::identity()).unwrap()
    }

    fn upright_cylinder(id: u32, x: f64, y: f64, traversable: bool) -> SceneObject {
        SceneObject {
            id,
            shape: "cylinder".into(),
            pose: RigidTransform::from_translation(Vec3::new(x, y, 0.04)),
            traversable,
        }
    }

    fn estimate_for(obj: &SceneObject) -> PoseEstimate {
        PoseEstimate {
            id: obj.id,
            shape: obj.shape.clone(),
            pose: obj.pose,
            fitness: 0.0,
            source: EstimateSource::New,
        }
    }

    /// Top-down grasp centered on the object, closing along y.
    fn vertical_candidate(obj: &SceneObject) -> GraspCandidate {
        let approach_down =
            RigidTransform::from_axis_angle(Vec3::x(), std::f64::consts::PI);
        let wrist = RigidTransform::from_translation(
            obj.pose.translation() + Vec3::new(0.0, 0.0, 0.01),
        )
        .compose(&approach_down);
        GraspCandidate {
            wrist_pose: wrist,
            closing_width: 0.03,
            quality: 1.0,
            entry_index: 0,
            estimate_index: 0,
        }
    }

    #[test]
    fn clean_grasp_succeeds_without_contact() {
        let target = upright_cylinder(0, 0.0, 0.0, true);
        let scene = Scene {
            bin: bin(),
            objects: vec![target.clone()],
            rng_seed: 0,
        };
        let cat = ShapeCatalog::builtin();
        let out = oracle_execute(
            &scene,
            &cat,
            &estimate_for(&target),
            &vertical_candidate(&target),
            &GripperModel::default(),
        )
        .unwrap();
        assert_eq!(
            out,
            OracleOutcome {
                success: true,
                contacted_neighbor: false,
                target_id: 0
            }
        );
    }

    #[test]
    fn non_traversable_neighbor_in_sweep_fails() {
        let target = upright_cylinder(0, 0.0, 0.0, true);
        // Neighbor inside the closing sweep (fingers span |y| < 40 mm).
        let neighbor = upright_cylinder(1, 0.0, 0.035, false);
        let scene = Scene {
            bin: bin(),
            objects: vec![target.clone(), neighbor],
            rng_seed: 0,
        };
        let cat = ShapeCatalog::builtin();
        let out = oracle_execute(
            &scene,
            &cat,
            &estimate_for(&target),
            &vertical_candidate(&target),
            &GripperModel::default(),
        )
        .unwrap();
        assert_eq!(
            out,
            OracleOutcome {
                success: false,
                contacted_neighbor: true,
                target_id: 0
            }
        );
    }

    #[test]
    fn traversable_neighbor_contact_still_succeeds() {
        let target = upright_cylinder(0, 0.0, 0.0, true);
        let neighbor = upright_cylinder(1, 0.0, 0.035, true);
        let scene = Scene {
            bin: bin(),
            objects: vec![target.clone(), neighbor],
            rng_seed: 0,
        };
        let cat = ShapeCatalog::builtin();
        let out = oracle_execute(
            &scene,
            &cat,
            &estimate_for(&target),
            &vertical_candidate(&target),
            &GripperModel::default(),
        )
        .unwrap();
        assert_eq!(
            out,
            OracleOutcome {
                success: true,
                contacted_neighbor: true,
                target_id: 0
            }
        );
    }

    #[test]
    fn bad_pose_estimate_fails_the_grasp() {
        let target = upright_cylinder(0, 0.0, 0.0, true);
        let scene = Scene {
            bin: bin(),
            objects: vec![target.clone()],
            rng_seed: 0,
        };
        let cat = ShapeCatalog::builtin();
        // Estimate 2.5 cm off: beyond half the finger clearance
        // ((60 - 30) / 2 = 15 mm).
        let mut bad = estimate_for(&target);
        bad.pose = RigidTransform::from_translation(Vec3::new(0.025, 0.0, 0.0))
            .compose(&bad.pose);
        let mut cand = vertical_candidate(&target);
        cand.wrist_pose = RigidTransform::from_translation(Vec3::new(0.025, 0.0, 0.0))
            .compose(&cand.wrist_pose);
        let out = oracle_execute(&scene, &cat, &bad, &cand, &GripperModel::default()).unwrap();
        assert!(!out.success);
    }

    #[test]
    fn unresolvable_target_is_an_error() {
        let target = upright_cylinder(0, 0.0, 0.0, true);
        let scene = Scene {
            bin: bin(),
            objects: vec![target.clone()],
            rng_seed: 0,
        };
        let cat = ShapeCatalog::builtin();
        let mut lost = estimate_for(&target);
        lost.pose = RigidTransform::from_translation(Vec3::new(0.2, 0.2, 0.0));
        let r = oracle_execute(
            &scene,
            &cat,
            &lost,
            &vertical_candidate(&target),
            &GripperModel::default(),
        );
        assert!(matches!(r, Err(PipelineError::UnknownTarget)));
    }
}
