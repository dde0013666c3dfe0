//! Finger swept volumes and the neighbor-point histogram fed to the forest.
//!
//! The swept volume is the union of four boxes in the grasp frame: per
//! finger, one box swept during the approach (preshape opening, moving
//! along +z) and one swept while the fingers close (z fixed, inner face
//! moving from the preshape to the closed opening). Frame convention:
//! z is the approach direction, y the finger motion, x the normal of the
//! finger-motion plane.
//!
//! Each neighbor point is described by `d`, its distance to the nearest
//! y-boundary of the box containing it, and `h`, its height above the
//! deep end of the sweep; both are binned into a `bins_y x bins_z`
//! count histogram.

use crate::cloud::PointCloud;
use crate::geometry::{Aabb, Point3, RigidTransform, Shape};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("invalid gripper model: {0}")]
    BadGripper(String),
    #[error("point ({0:.4}, {1:.4}, {2:.4}) lies outside the swept volume")]
    PointOutsideVolume(f64, f64, f64),
    #[error("feature params mismatch: expected {expected:?}, got {got:?}")]
    ParamMismatch {
        expected: FeatureParams,
        got: FeatureParams,
    },
}

/// Two-finger parallel gripper dimensions, meters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GripperModel {
    /// Finger extent along x (normal to the finger-motion plane).
    pub finger_width: f64,
    /// Finger extent along y (the closing direction).
    pub finger_thickness: f64,
    /// Finger extent along z (the approach direction).
    pub finger_length: f64,
    /// Inner gap between finger faces at the preshape pose.
    pub preshape_opening: f64,
    /// Inner gap when fully closed.
    pub closed_opening: f64,
    /// Length of the approach motion.
    pub approach_depth: f64,
    /// How far the fingertips reach past the grasp-frame origin along z.
    pub tip_extension: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            finger_width: 0.015,
            finger_thickness: 0.010,
            finger_length: 0.060,
            preshape_opening: 0.060,
            closed_opening: 0.0,
            approach_depth: 0.040,
            tip_extension: 0.010,
        }
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<(), FeaturesError> {
        let positive = [
            self.finger_width,
            self.finger_thickness,
            self.finger_length,
            self.preshape_opening,
            self.approach_depth,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.closed_opening < 0.0 {
            return Err(FeaturesError::BadGripper(
                "dimensions must be positive".into(),
            ));
        }
        if self.preshape_opening <= self.closed_opening {
            return Err(FeaturesError::BadGripper(
                "preshape opening must exceed closed opening".into(),
            ));
        }
        Ok(())
    }
}

/// The four-box finger sweep for one grasp, inflated by `margin`.
///
/// Box order is fixed (approach boxes before grasp boxes, +y finger before
/// -y finger); a point in an overlap region belongs to the first box
/// containing it.
#[derive(Clone, Debug)]
pub struct SweptVolume {
    frame: RigidTransform,
    boxes: [Aabb; 4],
    margin: f64,
}

/// Builds the swept volume for a wrist pose (grasp frame -> world).
pub fn build_swept_volume(
    grasp_frame: &RigidTransform,
    gripper: &GripperModel,
    margin: f64,
) -> SweptVolume {
    let g = gripper;
    let tip = g.tip_extension;
    let inner_pre = g.preshape_opening / 2.0;
    let inner_closed = g.closed_opening / 2.0;
    let outer = inner_pre + g.finger_thickness;
    let hx = g.finger_width / 2.0;
    let approach_top = tip - g.finger_length - g.approach_depth;
    let grasp_top = tip - g.finger_length;

    let mk = |y0: f64, y1: f64, z0: f64| Aabb {
        min: Point3::new(-hx - margin, y0 - margin, z0 - margin),
        max: Point3::new(hx + margin, y1 + margin, tip + margin),
    };
    let boxes = [
        mk(inner_pre, outer, approach_top),      // +y finger, approach
        mk(-outer, -inner_pre, approach_top),    // -y finger, approach
        mk(inner_closed, outer, grasp_top),      // +y finger, closing
        mk(-outer, -inner_closed, grasp_top),    // -y finger, closing
    ];
    SweptVolume {
        frame: *grasp_frame,
        boxes,
        margin,
    }
}

impl SweptVolume {
    pub fn frame(&self) -> &RigidTransform {
        &self.frame
    }

    pub fn boxes(&self) -> &[Aabb; 4] {
        &self.boxes
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn to_local(&self, p: Point3) -> Point3 {
        self.frame.inverse().apply(p)
    }

    /// Index of the first box containing the grasp-frame point.
    pub fn containing_box_local(&self, p: Point3) -> Option<usize> {
        self.boxes.iter().position(|b| b.contains(p))
    }

    pub fn contains_local(&self, p: Point3) -> bool {
        self.containing_box_local(p).is_some()
    }

    pub fn contains_world(&self, p: Point3) -> bool {
        self.contains_local(self.to_local(p))
    }

    /// Deepest z of the sweep (all boxes end at the fingertip plane).
    pub fn bottom_z_local(&self) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.max.z)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(d, h)` for a grasp-frame point: distance to the nearest y-boundary
    /// of its containing box, and distance above the sweep bottom.
    pub fn depth_metrics_local(&self, p: Point3) -> Option<(f64, f64)> {
        let b = &self.boxes[self.containing_box_local(p)?];
        let d = (p.y - b.min.y).min(b.max.y - p.y);
        let h = self.bottom_z_local() - p.z;
        Some((d, h))
    }

    /// World-frame bounding box of the whole sweep.
    pub fn aabb_world(&self) -> Aabb {
        let mut out: Option<Aabb> = None;
        for b in &self.boxes {
            for &cx in &[b.min.x, b.max.x] {
                for &cy in &[b.min.y, b.max.y] {
                    for &cz in &[b.min.z, b.max.z] {
                        let w = self.frame.apply(Point3::new(cx, cy, cz));
                        match &mut out {
                            Some(a) => a.grow(w),
                            None => out = Some(Aabb { min: w, max: w }),
                        }
                    }
                }
            }
        }
        out.expect("four boxes")
    }
}

/// Histogram layout: `bins_y x bins_z` counts, row-major with the y bin as
/// the major index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub bins_y: usize,
    pub bins_z: usize,
    pub width_y: f64,
    pub width_z: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            bins_y: 5,
            bins_z: 5,
            width_y: 0.01,
            width_z: 0.01,
        }
    }
}

impl FeatureParams {
    pub fn len(&self) -> usize {
        self.bins_y * self.bins_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    counts: Vec<u32>,
    params: FeatureParams,
}

impl FeatureVector {
    pub fn zeros(params: FeatureParams) -> Self {
        Self {
            counts: vec![0; params.len()],
            params,
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn from_counts(counts: Vec<u32>, params: FeatureParams) -> Option<Self> {
        (counts.len() == params.len()).then_some(Self { counts, params })
    }
}

/// Points inside the swept volume that do not belong to the target object
/// (distance to its surface above `target_dist`), in the grasp frame.
pub fn neighbor_points(
    cloud: &PointCloud,
    sv: &SweptVolume,
    target_shape: &Shape,
    target_pose: &RigidTransform,
    target_dist: f64,
) -> Vec<Point3> {
    let world_box = sv.aabb_world();
    let to_local = sv.frame.inverse();
    let to_target = target_pose.inverse();
    let mut out = Vec::new();
    for &p in &cloud.points {
        if !world_box.contains(p) {
            continue;
        }
        let local = to_local.apply(p);
        if !sv.contains_local(local) {
            continue;
        }
        if target_shape
            .signed_distance_local(to_target.apply(p))
            .abs()
            > target_dist
        {
            out.push(local);
        }
    }
    out
}

/// Bins grasp-frame points into the feature histogram. Bin indices clamp
/// to the last bin so far-from-boundary points still count.
pub fn featurize(
    points_local: &[Point3],
    sv: &SweptVolume,
    params: &FeatureParams,
) -> Result<FeatureVector, FeaturesError> {
    let mut out = FeatureVector::zeros(*params);
    for &p in points_local {
        let (d, h) = sv
            .depth_metrics_local(p)
            .ok_or(FeaturesError::PointOutsideVolume(p.x, p.y, p.z))?;
        let jy = ((d / params.width_y).floor() as usize).min(params.bins_y - 1);
        let jz = ((h / params.width_z).floor() as usize).min(params.bins_z - 1);
        out.counts[jy * params.bins_z + jz] += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> SweptVolume {
        build_swept_volume(&RigidTransform::identity(), &GripperModel::default(), 0.0)
    }

    #[test]
    fn canonical_sweep_corners_match_hand_geometry() {
        let sv = canonical();
        // Defaults: fingers 15 x 10 x 60 mm, opening 60 -> 0 mm, approach
        // 40 mm, tips 10 mm past the origin.
        let close = |a: Point3, b: Point3| (a - b).norm() < 1e-12;
        let b = sv.boxes();
        // +y approach box.
        assert!(close(b[0].min, Point3::new(-0.0075, 0.030, -0.090)));
        assert!(close(b[0].max, Point3::new(0.0075, 0.040, 0.010)));
        // -y approach box.
        assert!(close(b[1].min, Point3::new(-0.0075, -0.040, -0.090)));
        assert!(close(b[1].max, Point3::new(0.0075, -0.030, 0.010)));
        // +y closing box sweeps the inner face from 30 mm down to 0.
        assert!(close(b[2].min, Point3::new(-0.0075, 0.0, -0.050)));
        assert!(close(b[2].max, Point3::new(0.0075, 0.040, 0.010)));
        // -y closing box.
        assert!(close(b[3].min, Point3::new(-0.0075, -0.040, -0.050)));
        assert!(close(b[3].max, Point3::new(0.0075, 0.0, 0.010)));
    }

    #[test]
    fn margin_offsets_every_face_by_exactly_its_value() {
        let with = build_swept_volume(
            &RigidTransform::identity(),
            &GripperModel::default(),
            0.002,
        );
        let without = canonical();
        for (a, b) in with.boxes().iter().zip(without.boxes()) {
            for k in 0..3 {
                assert!((a.min[k] - (b.min[k] - 0.002)).abs() < 1e-15);
                assert!((a.max[k] - (b.max[k] + 0.002)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rotated_sweep_is_congruent() {
        let frame = RigidTransform::from_axis_angle(Vec3::new(0.2, 1.0, 0.4), 1.1)
            .compose(&RigidTransform::from_translation(Vec3::new(0.05, -0.02, 0.03)));
        let rotated = build_swept_volume(&frame, &GripperModel::default(), 0.0);
        let canon = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let p = Point3::new(
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.12..0.03),
            );
            assert_eq!(
                canon.contains_local(p),
                rotated.contains_world(frame.apply(p))
            );
        }
    }

    #[test]
    fn empty_featurize_is_zero_vector_of_25() {
        let sv = canonical();
        let f = featurize(&[], &sv, &FeatureParams::default()).unwrap();
        assert_eq!(f.counts().len(), 25);
        assert!(f.counts().iter().all(|&c| c == 0));
    }

    #[test]
    fn single_point_lands_in_expected_bin() {
        let sv = canonical();
        // d = 4 mm from the inner face of the +y approach box,
        // h = 13 mm above the sweep bottom.
        let p = Point3::new(0.0, 0.034, 0.010 - 0.013);
        let (d, h) = sv.depth_metrics_local(p).unwrap();
        assert!((d - 0.004).abs() < 1e-12);
        assert!((h - 0.013).abs() < 1e-12);
        let f = featurize(&[p], &sv, &FeatureParams::default()).unwrap();
        // Bin (jy=0, jz=1), row-major with y major.
        let mut expect = vec![0u32; 25];
        expect[1] = 1;
        assert_eq!(f.counts(), &expect[..]);
    }

    #[test]
    fn featurize_matches_brute_force_binning() {
        let sv = canonical();
        let params = FeatureParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // Random points inside the union; rejection-sample.
        let mut pts = Vec::new();
        while pts.len() < 500 {
            let p = Point3::new(
                rng.random_range(-0.0075..0.0075),
                rng.random_range(-0.04..0.04),
                rng.random_range(-0.09..0.01),
            );
            if sv.contains_local(p) {
                pts.push(p);
            }
        }
        let f = featurize(&pts, &sv, &params).unwrap();
        // Independent oracle: recompute d and h from the box definitions.
        let mut expect = vec![0u32; 25];
        for &p in &pts {
            let boxes = sv.boxes();
            let idx = boxes.iter().position(|b| b.contains(p)).unwrap();
            let b = &boxes[idx];
            let d = (p.y - b.min.y).min(b.max.y - p.y);
            let h = boxes.iter().map(|b| b.max.z).fold(f64::MIN, f64::max) - p.z;
            let jy = ((d / 0.01).floor() as usize).min(4);
            let jz = ((h / 0.01).floor() as usize).min(4);
            expect[jy * 5 + jz] += 1;
        }
        assert_eq!(f.counts(), &expect[..]);
        assert_eq!(f.total(), 500);
    }

    #[test]
    fn out_of_volume_point_is_an_error() {
        let sv = canonical();
        let err = featurize(&[Point3::new(0.5, 0.5, 0.5)], &sv, &FeatureParams::default());
        assert!(matches!(err, Err(FeaturesError::PointOutsideVolume(..))));
    }

    #[test]
    fn neighbor_points_excludes_target_surface() {
        let sv = canonical();
        let target = Shape::cylinder(0.015, 0.08).unwrap();
        let target_pose = RigidTransform::from_axis_angle(Vec3::x(), std::f64::consts::FRAC_PI_2);
        // Points on the target surface: excluded.
        let on_target: Vec<Point3> = target
            .surface_samples(0.005)
            .iter()
            .map(|&p| target_pose.apply(p))
            .collect();
        let cloud = PointCloud::new(on_target);
        let n = neighbor_points(&cloud, &sv, &target, &target_pose, 0.003);
        assert!(n.is_empty());

        // One clearly-off-target point inside the sweep at known local
        // coordinates.
        let local = Point3::new(0.0, 0.035, -0.02);
        let world = sv.frame().apply(local);
        let cloud = PointCloud::new(vec![world]);
        let n = neighbor_points(&cloud, &sv, &target, &target_pose, 0.003);
        assert_eq!(n.len(), 1);
        assert!((n[0] - local).norm() < 1e-12);
    }

    #[test]
    fn neighbor_points_matches_brute_force() {
        let frame = RigidTransform::from_rotation_z(0.7)
            .compose(&RigidTransform::from_translation(Vec3::new(0.02, 0.01, 0.03)));
        let sv = build_swept_volume(&frame, &GripperModel::default(), 0.002);
        let target = Shape::box_extents(0.03, 0.04, 0.09).unwrap();
        let target_pose = RigidTransform::from_translation(Vec3::new(0.02, 0.01, 0.015));
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cloud = PointCloud::new(
            (0..3000)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(0.0..0.1),
                    )
                })
                .collect(),
        );
        let got = neighbor_points(&cloud, &sv, &target, &target_pose, 0.003);
        let expect: Vec<Point3> = cloud
            .points
            .iter()
            .filter(|&&p| {
                sv.contains_world(p)
                    && target.signed_distance(&target_pose, p).abs() > 0.003
            })
            .map(|&p| sv.to_local(p))
            .collect();
        assert_eq!(got.len(), expect.len());
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn gripper_validation() {
        assert!(GripperModel::default().validate().is_ok());
        let bad = GripperModel {
            preshape_opening: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
