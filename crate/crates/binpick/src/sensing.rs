//! The simulated wrist-mounted depth sensor.
//!
//! Candidate sensor poses sit on lines through the faces of a regular
//! polyhedron centered at the bin-bottom center, one candidate per
//! (face, standoff), always looking at the center. Capturing ray-casts one
//! ray per pixel against the scene and returns world-frame points with
//! optional Gaussian depth noise along the ray.

use crate::cloud::PointCloud;
use crate::geometry::{BinBox, Point3, RigidTransform, Shape, ShapeCatalog, Vec3};
use crate::scene::Scene;
use crate::seed::derive_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("unsupported polyhedron order {0}; must be one of 4, 6, 8, 12, 20")]
    UnsupportedPolyhedron(usize),
    #[error("standoff must be positive, got {0}")]
    BadStandoff(f64),
    #[error("invalid sensor model: {0}")]
    BadSensorModel(String),
    #[error("unknown shape '{0}' in catalog")]
    UnknownShape(String),
}

/// A candidate pose for the depth sensor. The optical frame has z looking
/// at the bin-bottom center.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensorPose {
    pub pose: RigidTransform,
    pub face_index: usize,
    pub standoff: f64,
}

impl SensorPose {
    pub fn position(&self) -> Point3 {
        Point3::from(self.pose.translation())
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.pose.rotate(Vec3::z())
    }
}

/// Pinhole depth sensor parameters (stand-in for a real RGB-D camera).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// Horizontal / vertical field of view, radians.
    pub hfov: f64,
    pub vfov: f64,
    pub width: usize,
    pub height: usize,
    /// Depth noise standard deviation along the ray, meters.
    pub noise_sigma: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            hfov: 1.0,
            vfov: 0.8,
            width: 128,
            height: 96,
            noise_sigma: 0.001,
            min_range: 0.1,
            max_range: 2.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), SensingError> {
        let ok_fov = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !ok_fov(self.hfov) || !ok_fov(self.vfov) {
            return Err(SensingError::BadSensorModel(format!(
                "fov out of (0, pi): {} x {}",
                self.hfov, self.vfov
            )));
        }
        if self.width < 1 || self.height < 1 {
            return Err(SensingError::BadSensorModel("resolution below 1x1".into()));
        }
        if !(self.min_range >= 0.0 && self.max_range > self.min_range) {
            return Err(SensingError::BadSensorModel("bad range interval".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(SensingError::BadSensorModel("negative noise sigma".into()));
        }
        Ok(())
    }

    /// Distance from the sensor if `p` is inside the viewing frustum and
    /// range band of a sensor at `pose`; `None` otherwise. Pure frustum
    /// test, no occlusion.
    pub fn frustum_distance(&self, pose: &RigidTransform, p: Point3) -> Option<f64> {
        let local = pose.inverse().apply(p);
        if local.z <= 0.0 {
            return None;
        }
        if (local.x.atan2(local.z)).abs() > self.hfov / 2.0 {
            return None;
        }
        if (local.y.atan2(local.z)).abs() > self.vfov / 2.0 {
            return None;
        }
        let dist = local.coords.norm();
        (self.min_range..=self.max_range)
            .contains(&dist)
            .then_some(dist)
    }
}

/// Spherical-shell workspace with elevation limits; the simulation stand-in
/// for "IK is solvable and the links are collision-free".
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachabilityModel {
    pub center: [f64; 3],
    pub min_radius: f64,
    pub max_radius: f64,
    /// Elevation of the position above the horizon through the center,
    /// radians; closed interval.
    pub min_elevation: f64,
    pub max_elevation: f64,
    /// Max tilt of a grasp approach axis away from straight down, radians.
    pub max_approach_tilt: f64,
}

impl Default for ReachabilityModel {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 0.0],
            // The whole bin interior is inside the workspace; only the
            // outer radius binds for wrist poses.
            min_radius: 0.0,
            max_radius: 0.9,
            min_elevation: 20f64.to_radians(),
            max_elevation: 80f64.to_radians(),
            max_approach_tilt: 45f64.to_radians(),
        }
    }
}

impl ReachabilityModel {
    /// Radius-band test without elevation limits; wrist positions are
    /// constrained by the approach tilt instead.
    pub fn wrist_position_reachable(&self, p: Point3) -> bool {
        let c = Vec3::new(self.center[0], self.center[1], self.center[2]);
        let r = (p.coords - c).norm();
        r >= self.min_radius && r <= self.max_radius
    }

    pub fn position_reachable(&self, p: Point3) -> bool {
        let c = Vec3::new(self.center[0], self.center[1], self.center[2]);
        let rel = p.coords - c;
        let r = rel.norm();
        if r < self.min_radius || r > self.max_radius {
            return false;
        }
        let elevation = rel.z.atan2((rel.x * rel.x + rel.y * rel.y).sqrt());
        elevation >= self.min_elevation && elevation <= self.max_elevation
    }
}

/// True iff the sensor position lies inside the workspace shell.
pub fn reachable(pose: &SensorPose, reach: &ReachabilityModel) -> bool {
    reach.position_reachable(pose.position())
}

/// Face normals of the order-`n` regular polyhedron, oriented so no normal
/// points below the horizontal except true bottom faces (icosahedron and
/// dodecahedron are rotated face-up). Sorted by descending z then x then y;
/// the index in this list is the `face_index` used in tie-breaks, so index
/// 0 is the most top-down view.
pub fn polyhedron_face_normals(n: usize) -> Result<Vec<Vec3>, SensingError> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut dirs: Vec<Vec3> = match n {
        4 => vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ],
        6 => vec![
            Vec3::x(),
            -Vec3::x(),
            Vec3::y(),
            -Vec3::y(),
            Vec3::z(),
            -Vec3::z(),
        ],
        8 => {
            let mut v = Vec::new();
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    for sz in [1.0, -1.0] {
                        v.push(Vec3::new(sx, sy, sz));
                    }
                }
            }
            v
        }
        12 => {
            // Dodecahedron face normals = icosahedron vertices.
            let mut v = Vec::new();
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    v.push(Vec3::new(0.0, s1, s2 * phi));
                    v.push(Vec3::new(s1, s2 * phi, 0.0));
                    v.push(Vec3::new(s1 * phi, 0.0, s2));
                }
            }
            v
        }
        20 => {
            // Icosahedron face normals = dodecahedron vertices.
            let mut v = Vec::new();
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    for sz in [1.0, -1.0] {
                        v.push(Vec3::new(sx, sy, sz));
                    }
                }
            }
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    v.push(Vec3::new(0.0, s1 / phi, s2 * phi));
                    v.push(Vec3::new(s1 / phi, s2 * phi, 0.0));
                    v.push(Vec3::new(s1 * phi, 0.0, s2 / phi));
                }
            }
            v
        }
        other => return Err(SensingError::UnsupportedPolyhedron(other)),
    };
    for d in &mut dirs {
        *d = d.normalize();
    }
    if n == 12 || n == 20 {
        // Rotate one face to point straight up so candidates never sit
        // exactly on the bottom plane.
        let top = dirs
            .iter()
            .copied()
            .max_by(|a, b| a.z.total_cmp(&b.z))
            .unwrap();
        let rot = rotation_to_z(top);
        for d in &mut dirs {
            *d = rot.rotate(*d);
        }
    }
    dirs.sort_by(|a, b| {
        b.z.total_cmp(&a.z)
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
    });
    Ok(dirs)
}

fn rotation_to_z(v: Vec3) -> RigidTransform {
    let z = Vec3::z();
    let dot = v.dot(&z).clamp(-1.0, 1.0);
    if dot > 1.0 - 1e-12 {
        return RigidTransform::identity();
    }
    if dot < -1.0 + 1e-12 {
        return RigidTransform::from_axis_angle(Vec3::x(), std::f64::consts::PI);
    }
    let axis = v.cross(&z);
    RigidTransform::from_axis_angle(axis, dot.acos())
}

/// One candidate per (face, standoff), looking at the bin-bottom center,
/// excluding candidates below the bottom plane.
pub fn candidate_poses(
    bin: &BinBox,
    faces: usize,
    standoffs: &[f64],
) -> Result<Vec<SensorPose>, SensingError> {
    for &l in standoffs {
        if !(l > 0.0) {
            return Err(SensingError::BadStandoff(l));
        }
    }
    let normals = polyhedron_face_normals(faces)?;
    let mut out = Vec::new();
    for (face_index, normal) in normals.iter().enumerate() {
        if normal.z < -1e-12 {
            continue; // below the bottom plane
        }
        for &standoff in standoffs {
            let position = normal * standoff;
            let look = look_at_origin(position);
            out.push(SensorPose {
                pose: bin.pose().compose(&look),
                face_index,
                standoff,
            });
        }
    }
    Ok(out)
}

/// Optical frame at `position` (bin frame) with z aimed at the origin.
fn look_at_origin(position: Vec3) -> RigidTransform {
    let z = (-position).normalize();
    let up_ref = if z.cross(&Vec3::z()).norm() < 1e-9 {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let x = up_ref.cross(&z).normalize();
    let y = z.cross(&x);
    RigidTransform::from_axes(x, y, z, Point3::from(position)).expect("orthonormal by construction")
}

/// Resolved world-posed geometry of a scene: objects plus bin walls.
pub fn scene_geometry(
    scene: &Scene,
    catalog: &ShapeCatalog,
) -> Result<Vec<(Shape, RigidTransform)>, SensingError> {
    let mut out = Vec::with_capacity(scene.objects.len() + 5);
    for o in &scene.objects {
        let shape = catalog
            .get(&o.shape)
            .ok_or_else(|| SensingError::UnknownShape(o.shape.clone()))?;
        out.push((shape.clone(), o.pose));
    }
    out.extend(scene.bin.wall_shapes());
    Ok(out)
}

/// Ray-casts a depth image and returns the world-frame point cloud.
///
/// One ray per pixel; nearest hit among objects and bin; hits outside the
/// range band and missed pixels are omitted. Noise is derived per pixel
/// from `seed`, so the result is independent of row scheduling.
pub fn capture(
    scene: &Scene,
    catalog: &ShapeCatalog,
    sensor: &SensorModel,
    pose: &SensorPose,
    seed: u64,
) -> Result<PointCloud, SensingError> {
    sensor.validate()?;
    let geometry = scene_geometry(scene, catalog)?;
    let origin = pose.position();
    let (w, h) = (sensor.width, sensor.height);
    let (tan_h, tan_v) = ((sensor.hfov / 2.0).tan(), (sensor.vfov / 2.0).tan());

    let rows: Vec<Vec<Point3>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::new();
            for u in 0..w {
                let xn = (2.0 * (u as f64 + 0.5) / w as f64 - 1.0) * tan_h;
                let yn = (2.0 * (v as f64 + 0.5) / h as f64 - 1.0) * tan_v;
                let dir = pose.pose.rotate(Vec3::new(xn, yn, 1.0).normalize());
                let mut nearest = f64::INFINITY;
                for (shape, shape_pose) in &geometry {
                    if let Some(t) = shape.ray_cast(shape_pose, origin, dir) {
                        nearest = nearest.min(t);
                    }
                }
                if nearest < sensor.min_range || nearest > sensor.max_range {
                    continue;
                }
                let depth = if sensor.noise_sigma > 0.0 {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, (v * w + u) as u64));
                    let n: f64 = StandardNormal.sample(&mut rng);
                    nearest + sensor.noise_sigma * n
                } else {
                    nearest
                };
                row.push(origin + dir * depth);
            }
            row
        })
        .collect();

    Ok(PointCloud::new(rows.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, Scene, SceneConfig, SceneObject};

    fn bin() -> BinBox {
        BinBox::new([0.3, 0.3, 0.1], 0.01, RigidTransform::identity()).unwrap()
    }

    #[test]
    fn cube_candidates_exclude_bottom() {
        let cands = candidate_poses(&bin(), 6, &[0.5]).unwrap();
        assert_eq!(cands.len(), 5);
        // Most top-down candidate first, at (0, 0, 0.5).
        let top = &cands[0];
        assert!((top.position() - Point3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        assert!(cands.iter().all(|c| c.position().z >= -1e-12));
    }

    #[test]
    fn icosahedron_candidates_above_bottom() {
        let cands = candidate_poses(&bin(), 20, &[0.6]).unwrap();
        assert!(cands.len() <= 20);
        assert_eq!(cands.len(), 10); // centrosymmetric, face-up: half survive
        for c in &cands {
            assert!(c.position().z > 0.0);
        }
    }

    #[test]
    fn optical_axis_passes_through_center() {
        for n in [4, 6, 8, 12, 20] {
            for c in candidate_poses(&bin(), n, &[0.45, 0.6]).unwrap() {
                let p = c.position().coords;
                let axis = c.optical_axis();
                // Distance from the origin to the optical-axis line.
                let miss = p.cross(&axis).norm();
                assert!(miss < 1e-9, "n={n} face={} miss={miss}", c.face_index);
                // And the axis points from the sensor toward the origin.
                assert!(axis.dot(&-p) > 0.0);
            }
        }
    }

    #[test]
    fn two_standoffs_double_candidates() {
        let one = candidate_poses(&bin(), 12, &[0.45]).unwrap();
        let two = candidate_poses(&bin(), 12, &[0.45, 0.6]).unwrap();
        assert_eq!(two.len(), 2 * one.len());
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(matches!(
            candidate_poses(&bin(), 5, &[0.5]),
            Err(SensingError::UnsupportedPolyhedron(5))
        ));
        assert!(matches!(
            candidate_poses(&bin(), 6, &[0.0]),
            Err(SensingError::BadStandoff(_))
        ));
    }

    #[test]
    fn reachability_shell() {
        let reach = ReachabilityModel {
            min_radius: 0.2,
            max_radius: 0.8,
            min_elevation: 0.0,
            max_elevation: 1.2,
            ..Default::default()
        };
        let mk = |p: Vec3| SensorPose {
            pose: look_at_origin(p),
            face_index: 0,
            standoff: p.norm(),
        };
        // 45 degrees elevation inside the shell.
        assert!(reachable(&mk(Vec3::new(0.3, 0.0, 0.3)), &reach));
        // Beyond max radius.
        assert!(!reachable(&mk(Vec3::new(0.9, 0.0, 0.9)), &reach));
        // Exactly max radius: closed set.
        let r = 0.8 / 2f64.sqrt();
        assert!(reachable(&mk(Vec3::new(r, 0.0, r)), &reach));
    }

    fn noiseless() -> SensorModel {
        SensorModel {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn empty_bin_yields_only_bin_points() {
        let scene = Scene {
            bin: bin(),
            objects: vec![],
            rng_seed: 0,
        };
        let cat = ShapeCatalog::builtin();
        let cands = candidate_poses(&bin(), 20, &[0.5]).unwrap();
        let cloud = capture(&scene, &cat, &noiseless(), &cands[0], 0).unwrap();
        assert!(!cloud.is_empty());
        let walls = scene.bin.wall_shapes();
        for &p in &cloud.points {
            let d = walls
                .iter()
                .map(|(s, pose)| s.signed_distance(pose, p).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-6, "point {p:?} not on bin geometry (d={d})");
        }
    }

    #[test]
    fn top_down_view_sees_no_side_faces() {
        let cat = ShapeCatalog::builtin();
        let box_shape = cat.get("box").unwrap().clone();
        let pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.045));
        let scene = Scene {
            bin: bin(),
            objects: vec![SceneObject {
                id: 0,
                shape: "box".into(),
                pose,
                traversable: true,
            }],
            rng_seed: 0,
        };
        // Straight-down view from a cube-top candidate.
        let cands = candidate_poses(&bin(), 6, &[0.5]).unwrap();
        let cloud = capture(&scene, &cat, &noiseless(), &cands[0], 0).unwrap();
        let top = 0.09;
        let mut on_box = 0;
        for &p in &cloud.points {
            if box_shape.signed_distance(&pose, p).abs() < 1e-6 && p.z > 1e-6 {
                assert!(p.z >= top - 1e-6, "side-face point {p:?} visible from above");
                on_box += 1;
            }
        }
        assert!(on_box > 10, "expected points on the box top");
    }

    #[test]
    fn no_returned_point_is_occluded() {
        let cat = ShapeCatalog::builtin();
        let config = SceneConfig {
            object_count: 4,
            ..Default::default()
        };
        let scene = generate_scene(&cat, &config, 3).unwrap();
        let cands = candidate_poses(&bin(), 20, &[0.5]).unwrap();
        // Oblique view so objects occlude each other.
        let pose = cands[cands.len() - 1];
        let cloud = capture(&scene, &cat, &noiseless(), &pose, 0).unwrap();
        let geometry = scene_geometry(&scene, &cat).unwrap();
        let origin = pose.position();
        for &p in &cloud.points {
            let dir = (p - origin).normalize();
            let dist = (p - origin).norm();
            let nearest = geometry
                .iter()
                .filter_map(|(s, sp)| s.ray_cast(sp, origin, dir))
                .fold(f64::INFINITY, f64::min);
            assert!(
                nearest >= dist - 1e-6,
                "point {p:?} is behind a closer surface ({nearest} < {dist})"
            );
        }
    }

    #[test]
    fn capture_points_on_surfaces_and_deterministic() {
        let cat = ShapeCatalog::builtin();
        let scene = generate_scene(&cat, &SceneConfig::default(), 9).unwrap();
        let cands = candidate_poses(&bin(), 20, &[0.5]).unwrap();
        let noisy = SensorModel::default();
        let a = capture(&scene, &cat, &noisy, &cands[2], 77).unwrap();
        let b = capture(&scene, &cat, &noisy, &cands[2], 77).unwrap();
        assert_eq!(a, b);
        let c = capture(&scene, &cat, &noisy, &cands[2], 78).unwrap();
        assert_ne!(a, c);

        let clean = capture(&scene, &cat, &noiseless(), &cands[2], 0).unwrap();
        let geometry = scene_geometry(&scene, &cat).unwrap();
        for &p in &clean.points {
            let d = geometry
                .iter()
                .map(|(s, sp)| s.signed_distance(sp, p).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-6);
        }
    }
}
