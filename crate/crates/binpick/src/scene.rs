//! Ground-truth simulated scenes: parts laid flat and close-packed on the
//! bin bottom, plus the hidden traversability attribute the picking oracle
//! queries.
//!
//! Objects rest on the floor in a stable orientation (a box on a face, a
//! cylinder on its side or base) with random yaw. After the first object,
//! each new part is slid toward a randomly chosen anchor object until
//! contact and then backed off by a small gap, so fingers must pass close
//! to neighbors, matching piles where parts touch.

use crate::geometry::{BinBox, Point3, RigidTransform, Shape, ShapeCatalog, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unknown shape '{0}' in catalog")]
    UnknownShape(String),
    #[error("unknown object id {0}")]
    UnknownId(u32),
    #[error("bin floor ({available:.4} m^2) too small for {count} objects (needs ~{required:.4} m^2)")]
    BinTooSmall {
        required: f64,
        available: f64,
        count: usize,
    },
    #[error("placement failed after {attempts} attempts; bin too crowded")]
    PlacementFailed { attempts: usize },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Push-clearance ground truth: an object is traversable iff translating it
/// by `delta` along at least one of `directions` horizontal directions
/// collides with nothing.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraversabilityRule {
    pub delta: f64,
    pub directions: usize,
}

impl Default for TraversabilityRule {
    fn default() -> Self {
        Self {
            delta: 0.015,
            directions: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Inner bin extents (w, d, h) in meters.
    pub bin_extents: [f64; 3],
    pub wall_thickness: f64,
    pub object_count: usize,
    /// Catalog name of the part; every object in a scene is the same part.
    pub shape: String,
    /// Hard minimum pairwise clearance (0 allows touching).
    pub min_clearance: f64,
    /// Gap above `min_clearance` drawn per placement, [0, max_gap].
    pub max_gap: f64,
    pub max_attempts: usize,
    /// When set, neighbors of a removed object get a small pose jitter
    /// (std dev in meters) to exercise change detection while merging.
    pub resettle_jitter: Option<f64>,
    pub traversability: TraversabilityRule,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            bin_extents: [0.30, 0.30, 0.10],
            wall_thickness: 0.01,
            object_count: 9,
            shape: "cylinder".into(),
            min_clearance: 0.0,
            max_gap: 0.005,
            max_attempts: 4000,
            resettle_jitter: None,
            traversability: TraversabilityRule::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub shape: String,
    pub pose: RigidTransform,
    /// Hidden oracle attribute; never exposed to the learner.
    pub traversable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scene {
    pub bin: BinBox,
    pub objects: Vec<SceneObject>,
    pub rng_seed: u64,
}

impl Scene {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Surfaces never actually interpenetrate; gaps are floored at this value
/// so sampled clearance checks stay conservative.
const CONTACT_EPSILON: f64 = 3e-4;
/// Surface sample spacing for clearance checks during generation.
const SAMPLE_SPACING: f64 = 0.005;

/// Deterministically generates a scene for `(config, seed)`.
pub fn generate_scene(
    catalog: &ShapeCatalog,
    config: &SceneConfig,
    seed: u64,
) -> Result<Scene, SceneError> {
    let shape = catalog
        .get(&config.shape)
        .ok_or_else(|| SceneError::UnknownShape(config.shape.clone()))?;
    let bin = BinBox::new(
        config.bin_extents,
        config.wall_thickness,
        RigidTransform::identity(),
    )?;

    // Area bound: bounding circles of the resting footprint must fit.
    let aabb = shape.aabb_local();
    let half_diag = aabb.extents().norm() / 2.0;
    let required = config.object_count as f64 * std::f64::consts::PI * half_diag * half_diag;
    let available = config.bin_extents[0] * config.bin_extents[1];
    if required > available {
        return Err(SceneError::BinTooSmall {
            required,
            available,
            count: config.object_count,
        });
    }

    let samples = shape.surface_samples(SAMPLE_SPACING);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<RigidTransform> = Vec::new();

    let mut attempts = 0usize;
    while placed.len() < config.object_count {
        attempts += 1;
        if attempts > config.max_attempts {
            return Err(SceneError::PlacementFailed { attempts });
        }
        let rest = random_resting_rotation(shape, &mut rng);
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let rotation = RigidTransform::from_rotation_z(yaw).compose(&rest.rotation);

        let candidate = if placed.is_empty() {
            place_free(&bin, shape, &rotation, rest.height, &mut rng)
        } else {
            place_touching(
                &bin, shape, &samples, &rotation, rest.height, &placed, config, &mut rng,
            )
        };
        if let Some(pose) = candidate {
            placed.push(pose);
        }
    }

    let objects = placed
        .into_iter()
        .enumerate()
        .map(|(i, pose)| SceneObject {
            id: i as u32,
            shape: config.shape.clone(),
            pose,
            traversable: false,
        })
        .collect();
    let scene = Scene {
        bin,
        objects,
        rng_seed: seed,
    };
    assign_traversability(&scene, catalog, &config.traversability)
}

struct RestingPose {
    rotation: RigidTransform,
    height: f64,
}

fn random_resting_rotation(shape: &Shape, rng: &mut ChaCha8Rng) -> RestingPose {
    use std::f64::consts::FRAC_PI_2;
    match shape {
        Shape::Box { extents } => {
            // One of the six faces down.
            let face = rng.random_range(0..6usize);
            let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
            let rotation = match (axis, sign as i8) {
                (2, 1) => RigidTransform::identity(),
                (2, _) => RigidTransform::from_axis_angle(Vec3::x(), std::f64::consts::PI),
                (0, 1) => RigidTransform::from_axis_angle(Vec3::y(), -FRAC_PI_2),
                (0, _) => RigidTransform::from_axis_angle(Vec3::y(), FRAC_PI_2),
                (1, 1) => RigidTransform::from_axis_angle(Vec3::x(), FRAC_PI_2),
                _ => RigidTransform::from_axis_angle(Vec3::x(), -FRAC_PI_2),
            };
            RestingPose {
                rotation,
                height: extents[axis] / 2.0,
            }
        }
        Shape::Cylinder { radius, height } => {
            if rng.random_bool(0.5) {
                RestingPose {
                    rotation: RigidTransform::identity(),
                    height: height / 2.0,
                }
            } else {
                RestingPose {
                    rotation: RigidTransform::from_axis_angle(Vec3::x(), FRAC_PI_2),
                    height: *radius,
                }
            }
        }
        Shape::Mesh(m) => {
            // Meshes rest in their native orientation; height from the
            // lowest vertex.
            let min_z = m
                .vertices()
                .iter()
                .map(|v| v.z)
                .fold(f64::INFINITY, f64::min);
            RestingPose {
                rotation: RigidTransform::identity(),
                height: -min_z,
            }
        }
    }
}

fn world_footprint_half(shape: &Shape, rotation: &RigidTransform) -> (f64, f64) {
    let aabb = shape.aabb_local();
    let mut hx: f64 = 0.0;
    let mut hy: f64 = 0.0;
    for ix in [aabb.min.x, aabb.max.x] {
        for iy in [aabb.min.y, aabb.max.y] {
            for iz in [aabb.min.z, aabb.max.z] {
                let w = rotation.rotate(Vec3::new(ix, iy, iz));
                hx = hx.max(w.x.abs());
                hy = hy.max(w.y.abs());
            }
        }
    }
    (hx, hy)
}

fn place_free(
    bin: &BinBox,
    shape: &Shape,
    rotation: &RigidTransform,
    rest_height: f64,
    rng: &mut ChaCha8Rng,
) -> Option<RigidTransform> {
    let [w, d, _] = bin.inner_extents();
    let (hx, hy) = world_footprint_half(shape, rotation);
    let (mx, my) = (w / 2.0 - hx - 1e-4, d / 2.0 - hy - 1e-4);
    if mx <= 0.0 || my <= 0.0 {
        return None;
    }
    let x = rng.random_range(-mx..mx);
    let y = rng.random_range(-my..my);
    Some(RigidTransform::from_translation(Vec3::new(x, y, rest_height)).compose(rotation))
}

#[allow(clippy::too_many_arguments)]
fn place_touching(
    bin: &BinBox,
    shape: &Shape,
    samples: &[Point3],
    rotation: &RigidTransform,
    rest_height: f64,
    placed: &[RigidTransform],
    config: &SceneConfig,
    rng: &mut ChaCha8Rng,
) -> Option<RigidTransform> {
    let anchor = placed[rng.random_range(0..placed.len())];
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
    let anchor_xy = Vec3::new(anchor.translation().x, anchor.translation().y, 0.0);

    let pose_at = |s: f64| {
        RigidTransform::from_translation(anchor_xy + dir * s + Vec3::new(0.0, 0.0, rest_height))
            .compose(rotation)
    };
    let clearance_at = |s: f64| {
        let pose = pose_at(s);
        scene_clearance(bin, shape, samples, &pose, shape, samples, placed)
    };

    let half_diag = shape.aabb_local().extents().norm() / 2.0;
    let s_far = 2.0 * half_diag + 0.06;
    if clearance_at(s_far) < 0.0 {
        return None; // no room on this side of the anchor
    }

    // March inward to bracket first contact, then bisect keeping the
    // non-penetrating end.
    let step = 0.004;
    let mut s_good = s_far;
    let mut s_bad = None;
    let mut s = s_far - step;
    while s > 0.0 {
        if clearance_at(s) < 0.0 {
            s_bad = Some(s);
            break;
        }
        s_good = s;
        s -= step;
    }
    let mut s_bad = s_bad?;
    for _ in 0..40 {
        let mid = (s_good + s_bad) / 2.0;
        if clearance_at(mid) < 0.0 {
            s_bad = mid;
        } else {
            s_good = mid;
        }
    }

    // Retreat until the actual clearance reaches the drawn gap (the push
    // direction is generally oblique to the contact normal, so distance
    // along it underestimates clearance).
    let desired = config.min_clearance
        + CONTACT_EPSILON
        + rng.random_range(0.0..config.max_gap.max(1e-12));
    let mut s_final = s_good;
    let mut steps = 0;
    while clearance_at(s_final) < desired {
        s_final += 5e-4;
        steps += 1;
        if steps > 400 {
            return None;
        }
    }
    Some(pose_at(s_final))
}

/// Minimum of wall clearance and pairwise clearance of `(a_shape, a_pose)`
/// against every pose in `others` (same shape set assumed per scene).
fn scene_clearance(
    bin: &BinBox,
    a_shape: &Shape,
    a_samples: &[Point3],
    a_pose: &RigidTransform,
    other_shape: &Shape,
    other_samples: &[Point3],
    others: &[RigidTransform],
) -> f64 {
    let mut clearance = wall_clearance(bin, a_samples, a_pose);
    for pose in others {
        let c = pair_clearance(a_shape, a_samples, a_pose, other_shape, other_samples, pose);
        clearance = clearance.min(c);
        if clearance < 0.0 {
            return clearance;
        }
    }
    clearance
}

/// Lateral clearance to the side walls and rim. Objects rest ON the
/// floor, so distance to the bottom plane is not a constraint; dipping
/// below it is penetration.
fn wall_clearance(bin: &BinBox, samples_local: &[Point3], pose: &RigidTransform) -> f64 {
    let to_bin = bin.pose().inverse().compose(pose);
    let [w, d, h] = bin.inner_extents();
    samples_local
        .iter()
        .map(|&p| {
            let local = to_bin.apply(p);
            let lateral = (w / 2.0 - local.x.abs())
                .min(d / 2.0 - local.y.abs())
                .min(h - local.z);
            if local.z < -1e-6 {
                lateral.min(local.z)
            } else {
                lateral
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Sampled two-way clearance between posed shapes (negative = penetration).
pub fn pair_clearance(
    a_shape: &Shape,
    a_samples: &[Point3],
    a_pose: &RigidTransform,
    b_shape: &Shape,
    b_samples: &[Point3],
    b_pose: &RigidTransform,
) -> f64 {
    let a_to_b = b_pose.inverse().compose(a_pose);
    let b_to_a = a_pose.inverse().compose(b_pose);
    let d_ab = a_samples
        .iter()
        .map(|&p| b_shape.signed_distance_local(a_to_b.apply(p)))
        .fold(f64::INFINITY, f64::min);
    let d_ba = b_samples
        .iter()
        .map(|&p| a_shape.signed_distance_local(b_to_a.apply(p)))
        .fold(f64::INFINITY, f64::min);
    d_ab.min(d_ba)
}

/// Recomputes the hidden traversability flag for every object.
pub fn assign_traversability(
    scene: &Scene,
    catalog: &ShapeCatalog,
    rule: &TraversabilityRule,
) -> Result<Scene, SceneError> {
    let mut out = scene.clone();
    let shapes: Vec<&Shape> = scene
        .objects
        .iter()
        .map(|o| {
            catalog
                .get(&o.shape)
                .ok_or_else(|| SceneError::UnknownShape(o.shape.clone()))
        })
        .collect::<Result<_, _>>()?;
    let samples: Vec<Vec<Point3>> = shapes
        .iter()
        .map(|s| s.surface_samples(SAMPLE_SPACING))
        .collect();

    for i in 0..out.objects.len() {
        out.objects[i].traversable = (0..rule.directions).any(|k| {
            let phi = std::f64::consts::TAU * k as f64 / rule.directions as f64;
            let shift = Vec3::new(phi.cos(), phi.sin(), 0.0) * rule.delta;
            let pushed = RigidTransform::from_translation(shift).compose(&scene.objects[i].pose);
            if wall_clearance(&scene.bin, &samples[i], &pushed) < 0.0 {
                return false;
            }
            (0..out.objects.len()).filter(|&j| j != i).all(|j| {
                pair_clearance(
                    shapes[i],
                    &samples[i],
                    &pushed,
                    shapes[j],
                    &samples[j],
                    &scene.objects[j].pose,
                ) >= 0.0
            })
        });
    }
    Ok(out)
}

/// Returns the scene without object `id`; other objects unchanged.
pub fn remove_object(scene: &Scene, id: u32) -> Result<Scene, SceneError> {
    if scene.object(id).is_none() {
        return Err(SceneError::UnknownId(id));
    }
    let mut out = scene.clone();
    out.objects.retain(|o| o.id != id);
    Ok(out)
}

/// Applies a small collision-safe pose jitter to objects within `radius` of
/// `center` (the spot a removed object vacated). Jitters that would collide
/// are dropped.
pub fn jitter_neighbors(
    scene: &Scene,
    catalog: &ShapeCatalog,
    center: Point3,
    radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<Scene, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    let shapes: Vec<&Shape> = scene
        .objects
        .iter()
        .map(|o| {
            catalog
                .get(&o.shape)
                .ok_or_else(|| SceneError::UnknownShape(o.shape.clone()))
        })
        .collect::<Result<_, _>>()?;
    let samples: Vec<Vec<Point3>> = shapes
        .iter()
        .map(|s| s.surface_samples(SAMPLE_SPACING))
        .collect();
    for i in 0..out.objects.len() {
        // Draw regardless of distance so results do not depend on which
        // neighbors qualify.
        let dx = rng.random_range(-1.0..1.0) * sigma;
        let dy = rng.random_range(-1.0..1.0) * sigma;
        let dyaw = rng.random_range(-1.0..1.0) * sigma * 10.0;
        let d = (out.objects[i].pose.translation() - center.coords).norm();
        if d > radius {
            continue;
        }
        let jittered = RigidTransform::from_translation(Vec3::new(dx, dy, 0.0))
            .compose(&RigidTransform::from_rotation_z(dyaw))
            .compose(&out.objects[i].pose);
        let ok = wall_clearance(&out.bin, &samples[i], &jittered) >= 0.0
            && (0..out.objects.len()).filter(|&j| j != i).all(|j| {
                pair_clearance(
                    shapes[i],
                    &samples[i],
                    &jittered,
                    shapes[j],
                    &samples[j],
                    &out.objects[j].pose,
                ) >= 0.0
            });
        if ok {
            out.objects[i].pose = jittered;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> ShapeCatalog {
        ShapeCatalog::builtin()
    }

    #[test]
    fn single_object_scene() {
        let config = SceneConfig {
            object_count: 1,
            ..Default::default()
        };
        let scene = generate_scene(&catalog(), &config, 1).unwrap();
        assert_eq!(scene.objects.len(), 1);
        // An object with nothing around it is traversable.
        assert!(scene.objects[0].traversable);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SceneConfig::default();
        let a = generate_scene(&catalog(), &config, 42).unwrap();
        let b = generate_scene(&catalog(), &config, 42).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_scene(&catalog(), &config, 43).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn objects_rest_on_bottom_and_do_not_penetrate() {
        let cat = catalog();
        for shape_name in ["cylinder", "box"] {
            let config = SceneConfig {
                shape: shape_name.into(),
                ..Default::default()
            };
            let scene = generate_scene(&cat, &config, 7).unwrap();
            assert_eq!(scene.objects.len(), 9);
            let shape = cat.get(shape_name).unwrap();
            // Dense penetration oracle (finer spacing than generation).
            let dense = shape.surface_samples(0.002);
            for o in &scene.objects {
                let min_z = dense
                    .iter()
                    .map(|&p| o.pose.apply(p).z)
                    .fold(f64::INFINITY, f64::min);
                assert!(min_z.abs() < 1e-6, "object {} rests at z {min_z}", o.id);
            }
            for (i, a) in scene.objects.iter().enumerate() {
                for b in scene.objects.iter().skip(i + 1) {
                    let c = pair_clearance(shape, &dense, &a.pose, shape, &dense, &b.pose);
                    assert!(c >= 0.0, "objects {} and {} overlap: {c}", a.id, b.id);
                }
            }
        }
    }

    #[test]
    fn remove_object_works() {
        let config = SceneConfig::default();
        let scene = generate_scene(&catalog(), &config, 5).unwrap();
        let removed = remove_object(&scene, 3).unwrap();
        assert_eq!(removed.objects.len(), 8);
        assert!(removed.object(3).is_none());
        assert!(removed.object(4).is_some());
        assert!(matches!(
            remove_object(&removed, 3),
            Err(SceneError::UnknownId(3))
        ));
        let single = generate_scene(
            &catalog(),
            &SceneConfig {
                object_count: 1,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let empty = remove_object(&single, 0).unwrap();
        assert!(empty.objects.is_empty());
    }

    #[test]
    fn wedged_object_is_not_traversable() {
        // A cylinder pinned in a corner by two boxes: every push direction
        // hits a wall or a neighbor.
        let cat = catalog();
        let bin = BinBox::new([0.3, 0.3, 0.1], 0.01, RigidTransform::identity()).unwrap();
        let corner = Vec3::new(-0.134, -0.134, 0.04); // upright cylinder near corner
        let block = |x: f64, y: f64| {
            // Boxes on their sides so they stay under the rim.
            RigidTransform::from_translation(Vec3::new(x, y, 0.015))
                .compose(&RigidTransform::from_axis_angle(
                    Vec3::y(),
                    std::f64::consts::FRAC_PI_2,
                ))
        };
        let scene = Scene {
            bin,
            objects: vec![
                SceneObject {
                    id: 0,
                    shape: "cylinder".into(),
                    pose: RigidTransform::from_translation(corner),
                    traversable: false,
                },
                SceneObject {
                    id: 1,
                    shape: "box".into(),
                    pose: block(-0.128, -0.085),
                    traversable: false,
                },
                SceneObject {
                    id: 2,
                    shape: "box".into(),
                    pose: block(-0.085, -0.128),
                    traversable: false,
                },
            ],
            rng_seed: 0,
        };
        let assigned =
            assign_traversability(&scene, &cat, &TraversabilityRule::default()).unwrap();
        assert!(
            !assigned.objects[0].traversable,
            "wedged cylinder can be pushed?"
        );
        // Same cylinder with the blockers gone is traversable.
        let open = Scene {
            objects: vec![scene.objects[0].clone()],
            ..scene.clone()
        };
        let assigned = assign_traversability(&open, &cat, &TraversabilityRule::default()).unwrap();
        assert!(assigned.objects[0].traversable);
    }

    #[test]
    fn touching_one_neighbor_open_far_side_is_traversable() {
        let cat = catalog();
        let bin = BinBox::new([0.3, 0.3, 0.1], 0.01, RigidTransform::identity()).unwrap();
        // Two upright cylinders nearly touching along x; both can escape.
        let mk = |x: f64, id: u32| SceneObject {
            id,
            shape: "cylinder".into(),
            pose: RigidTransform::from_translation(Vec3::new(x, 0.0, 0.04)),
            traversable: false,
        };
        let scene = Scene {
            bin,
            objects: vec![mk(0.0, 0), mk(0.0305, 1)],
            rng_seed: 0,
        };
        let assigned =
            assign_traversability(&scene, &cat, &TraversabilityRule::default()).unwrap();
        assert!(assigned.objects[0].traversable);
        assert!(assigned.objects[1].traversable);
    }

    #[test]
    fn scene_json_roundtrip() {
        let scene = generate_scene(&catalog(), &SceneConfig::default(), 11).unwrap();
        let json = scene.to_json().unwrap();
        let back = Scene::from_json(&json).unwrap();
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn bin_too_small_rejected() {
        let config = SceneConfig {
            bin_extents: [0.08, 0.08, 0.1],
            object_count: 9,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&catalog(), &config, 1),
            Err(SceneError::BinTooSmall { .. })
        ));
    }
}
