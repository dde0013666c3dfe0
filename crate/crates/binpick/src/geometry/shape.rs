use super::mesh::TriangleMesh;
use super::{GeometryError, Point3, RigidTransform, Vec3};

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut aabb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            aabb.grow(*p);
        }
        Some(aabb)
    }

    pub fn grow(&mut self, p: Point3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.grow(other.min);
        out.grow(other.max);
        out
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        Point3::from((self.min.coords + self.max.coords) / 2.0)
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Slab test; returns the parameter interval where the ray overlaps the
    /// box, if any.
    pub fn ray_interval(&self, origin: Point3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-300 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[k];
                let (mut a, mut b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    pub fn distance_squared_to(&self, p: Point3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]);
            d2 += d * d;
        }
        d2
    }
}

/// A rigid part shape in its local frame.
///
/// Boxes are centered at the origin; cylinders have their axis along z and
/// are centered at the origin. Meshes carry a BVH for ray and distance
/// queries.
#[derive(Clone, Debug)]
pub enum Shape {
    Box { extents: Vec3 },
    Cylinder { radius: f64, height: f64 },
    Mesh(TriangleMesh),
}

impl Shape {
    pub fn box_extents(w: f64, d: f64, h: f64) -> Result<Self, GeometryError> {
        for v in [w, d, h] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(GeometryError::NonPositiveDimension(v));
            }
        }
        Ok(Shape::Box {
            extents: Vec3::new(w, d, h),
        })
    }

    pub fn cylinder(radius: f64, height: f64) -> Result<Self, GeometryError> {
        for v in [radius, height] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(GeometryError::NonPositiveDimension(v));
            }
        }
        Ok(Shape::Cylinder { radius, height })
    }

    pub fn mesh(mesh: TriangleMesh) -> Result<Self, GeometryError> {
        if mesh.faces().is_empty() {
            return Err(GeometryError::InvalidMesh("no faces".into()));
        }
        Ok(Shape::Mesh(mesh))
    }

    /// Local-frame bounding box.
    pub fn aabb_local(&self) -> Aabb {
        match self {
            Shape::Box { extents } => Aabb {
                min: Point3::from(-extents / 2.0),
                max: Point3::from(extents / 2.0),
            },
            Shape::Cylinder { radius, height } => Aabb {
                min: Point3::new(-radius, -radius, -height / 2.0),
                max: Point3::new(*radius, *radius, height / 2.0),
            },
            Shape::Mesh(m) => m.aabb(),
        }
    }

    /// Signed distance from `p` (world frame) to the surface of the shape
    /// posed at `pose`. Negative inside.
    pub fn signed_distance(&self, pose: &RigidTransform, p: Point3) -> f64 {
        let local = pose.inverse().apply(p);
        self.signed_distance_local(local)
    }

    pub fn signed_distance_local(&self, p: Point3) -> f64 {
        match self {
            Shape::Box { extents } => {
                let h = extents / 2.0;
                let q = Vec3::new(p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Cylinder { radius, height } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - height / 2.0;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                let inside = dr.max(dz).min(0.0);
                outside + inside
            }
            Shape::Mesh(m) => {
                let d = m.distance(p);
                if m.contains(p) {
                    -d
                } else {
                    d
                }
            }
        }
    }

    /// Closest point on the surface, world frame.
    pub fn closest_surface_point(&self, pose: &RigidTransform, p: Point3) -> Point3 {
        let local = pose.inverse().apply(p);
        pose.apply(self.closest_surface_point_local(local))
    }

    pub fn closest_surface_point_local(&self, p: Point3) -> Point3 {
        match self {
            Shape::Box { extents } => {
                let h = extents / 2.0;
                let inside = p.x.abs() < h.x && p.y.abs() < h.y && p.z.abs() < h.z;
                if !inside {
                    return Point3::new(
                        p.x.clamp(-h.x, h.x),
                        p.y.clamp(-h.y, h.y),
                        p.z.clamp(-h.z, h.z),
                    );
                }
                // Inside: project to the nearest face.
                let gaps = [h.x - p.x.abs(), h.y - p.y.abs(), h.z - p.z.abs()];
                let axis = (0..3).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap();
                let mut q = p;
                q[axis] = h[axis] * if p[axis] >= 0.0 { 1.0 } else { -1.0 };
                q
            }
            Shape::Cylinder { radius, height } => {
                let hz = height / 2.0;
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let (ux, uy) = if rho > 1e-12 {
                    (p.x / rho, p.y / rho)
                } else {
                    (1.0, 0.0)
                };
                if p.z.abs() > hz {
                    let zc = hz * p.z.signum();
                    if rho <= *radius {
                        Point3::new(p.x, p.y, zc)
                    } else {
                        Point3::new(radius * ux, radius * uy, zc)
                    }
                } else if rho >= *radius {
                    Point3::new(radius * ux, radius * uy, p.z)
                } else {
                    // Inside: nearest of side wall and the two caps.
                    let to_side = radius - rho;
                    let to_cap = hz - p.z.abs();
                    if to_side <= to_cap {
                        Point3::new(radius * ux, radius * uy, p.z)
                    } else {
                        let zc = if p.z >= 0.0 { hz } else { -hz };
                        Point3::new(p.x, p.y, zc)
                    }
                }
            }
            Shape::Mesh(m) => m.closest_point(p),
        }
    }

    /// Smallest nonnegative `t` with `origin + t dir` on the surface.
    ///
    /// `dir` must be a unit vector within 1e-9.
    pub fn ray_cast(&self, pose: &RigidTransform, origin: Point3, dir: Vec3) -> Option<f64> {
        debug_assert!((dir.norm() - 1.0).abs() < 1e-9, "dir must be unit length");
        let inv = pose.inverse();
        let o = inv.apply(origin);
        let d = inv.rotate(dir);
        self.ray_cast_local(o, d)
    }

    pub fn ray_cast_local(&self, origin: Point3, dir: Vec3) -> Option<f64> {
        match self {
            Shape::Box { .. } => {
                let (t0, t1) = self.aabb_local().ray_interval(origin, dir)?;
                if t1 < 0.0 {
                    None
                } else if t0 >= 0.0 {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
            Shape::Cylinder { radius, height } => {
                let hz = height / 2.0;
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t >= 0.0 && best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                };
                // Side wall.
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 1e-300 {
                    let b = 2.0 * (origin.x * dir.x + origin.y * dir.y);
                    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                            let z = origin.z + t * dir.z;
                            if z.abs() <= hz {
                                consider(t);
                            }
                        }
                    }
                }
                // Caps.
                if dir.z.abs() > 1e-300 {
                    for zc in [hz, -hz] {
                        let t = (zc - origin.z) / dir.z;
                        let x = origin.x + t * dir.x;
                        let y = origin.y + t * dir.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
            Shape::Mesh(m) => m.ray_cast(origin, dir),
        }
    }

    /// Deterministic surface sample points (local frame), spaced roughly
    /// `spacing` apart. Used by clearance checks and the contact oracle.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Point3> {
        let mut out = Vec::new();
        match self {
            Shape::Box { extents } => {
                let h = extents / 2.0;
                let steps = |len: f64| ((len / spacing).ceil() as usize).max(1);
                // Six faces; fixed axis = face normal.
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let (nu, nv) = (steps(extents[u]), steps(extents[v]));
                    for side in [-1.0, 1.0] {
                        for i in 0..=nu {
                            for j in 0..=nv {
                                let mut p = Point3::origin();
                                p[axis] = side * h[axis];
                                p[u] = -h[u] + extents[u] * i as f64 / nu as f64;
                                p[v] = -h[v] + extents[v] * j as f64 / nv as f64;
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Shape::Cylinder { radius, height } => {
                let hz = height / 2.0;
                let n_phi = ((2.0 * std::f64::consts::PI * radius / spacing).ceil() as usize).max(8);
                let n_z = ((height / spacing).ceil() as usize).max(1);
                for iz in 0..=n_z {
                    let z = -hz + height * iz as f64 / n_z as f64;
                    for ip in 0..n_phi {
                        let phi = 2.0 * std::f64::consts::PI * ip as f64 / n_phi as f64;
                        out.push(Point3::new(radius * phi.cos(), radius * phi.sin(), z));
                    }
                }
                // Caps: concentric rings.
                let n_r = ((radius / spacing).ceil() as usize).max(1);
                for z in [hz, -hz] {
                    out.push(Point3::new(0.0, 0.0, z));
                    for ir in 1..=n_r {
                        let r = radius * ir as f64 / n_r as f64;
                        let n_p = ((2.0 * std::f64::consts::PI * r / spacing).ceil() as usize).max(6);
                        for ip in 0..n_p {
                            let phi = 2.0 * std::f64::consts::PI * ip as f64 / n_p as f64;
                            out.push(Point3::new(r * phi.cos(), r * phi.sin(), z));
                        }
                    }
                }
            }
            Shape::Mesh(m) => out = m.surface_samples(spacing),
        }
        out
    }
}

/// Separating-axis intersection test between two oriented boxes given by
/// half extents and center poses. Touching counts as intersecting.
pub fn obbs_intersect(
    a_half: Vec3,
    a_pose: &RigidTransform,
    b_half: Vec3,
    b_pose: &RigidTransform,
) -> bool {
    const EPS: f64 = 1e-12;
    let r = a_pose.rotation().transpose() * b_pose.rotation();
    let t = a_pose.rotation().transpose() * (b_pose.translation() - a_pose.translation());
    let abs_r = r.map(|v| v.abs() + EPS);

    // A's face axes.
    for i in 0..3 {
        let rb = abs_r[(i, 0)] * b_half.x + abs_r[(i, 1)] * b_half.y + abs_r[(i, 2)] * b_half.z;
        if t[i].abs() > a_half[i] + rb {
            return false;
        }
    }
    // B's face axes.
    for j in 0..3 {
        let ra = abs_r[(0, j)] * a_half.x + abs_r[(1, j)] * a_half.y + abs_r[(2, j)] * a_half.z;
        let tb = t.x * r[(0, j)] + t.y * r[(1, j)] + t.z * r[(2, j)];
        if tb.abs() > ra + b_half[j] {
            return false;
        }
    }
    // Edge-edge cross axes A_i x B_j.
    for i in 0..3 {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        for j in 0..3 {
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            let ra = a_half[i1] * abs_r[(i2, j)] + a_half[i2] * abs_r[(i1, j)];
            let rb = b_half[j1] * abs_r[(i, j2)] + b_half[j2] * abs_r[(i, j1)];
            let tl = t[i2] * r[(i1, j)] - t[i1] * r[(i2, j)];
            if tl.abs() > ra + rb {
                return false;
            }
        }
    }
    true
}
