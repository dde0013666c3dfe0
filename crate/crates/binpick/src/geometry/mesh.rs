use super::shape::Aabb;
use super::{GeometryError, Point3, Vec3};

/// Indexed triangle mesh with a median-split BVH.
///
/// The two built-in parts are primitives; meshes exist for user-supplied
/// catalogs. Watertightness is assumed for the inside/outside parity test.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[u32; 3]>,
    nodes: Vec<BvhNode>,
    /// Triangle indices, permuted so each leaf owns a contiguous range.
    order: Vec<u32>,
    aabb: Aabb,
}

#[derive(Clone, Debug)]
struct BvhNode {
    aabb: Aabb,
    /// Leaf: (start, len) into `order`; inner: (left, right) child indices.
    kind: NodeKind,
}

#[derive(Clone, Copy, Debug)]
enum NodeKind {
    Leaf { start: u32, len: u32 },
    Inner { left: u32, right: u32 },
}

const LEAF_SIZE: usize = 8;

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(GeometryError::InvalidMesh("empty mesh".into()));
        }
        let n = vertices.len() as u32;
        for f in &faces {
            if f.iter().any(|&i| i >= n) {
                return Err(GeometryError::InvalidMesh(format!(
                    "face index out of range: {f:?}"
                )));
            }
        }
        let aabb = Aabb::from_points(vertices.iter()).unwrap();
        let mut mesh = Self {
            vertices,
            faces,
            nodes: Vec::new(),
            order: Vec::new(),
            aabb,
        };
        mesh.build_bvh();
        Ok(mesh)
    }

    /// Axis-aligned box as a 12-triangle mesh (test and catalog helper).
    pub fn box_mesh(w: f64, d: f64, h: f64) -> Self {
        let (x, y, z) = (w / 2.0, d / 2.0, h / 2.0);
        let v = vec![
            Point3::new(-x, -y, -z),
            Point3::new(x, -y, -z),
            Point3::new(x, y, -z),
            Point3::new(-x, y, -z),
            Point3::new(-x, -y, z),
            Point3::new(x, -y, z),
            Point3::new(x, y, z),
            Point3::new(-x, y, z),
        ];
        let f = vec![
            [0, 2, 1],
            [0, 3, 2], // bottom
            [4, 5, 6],
            [4, 6, 7], // top
            [0, 1, 5],
            [0, 5, 4], // -y
            [2, 3, 7],
            [2, 7, 6], // +y
            [1, 2, 6],
            [1, 6, 5], // +x
            [3, 0, 4],
            [3, 4, 7], // -x
        ];
        Self::new(v, f).expect("box mesh is valid")
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    fn tri(&self, idx: u32) -> [Point3; 3] {
        let f = self.faces[idx as usize];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    fn build_bvh(&mut self) {
        self.order = (0..self.faces.len() as u32).collect();
        let centroids: Vec<Point3> = self
            .faces
            .iter()
            .map(|f| {
                let (a, b, c) = (
                    self.vertices[f[0] as usize],
                    self.vertices[f[1] as usize],
                    self.vertices[f[2] as usize],
                );
                Point3::from((a.coords + b.coords + c.coords) / 3.0)
            })
            .collect();
        self.nodes.clear();
        let len = self.order.len();
        self.build_node(0, len, &centroids);
    }

    fn tri_aabb(&self, idx: u32) -> Aabb {
        let t = self.tri(idx);
        Aabb::from_points(t.iter()).unwrap()
    }

    fn build_node(&mut self, start: usize, len: usize, centroids: &[Point3]) -> u32 {
        let mut aabb = self.tri_aabb(self.order[start]);
        for i in start + 1..start + len {
            let b = self.tri_aabb(self.order[i]);
            aabb = aabb.union(&b);
        }
        let node_idx = self.nodes.len() as u32;
        self.nodes.push(BvhNode {
            aabb,
            kind: NodeKind::Leaf {
                start: start as u32,
                len: len as u32,
            },
        });
        if len <= LEAF_SIZE {
            return node_idx;
        }
        // Median split along the longest centroid axis.
        let mut cmin = centroids[self.order[start] as usize];
        let mut cmax = cmin;
        for i in start..start + len {
            let c = centroids[self.order[i] as usize];
            for k in 0..3 {
                cmin[k] = cmin[k].min(c[k]);
                cmax[k] = cmax[k].max(c[k]);
            }
        }
        let spans = cmax - cmin;
        let axis = (0..3).max_by(|&a, &b| spans[a].total_cmp(&spans[b])).unwrap();
        if spans[axis] < 1e-12 {
            return node_idx; // degenerate spread; keep as leaf
        }
        self.order[start..start + len]
            .sort_by(|&a, &b| centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]));
        let half = len / 2;
        let left = self.build_node(start, half, centroids);
        let right = self.build_node(start + half, len - half, centroids);
        self.nodes[node_idx as usize].kind = NodeKind::Inner { left, right };
        node_idx
    }

    /// Nearest-hit ray cast. `dir` unit length.
    pub fn ray_cast(&self, origin: Point3, dir: Vec3) -> Option<f64> {
        let mut best = f64::INFINITY;
        self.ray_node(0, origin, dir, &mut best);
        best.is_finite().then_some(best)
    }

    fn ray_node(&self, node: u32, origin: Point3, dir: Vec3, best: &mut f64) {
        let n = &self.nodes[node as usize];
        match n.aabb.ray_interval(origin, dir) {
            Some((t0, t1)) if t1 >= 0.0 && t0 <= *best => {}
            _ => return,
        }
        match n.kind {
            NodeKind::Leaf { start, len } => {
                for i in start..start + len {
                    let tri = self.tri(self.order[i as usize]);
                    if let Some(t) = ray_triangle(origin, dir, &tri) {
                        if t >= 0.0 && t < *best {
                            *best = t;
                        }
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                self.ray_node(left, origin, dir, best);
                self.ray_node(right, origin, dir, best);
            }
        }
    }

    /// Unsigned distance to the surface.
    pub fn distance(&self, p: Point3) -> f64 {
        self.closest_point(p).coords.metric_distance(&p.coords)
    }

    pub fn closest_point(&self, p: Point3) -> Point3 {
        let mut best_d2 = f64::INFINITY;
        let mut best = self.vertices[0];
        self.closest_node(0, p, &mut best_d2, &mut best);
        best
    }

    fn closest_node(&self, node: u32, p: Point3, best_d2: &mut f64, best: &mut Point3) {
        let n = &self.nodes[node as usize];
        if n.aabb.distance_squared_to(p) >= *best_d2 {
            return;
        }
        match n.kind {
            NodeKind::Leaf { start, len } => {
                for i in start..start + len {
                    let tri = self.tri(self.order[i as usize]);
                    let q = closest_point_on_triangle(p, &tri);
                    let d2 = (q - p).norm_squared();
                    if d2 < *best_d2 {
                        *best_d2 = d2;
                        *best = q;
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                // Visit the nearer child first for better pruning.
                let dl = self.nodes[left as usize].aabb.distance_squared_to(p);
                let dr = self.nodes[right as usize].aabb.distance_squared_to(p);
                let (first, second) = if dl <= dr { (left, right) } else { (right, left) };
                self.closest_node(first, p, best_d2, best);
                self.closest_node(second, p, best_d2, best);
            }
        }
    }

    /// Inside test by ray parity; tries several directions until one yields
    /// no near-degenerate triangle hits.
    pub fn contains(&self, p: Point3) -> bool {
        if !self.aabb.contains(p) {
            return false;
        }
        const DIRS: [[f64; 3]; 4] = [
            [0.577_215_664, 0.618_033_988, 0.533_751_168],
            [-0.414_213_562, 0.732_050_807, 0.541_381_265],
            [0.267_949_192, -0.581_138_830, 0.768_457_221],
            [0.707_106_781, 0.267_261_241, -0.654_653_670],
        ];
        for d in DIRS {
            let dir = Vec3::new(d[0], d[1], d[2]).normalize();
            if let Some(parity) = self.parity_along(p, dir) {
                return parity;
            }
        }
        // Every direction was degenerate; fall back to the last computed
        // parity ignoring degeneracy flags.
        let dir = Vec3::new(DIRS[0][0], DIRS[0][1], DIRS[0][2]).normalize();
        let mut count = 0;
        self.count_crossings(0, p, dir, &mut count, &mut false);
        count % 2 == 1
    }

    fn parity_along(&self, p: Point3, dir: Vec3) -> Option<bool> {
        let mut count = 0;
        let mut degenerate = false;
        self.count_crossings(0, p, dir, &mut count, &mut degenerate);
        (!degenerate).then_some(count % 2 == 1)
    }

    fn count_crossings(
        &self,
        node: u32,
        origin: Point3,
        dir: Vec3,
        count: &mut usize,
        degenerate: &mut bool,
    ) {
        let n = &self.nodes[node as usize];
        match n.aabb.ray_interval(origin, dir) {
            Some((_, t1)) if t1 >= 0.0 => {}
            _ => return,
        }
        match n.kind {
            NodeKind::Leaf { start, len } => {
                for i in start..start + len {
                    let tri = self.tri(self.order[i as usize]);
                    match ray_triangle_with_bary(origin, dir, &tri) {
                        TriHit::Hit { t, u, v } => {
                            if t > 1e-12 {
                                const E: f64 = 1e-9;
                                if u < E || v < E || u + v > 1.0 - E {
                                    *degenerate = true;
                                }
                                *count += 1;
                            } else if t > -1e-12 {
                                *degenerate = true; // origin on surface
                            }
                        }
                        TriHit::Parallel => {}
                        TriHit::Miss => {}
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                self.count_crossings(left, origin, dir, count, degenerate);
                self.count_crossings(right, origin, dir, count, degenerate);
            }
        }
    }

    /// Barycentric lattice samples on every triangle, spaced ~`spacing`.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Point3> {
        let mut out = Vec::new();
        for f in &self.faces {
            let (a, b, c) = (
                self.vertices[f[0] as usize],
                self.vertices[f[1] as usize],
                self.vertices[f[2] as usize],
            );
            let max_edge = (b - a).norm().max((c - a).norm()).max((c - b).norm());
            let k = ((max_edge / spacing).ceil() as usize).max(1);
            for i in 0..=k {
                for j in 0..=(k - i) {
                    let (u, v) = (i as f64 / k as f64, j as f64 / k as f64);
                    out.push(Point3::from(
                        a.coords + (b - a) * u + (c - a) * v,
                    ));
                }
            }
        }
        out
    }
}

enum TriHit {
    Hit { t: f64, u: f64, v: f64 },
    Parallel,
    Miss,
}

/// Moeller-Trumbore intersection.
fn ray_triangle_with_bary(origin: Point3, dir: Vec3, tri: &[Point3; 3]) -> TriHit {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return TriHit::Parallel;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return TriHit::Miss;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return TriHit::Miss;
    }
    TriHit::Hit {
        t: e2.dot(&qvec) * inv_det,
        u,
        v,
    }
}

fn ray_triangle(origin: Point3, dir: Vec3, tri: &[Point3; 3]) -> Option<f64> {
    match ray_triangle_with_bary(origin, dir, tri) {
        TriHit::Hit { t, .. } => Some(t),
        _ => None,
    }
}

/// Ericson, Real-Time Collision Detection, 5.1.5.
fn closest_point_on_triangle(p: Point3, tri: &[Point3; 3]) -> Point3 {
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return Point3::from(a.coords + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return Point3::from(a.coords + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return Point3::from(b.coords + (c - b) * w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    Point3::from(a.coords + ab * v + ac * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidTransform, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mesh_box_matches_analytic_box() {
        let mesh = Shape::mesh(TriangleMesh::box_mesh(0.03, 0.04, 0.09)).unwrap();
        let analytic = Shape::box_extents(0.03, 0.04, 0.09).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let p = Point3::new(
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.06..0.06),
            );
            let a = analytic.signed_distance_local(p);
            let m = mesh.signed_distance_local(p);
            assert!((a - m).abs() < 1e-9, "analytic {a} mesh {m} at {p:?}");
        }
    }

    #[test]
    fn mesh_ray_matches_analytic_box() {
        let mesh = Shape::mesh(TriangleMesh::box_mesh(0.03, 0.04, 0.09)).unwrap();
        let analytic = Shape::box_extents(0.03, 0.04, 0.09).unwrap();
        let pose = RigidTransform::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let origin = Point3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(0.1..0.3),
            );
            let dir = (Point3::new(
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.05..0.05),
            ) - origin)
                .normalize();
            let a = analytic.ray_cast(&pose, origin, dir);
            let m = mesh.ray_cast(&pose, origin, dir);
            match (a, m) {
                (Some(ta), Some(tm)) => assert!((ta - tm).abs() < 1e-9),
                (None, None) => {}
                other => panic!("disagreement: {other:?}"),
            }
        }
    }
}
