//! Point clouds and the voxel-hash spatial index behind nearest-neighbor
//! and radius queries (cloud merging, clustering).

use crate::geometry::{Aabb, Point3};
use std::collections::HashMap;

/// An ordered set of 3-D points, world frame unless stated otherwise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(self.points.iter())
    }

    /// Voxel thinning: keeps the first point of every occupied voxel.
    /// Preserves input order of the survivors.
    pub fn dedup_voxels(&self, voxel: f64) -> PointCloud {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.points.len());
        for &p in &self.points {
            if seen.insert(voxel_key(p, voxel)) {
                out.push(p);
            }
        }
        PointCloud::new(out)
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<T: IntoIterator<Item = Point3>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

fn voxel_key(p: Point3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Uniform voxel hash over a fixed point set; exact nearest-neighbor and
/// radius queries via expanding shell search.
pub struct VoxelIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl<'a> VoxelIndex<'a> {
    pub fn build(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, &p) in points.iter().enumerate() {
            buckets.entry(voxel_key(p, cell)).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and distance of the nearest point to `q`. Exact.
    pub fn nearest(&self, q: Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy, cz) = voxel_key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        // Any point in a cell at Chebyshev ring r is at least (r-1)*cell
        // away from q, so a candidate at or below that bound is final.
        const MAX_RING: i64 = 64;
        for ring in 0.. {
            if let Some((_, d)) = best {
                if d <= (ring - 1).max(0) as f64 * self.cell {
                    return best;
                }
            }
            if ring > MAX_RING {
                break; // query far from every point; scan linearly
            }
            self.for_ring_cells(cx, cy, cz, ring, |key| {
                if let Some(idxs) = self.buckets.get(&key) {
                    for &i in idxs {
                        let d = (self.points[i as usize] - q).norm();
                        if best.map_or(true, |(_, bd)| d < bd) {
                            best = Some((i as usize, d));
                        }
                    }
                }
            });
        }
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Indices of all points within `radius` of `q`.
    pub fn within(&self, q: Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let span = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = voxel_key(q, self.cell);
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    if let Some(idxs) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in idxs {
                            if (self.points[i as usize] - q).norm_squared() <= r2 {
                                out.push(i as usize);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn for_ring_cells(
        &self,
        cx: i64,
        cy: i64,
        cz: i64,
        ring: i64,
        mut f: impl FnMut((i64, i64, i64)),
    ) {
        if ring == 0 {
            f((cx, cy, cz));
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) == ring {
                        f((cx + dx, cy + dy, cz + dz));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.0..0.1),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = random_points(500, 7);
        let index = VoxelIndex::build(&pts, 0.02);
        let queries = random_points(200, 8);
        for q in queries {
            let (i, d) = index.nearest(q).unwrap();
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(j, p)| (j, (p - q).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!((d - bd).abs() < 1e-12, "dist mismatch");
            // Index may differ only on exact ties.
            if i != bi {
                assert!((d - bd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn within_matches_brute_force() {
        let pts = random_points(400, 9);
        let index = VoxelIndex::build(&pts, 0.015);
        for q in random_points(50, 10) {
            let r = 0.03;
            let mut got = index.within(q, r);
            got.sort_unstable();
            let mut expect: Vec<usize> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - q).norm() <= r)
                .map(|(i, _)| i)
                .collect();
            expect.sort_unstable();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn dedup_keeps_first() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0001, 0.0001, 0.0001),
            Point3::new(0.0002, 0.0002, 0.0002), // same 1 mm voxel
            Point3::new(0.0015, 0.0001, 0.0001), // next voxel
        ]);
        let out = cloud.dedup_voxels(0.001);
        assert_eq!(out.len(), 2);
        assert_eq!(out.points[0], cloud.points[0]);
    }
}
