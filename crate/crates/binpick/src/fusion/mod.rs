//! Multi-view cloud fusion and object pose detection.
//!
//! The previous capture's segments are merged into the current cloud when
//! they still agree with it: every current point votes near/far for the
//! segment owning its nearest previous point, and a segment is merged iff
//! far/near stays below a threshold (a vanished object turns its old
//! segment's votes far, so stale geometry is dropped). The merged cloud is
//! then re-segmented by Euclidean clustering; per segment, a previous pose
//! estimate is reused when the segment still lies on that pose's surface,
//! otherwise PCA + ICP runs, in parallel across segments.

mod icp;

pub use icp::{icp_refine, mean_surface_distance, pca_init_hypotheses, IcpParams, IcpResult};

use crate::cloud::{PointCloud, VoxelIndex};
use crate::geometry::{Aabb, BinBox, Point3, RigidTransform, Shape, ShapeCatalog};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cloud is empty after bin-surface removal")]
    EmptyCloud,
    #[error("segment has too few points for pose estimation ({0})")]
    TooFewPoints(usize),
    #[error("segment is degenerate (rank-deficient covariance)")]
    DegenerateSegment,
    #[error("unknown shape '{0}' in catalog")]
    UnknownShape(String),
}

/// A cloud plus disjoint index sets for its object segments.
#[derive(Clone, Debug, Default)]
pub struct SegmentedCloud {
    pub cloud: PointCloud,
    pub segments: Vec<Vec<u32>>,
    pub bboxes: Vec<Aabb>,
}

impl SegmentedCloud {
    pub fn segment_points(&self, index: usize) -> Vec<Point3> {
        self.segments[index]
            .iter()
            .map(|&i| self.cloud.points[i as usize])
            .collect()
    }
}

/// Near/far vote counts and the merge decision for one previous segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentMergeDecision {
    pub near: usize,
    pub far: usize,
    pub merged: bool,
}

#[derive(Clone, Debug)]
pub struct MergeOutcome {
    /// Current points first, then the points of every merged segment.
    pub cloud: PointCloud,
    pub decisions: Vec<SegmentMergeDecision>,
}

/// Merges still-valid previous segments into the current cloud.
///
/// For every current point the nearest previous point is found; the
/// segment owning that point gains a near vote if the distance is below
/// `min_distance`, a far vote otherwise. Segment `i` is merged iff
/// `far(i) / near(i) < threshold`; a segment with no near votes is never
/// merged.
pub fn merge_clouds(
    prev: &SegmentedCloud,
    current: &PointCloud,
    min_distance: f64,
    threshold: f64,
) -> MergeOutcome {
    let s = prev.segments.len();
    let mut owner: Vec<Option<u32>> = vec![None; prev.cloud.len()];
    for (si, seg) in prev.segments.iter().enumerate() {
        for &i in seg {
            owner[i as usize] = Some(si as u32);
        }
    }
    let mut near = vec![0usize; s];
    let mut far = vec![0usize; s];
    if !prev.cloud.is_empty() {
        let index = VoxelIndex::build(&prev.cloud.points, min_distance.max(1e-6));
        for &p in &current.points {
            let Some((nearest, dist)) = index.nearest(p) else {
                continue;
            };
            if let Some(si) = owner[nearest] {
                if dist < min_distance {
                    near[si as usize] += 1;
                } else {
                    far[si as usize] += 1;
                }
            }
        }
    }

    let mut cloud = current.clone();
    let decisions: Vec<SegmentMergeDecision> = (0..s)
        .map(|i| {
            let merged = near[i] > 0 && (far[i] as f64 / near[i] as f64) < threshold;
            if merged {
                cloud
                    .points
                    .extend(prev.segments[i].iter().map(|&j| prev.cloud.points[j as usize]));
            }
            SegmentMergeDecision {
                near: near[i],
                far: far[i],
                merged,
            }
        })
        .collect();
    MergeOutcome { cloud, decisions }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    /// Euclidean clustering distance.
    pub cluster_tolerance: f64,
    pub min_cluster_size: usize,
    /// Largest-first cap on the number of kept segments.
    pub max_segments: usize,
    /// Points within this distance of the bin floor or walls are removed
    /// before clustering.
    pub bin_surface_margin: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            cluster_tolerance: 0.01,
            min_cluster_size: 30,
            max_segments: 8,
            bin_surface_margin: 0.005,
        }
    }
}

/// Euclidean connected-component segmentation after bin-surface removal.
pub fn segment(
    cloud: &PointCloud,
    bin: &BinBox,
    params: &SegmentParams,
) -> Result<SegmentedCloud, FusionError> {
    let walls = bin.wall_shapes();
    let kept: Vec<u32> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, &p)| {
            walls
                .iter()
                .all(|(s, pose)| s.signed_distance(pose, p).abs() > params.bin_surface_margin)
        })
        .map(|(i, _)| i as u32)
        .collect();
    if kept.is_empty() {
        return Err(FusionError::EmptyCloud);
    }

    let kept_points: Vec<Point3> = kept.iter().map(|&i| cloud.points[i as usize]).collect();
    let index = VoxelIndex::build(&kept_points, params.cluster_tolerance.max(1e-6));
    let mut visited = vec![false; kept_points.len()];
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for start in 0..kept_points.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = vec![start];
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(kept[i]);
            for j in index.within(kept_points[i], params.cluster_tolerance) {
                if !visited[j] {
                    visited[j] = true;
                    queue.push(j);
                }
            }
        }
        if members.len() >= params.min_cluster_size {
            members.sort_unstable();
            clusters.push(members);
        }
    }
    // Largest first; ties by first point index for determinism.
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    clusters.truncate(params.max_segments);

    let bboxes = clusters
        .iter()
        .map(|seg| {
            Aabb::from_points(seg.iter().map(|&i| &cloud.points[i as usize]))
                .expect("cluster nonempty")
        })
        .collect();
    Ok(SegmentedCloud {
        cloud: cloud.clone(),
        segments: clusters,
        bboxes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    New,
    Reused,
}

/// One detected object hypothesis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseEstimate {
    /// Tracking id, carried across trials when the estimate is reused.
    pub id: u32,
    pub shape: String,
    pub pose: RigidTransform,
    /// Mean point-to-surface residual, meters.
    pub fitness: f64,
    pub source: EstimateSource,
}

impl PoseEstimate {
    pub fn low_confidence(&self, max_fitness: f64) -> bool {
        self.fitness > max_fitness
    }
}

/// All refined pose hypotheses for a segment, best fitness first.
///
/// Symmetric or flat partial views can fit several poses equally well
/// (an end-on cylinder cap fits a cylinder hanging below or above the
/// disc); callers with scene knowledge pick among these.
pub fn estimate_pose_candidates(
    points: &[Point3],
    shape_name: &str,
    shape: &Shape,
    init: Option<&RigidTransform>,
    params: &IcpParams,
) -> Result<Vec<PoseEstimate>, FusionError> {
    if points.len() < 10 {
        return Err(FusionError::TooFewPoints(points.len()));
    }
    let inits: Vec<RigidTransform> = match init {
        Some(t) => vec![*t],
        None => pca_init_hypotheses(points, shape)?,
    };
    let mut results: Vec<IcpResult> = inits
        .iter()
        .map(|t| icp_refine(points, shape, t, params))
        .collect();
    results.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    Ok(results
        .into_iter()
        .map(|r| PoseEstimate {
            id: 0,
            shape: shape_name.to_string(),
            pose: r.pose,
            fitness: r.fitness,
            source: EstimateSource::New,
        })
        .collect())
}

/// PCA-initialized ICP pose fit (or plain ICP from `init` when given);
/// returns the best hypothesis by fitness.
pub fn estimate_pose(
    points: &[Point3],
    shape_name: &str,
    shape: &Shape,
    init: Option<&RigidTransform>,
    params: &IcpParams,
) -> Result<PoseEstimate, FusionError> {
    Ok(estimate_pose_candidates(points, shape_name, shape, init, params)?
        .into_iter()
        .next()
        .expect("at least one hypothesis"))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    pub segment: SegmentParams,
    pub icp: IcpParams,
    /// Mean point-to-surface distance below which a previous estimate is
    /// reused without running ICP.
    pub reuse_distance: f64,
    /// Relative tolerance of the bounding-box size gate.
    pub bbox_tolerance: f64,
    /// Absolute slack added to the size gate (sensor noise).
    pub bbox_slack: f64,
    /// Objects rest on the bin floor; pose hypotheses whose lowest point
    /// is farther than this from z = 0 are discarded.
    pub resting_band: f64,
    pub parallelism: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            segment: SegmentParams::default(),
            icp: IcpParams::default(),
            reuse_distance: 0.005,
            bbox_tolerance: 0.3,
            bbox_slack: 0.005,
            resting_band: 0.02,
            parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DetectOutcome {
    pub estimates: Vec<PoseEstimate>,
    pub segmented: SegmentedCloud,
    /// Number of segments that actually ran ICP (not reused, not gated).
    pub icp_runs: usize,
}

/// Extents of the point set along its own principal axes, sorted
/// descending; orientation-independent, unlike a world-aligned box.
fn pca_extents(points: &[Point3]) -> [f64; 3] {
    let n = points.len() as f64;
    let centroid = points.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = nalgebra::linalg::SymmetricEigen::new(cov);
    let mut extents = [0.0f64; 3];
    for k in 0..3 {
        let axis: nalgebra::Vector3<f64> = eig.eigenvectors.column(k).into();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            let v = axis.dot(&(p.coords - centroid));
            lo = lo.min(v);
            hi = hi.max(v);
        }
        extents[k] = hi - lo;
    }
    extents.sort_by(|a, b| b.total_cmp(a));
    extents
}

/// Every object lies on the bin floor; a pose whose lowest point is far
/// from the floor (or whose center left the bin) is a degenerate fit of a
/// symmetric partial view and gets discarded.
fn resting_plausible(shape: &Shape, pose: &RigidTransform, bin: &BinBox, band: f64) -> bool {
    let aabb = shape.aabb_local();
    let mut min_z = f64::INFINITY;
    for &cx in &[aabb.min.x, aabb.max.x] {
        for &cy in &[aabb.min.y, aabb.max.y] {
            for &cz in &[aabb.min.z, aabb.max.z] {
                min_z = min_z.min(pose.apply(Point3::new(cx, cy, cz)).z);
            }
        }
    }
    min_z.abs() <= band && bin.contains_interior(Point3::from(pose.translation()))
}

/// Segment extents (along the segment's principal axes) must be coverable
/// by one object: no sorted extent may exceed the object's matching sorted
/// extent within tolerance, which skips segments spanning two touching
/// objects. A partial view never shows more than the full object but may
/// show much less, so the only lower bound is that the largest extent
/// reaches the object's smallest dimension.
fn bbox_gate(points: &[Point3], shape: &Shape, tolerance: f64, slack: f64) -> bool {
    let s = pca_extents(points);
    let e = shape.aabb_local().extents();
    let mut o = [e.x, e.y, e.z];
    o.sort_by(|a, b| b.total_cmp(a));
    (0..3).all(|k| s[k] <= o[k] * (1.0 + tolerance) + slack)
        && s[0] >= o[2] * (1.0 - tolerance) - slack
}

/// Segments the merged cloud and produces one pose estimate per segment
/// that passes the size gate, reusing previous estimates where the cloud
/// did not change. Segments are dispatched across `parallelism` workers;
/// the result is order-normalized by segment index and independent of the
/// worker count.
pub fn detect_all(
    merged: &PointCloud,
    bin: &BinBox,
    catalog: &ShapeCatalog,
    shape_name: &str,
    prev_estimates: &[PoseEstimate],
    params: &DetectParams,
) -> Result<DetectOutcome, FusionError> {
    let shape = catalog
        .get(shape_name)
        .ok_or_else(|| FusionError::UnknownShape(shape_name.to_string()))?;
    let segmented = match segment(merged, bin, &params.segment) {
        Ok(s) => s,
        Err(FusionError::EmptyCloud) => return Ok(DetectOutcome::default()),
        Err(e) => return Err(e),
    };

    let job = |si: usize| -> Option<(PoseEstimate, bool)> {
        let points = segmented.segment_points(si);
        // Reuse pass: the segment still lies on a previously estimated
        // surface.
        let mut best_prev: Option<(usize, f64)> = None;
        for (pi, prev) in prev_estimates.iter().enumerate() {
            let d = mean_surface_distance(&points, shape, &prev.pose, 200);
            if d < params.reuse_distance && best_prev.map_or(true, |(_, bd)| d < bd) {
                best_prev = Some((pi, d));
            }
        }
        if let Some((pi, d)) = best_prev {
            let prev = &prev_estimates[pi];
            return Some((
                PoseEstimate {
                    id: prev.id,
                    shape: prev.shape.clone(),
                    pose: prev.pose,
                    fitness: d,
                    source: EstimateSource::Reused,
                },
                false,
            ));
        }
        if !bbox_gate(&points, shape, params.bbox_tolerance, params.bbox_slack) {
            return None;
        }
        estimate_pose_candidates(&points, shape_name, shape, None, &params.icp)
            .ok()
            .and_then(|hyps| {
                hyps.into_iter()
                    .find(|e| resting_plausible(shape, &e.pose, bin, params.resting_band))
            })
            .map(|e| (e, true))
    };

    let n = segmented.segments.len();
    let results: Vec<Option<(PoseEstimate, bool)>> = if params.parallelism <= 1 {
        (0..n).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(params.parallelism)
            .build()
            .expect("thread pool");
        pool.install(|| {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(job).collect()
        })
    };

    let mut next_id = prev_estimates.iter().map(|e| e.id + 1).max().unwrap_or(0);
    let mut estimates = Vec::new();
    let mut icp_runs = 0usize;
    for r in results.into_iter().flatten() {
        let (mut est, ran_icp) = r;
        if ran_icp {
            est.id = next_id;
            next_id += 1;
            icp_runs += 1;
        }
        estimates.push(est);
    }
    Ok(DetectOutcome {
        estimates,
        segmented,
        icp_runs,
    })
}
