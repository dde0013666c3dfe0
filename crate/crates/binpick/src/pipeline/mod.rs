//! Picking-episode orchestration.
//!
//! A trial expands the grasp database over the detected objects (Eq.-style
//! frame composition), stages the candidates into quality subsets,
//! filters them by reachability, scores the survivors with the forest
//! minus an occlusion penalty, and executes the best candidate against
//! the oracle once its adjusted score clears the accept threshold. When
//! no candidate clears it, the trial plans another view, merges the new
//! capture and tries again, up to `max_views`; after that the best
//! available candidate is executed as a predicted failure so the
//! confusion table sees those trials too.

mod grasp;
mod metrics;
mod oracle;

pub use grasp::{generate_grasp_database, GraspDatabase, GraspEntry, GraspGenParams};
pub use metrics::{
    compute_metrics, read_records, write_records, ChosenCandidate, EpisodeRecord, FunnelCounts,
    Metrics, PickOutcome, ViewRef,
};
pub use oracle::{oracle_execute, OracleOutcome};

use crate::cloud::PointCloud;
use crate::features::{
    build_swept_volume, featurize, neighbor_points, FeatureParams, FeatureVector, GripperModel,
};
use crate::forest::{RandomForest, TrainingSet};
use crate::fusion::{detect_all, merge_clouds, DetectParams, PoseEstimate, SegmentedCloud};
use crate::geometry::{obbs_intersect, BinBox, Point3, RigidTransform, ShapeCatalog, Vec3};
use crate::occupancy::OccupancyGrid;
use crate::scene::{
    assign_traversability, jitter_neighbors, remove_object, Scene, TraversabilityRule,
};
use crate::seed::derive_seed;
use crate::sensing::{candidate_poses, capture, ReachabilityModel, SensorModel, SensorPose};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene has no objects")]
    EmptyScene,
    #[error("bad quality thresholds: {0}")]
    BadThresholds(String),
    #[error("candidate does not target an existing object")]
    UnknownTarget,
    #[error("unknown shape '{0}' in catalog")]
    UnknownShape(String),
    #[error("no reachable sensor pose candidate")]
    NoSensorPose,
    #[error("bad grasp database: {0}")]
    BadGraspDatabase(String),
    #[error("bad episode record: {0}")]
    BadRecord(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sensing(#[from] crate::sensing::SensingError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Occupancy(#[from] crate::occupancy::OccupancyError),
    #[error(transparent)]
    Forest(#[from] crate::forest::ForestError),
    #[error(transparent)]
    Features(#[from] crate::features::FeaturesError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// One grasp database entry composed with one object pose estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraspCandidate {
    /// World wrist pose: estimate pose composed with the entry offset.
    pub wrist_pose: RigidTransform,
    pub closing_width: f64,
    pub quality: f64,
    pub entry_index: usize,
    /// Index into the estimate list the candidate was expanded from.
    pub estimate_index: usize,
}

#[derive(Clone, Debug)]
pub struct ScoredCandidate {
    pub candidate: GraspCandidate,
    /// Forest output.
    pub success_probability: f64,
    /// Occluded cells inside the sweep.
    pub blue_cells: usize,
    pub neighbor_count: usize,
    /// `success_probability - alpha * blue_cells`.
    pub adjusted_score: f64,
}

/// All d x e wrist poses from the database entries and the estimates.
pub fn expand_candidates(
    db: &GraspDatabase,
    estimates: &[PoseEstimate],
) -> Vec<GraspCandidate> {
    let mut out = Vec::with_capacity(db.len() * estimates.len());
    for (j, est) in estimates.iter().enumerate() {
        for (i, entry) in db.entries.iter().enumerate() {
            out.push(GraspCandidate {
                wrist_pose: est.pose.compose(&entry.offset),
                closing_width: entry.closing_width,
                quality: entry.quality,
                entry_index: i,
                estimate_index: j,
            });
        }
    }
    out
}

/// Strictly decreasing thresholds that split the candidates into `subsets`
/// quality groups of as-equal-as-possible size (ties in the quality index
/// may merge groups).
pub fn equal_count_thresholds(cands: &[GraspCandidate], subsets: usize) -> Vec<f64> {
    if subsets <= 1 || cands.len() < 2 {
        return Vec::new();
    }
    let mut q: Vec<f64> = cands.iter().map(|c| c.quality).collect();
    q.sort_by(|a, b| b.total_cmp(a));
    let n = q.len();
    let mut out: Vec<f64> = Vec::new();
    for k in 1..subsets {
        let pos = (k * n) / subsets;
        if pos == 0 || pos >= n {
            continue;
        }
        let t = (q[pos - 1] + q[pos]) / 2.0;
        if t < q[pos - 1] && out.last().map_or(true, |&prev| t < prev) {
            out.push(t);
        }
    }
    out
}

/// Partition by quality: subset 0 holds `I > t_1`, subset k holds
/// `t_{k+1} < I <= t_k`, the last holds the rest. Exhaustive and disjoint.
pub fn split_by_quality(
    cands: Vec<GraspCandidate>,
    thresholds: &[f64],
) -> Result<Vec<Vec<GraspCandidate>>, PipelineError> {
    for w in thresholds.windows(2) {
        if !(w[1] < w[0]) {
            return Err(PipelineError::BadThresholds(format!(
                "thresholds must be strictly decreasing, got {thresholds:?}"
            )));
        }
    }
    let mut out: Vec<Vec<GraspCandidate>> = (0..=thresholds.len()).map(|_| Vec::new()).collect();
    for c in cands {
        let k = thresholds.iter().position(|&t| c.quality > t);
        let k = k.unwrap_or(thresholds.len());
        out[k].push(c);
    }
    Ok(out)
}

/// Keeps candidates whose wrist is inside the workspace radius band, whose
/// approach axis tilts no more than the limit from straight down, and
/// whose margin-inflated finger sweep clears the bin walls.
pub fn filter_reachable(
    cands: &[GraspCandidate],
    reach: &ReachabilityModel,
    bin: &BinBox,
    gripper: &GripperModel,
    sweep_margin: f64,
) -> Vec<GraspCandidate> {
    let wall_obbs: Vec<(Vec3, RigidTransform)> = bin
        .wall_shapes()
        .into_iter()
        .map(|(shape, pose)| match shape {
            crate::geometry::Shape::Box { extents } => (extents / 2.0, pose),
            _ => unreachable!("bin walls are boxes"),
        })
        .collect();
    let down = Vec3::new(0.0, 0.0, -1.0);
    cands
        .iter()
        .filter(|c| {
            if !reach.wrist_position_reachable(Point3::from(c.wrist_pose.translation())) {
                return false;
            }
            let approach = c.wrist_pose.rotate(Vec3::z());
            if approach.dot(&down).clamp(-1.0, 1.0).acos() > reach.max_approach_tilt {
                return false;
            }
            let sweep = build_swept_volume(&c.wrist_pose, gripper, sweep_margin);
            let clear = sweep.boxes().iter().all(|b| {
                let half = b.extents() / 2.0;
                let pose = sweep
                    .frame()
                    .compose(&RigidTransform::from_translation(b.center().coords));
                wall_obbs
                    .iter()
                    .all(|(w_half, w_pose)| !obbs_intersect(half, &pose, *w_half, w_pose))
            });
            clear
        })
        .cloned()
        .collect()
}

/// Immutable inputs for candidate scoring.
pub struct ScoringInputs<'a> {
    pub forest: &'a RandomForest,
    pub cloud: &'a PointCloud,
    pub grid: &'a OccupancyGrid,
    pub estimates: &'a [PoseEstimate],
    pub catalog: &'a ShapeCatalog,
    pub gripper: &'a GripperModel,
    pub alpha: f64,
    pub target_surface_distance: f64,
    pub sweep_margin: f64,
}

/// Scores candidates (forest probability minus the blue-cell penalty) and
/// sorts them best-first. Pure; scoring order does not matter.
pub fn score_candidates(
    cands: &[GraspCandidate],
    inputs: &ScoringInputs,
) -> Result<Vec<ScoredCandidate>, PipelineError> {
    let params = *inputs.forest.feature_params();
    let mut out: Vec<ScoredCandidate> = cands
        .par_iter()
        .map(|c| -> Result<ScoredCandidate, PipelineError> {
            let est = &inputs.estimates[c.estimate_index];
            let shape = inputs
                .catalog
                .get(&est.shape)
                .ok_or_else(|| PipelineError::UnknownShape(est.shape.clone()))?;
            let sweep = build_swept_volume(&c.wrist_pose, inputs.gripper, inputs.sweep_margin);
            let neighbors = neighbor_points(
                inputs.cloud,
                &sweep,
                shape,
                &est.pose,
                inputs.target_surface_distance,
            );
            let features = featurize(&neighbors, &sweep, &params)?;
            let probability = inputs.forest.predict(&features)?;
            let blue = inputs.grid.classify_occluded(&sweep).blue;
            Ok(ScoredCandidate {
                candidate: c.clone(),
                success_probability: probability,
                blue_cells: blue,
                neighbor_count: neighbors.len(),
                adjusted_score: probability - inputs.alpha * blue as f64,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| {
        b.adjusted_score
            .total_cmp(&a.adjusted_score)
            .then(a.candidate.estimate_index.cmp(&b.candidate.estimate_index))
            .then(a.candidate.entry_index.cmp(&b.candidate.entry_index))
    });
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sensor: SensorModel,
    pub reach: ReachabilityModel,
    pub gripper: GripperModel,
    pub features: FeatureParams,
    pub detect: DetectParams,
    pub polyhedron_faces: usize,
    pub standoffs: Vec<f64>,
    pub grid_cell_size: f64,
    pub grid_min_points: usize,
    pub merge_min_distance: f64,
    pub merge_threshold: f64,
    /// Voxel size for thinning the merged cloud, if any.
    pub dedup_voxel: Option<f64>,
    /// Number of quality subsets (f).
    pub quality_subsets: usize,
    /// Occlusion penalty per blue cell.
    pub alpha: f64,
    pub accept_threshold: f64,
    pub max_views: usize,
    /// Points closer than this to the target surface are not neighbors.
    pub target_surface_distance: f64,
    /// Sensor-noise margin inflating the swept volume for sensing-side
    /// checks (the oracle always sweeps at zero margin).
    pub sweep_margin: f64,
    pub traversability: TraversabilityRule,
    /// Post-pick neighbor jitter amplitude, if enabled.
    pub resettle_jitter: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sensor: SensorModel::default(),
            reach: ReachabilityModel::default(),
            gripper: GripperModel::default(),
            features: FeatureParams::default(),
            detect: DetectParams::default(),
            polyhedron_faces: 20,
            standoffs: vec![0.45, 0.60],
            grid_cell_size: 0.01,
            grid_min_points: 1,
            merge_min_distance: 0.005,
            merge_threshold: 0.1,
            dedup_voxel: Some(0.001),
            quality_subsets: 3,
            alpha: 0.02,
            accept_threshold: 0.5,
            max_views: 3,
            target_surface_distance: 0.003,
            sweep_margin: 0.002,
            traversability: TraversabilityRule::default(),
            resettle_jitter: None,
        }
    }
}

/// Perception state carried across picking trials.
#[derive(Default)]
pub struct PickingState {
    pub prev_segmented: Option<SegmentedCloud>,
    pub prev_estimates: Vec<PoseEstimate>,
    pub prev_grid: Option<OccupancyGrid>,
    pub trial_index: usize,
}

impl PickingState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Everything immutable a trial needs.
pub struct TrialContext<'a> {
    pub catalog: &'a ShapeCatalog,
    pub database: &'a GraspDatabase,
    pub forest: &'a RandomForest,
    pub config: &'a PipelineConfig,
}

/// Runs one picking trial: sense (iteratively), decide, execute, account.
///
/// Returns the trial record and the scene after the pick (the object is
/// removed on success). The state's merged-cloud segments, estimates and
/// grid feed the next trial.
pub fn run_trial(
    ctx: &TrialContext,
    scene: &Scene,
    state: &mut PickingState,
) -> Result<(EpisodeRecord, Scene), PipelineError> {
    if scene.objects.is_empty() {
        return Err(PipelineError::EmptyScene);
    }
    let cfg = ctx.config;
    let reachable_views: Vec<SensorPose> =
        candidate_poses(&scene.bin, cfg.polyhedron_faces, &cfg.standoffs)?
            .into_iter()
            .filter(|c| crate::sensing::reachable(c, &cfg.reach))
            .collect();
    if reachable_views.is_empty() {
        return Err(PipelineError::NoSensorPose);
    }
    let shape_name = scene.objects[0].shape.clone();

    let mut views_used: Vec<SensorPose> = Vec::new();
    let mut view_refs: Vec<ViewRef> = Vec::new();
    let mut view_best_scores: Vec<Option<f64>> = Vec::new();
    let mut grid = OccupancyGrid::for_bin(&scene.bin, cfg.grid_cell_size)?;
    let mut accepted: Option<(ScoredCandidate, usize)> = None;
    // Best candidate seen across all views, with the estimates it indexes.
    let mut fallback: Option<(ScoredCandidate, usize, Vec<PoseEstimate>)> = None;
    let mut accepted_estimates: Vec<PoseEstimate> = Vec::new();
    let mut funnel = FunnelCounts::default();

    for view_idx in 0..cfg.max_views.max(1) {
        let view = if view_idx == 0 {
            match &state.prev_grid {
                Some(prev) => prev.select_view_next(&scene.bin, &cfg.sensor, &reachable_views)?,
                None => grid.select_view_first(&scene.bin, &cfg.sensor, &reachable_views)?,
            }
        } else {
            grid.select_view_next(&scene.bin, &cfg.sensor, &reachable_views)?
        };
        views_used.push(view);
        view_refs.push(ViewRef {
            face_index: view.face_index,
            standoff: view.standoff,
        });

        let capture_seed = derive_seed(
            scene.rng_seed,
            ((state.trial_index as u64) << 8) | view_idx as u64,
        );
        let cloud = capture(scene, ctx.catalog, &cfg.sensor, &view, capture_seed)?;
        let mut merged = match &state.prev_segmented {
            Some(prev) => {
                merge_clouds(prev, &cloud, cfg.merge_min_distance, cfg.merge_threshold).cloud
            }
            None => cloud,
        };
        if let Some(voxel) = cfg.dedup_voxel {
            merged = merged.dedup_voxels(voxel);
        }

        grid = OccupancyGrid::for_bin(&scene.bin, cfg.grid_cell_size)?;
        grid.mark_occupied(&merged, cfg.grid_min_points);
        grid.mark_occluded_multi(&scene.bin, &cfg.sensor, &views_used);

        let detect = detect_all(
            &merged,
            &scene.bin,
            ctx.catalog,
            &shape_name,
            &state.prev_estimates,
            &cfg.detect,
        )?;
        let estimates = detect.estimates.clone();
        state.prev_segmented = Some(detect.segmented);
        state.prev_estimates = detect.estimates;
        view_best_scores.push(None);
        if estimates.is_empty() {
            continue;
        }

        let expanded = expand_candidates(ctx.database, &estimates);
        funnel.expanded = expanded.len();
        funnel.reachable = 0;
        funnel.accepted = 0;
        let thresholds = equal_count_thresholds(&expanded, cfg.quality_subsets);
        let subsets = split_by_quality(expanded, &thresholds)?;
        let scoring = ScoringInputs {
            forest: ctx.forest,
            cloud: &merged,
            grid: &grid,
            estimates: &estimates,
            catalog: ctx.catalog,
            gripper: &cfg.gripper,
            alpha: cfg.alpha,
            target_surface_distance: cfg.target_surface_distance,
            sweep_margin: cfg.sweep_margin,
        };
        for (subset_index, subset) in subsets.into_iter().enumerate() {
            let reachable =
                filter_reachable(&subset, &cfg.reach, &scene.bin, &cfg.gripper, cfg.sweep_margin);
            funnel.reachable += reachable.len();
            if reachable.is_empty() {
                continue;
            }
            let scored = score_candidates(&reachable, &scoring)?;
            funnel.accepted += scored
                .iter()
                .filter(|s| s.adjusted_score >= cfg.accept_threshold)
                .count();
            let top = scored.into_iter().next().expect("nonempty");
            let view_best = view_best_scores.last_mut().expect("pushed this view");
            if view_best.map_or(true, |b| top.adjusted_score > b) {
                *view_best = Some(top.adjusted_score);
            }
            let better = fallback
                .as_ref()
                .map_or(true, |(b, _, _)| top.adjusted_score > b.adjusted_score);
            if better {
                fallback = Some((top.clone(), subset_index, estimates.clone()));
            }
            if top.adjusted_score >= cfg.accept_threshold {
                accepted = Some((top, subset_index));
                accepted_estimates = estimates.clone();
                break;
            }
        }
        if accepted.is_some() {
            break;
        }
    }

    let (chosen, predicted, exec_estimates) = match (accepted, fallback) {
        (Some((c, k)), _) => (Some((c, k)), true, accepted_estimates),
        (None, Some((c, k, ests))) => (Some((c, k)), false, ests),
        (None, None) => (None, false, Vec::new()),
    };

    let mut outcome = None;
    let mut next_scene = scene.clone();
    if let Some((scored, _)) = &chosen {
        let est = &exec_estimates[scored.candidate.estimate_index];
        match oracle_execute(scene, ctx.catalog, est, &scored.candidate, &cfg.gripper) {
            Ok(result) => {
                outcome = Some(PickOutcome {
                    success: result.success,
                    contacted_neighbor: result.contacted_neighbor,
                    target_id: Some(result.target_id),
                });
                if result.success {
                    let vacated = scene
                        .object(result.target_id)
                        .map(|o| Point3::from(o.pose.translation()))
                        .expect("target exists");
                    next_scene = remove_object(scene, result.target_id)?;
                    if let Some(sigma) = cfg.resettle_jitter {
                        next_scene = jitter_neighbors(
                            &next_scene,
                            ctx.catalog,
                            vacated,
                            0.08,
                            sigma,
                            derive_seed(scene.rng_seed, 0xA110 + state.trial_index as u64),
                        )?;
                    }
                    if !next_scene.objects.is_empty() {
                        next_scene =
                            assign_traversability(&next_scene, ctx.catalog, &cfg.traversability)?;
                    }
                    state.prev_estimates.retain(|e| e.id != est.id);
                }
            }
            // A grasp aimed at a phantom estimate grabs air: a failed pick,
            // not a pipeline fault.
            Err(PipelineError::UnknownTarget) => {
                outcome = Some(PickOutcome {
                    success: false,
                    contacted_neighbor: false,
                    target_id: None,
                });
            }
            Err(e) => return Err(e),
        }
    }

    let record = EpisodeRecord {
        trial: state.trial_index,
        views: view_refs,
        view_best_scores,
        predicted_success: predicted,
        chosen: chosen.map(|(s, k)| ChosenCandidate {
            entry_index: s.candidate.entry_index,
            estimate_id: exec_estimates[s.candidate.estimate_index].id,
            quality: s.candidate.quality,
            subset: k,
            success_probability: s.success_probability,
            blue_cells: s.blue_cells,
            adjusted_score: s.adjusted_score,
        }),
        outcome,
        funnel,
    };
    state.prev_grid = Some(grid);
    state.trial_index += 1;
    Ok((record, next_scene))
}

/// One labeled training sample in data-collection mode: on a fresh scene,
/// capture a single view, detect poses, and execute the highest-stability
/// reachable candidate with no contact reasoning and no forest; the label
/// is the oracle outcome.
pub fn collect_sample(
    catalog: &ShapeCatalog,
    db: &GraspDatabase,
    config: &PipelineConfig,
    scene_config: &crate::scene::SceneConfig,
    seed: u64,
) -> Result<Option<(FeatureVector, bool)>, PipelineError> {
    let scene = crate::scene::generate_scene(catalog, scene_config, seed)?;
    let reachable_views: Vec<SensorPose> =
        candidate_poses(&scene.bin, config.polyhedron_faces, &config.standoffs)?
            .into_iter()
            .filter(|c| crate::sensing::reachable(c, &config.reach))
            .collect();
    let grid = OccupancyGrid::for_bin(&scene.bin, config.grid_cell_size)?;
    let view = grid.select_view_first(&scene.bin, &config.sensor, &reachable_views)?;
    let cloud = capture(
        &scene,
        catalog,
        &config.sensor,
        &view,
        derive_seed(seed, 0xC0),
    )?;
    let detect = detect_all(
        &cloud,
        &scene.bin,
        catalog,
        &scene.objects[0].shape,
        &[],
        &config.detect,
    )?;
    if detect.estimates.is_empty() {
        return Ok(None);
    }
    let expanded = expand_candidates(db, &detect.estimates);
    let reachable = filter_reachable(
        &expanded,
        &config.reach,
        &scene.bin,
        &config.gripper,
        config.sweep_margin,
    );
    let Some(best) = reachable
        .iter()
        .max_by(|a, b| a.quality.total_cmp(&b.quality))
    else {
        return Ok(None);
    };
    let est = &detect.estimates[best.estimate_index];
    let shape = catalog
        .get(&est.shape)
        .ok_or_else(|| PipelineError::UnknownShape(est.shape.clone()))?;
    let sweep = build_swept_volume(&best.wrist_pose, &config.gripper, config.sweep_margin);
    let neighbors = neighbor_points(
        &cloud,
        &sweep,
        shape,
        &est.pose,
        config.target_surface_distance,
    );
    let features = featurize(&neighbors, &sweep, &config.features)?;
    let label = match oracle_execute(&scene, catalog, est, best, &config.gripper) {
        Ok(outcome) => outcome.success,
        Err(PipelineError::UnknownTarget) => false,
        Err(e) => return Err(e),
    };
    Ok(Some((features, label)))
}

/// Collects labeled samples until each class holds `per_class` rows
/// (stratified; excess majority-class samples are dropped). Useful for
/// learning-curve experiments where the raw success rate is lopsided.
pub fn collect_balanced_training_set(
    catalog: &ShapeCatalog,
    db: &GraspDatabase,
    config: &PipelineConfig,
    scene_config: &crate::scene::SceneConfig,
    per_class: usize,
    base_seed: u64,
) -> Result<TrainingSet, PipelineError> {
    let mut set = TrainingSet::new(config.features);
    let mut counts = [0usize; 2];
    let mut attempt = 0u64;
    while counts.iter().any(|&c| c < per_class) {
        if attempt > 400 * per_class as u64 + 1000 {
            return Err(PipelineError::BadGraspDatabase(format!(
                "could not balance classes: {} success / {} failure so far",
                counts[1], counts[0]
            )));
        }
        let seed = derive_seed(base_seed, attempt);
        attempt += 1;
        if let Some((features, label)) = collect_sample(catalog, db, config, scene_config, seed)? {
            if counts[label as usize] < per_class {
                counts[label as usize] += 1;
                set.push(features, label)?;
            }
        }
    }
    Ok(set)
}

/// Collects `n` labeled samples over fresh seeded scenes (seeds derived
/// from `base_seed`); scenes yielding no executable candidate are skipped.
pub fn collect_training_set(
    catalog: &ShapeCatalog,
    db: &GraspDatabase,
    config: &PipelineConfig,
    scene_config: &crate::scene::SceneConfig,
    n: usize,
    base_seed: u64,
) -> Result<TrainingSet, PipelineError> {
    let mut set = TrainingSet::new(config.features);
    let mut attempt = 0u64;
    while set.len() < n {
        if attempt > 20 * n as u64 + 100 {
            return Err(PipelineError::BadGraspDatabase(
                "could not collect enough samples; scenes yield no candidates".into(),
            ));
        }
        let seed = derive_seed(base_seed, attempt);
        attempt += 1;
        if let Some((features, label)) = collect_sample(catalog, db, config, scene_config, seed)? {
            set.push(features, label)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::EstimateSource;
    

    fn dummy_estimate(pose: RigidTransform, id: u32) -> PoseEstimate {
        PoseEstimate {
            id,
            shape: "cylinder".into(),
            pose,
            fitness: 0.0,
            source: EstimateSource::New,
        }
    }

    fn db_with_qualities(qualities: &[f64]) -> GraspDatabase {
        GraspDatabase {
            shape: "cylinder".into(),
            entries: qualities
                .iter()
                .map(|&q| GraspEntry {
                    offset: RigidTransform::identity(),
                    closing_width: 0.03,
                    quality: q,
                })
                .collect(),
        }
    }

    #[test]
    fn expand_identity_pose_yields_db_entry() {
        let offset = RigidTransform::from_rotation_z(0.4)
            .compose(&RigidTransform::from_translation(Vec3::new(0.01, 0.0, 0.02)));
        let db = GraspDatabase {
            shape: "cylinder".into(),
            entries: vec![GraspEntry {
                offset,
                closing_width: 0.03,
                quality: 1.0,
            }],
        };
        let est = [dummy_estimate(RigidTransform::identity(), 0)];
        let cands = expand_candidates(&db, &est);
        assert_eq!(cands.len(), 1);
        assert!(cands[0].wrist_pose.translation_distance_to(&offset) < 1e-15);
        assert!(cands[0].wrist_pose.rotation_angle_to(&offset) < 1e-15);
    }

    #[test]
    fn expand_counts_and_composition_match_homogeneous_oracle() {
        use nalgebra::Matrix4;
        let mut entries = Vec::new();
        for i in 0..12 {
            entries.push(GraspEntry {
                offset: RigidTransform::from_axis_angle(
                    Vec3::new(1.0, 0.3 * i as f64, -0.2),
                    0.17 * i as f64,
                )
                .compose(&RigidTransform::from_translation(Vec3::new(
                    0.01 * i as f64,
                    -0.004 * i as f64,
                    0.02,
                ))),
                closing_width: 0.03,
                quality: i as f64,
            });
        }
        let db = GraspDatabase {
            shape: "cylinder".into(),
            entries,
        };
        let estimates: Vec<PoseEstimate> = (0..9)
            .map(|j| {
                dummy_estimate(
                    RigidTransform::from_rotation_z(0.3 * j as f64).compose(
                        &RigidTransform::from_translation(Vec3::new(
                            0.02 * j as f64,
                            0.01,
                            0.015,
                        )),
                    ),
                    j as u32,
                )
            })
            .collect();
        let cands = expand_candidates(&db, &estimates);
        assert_eq!(cands.len(), 12 * 9);
        for c in &cands {
            let est = &estimates[c.estimate_index];
            let entry = &db.entries[c.entry_index];
            let me = Matrix4::from_fn(|r, col| est.pose.to_rows()[r][col]);
            let mo = Matrix4::from_fn(|r, col| entry.offset.to_rows()[r][col]);
            let expect = me * mo;
            let got = c.wrist_pose.to_rows();
            for r in 0..4 {
                for col in 0..4 {
                    assert!((got[r][col] - expect[(r, col)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quality_split_is_a_partition_with_equal_thirds() {
        let qualities: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let db = db_with_qualities(&qualities);
        let est = [dummy_estimate(RigidTransform::identity(), 0)];
        let cands = expand_candidates(&db, &est);
        let thresholds = equal_count_thresholds(&cands, 3);
        assert_eq!(thresholds.len(), 2);
        let subsets = split_by_quality(cands.clone(), &thresholds).unwrap();
        assert_eq!(subsets.len(), 3);
        let sizes: Vec<usize> = subsets.iter().map(Vec::len).collect();
        for &s in &sizes {
            assert!((s as i64 - 10).abs() <= 1, "sizes {sizes:?}");
        }
        // Exhaustive and disjoint: counts add up and every entry index
        // appears exactly once.
        let mut seen: Vec<usize> = subsets
            .iter()
            .flat_map(|s| s.iter().map(|c| c.entry_index))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
        // Subset 0 holds the best qualities.
        assert!(subsets[0].iter().all(|c| c.quality >= 20.0));

        // f = 1: single subset equals the input.
        let single = split_by_quality(cands.clone(), &[]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].len(), cands.len());

        // Non-decreasing thresholds rejected.
        assert!(matches!(
            split_by_quality(cands, &[1.0, 1.0]),
            Err(PipelineError::BadThresholds(_))
        ));
    }

    fn bin() -> BinBox {
        BinBox::new([0.3, 0.3, 0.1], 0.01, RigidTransform::identity()).unwrap()
    }

    fn vertical_candidate_at(x: f64, y: f64, z: f64) -> GraspCandidate {
        GraspCandidate {
            wrist_pose: RigidTransform::from_translation(Vec3::new(x, y, z)).compose(
                &RigidTransform::from_axis_angle(Vec3::x(), std::f64::consts::PI),
            ),
            closing_width: 0.03,
            quality: 1.0,
            entry_index: 0,
            estimate_index: 0,
        }
    }

    #[test]
    fn reachability_filter_cases() {
        let reach = ReachabilityModel::default();
        let gripper = GripperModel::default();
        // Centered vertical grasp: kept.
        let center = vertical_candidate_at(0.0, 0.0, 0.05);
        // Wrist below the bin bottom: sweep hits the floor slab.
        let below = vertical_candidate_at(0.0, 0.0, -0.05);
        // Approach pointing up: tilt 180 degrees.
        let upward = GraspCandidate {
            wrist_pose: RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.05)),
            ..vertical_candidate_at(0.0, 0.0, 0.05)
        };
        let kept = filter_reachable(
            &[center.clone(), below, upward],
            &reach,
            &bin(),
            &gripper,
            0.002,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].entry_index, center.entry_index);
    }

    #[test]
    fn wall_brush_within_margin_removed() {
        let reach = ReachabilityModel::default();
        let gripper = GripperModel::default();
        let margin = 0.002;
        // Sweep spans y in [-40, 40] mm around the wrist; +y wall face is
        // at y = 0.15. Closing along world y.
        let near = vertical_candidate_at(0.0, 0.15 - 0.040 - 0.001, 0.05); // 1 mm gap < margin
        let clear = vertical_candidate_at(0.0, 0.15 - 0.040 - 0.004, 0.05); // 4 mm gap > margin
        let kept = filter_reachable(&[near.clone(), clear.clone()], &reach, &bin(), &gripper, margin);
        assert_eq!(kept.len(), 1);
        assert!(
            (kept[0].wrist_pose.translation() - clear.wrist_pose.translation()).norm() < 1e-12
        );
        // Signed-distance oracle: the near candidate's physical sweep is
        // within the margin of the wall, the clear one is beyond it.
        let walls = bin().wall_shapes();
        let gap = |c: &GraspCandidate| {
            let sweep = build_swept_volume(&c.wrist_pose, &gripper, 0.0);
            let mut min_d = f64::INFINITY;
            for b in sweep.boxes() {
                for &sx in &[b.min.x, b.max.x] {
                    for &sy in &[b.min.y, b.max.y] {
                        for &sz in &[b.min.z, b.max.z] {
                            let p = sweep.frame().apply(Point3::new(sx, sy, sz));
                            for (shape, pose) in &walls {
                                min_d = min_d.min(shape.signed_distance(pose, p));
                            }
                        }
                    }
                }
            }
            min_d
        };
        assert!(gap(&near) < margin);
        assert!(gap(&clear) > margin);
    }

    /// Forest whose every leaf outputs `p`, over the default 25-bin params.
    fn constant_forest(p: f64) -> RandomForest {
        let json = serde_json::json!({
            "version": 1,
            "params": crate::forest::ForestParams::default(),
            "feature_params": crate::features::FeatureParams::default(),
            "seed": 0,
            "trees": [{ "nodes": [{ "kind": "leaf", "success_rate": p }] }]
        });
        RandomForest::from_json(&json.to_string()).unwrap()
    }

    #[test]
    fn blue_cell_penalty_arithmetic() {
        use crate::occupancy::CellState;
        let forest = constant_forest(0.8);
        let bin = bin();
        let mut grid = OccupancyGrid::for_bin(&bin, 0.01).unwrap();
        for i in grid.indices().collect::<Vec<_>>() {
            grid.set_state(i, CellState::Free);
        }
        // Two well-separated candidates; mark exactly 5 occluded cells
        // inside candidate B's sweep and none in A's.
        let cand_a = vertical_candidate_at(-0.08, 0.0, 0.05);
        let cand_b = vertical_candidate_at(0.08, 0.0, 0.05);
        let sweep_b = build_swept_volume(&cand_b.wrist_pose, &GripperModel::default(), 0.002);
        let mut marked = 0;
        for i in grid.indices().collect::<Vec<_>>() {
            if marked < 5 && sweep_b.contains_world(grid.cell_center_world(i)) {
                grid.set_state(i, CellState::Occluded);
                marked += 1;
            }
        }
        assert_eq!(marked, 5);
        let estimates = [dummy_estimate(
            RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.04)),
            0,
        )];
        let inputs = ScoringInputs {
            forest: &forest,
            cloud: &PointCloud::default(),
            grid: &grid,
            estimates: &estimates,
            catalog: &ShapeCatalog::builtin(),
            gripper: &GripperModel::default(),
            alpha: 0.02,
            target_surface_distance: 0.003,
            sweep_margin: 0.002,
        };
        let scored = score_candidates(&[cand_a, cand_b], &inputs).unwrap();
        // Sorted best-first: the clean candidate wins.
        assert_eq!(scored[0].blue_cells, 0);
        assert_eq!(scored[0].adjusted_score, 0.8);
        assert_eq!(scored[1].blue_cells, 5);
        assert!((scored[1].adjusted_score - 0.70).abs() < 1e-12);
        // More occlusion in the sweep strictly lowers the score.
        assert!(scored[1].adjusted_score < scored[0].adjusted_score);
    }
}
