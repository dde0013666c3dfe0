use crate::config::{effective_threads, RunConfig};
use anyhow::{anyhow, Context};
use binpick::forest::{self, RandomForest, TrainingSet};
use binpick::fusion::{detect_all, DetectParams, PoseEstimate};
use binpick::geometry::ShapeCatalog;
use binpick::occupancy::OccupancyGrid;
use binpick::pipeline::{
    collect_training_set, compute_metrics, generate_grasp_database, read_records, run_trial,
    write_records, EpisodeRecord, PickingState, TrialContext,
};
use binpick::scene::{generate_scene, Scene};
use binpick::sensing::{candidate_poses, reachable, SensorPose};
use binpick::{ply, PointCloud};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

pub enum CommandError {
    Config(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CommandError {
    fn from(e: E) -> Self {
        CommandError::Runtime(e.into())
    }
}

type CmdResult = Result<(), CommandError>;

fn load_scene(path: &Path) -> Result<Scene, CommandError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scene {}", path.display()))?;
    Ok(Scene::from_json(&text).context("parsing scene json")?)
}

fn load_model(config: &RunConfig, path: &Path) -> Result<RandomForest, CommandError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    let model = RandomForest::from_json(&text)?;
    if model.feature_params() != &config.pipeline.features {
        return Err(CommandError::Config(
            "model feature params do not match the configuration".into(),
        ));
    }
    Ok(model)
}

fn sensor_candidates(
    config: &RunConfig,
    scene: &Scene,
) -> Result<Vec<SensorPose>, CommandError> {
    Ok(candidate_poses(
        &scene.bin,
        config.pipeline.polyhedron_faces,
        &config.pipeline.standoffs,
    )?)
}

pub fn gen_scene(
    config: &RunConfig,
    seed: Option<u64>,
    count: Option<usize>,
    shape: Option<String>,
    out: &Path,
) -> CmdResult {
    let mut scene_config = config.scene.clone();
    if let Some(count) = count {
        scene_config.object_count = count;
    }
    if let Some(shape) = shape {
        scene_config.shape = shape;
    }
    let catalog = ShapeCatalog::builtin();
    let seed = seed.unwrap_or(config.seeds.scene);
    let scene = generate_scene(&catalog, &scene_config, seed)?;
    std::fs::write(out, scene.to_json()?).context("writing scene")?;
    println!(
        "scene: {} objects of '{}' (seed {seed}) -> {}",
        scene.objects.len(),
        scene_config.shape,
        out.display()
    );
    Ok(())
}

pub fn capture(
    config: &RunConfig,
    scene_path: &Path,
    pose_index: usize,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let scene = load_scene(scene_path)?;
    let catalog = ShapeCatalog::builtin();
    let candidates = sensor_candidates(config, &scene)?;
    let pose = candidates.get(pose_index).ok_or_else(|| {
        CommandError::Config(format!(
            "pose index {pose_index} out of range (have {})",
            candidates.len()
        ))
    })?;
    let seed = seed.unwrap_or(config.seeds.capture);
    let cloud = binpick::sensing::capture(&scene, &catalog, &config.pipeline.sensor, pose, seed)?;
    ply::write_point_cloud(out, &cloud.points)?;
    println!(
        "captured {} points from face {} standoff {} -> {}",
        cloud.len(),
        pose.face_index,
        pose.standoff,
        out.display()
    );
    Ok(())
}

pub fn plan_view(
    config: &RunConfig,
    scene_path: &Path,
    grid_path: Option<&Path>,
    out: Option<&Path>,
) -> CmdResult {
    let scene = load_scene(scene_path)?;
    let reachable_views: Vec<SensorPose> = sensor_candidates(config, &scene)?
        .into_iter()
        .filter(|c| reachable(c, &config.pipeline.reach))
        .collect();
    let cell = config.pipeline.grid_cell_size;
    let (grid, rule) = match grid_path {
        Some(path) => {
            let file = BufReader::new(File::open(path).context("opening grid csv")?);
            (OccupancyGrid::read_csv(&scene.bin, cell, file)?, "next")
        }
        None => (OccupancyGrid::for_bin(&scene.bin, cell)?, "first"),
    };
    let chosen = if grid_path.is_some() {
        grid.select_view_next(&scene.bin, &config.pipeline.sensor, &reachable_views)?
    } else {
        grid.select_view_first(&scene.bin, &config.pipeline.sensor, &reachable_views)?
    };
    let json = serde_json::to_string_pretty(&chosen)?;
    match out {
        Some(path) => std::fs::write(path, &json).context("writing pose")?,
        None => println!("{json}"),
    }
    eprintln!(
        "selected ({rule} rule): face {} standoff {}",
        chosen.face_index, chosen.standoff
    );
    Ok(())
}

pub fn detect(
    config: &RunConfig,
    scene_path: &Path,
    cloud_path: &Path,
    prev_path: Option<&Path>,
    threads: Option<usize>,
    out: &Path,
) -> CmdResult {
    let scene = load_scene(scene_path)?;
    let catalog = ShapeCatalog::builtin();
    let cloud = PointCloud::new(ply::read_point_cloud(cloud_path)?);
    let prev: Vec<PoseEstimate> = match prev_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).context("reading previous estimates")?;
            serde_json::from_str(&text).context("parsing previous estimates")?
        }
        None => Vec::new(),
    };
    let shape_name = scene
        .objects
        .first()
        .map(|o| o.shape.clone())
        .ok_or_else(|| CommandError::Config("scene has no objects".into()))?;
    let params = DetectParams {
        parallelism: effective_threads(threads.unwrap_or(config.pipeline.detect.parallelism)),
        ..config.pipeline.detect
    };
    let outcome = detect_all(&cloud, &scene.bin, &catalog, &shape_name, &prev, &params)?;
    std::fs::write(out, serde_json::to_string_pretty(&outcome.estimates)?)
        .context("writing estimates")?;
    println!(
        "{} segments, {} estimates ({} via icp, {} reused) -> {}",
        outcome.segmented.segments.len(),
        outcome.estimates.len(),
        outcome.icp_runs,
        outcome.estimates.len() - outcome.icp_runs,
        out.display()
    );
    Ok(())
}

pub fn collect(config: &RunConfig, trials: usize, seed: Option<u64>, out: &Path) -> CmdResult {
    let catalog = ShapeCatalog::builtin();
    let shape = catalog
        .get(&config.scene.shape)
        .ok_or_else(|| CommandError::Config(format!("unknown shape '{}'", config.scene.shape)))?;
    let db = generate_grasp_database(
        &config.scene.shape,
        shape,
        &config.pipeline.gripper,
        &config.grasp_gen,
    )?;
    let seed = seed.unwrap_or(config.seeds.collect);
    let set = if trials == 0 {
        TrainingSet::new(config.pipeline.features)
    } else {
        collect_training_set(&catalog, &db, &config.pipeline, &config.scene, trials, seed)?
    };
    let file = BufWriter::new(File::create(out).context("creating csv")?);
    set.write_csv(file)?;
    let (successes, failures) = set.class_counts();
    println!(
        "collected {} samples (seed {seed}): {successes} success / {failures} failure -> {}",
        set.len(),
        out.display()
    );
    Ok(())
}

pub fn train(config: &RunConfig, data: &Path, seed: Option<u64>, out: &Path) -> CmdResult {
    let file = BufReader::new(File::open(data).context("opening training csv")?);
    let set = TrainingSet::read_csv(file, config.pipeline.features)?;
    let seed = seed.unwrap_or(config.seeds.train);
    let model = forest::train(&set, &config.forest, seed)?;
    std::fs::write(out, model.to_json()).context("writing model")?;
    println!(
        "trained {} trees (depth <= {}) on {} rows -> {}",
        config.forest.n_trees,
        config.forest.max_depth,
        set.len(),
        out.display()
    );
    Ok(())
}

pub fn eval(config: &RunConfig, model: &Path, data: &Path) -> CmdResult {
    let model = load_model(config, model)?;
    let file = BufReader::new(File::open(data).context("opening csv")?);
    let set = TrainingSet::read_csv(file, config.pipeline.features)?;
    let accuracy = model.accuracy(&set)?;
    let (successes, failures) = set.class_counts();
    println!(
        "accuracy {accuracy:.4} on {} rows ({successes} success / {failures} failure)",
        set.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn learning_curve(
    config: &RunConfig,
    pool: &Path,
    holdout: &Path,
    sizes: &str,
    repeats: usize,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let pool_set = TrainingSet::read_csv(
        BufReader::new(File::open(pool).context("opening pool csv")?),
        config.pipeline.features,
    )?;
    let holdout_set = TrainingSet::read_csv(
        BufReader::new(File::open(holdout).context("opening holdout csv")?),
        config.pipeline.features,
    )?;
    let sizes: Vec<usize> = parse_list(sizes).map_err(CommandError::Config)?;
    let seed = seed.unwrap_or(config.seeds.train);
    let curve = forest::accuracy_curve(
        &pool_set,
        &sizes,
        &holdout_set,
        repeats,
        &config.forest,
        seed,
    )?;

    let mut w = csv::Writer::from_writer(File::create(out).context("creating csv")?);
    w.write_record(["size", "accuracy"])?;
    for (size, accuracy) in &curve {
        w.write_record([size.to_string(), format!("{accuracy:.6}")])?;
    }
    w.flush()?;

    let at = |target: usize| {
        curve
            .iter()
            .min_by_key(|(s, _)| s.abs_diff(target))
            .map(|&(s, a)| (s, a))
    };
    if let (Some((s50, a50)), Some(&(smax, amax))) = (at(50), curve.last()) {
        let delta = amax - a50;
        println!(
            "saturation: accuracy({s50})={a50:.3}, accuracy({smax})={amax:.3}, delta={delta:.3} (saturated: {})",
            delta.abs() < 0.05
        );
    }
    println!("{} curve points -> {}", curve.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    config: &RunConfig,
    scene_path: &Path,
    model_path: &Path,
    views: Option<usize>,
    alpha: Option<f64>,
    max_trials: Option<usize>,
    out: &Path,
) -> CmdResult {
    let mut scene = load_scene(scene_path)?;
    let catalog = ShapeCatalog::builtin();
    let model = load_model(config, model_path)?;
    let shape_name = scene
        .objects
        .first()
        .map(|o| o.shape.clone())
        .ok_or_else(|| CommandError::Config("scene has no objects".into()))?;
    let shape = catalog
        .get(&shape_name)
        .ok_or_else(|| CommandError::Config(format!("unknown shape '{shape_name}'")))?;
    let db = generate_grasp_database(
        &shape_name,
        shape,
        &config.pipeline.gripper,
        &config.grasp_gen,
    )?;
    let mut pipeline = config.pipeline.clone();
    if let Some(views) = views {
        pipeline.max_views = views;
    }
    if let Some(alpha) = alpha {
        pipeline.alpha = alpha;
    }
    pipeline.detect.parallelism = effective_threads(pipeline.detect.parallelism);
    let ctx = TrialContext {
        catalog: &catalog,
        database: &db,
        forest: &model,
        config: &pipeline,
    };

    let cap = max_trials.unwrap_or(scene.objects.len());
    let mut state = PickingState::new();
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for _ in 0..cap {
        if scene.objects.is_empty() {
            break;
        }
        let (record, next) = run_trial(&ctx, &scene, &mut state)?;
        let picked = record.outcome.map_or(false, |o| o.success);
        records.push(record);
        scene = next;
        if !picked && records.last().map_or(false, |r| r.outcome.is_none()) {
            // No executable candidate: further trials would repeat.
            break;
        }
    }
    let file = BufWriter::new(File::create(out).context("creating records file")?);
    write_records(file, &records)?;
    let m = compute_metrics(&records);
    println!(
        "{} trials, {} picked, remaining objects {} -> {}",
        records.len(),
        m.true_positive + m.false_negative,
        scene.objects.len(),
        out.display()
    );
    Ok(())
}

pub fn evaluate(patterns: &[String], out: Option<&Path>) -> CmdResult {
    let mut paths: Vec<std::path::PathBuf> = Vec::new();
    for pattern in patterns {
        if pattern.contains('*') {
            paths.extend(expand_glob(pattern).map_err(CommandError::Config)?);
        } else {
            paths.push(pattern.into());
        }
    }
    if paths.is_empty() {
        return Err(CommandError::Config("no record files matched".into()));
    }
    paths.sort();
    let mut records = Vec::new();
    for path in &paths {
        let file = BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        );
        records.extend(read_records(file)?);
    }
    let m = compute_metrics(&records);
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    let mut csv_text = String::from("tp,fp,fn,tn,skipped,precision,recall,f_value\n");
    csv_text.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        m.true_positive,
        m.false_positive,
        m.false_negative,
        m.true_negative,
        m.skipped,
        fmt(m.precision),
        fmt(m.recall),
        fmt(m.f_value)
    ));
    match out {
        Some(path) => std::fs::write(path, &csv_text).context("writing metrics")?,
        None => print!("{csv_text}"),
    }
    eprintln!(
        "{} records from {} files: precision {} recall {} F {}",
        records.len(),
        paths.len(),
        fmt(m.precision),
        fmt(m.recall),
        fmt(m.f_value)
    );
    Ok(())
}

/// Expands a pattern with `*` wildcards in its file name (single directory).
fn expand_glob(pattern: &str) -> Result<Vec<std::path::PathBuf>, String> {
    let path = Path::new(pattern);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| format!("bad pattern '{pattern}'"))?;
    let parts: Vec<&str> = name.split('*').collect();
    let dir = dir.unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("reading {}: {e}", dir.display()))? {
        let entry = entry.map_err(|e| e.to_string())?;
        let Some(fname) = entry.file_name().to_str().map(String::from) else {
            continue;
        };
        if wildcard_match(&parts, &fname) {
            out.push(entry.path());
        }
    }
    Ok(out)
}

fn wildcard_match(parts: &[&str], name: &str) -> bool {
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        match rest.find(part) {
            Some(pos) => {
                if i == 0 && pos != 0 {
                    return false;
                }
                rest = &rest[pos + part.len()..];
            }
            None => return false,
        }
    }
    parts.last().map_or(true, |last| {
        last.is_empty() || name.ends_with(last) && rest.is_empty()
    })
}

pub fn bench_detect(
    config: &RunConfig,
    max_objects: usize,
    threads: &str,
    out: &Path,
) -> CmdResult {
    let thread_counts: Vec<usize> = parse_list(threads).map_err(CommandError::Config)?;
    if thread_counts.is_empty() {
        return Err(CommandError::Config("no thread counts given".into()));
    }
    let catalog = ShapeCatalog::builtin();
    let sensor = config.pipeline.sensor;

    // One capture per object count, reused across thread counts. The
    // benchmark times pose detection per detected object, so objects are
    // spaced above the clustering tolerance (touching objects would merge
    // into one rejected segment and detect nothing), in a bin wide enough
    // to admit them all.
    let mut clouds = Vec::new();
    for count in 1..=max_objects {
        let mut scene_config = config.scene.clone();
        scene_config.object_count = count;
        scene_config.min_clearance = 0.014;
        scene_config.max_gap = 0.004;
        scene_config.bin_extents = [0.48, 0.48, scene_config.bin_extents[2]];
        let scene = generate_scene(&catalog, &scene_config, config.seeds.scene + count as u64)?;
        let views: Vec<SensorPose> = sensor_candidates(config, &scene)?
            .into_iter()
            .filter(|c| reachable(c, &config.pipeline.reach))
            .collect();
        let grid = OccupancyGrid::for_bin(&scene.bin, config.pipeline.grid_cell_size)?;
        let view = grid.select_view_first(&scene.bin, &sensor, &views)?;
        let cloud = binpick::sensing::capture(&scene, &catalog, &sensor, &view, 0)?;
        clouds.push((count, scene, cloud));
    }

    let shape_name = config.scene.shape.clone();
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for &(count, ref scene, ref cloud) in &clouds {
        for &t in &thread_counts {
            let params = DetectParams {
                parallelism: effective_threads(t),
                ..config.pipeline.detect
            };
            // Warm up once, then take the best of three runs.
            let _ = detect_all(cloud, &scene.bin, &catalog, &shape_name, &[], &params)?;
            let mut best = f64::INFINITY;
            for _ in 0..3 {
                let start = Instant::now();
                let outcome = detect_all(cloud, &scene.bin, &catalog, &shape_name, &[], &params)?;
                let elapsed = start.elapsed().as_secs_f64();
                best = best.min(elapsed);
                std::hint::black_box(outcome);
            }
            rows.push((count, t, best));
        }
    }

    let mut w = csv::Writer::from_writer(File::create(out).context("creating csv")?);
    w.write_record(["objects", "threads", "seconds"])?;
    for (objects, threads, seconds) in &rows {
        w.write_record([
            objects.to_string(),
            threads.to_string(),
            format!("{seconds:.6}"),
        ])?;
    }
    w.flush()?;

    // Trend checks with a noise allowance for timing jitter.
    const NOISE: f64 = 1.15;
    let time_of = |objects: usize, threads: usize| {
        rows.iter()
            .find(|r| r.0 == objects && r.1 == threads)
            .map(|r| r.2)
            .expect("measured")
    };
    let mut ok = true;
    for w in thread_counts.windows(2) {
        let (a, b) = (time_of(max_objects, w[0]), time_of(max_objects, w[1]));
        if b > a * NOISE {
            eprintln!(
                "threads trend violated at {max_objects} objects: {}s @{} vs {}s @{}",
                a, w[0], b, w[1]
            );
            ok = false;
        }
    }
    if max_objects > 1 {
        let (first, last) = (
            time_of(1, thread_counts[0]),
            time_of(max_objects, thread_counts[0]),
        );
        if last * NOISE < first {
            eprintln!("object-count trend violated: {first}s for 1 vs {last}s for {max_objects}");
            ok = false;
        }
    }
    println!(
        "{} timing rows -> {} (trends {})",
        rows.len(),
        out.display(),
        if ok { "ok" } else { "VIOLATED" }
    );
    if !ok {
        return Err(CommandError::Runtime(anyhow!(
            "bench-detect trend assertion failed"
        )));
    }
    Ok(())
}

fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad list entry '{t}': {e}"))
        })
        .collect()
}
