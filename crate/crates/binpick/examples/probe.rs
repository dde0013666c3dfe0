// temp: rescue fixture geometry sweep
use binpick::forest::{train, ForestParams};
use binpick::geometry::{BinBox, RigidTransform, ShapeCatalog, Vec3};
use binpick::occupancy::OccupancyGrid;
use binpick::pipeline::*;
use binpick::scene::{assign_traversability, Scene, SceneConfig, SceneObject, TraversabilityRule};
use binpick::sensing::{candidate_poses, reachable};

fn main() {
    let catalog = ShapeCatalog::builtin();
    let cfg = PipelineConfig::default();
    let bin = BinBox::new([0.3, 0.3, 0.1], 0.01, RigidTransform::identity()).unwrap();
    let views: Vec<_> = candidate_poses(&bin, 20, &cfg.standoffs).unwrap()
        .into_iter().filter(|c| reachable(c, &cfg.reach)).collect();
    let grid = OccupancyGrid::for_bin(&bin, 0.01).unwrap();
    let v1 = grid.select_view_first(&bin, &cfg.sensor, &views).unwrap();
    let p = v1.position();
    let horiz = Vec3::new(p.x, p.y, 0.0).normalize();
    let lateral = Vec3::new(-horiz.y, horiz.x, 0.0);
    let db = generate_grasp_database("cylinder", catalog.get("cylinder").unwrap(), &cfg.gripper, &GraspGenParams::default()).unwrap();
    let pool = collect_balanced_training_set(&catalog, &db, &cfg, &SceneConfig::default(), 75, 1000).unwrap();
    let forest = train(&pool, &ForestParams::default(), 7).unwrap();

    // Lying box wall: long axis lateral, 30 mm tall.
    let lat_yaw = lateral.y.atan2(lateral.x);
    for dist in [0.045f64, 0.05, 0.055, 0.06, 0.065] {
        let wall_pose = RigidTransform::from_translation(horiz * dist + Vec3::new(0.0, 0.0, 0.015))
            .compose(&RigidTransform::from_rotation_z(lat_yaw))
            .compose(&RigidTransform::from_axis_angle(Vec3::y(), std::f64::consts::FRAC_PI_2));
        let scene = Scene {
            bin: bin.clone(),
            objects: vec![
                SceneObject { id: 0, shape: "cylinder".into(),
                    pose: RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.04)), traversable: true },
                SceneObject { id: 1, shape: "box".into(), pose: wall_pose, traversable: false },
            ],
            rng_seed: 0,
        };
        let scene = assign_traversability(&scene, &catalog, &TraversabilityRule::default()).unwrap();
        let ctx = TrialContext { catalog: &catalog, database: &db, forest: &forest, config: &cfg };
        let mut state = PickingState::new();
        let (rec, _) = run_trial(&ctx, &scene, &mut state).unwrap();
        println!("lying dist {dist}: views={} scores={:?} pred={} out={:?}",
            rec.views.len(),
            rec.view_best_scores.iter().map(|s| s.map(|v| (v * 1000.0).round() / 1000.0)).collect::<Vec<_>>(),
            rec.predicted_success, rec.outcome.map(|o| o.success));
    }
}
