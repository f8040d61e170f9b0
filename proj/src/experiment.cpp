#include "voxlift/experiment.hpp"

#include <algorithm>

namespace voxlift {

TrainTargets build_targets(const SceneConfig& scene, const CameraRigd& rig,
                           const ExperimentConfig& cfg) {
  TrainTargets targets;
  const auto raster = rasterize_scene(scene);
  targets.gt_occ = raster.occupancy;
  for (const auto& camera : rig.cameras) {
    ViewTargets view;
    view.width = cfg.render_width;
    view.height = cfg.render_height;
    const GtMaps gt = render_gt_labels(scene, camera, cfg.supersample,
                                       view.width, view.height);
    if (cfg.label_source == "lidar") {
      // Sparse depth/semantics from projected LiDAR returns; the LiDAR sits
      // at the camera center. Labels land on camera-resolution pixels, so
      // project into a camera rescaled to the render resolution.
      Camerad scaled = camera;
      const double sx = double(view.width) / camera.intrinsics.width;
      const double sy = double(view.height) / camera.intrinsics.height;
      scaled.intrinsics.fx *= sx;
      scaled.intrinsics.fy *= sy;
      scaled.intrinsics.cx = (scaled.intrinsics.cx + 0.5) * sx - 0.5;
      scaled.intrinsics.cy = (scaled.intrinsics.cy + 0.5) * sy - 0.5;
      scaled.intrinsics.width = view.width;
      scaled.intrinsics.height = view.height;
      const auto hits =
          simulate_lidar(scene, camera.center(), cfg.lidar_beams,
                         cfg.lidar_azimuths, scene.seed + camera.id);
      const SparseMaps sparse = project_labels(hits, scaled);
      view.depth = sparse.depth;
      view.depth_mask = sparse.depth_mask;
      view.sem = sparse.sem;
      view.sem_mask = sparse.sem_mask;
    } else {
      view.depth = gt.depth;
      view.depth_mask = gt.mask;
      view.sem = gt.sem;
      view.sem_mask = gt.mask;
    }
    if (cfg.normal_source == "dense") {
      view.normal = gt.normal;
      view.normal_mask = gt.mask;
    } else {
      view.normal = MatXd::Zero(Index(view.height) * view.width, 3);
      view.normal_mask.assign(Index(view.height) * view.width, 0);
    }
    targets.views.push_back(std::move(view));
  }
  return targets;
}

CameraRigd subset_rig(const CameraRigd& rig,
                      const std::vector<int>& drop_ids) {
  CameraRigd out;
  int next_id = 1;
  for (const auto& cam : rig.cameras) {
    bool dropped = false;
    for (int id : drop_ids) dropped |= cam.id == id;
    if (dropped) continue;
    Camerad copy = cam;
    copy.id = next_id++;
    out.cameras.push_back(copy);
  }
  out.validate();
  return out;
}

FitRun run_fit_experiment(const ExperimentConfig& cfg) {
  FitRun run;
  const SceneConfig& scene = cfg.scene;
  run.train_rig = subset_rig(scene.rig, cfg.holdout_cameras);
  const TrainTargets targets = build_targets(scene, run.train_rig, cfg);
  run.gt = rasterize_scene(scene);

  run.fit = fit_scene(run.train_rig, targets, scene.spec, cfg.fit);

  run.observed = observed_voxel_mask(scene.spec, run.train_rig,
                                     run.gt.density);
  const auto decoded =
      decode_density_occupancy(run.fit.density, run.fit.sem_logits);
  run.geometry_iou = geometry_iou(decoded, run.gt.occupancy, run.observed).iou;
  run.semantic_miou =
      semantic_miou_on_recovered(decoded, run.gt.occupancy, run.observed);

  // Depth MAE on held-out views (falls back to the train views when no
  // holdouts are configured).
  std::vector<const Camerad*> eval_cams;
  for (const auto& cam : scene.rig.cameras)
    for (int id : cfg.holdout_cameras)
      if (cam.id == id) eval_cams.push_back(&cam);
  const bool holdout = !eval_cams.empty();
  if (!holdout)
    for (const auto& cam : run.train_rig.cameras) eval_cams.push_back(&cam);
  double mae_sum = 0.0;
  for (const Camerad* cam : eval_cams) {
    RenderViewConfigd rv;
    rv.sampler = cfg.fit.sampler;
    rv.out_width = cfg.render_width;
    rv.out_height = cfg.render_height;
    rv.threads = cfg.fit.threads;
    const auto rendered = render_view(*cam, run.fit.density,
                                      run.fit.sem_logits, run.fit.normals, rv);
    const GtMaps gt = render_gt_labels(scene, *cam, cfg.supersample,
                                       cfg.render_width, cfg.render_height);
    ViewTargets view;
    view.width = cfg.render_width;
    view.height = cfg.render_height;
    view.depth = gt.depth;
    view.depth_mask = gt.mask;
    mae_sum += depth_mae(rendered, view);
  }
  run.holdout_depth_mae = eval_cams.empty() ? 0.0 : mae_sum / eval_cams.size();

  const LossBreakdownd& last = run.fit.trace.back();
  run.report = Json{
      {"command", "fit"},
      {"seed", cfg.fit.seed},
      {"iterations", cfg.fit.iterations},
      {"supervision", to_string(cfg.fit.supervision)},
      {"final_loss",
       {{"total", last.total},
        {"sem3d", last.sem3d},
        {"depth", last.depth},
        {"sem2d", last.sem2d},
        {"normal", last.normal},
        {"reg", last.reg}}},
      {"geometry_iou", run.geometry_iou},
      {"semantic_miou", run.semantic_miou},
      {"depth_mae", run.holdout_depth_mae},
      {"depth_mae_views", holdout ? "holdout" : "train"},
      {"observed_voxels",
       static_cast<std::int64_t>(
           std::count(run.observed.begin(), run.observed.end(), 1))}};
  validate_against_schema(run.report, schema("fit"));
  return run;
}

// ---------------------------------------------------------------------------
// Feed-forward toy experiment.

SceneConfig make_frame_scene(const SceneConfig& base,
                             std::uint64_t frame_seed) {
  SceneConfig frame = base;
  frame.seed = frame_seed;
  RngStream rng = RngStream::substream(frame_seed, "scene");
  const Vec3d lo = base.spec.min_corner;
  const Vec3d hi = base.spec.max_corner();
  const Vec3d span = hi - lo;
  for (auto& prim : frame.primitives) {
    // Ground planes anchor the frame; movable primitives re-draw their
    // position inside the central half of the grid.
    if (std::holds_alternative<GroundPlane>(prim)) continue;
    const Vec3d offset(rng.uniform(-0.25, 0.25) * span.x(),
                       rng.uniform(-0.25, 0.25) * span.y(),
                       rng.uniform(-0.1, 0.1) * span.z());
    if (auto* s = std::get_if<Sphere>(&prim)) {
      s->center += offset;
    } else if (auto* b = std::get_if<Box>(&prim)) {
      b->lo += offset;
      b->hi += offset;
    }
  }
  frame.validate();
  return frame;
}

FfFrame make_frame(const SceneConfig& base, const FfExperimentConfig& cfg,
                   std::uint64_t frame_seed) {
  FfFrame frame;
  SceneConfig scene = make_frame_scene(base, frame_seed);
  frame.rig = scene.rig;
  frame.targets = build_targets(scene, frame.rig, cfg.base);
  RngStream rng = RngStream::substream(frame_seed, "features");
  for (const auto& camera : frame.rig.cameras) {
    FeatureMapd map;
    map.camera_id = camera.id;
    map.channels = cfg.feature_channels;
    map.height_f = cfg.feature_height;
    map.width_f = cfg.feature_width;
    map.stride = double(camera.intrinsics.width) / cfg.feature_width;
    map.values = MatXd(Index(map.height_f) * map.width_f, map.channels);
    for (Index i = 0; i < map.values.size(); ++i)
      map.values.data()[i] = rng.normal();
    frame.maps.push_back(std::move(map));
  }
  return frame;
}

FfRun run_train_experiment(const FfExperimentConfig& cfg) {
  const SceneConfig& base = cfg.base.scene;
  std::vector<FfFrame> train, holdout;
  for (int f = 0; f < cfg.n_train_frames; ++f)
    train.push_back(
        make_frame(base, cfg, derive_seed(cfg.base.fit.seed, "frame", f)));
  for (int f = 0; f < cfg.n_holdout_frames; ++f)
    holdout.push_back(make_frame(
        base, cfg, derive_seed(cfg.base.fit.seed, "frame", 1000 + f)));

  FfConfig ff;
  ff.fit = cfg.base.fit;
  FfRun run;
  run.trained = train_feedforward(train, base.spec, ff);

  const auto eval_set = [&](const std::vector<FfFrame>& frames) {
    double sum = 0.0;
    for (const auto& frame : frames) {
      const auto decoded =
          feedforward_decode(frame, base.spec, run.trained.params);
      sum += miou(confusion(decoded, *frame.targets.gt_occ)).miou;
    }
    return frames.empty() ? 0.0 : sum / frames.size();
  };
  run.train_miou = eval_set(train);
  run.holdout_miou = eval_set(holdout);

  const LossBreakdownd& last = run.trained.trace.back();
  run.report = Json{
      {"command", "train"},
      {"seed", cfg.base.fit.seed},
      {"iterations", cfg.base.fit.iterations},
      {"supervision", to_string(cfg.base.fit.supervision)},
      {"final_loss",
       {{"total", last.total},
        {"sem3d", last.sem3d},
        {"depth", last.depth},
        {"sem2d", last.sem2d},
        {"normal", last.normal},
        {"reg", last.reg}}},
      {"train_miou", run.train_miou},
      {"holdout_miou", run.holdout_miou},
      {"frames", {{"train", cfg.n_train_frames}, {"holdout", cfg.n_holdout_frames}}}};
  validate_against_schema(run.report, schema("train"));
  return run;
}

// ---------------------------------------------------------------------------
// Ablations.

std::vector<AblationRow> run_step_ablation(const ExperimentConfig& base,
                                           const std::vector<double>& scales) {
  if (scales.empty())
    throw std::domain_error("run_step_ablation: empty run list");
  std::vector<AblationRow> rows;
  for (double scale : scales) {
    ExperimentConfig cfg = base;
    cfg.step_scale = scale;
    cfg.fit.sampler.step_size = scale * cfg.scene.spec.voxel_size;
    const FitRun run = run_fit_experiment(cfg);
    AblationRow row;
    row.label = std::to_string(scale);
    row.value = run.holdout_depth_mae;
    row.extra = Json{{"step_scale", scale},
                     {"depth_mae", run.holdout_depth_mae},
                     {"geometry_iou", run.geometry_iou},
                     {"semantic_miou", run.semantic_miou}};
    rows.push_back(std::move(row));
    log_msg(LogLevel::info,
            "step ablation " + std::to_string(scale) +
                " -> depth MAE " + std::to_string(rows.back().value));
  }
  return rows;
}

std::vector<AblationRow> run_supervision_ablation(
    const FfExperimentConfig& base, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty())
    throw std::domain_error("run_supervision_ablation: empty run list");
  std::vector<AblationRow> rows;
  for (const SupervisionMode mode :
       {SupervisionMode::s3d, SupervisionMode::s3d2d}) {
    double miou_sum = 0.0;
    Json per_seed = Json::array();
    for (std::uint64_t seed : seeds) {
      FfExperimentConfig cfg = base;
      cfg.base.fit.seed = seed;
      cfg.base.fit.supervision = mode;
      const FfRun run = run_train_experiment(cfg);
      miou_sum += run.holdout_miou;
      per_seed.push_back(Json{{"seed", seed},
                              {"holdout_miou", run.holdout_miou},
                              {"train_miou", run.train_miou}});
    }
    AblationRow row;
    row.label = to_string(mode);
    row.value = miou_sum / seeds.size();
    row.extra = Json{{"supervision", to_string(mode)},
                     {"holdout_miou", row.value},
                     {"runs", per_seed}};
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace voxlift
