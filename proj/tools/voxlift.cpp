// voxlift: synthetic-scene occupancy toolkit.
//
// Subcommands cover the full pipeline: scene generation, multi-view feature
// lifting, scene fitting / toy feed-forward training, rendering, occupancy
// evaluation, ablation sweeps, and the MAC cost model.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "voxlift/experiment.hpp"

namespace fs = std::filesystem;
using namespace voxlift;

namespace {

struct GlobalArgs {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string format = "json";
};

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config, "JSON config path");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--seed", args.seed, "root random seed")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--threads", args.threads, "worker threads (1 = reference)");
  cmd->add_option("--format", args.format, "report format: json|csv")
      ->check(CLI::IsMember({"json", "csv"}));
}

ExperimentConfig load_experiment_args(const GlobalArgs& args) {
  if (args.config.empty())
    throw std::invalid_argument("missing --config");
  ExperimentConfig cfg = load_experiment(args.config);
  if (args.seed_set) cfg.fit.seed = args.seed;
  cfg.fit.threads = args.threads;
  return cfg;
}

void emit_report(const GlobalArgs& args, const std::string& name,
                 const Json& report) {
  validate_against_schema(report, schema(name));
  fs::create_directories(args.out);
  write_json((fs::path(args.out) / (name + "_report.json")).string(), report);
  if (args.format == "csv") {
    std::vector<std::string> header, row;
    for (const auto& [key, value] : report.items()) {
      if (!value.is_primitive()) continue;
      header.push_back(key);
      row.push_back(value.is_string() ? value.get<std::string>()
                                      : value.dump());
    }
    write_csv((fs::path(args.out) / (name + "_report.csv")).string(), header,
              {row});
  }
  std::cout << report.dump(2) << "\n";
}

std::string breakdown_line(const Json& loss) {
  return "total=" + loss.at("total").dump() +
         " sem3d=" + loss.at("sem3d").dump() +
         " depth=" + loss.at("depth").dump() +
         " sem2d=" + loss.at("sem2d").dump() +
         " normal=" + loss.at("normal").dump() +
         " reg=" + loss.at("reg").dump();
}

// --------------------------------------------------------------------------

int cmd_gen_scene(const GlobalArgs& args) {
  ExperimentConfig cfg = load_experiment_args(args);
  SceneConfig scene = cfg.scene;
  if (args.seed_set) scene.seed = args.seed;
  fs::create_directories(args.out);
  const fs::path out(args.out);

  const auto raster = rasterize_scene(scene);
  std::vector<std::string> files;
  save_occupancy((out / "gt_occupancy").string(), raster.occupancy);
  files.push_back("gt_occupancy.json");
  files.push_back("gt_occupancy.bin");
  save_scalar_field((out / "gt_density").string(), raster.density);
  files.push_back("gt_density.json");
  files.push_back("gt_density.bin");
  save_rig((out / "rig.json").string(), scene.rig);
  files.push_back("rig.json");

  for (const auto& camera : scene.rig.cameras) {
    const GtMaps maps = render_gt_labels(scene, camera, cfg.supersample,
                                         cfg.render_width, cfg.render_height);
    const std::string prefix = "cam" + std::to_string(camera.id);
    write_pfm((out / (prefix + "_depth.pfm")).string(), maps.depth);
    write_semantic_ppm((out / (prefix + "_sem.ppm")).string(), maps.sem,
                       maps.width, maps.height);
    write_normal_ppm((out / (prefix + "_normal.ppm")).string(), maps.normal,
                     maps.width, maps.height);
    files.push_back(prefix + "_depth.pfm");
    files.push_back(prefix + "_sem.ppm");
    files.push_back(prefix + "_normal.ppm");

    const auto hits = simulate_lidar(scene, camera.center(), cfg.lidar_beams,
                                     cfg.lidar_azimuths,
                                     scene.seed + camera.id);
    const SparseMaps sparse = project_labels(hits, camera);
    write_pfm((out / (prefix + "_lidar_depth.pfm")).string(), sparse.depth);
    files.push_back(prefix + "_lidar_depth.pfm");
  }

  std::int64_t occupied = 0;
  for (const auto label : raster.occupancy.labels)
    if (label != kFreeLabel && label != kIgnoreLabel) ++occupied;

  Json report{{"command", "gen-scene"},
              {"num_voxels", raster.occupancy.spec.num_voxels()},
              {"occupied_voxels", occupied},
              {"cameras", scene.rig.size()},
              {"files", files}};
  emit_report(args, "gen-scene", report);
  return 0;
}

int cmd_lift(const GlobalArgs& args, const std::vector<std::string>& map_paths,
             const std::string& rig_path, int random_channels, int random_res) {
  ExperimentConfig cfg = load_experiment_args(args);
  const SceneConfig& scene = cfg.scene;
  CameraRigd rig = rig_path.empty() ? scene.rig : load_rig(rig_path);

  std::vector<FeatureMapd> maps;
  if (!map_paths.empty()) {
    for (const auto& path : map_paths) maps.push_back(load_feature_map(path));
  } else {
    // Seeded random maps when none are supplied.
    RngStream rng = RngStream::substream(cfg.fit.seed, "features");
    for (const auto& camera : rig.cameras) {
      FeatureMapd map;
      map.camera_id = camera.id;
      map.channels = random_channels;
      map.height_f = random_res;
      map.width_f = random_res;
      map.stride = double(camera.intrinsics.width) / random_res;
      map.values = MatXd(Index(random_res) * random_res, random_channels);
      for (Index i = 0; i < map.values.size(); ++i)
        map.values.data()[i] = rng.normal();
      maps.push_back(std::move(map));
    }
  }

  LiftConfigd lift_cfg;
  lift_cfg.threads = args.threads;
  const auto volume = lift_features(rig, maps, scene.spec, lift_cfg);
  fs::create_directories(args.out);
  VectorFieldd as_field{volume.spec, volume.channels, volume.values};
  save_vector_field((fs::path(args.out) / "feature_volume").string(), as_field);

  double mean_valid = 0.0;
  for (Index v = 0; v < volume.valid_count.size(); ++v)
    mean_valid += volume.valid_count[v];
  mean_valid /= std::max<Index>(1, volume.valid_count.size());

  Json report{{"command", "lift"},
              {"channels", volume.channels},
              {"voxels", volume.spec.num_voxels()},
              {"mean_valid_count", mean_valid},
              {"files", {"feature_volume.json", "feature_volume.bin"}}};
  emit_report(args, "lift", report);
  return 0;
}

int cmd_fit(const GlobalArgs& args) {
  ExperimentConfig cfg = load_experiment_args(args);
  FitRun run = run_fit_experiment(cfg);
  fs::create_directories(args.out);
  const fs::path out(args.out);

  save_scalar_field((out / "density").string(), run.fit.density);
  save_scalar_field((out / "raw_density").string(), run.fit.raw_density);
  save_vector_field((out / "sem_logits").string(), run.fit.sem_logits);
  save_vector_field((out / "normals").string(), run.fit.normals);
  save_occupancy((out / "decoded_occupancy").string(),
                 decode_density_occupancy(run.fit.density, run.fit.sem_logits));

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < run.fit.trace.size(); ++i) {
    const auto& b = run.fit.trace[i];
    rows.push_back({std::to_string(i), std::to_string(b.total),
                    std::to_string(b.sem3d), std::to_string(b.depth),
                    std::to_string(b.sem2d), std::to_string(b.normal),
                    std::to_string(b.reg)});
  }
  write_csv((out / "loss_trace.csv").string(),
            {"iteration", "total", "sem3d", "depth", "sem2d", "normal", "reg"},
            rows);

  emit_report(args, "fit", run.report);
  std::cout << "final loss: " << breakdown_line(run.report.at("final_loss"))
            << "\n";
  return 0;
}

int cmd_train(const GlobalArgs& args, int train_frames, int holdout_frames,
              int channels, int feature_res) {
  FfExperimentConfig cfg;
  cfg.base = load_experiment_args(args);
  cfg.n_train_frames = train_frames;
  cfg.n_holdout_frames = holdout_frames;
  cfg.feature_channels = channels;
  cfg.feature_height = feature_res;
  cfg.feature_width = feature_res;
  const FfRun run = run_train_experiment(cfg);
  fs::create_directories(args.out);
  save_head_params((fs::path(args.out) / "head").string(), run.trained.params);
  emit_report(args, "train", run.report);
  return 0;
}

int cmd_render(const GlobalArgs& args, const std::string& fields_dir,
               int camera_id) {
  ExperimentConfig cfg = load_experiment_args(args);
  const SceneConfig& scene = cfg.scene;

  ScalarFieldd density;
  VectorFieldd sem, normals;
  if (fields_dir.empty()) {
    // Render the analytic ground-truth fields.
    const auto raster = rasterize_scene(scene);
    density = raster.density;
    sem = VectorFieldd::zeros(scene.spec, scene.num_classes + 1);
    for (Index v = 0; v < scene.spec.num_voxels(); ++v) {
      const auto label = raster.occupancy.labels[v];
      if (label == kFreeLabel)
        sem.values(v, scene.num_classes) = 10.0;
      else
        sem.values(v, label) = 10.0;
    }
    normals = VectorFieldd::zeros(scene.spec, 3);
  } else {
    density = load_scalar_field((fs::path(fields_dir) / "density").string());
    sem = load_vector_field((fs::path(fields_dir) / "sem_logits").string());
    normals = load_vector_field((fs::path(fields_dir) / "normals").string());
  }

  const Camerad& camera = scene.rig.by_id(camera_id);
  RenderViewConfigd rv;
  rv.sampler = cfg.fit.sampler;
  rv.out_width = cfg.render_width;
  rv.out_height = cfg.render_height;
  rv.threads = args.threads;
  rv.seed = cfg.fit.seed;
  const auto maps = render_view(camera, density, sem, normals, rv);
  fs::create_directories(args.out);
  const std::string prefix = "cam" + std::to_string(camera_id);
  write_rendered_maps(args.out, prefix, maps);

  Json report{{"command", "render"},
              {"camera", camera_id},
              {"width", maps.width},
              {"height", maps.height},
              {"files",
               {prefix + "_depth.pfm", prefix + "_opacity.pfm",
                prefix + "_sem.ppm", prefix + "_normal.ppm",
                prefix + "_sem_logits.json", prefix + "_sem_logits.bin"}}};
  emit_report(args, "render", report);
  return 0;
}

int cmd_eval(const GlobalArgs& args, const std::string& pred_path,
             const std::string& gt_path, double delta) {
  const auto pred = load_occupancy(pred_path);
  const auto gt = load_occupancy(gt_path);
  const auto counts = confusion(pred, gt);
  const auto iou = miou(counts);
  EvalConfig cfg;
  cfg.delta = delta > 0 ? delta : gt.spec.voxel_size;
  const auto prf = precision_recall_fscore(pred, gt, cfg);

  Json per_class = Json::array();
  for (int c = 0; c < counts.num_classes; ++c)
    per_class.push_back(iou.included[c] ? Json(iou.per_class[c])
                                        : Json(nullptr));
  Json report{{"command", "eval"},       {"miou", iou.miou},
              {"per_class_iou", per_class}, {"precision", prf.precision},
              {"recall", prf.recall},    {"fscore", prf.fscore},
              {"delta", cfg.delta}};
  fs::create_directories(args.out);
  write_csv((fs::path(args.out) / "eval_report.csv").string(),
            {"miou", "precision", "recall", "fscore", "delta"},
            {{std::to_string(iou.miou), std::to_string(prf.precision),
              std::to_string(prf.recall), std::to_string(prf.fscore),
              std::to_string(cfg.delta)}});
  emit_report(args, "eval", report);
  return 0;
}

int cmd_macs(const GlobalArgs& args, std::vector<int> dims, int cameras,
             int channels, int n_keys) {
  VoxelGridSpecd spec;
  spec.dims = Eigen::Vector3i(dims.at(0), dims.at(1), dims.at(2));
  spec.voxel_size = 0.4;
  const MacReport mac = estimate_lift_macs(spec, cameras, channels, n_keys);
  Json report{{"command", "macs"},
              {"lifting_macs", mac.lifting_macs},
              {"attention_macs", mac.attention_macs},
              {"ratio", mac.ratio},
              {"n_keys", mac.n_keys},
              {"dims", dims},
              {"cameras", cameras},
              {"channels", channels}};
  emit_report(args, "macs", report);
  return 0;
}

int cmd_ablate(const GlobalArgs& args, const std::string& kind,
               int train_frames, int holdout_frames, int channels,
               int feature_res, std::vector<std::uint64_t> seeds) {
  fs::create_directories(args.out);
  const fs::path out(args.out);
  const std::string csv_path = (out / ("ablate_" + kind + ".csv")).string();
  const std::string svg_path = (out / ("ablate_" + kind + ".svg")).string();

  std::vector<AblationRow> rows;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> csv_rows;
  std::vector<double> xs;
  SvgSeries series;

  // A failed sub-run still leaves the rows completed so far on disk.
  const auto flush_partial = [&]() {
    if (!csv_rows.empty()) write_csv(csv_path, header, csv_rows);
  };

  try {
    if (kind == "step-size") {
      ExperimentConfig base = load_experiment_args(args);
      header = {"step_scale", "depth_mae", "geometry_iou", "semantic_miou"};
      series.name = "depth_mae";
      for (double scale : {0.5, 1.0, 2.0}) {
        auto sub = run_step_ablation(base, {scale});
        rows.push_back(sub[0]);
        const auto& e = rows.back().extra;
        csv_rows.push_back({e.at("step_scale").dump(), e.at("depth_mae").dump(),
                            e.at("geometry_iou").dump(),
                            e.at("semantic_miou").dump()});
        xs.push_back(scale);
        series.y.push_back(rows.back().value);
        flush_partial();
      }
    } else if (kind == "supervision") {
      FfExperimentConfig base;
      base.base = load_experiment_args(args);
      base.n_train_frames = train_frames;
      base.n_holdout_frames = holdout_frames;
      base.feature_channels = channels;
      base.feature_height = feature_res;
      base.feature_width = feature_res;
      if (seeds.empty()) seeds = {base.base.fit.seed};
      header = {"supervision", "holdout_miou"};
      series.name = "holdout_miou";
      double x = 0.0;
      for (auto& row : run_supervision_ablation(base, seeds)) {
        rows.push_back(row);
        csv_rows.push_back({row.label, std::to_string(row.value)});
        xs.push_back(x++);
        series.y.push_back(row.value);
        flush_partial();
      }
    } else {
      throw std::domain_error("ablate: kind must be step-size or supervision");
    }
  } catch (...) {
    flush_partial();
    throw;
  }

  write_csv(csv_path, header, csv_rows);
  write_svg_line_chart(svg_path, "ablation: " + kind, xs, {series});

  Json json_rows = Json::array();
  for (const auto& row : rows) json_rows.push_back(row.extra);
  Json report{{"command", "ablate"},
              {"kind", kind},
              {"rows", json_rows},
              {"csv", csv_path},
              {"plot", svg_path}};
  emit_report(args, "ablate", report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxlift: differentiable voxel-occupancy toolkit"};
  app.require_subcommand(1);

  GlobalArgs g_gen, g_lift, g_fit, g_train, g_render, g_eval, g_macs, g_ablate;

  auto* gen = app.add_subcommand("gen-scene", "rasterize a scene + 2D labels");
  add_global_flags(gen, g_gen);

  auto* lift = app.add_subcommand("lift", "project 2D features into a volume");
  add_global_flags(lift, g_lift);
  std::vector<std::string> lift_maps;
  std::string lift_rig;
  int lift_channels = 8, lift_res = 16;
  lift->add_option("--maps", lift_maps, "feature-map tensor bases");
  lift->add_option("--rig", lift_rig, "rig JSON (default: scene rig)");
  lift->add_option("--random-channels", lift_channels,
                   "channels for generated maps");
  lift->add_option("--random-res", lift_res, "resolution for generated maps");

  auto* fit = app.add_subcommand("fit", "optimize per-voxel fields");
  add_global_flags(fit, g_fit);

  auto* train = app.add_subcommand("train", "toy feed-forward training");
  add_global_flags(train, g_train);
  int tf_train = 8, tf_holdout = 2, tf_channels = 8, tf_res = 8;
  train->add_option("--train-frames", tf_train, "training frames");
  train->add_option("--holdout-frames", tf_holdout, "held-out frames");
  train->add_option("--channels", tf_channels, "feature channels");
  train->add_option("--feature-res", tf_res, "feature grid resolution");

  auto* render = app.add_subcommand("render", "render maps from fields");
  add_global_flags(render, g_render);
  std::string render_fields;
  int render_camera = 1;
  render->add_option("--fields", render_fields,
                     "checkpoint dir (default: GT fields)");
  render->add_option("--camera", render_camera, "camera id");

  auto* eval = app.add_subcommand("eval", "mIoU + precision/recall/F-score");
  add_global_flags(eval, g_eval);
  std::string eval_pred, eval_gt;
  double eval_delta = 0.0;
  eval->add_option("--pred", eval_pred, "predicted occupancy tensor base")
      ->required();
  eval->add_option("--gt", eval_gt, "ground-truth occupancy tensor base")
      ->required();
  eval->add_option("--delta", eval_delta,
                   "match threshold, meters (default: voxel size)");

  auto* macs = app.add_subcommand("macs", "2D->3D MAC cost model");
  add_global_flags(macs, g_macs);
  std::vector<int> macs_dims{200, 200, 16};
  int macs_cameras = 6, macs_channels = 256, macs_keys = 8;
  macs->add_option("--dims", macs_dims, "grid dims H W Z")->expected(3);
  macs->add_option("--cameras", macs_cameras, "camera count");
  macs->add_option("--channels", macs_channels, "feature channels");
  macs->add_option("--n-keys", macs_keys, "attention keys per query");

  auto* ablate = app.add_subcommand("ablate", "step-size or supervision sweep");
  add_global_flags(ablate, g_ablate);
  std::string ablate_kind;
  std::vector<std::uint64_t> ablate_seeds;
  int ab_train = 8, ab_holdout = 2, ab_channels = 8, ab_res = 8;
  ablate->add_option("--kind", ablate_kind, "step-size | supervision")
      ->required();
  ablate->add_option("--seeds", ablate_seeds, "seeds (supervision mode)");
  ablate->add_option("--train-frames", ab_train, "training frames");
  ablate->add_option("--holdout-frames", ab_holdout, "held-out frames");
  ablate->add_option("--channels", ab_channels, "feature channels");
  ablate->add_option("--feature-res", ab_res, "feature grid resolution");

  auto* schema_cmd = app.add_subcommand("schema", "print a report schema");
  std::string schema_name;
  schema_cmd->add_option("name", schema_name, "schema name (empty: list)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_scene(g_gen);
    if (lift->parsed())
      return cmd_lift(g_lift, lift_maps, lift_rig, lift_channels, lift_res);
    if (fit->parsed()) return cmd_fit(g_fit);
    if (train->parsed())
      return cmd_train(g_train, tf_train, tf_holdout, tf_channels, tf_res);
    if (render->parsed()) return cmd_render(g_render, render_fields, render_camera);
    if (eval->parsed()) return cmd_eval(g_eval, eval_pred, eval_gt, eval_delta);
    if (macs->parsed())
      return cmd_macs(g_macs, macs_dims, macs_cameras, macs_channels, macs_keys);
    if (ablate->parsed())
      return cmd_ablate(g_ablate, ablate_kind, ab_train, ab_holdout,
                        ab_channels, ab_res, ablate_seeds);
    if (schema_cmd->parsed()) {
      if (schema_name.empty()) {
        for (const auto& name : schema_names()) std::cout << name << "\n";
      } else {
        std::cout << schema(schema_name).dump(2) << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    Json err{{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
