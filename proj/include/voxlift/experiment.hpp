#pragma once

#include "voxlift/io.hpp"

namespace voxlift {

// Scene-derived training targets for a set of cameras at a fixed render
// resolution. Dense labels come from exact ray casting; the "lidar" source
// replaces depth/semantic labels with sparse projected LiDAR returns.
TrainTargets build_targets(const SceneConfig& scene, const CameraRigd& rig,
                           const ExperimentConfig& cfg);

// Rig with the given camera ids removed and the rest renumbered 1..N.
CameraRigd subset_rig(const CameraRigd& rig, const std::vector<int>& drop_ids);

struct FitRun {
  FitResult fit;
  RasterizedScene gt;
  CameraRigd train_rig;
  std::vector<std::uint8_t> observed;  // over train_rig
  double geometry_iou = 0.0;           // observed voxels only
  double semantic_miou = 0.0;          // on recovered occupied voxels
  double holdout_depth_mae = 0.0;      // mean over holdout (or train) views
  Json report;
};

// Full scene-fitting experiment: build targets, fit, evaluate, report.
FitRun run_fit_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Toy feed-forward experiment (the supervision-ablation testbed). Frames
// share the base scene's rig and grid; every frame re-draws the movable
// primitives and its fixed random feature maps from the frame seed.

struct FfExperimentConfig {
  ExperimentConfig base;
  int n_train_frames = 8;
  int n_holdout_frames = 2;
  int feature_channels = 8;
  int feature_height = 8, feature_width = 8;
};

struct FfRun {
  FfResult trained;
  double train_miou = 0.0;
  double holdout_miou = 0.0;
  Json report;
};

SceneConfig make_frame_scene(const SceneConfig& base, std::uint64_t frame_seed);

FfFrame make_frame(const SceneConfig& base, const FfExperimentConfig& cfg,
                   std::uint64_t frame_seed);

FfRun run_train_experiment(const FfExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Ablations.

struct AblationRow {
  std::string label;
  double value = 0.0;             // primary metric (MAE or mIoU)
  Json extra;
};

// Step-size ablation: fit at {0.5, 1.0, 2.0} x voxel_size, report held-out
// depth MAE per step (plus IoU columns).
std::vector<AblationRow> run_step_ablation(const ExperimentConfig& base,
                                           const std::vector<double>& scales);

// Supervision ablation: feed-forward training with {3d, 3d+2d}; held-out
// mIoU per mode.
std::vector<AblationRow> run_supervision_ablation(
    const FfExperimentConfig& base, const std::vector<std::uint64_t>& seeds);

}  // namespace voxlift
