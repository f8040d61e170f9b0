#pragma once

#include "voxlift/heads.hpp"
#include "voxlift/lift.hpp"
#include "voxlift/losses.hpp"
#include "voxlift/metrics.hpp"
#include "voxlift/optim.hpp"
#include "voxlift/render.hpp"

namespace voxlift {

// Per-camera 2D training targets at the render resolution. Sparse labels use
// the masks; depth is metric, semantics are surface classes (0..C-1), normal
// targets are unit vectors.
struct ViewTargets {
  int width = 0, height = 0;
  MatXd depth;
  std::vector<std::uint8_t> depth_mask;
  std::vector<int> sem;
  std::vector<std::uint8_t> sem_mask;
  MatXd normal;  // (height*width) x 3
  std::vector<std::uint8_t> normal_mask;

  Index pixel(int row, int col) const { return Index(row) * width + col; }
  bool empty() const { return width == 0 || height == 0; }
};

struct TrainTargets {
  std::optional<SemanticOccupancyd> gt_occ;
  std::vector<ViewTargets> views;  // per camera, rig id order (index = id-1)

  bool has_any_2d() const {
    for (const auto& v : views)
      if (!v.empty()) return true;
    return false;
  }
};

enum class SupervisionMode { s3d, s3d2d, s2d };

SupervisionMode supervision_from_string(const std::string& s);
std::string to_string(SupervisionMode mode);

enum class LrSchedule { constant, cosine };

struct FitConfig {
  SamplerConfigd sampler;
  LossWeightsd weights;
  AdamConfigd adam;
  LrSchedule lr_schedule = LrSchedule::constant;
  double lr_floor = 0.01;  // cosine end factor
  int iterations = 500;
  std::uint64_t seed = 0;
  int rays_per_iter = 4096;  // 0 renders every pixel of every view
  int trace_every = 50;      // IoU trace cadence when gt_occ is present
  int threads = 1;
  SupervisionMode supervision = SupervisionMode::s2d;
  double opacity_min = kDefaultOpacityMin;
  bool mask_depth_by_opacity = true;
  // 2D semantic CE on rendered logits (default) or on weighted per-sample
  // softmax probabilities.
  bool sem_probabilities = false;
  int num_classes = 1;          // C
  double init_density = 0.05;   // initial softplus output, 1/m
};

// ---------------------------------------------------------------------------
// Render-loss engine: 2D losses plus the distortion regularizer over a ray
// batch, with analytic gradients w.r.t. the three voxel fields.

struct RayRef {
  int view = 0;  // rig index (id - 1)
  int row = 0, col = 0;
};

struct FieldGrads {
  VecXd density;  // w.r.t. activated density
  MatXd sem;      // w.r.t. raw semantic logits
  MatXd normals;  // w.r.t. unit voxel normals

  static FieldGrads zeros(const VoxelGridSpecd& spec, int sem_channels);
  void add(const FieldGrads& other);
};

struct RenderLossOptions {
  SamplerConfigd sampler;
  LossWeightsd weights;
  double opacity_min = kDefaultOpacityMin;
  bool mask_depth_by_opacity = true;
  bool sem_probabilities = false;
  int threads = 1;
  // Stratified jitter stream root; per-ray substreams keep the two engine
  // passes (forward and backward) on identical sample positions.
  std::uint64_t stratified_seed = 0;
};

// Evaluates depth/semantic/normal losses and the distortion term over the
// given rays. When `grads` is non-null the analytic field gradients are
// accumulated (ray chunks are reduced in a fixed slot order, so results are
// identical for any thread count).
LossBreakdownd render_losses(const CameraRigd& rig,
                             const std::vector<ViewTargets>& views,
                             const ScalarFieldd& density,
                             const VectorFieldd& semantics,
                             const VectorFieldd& normals,
                             const std::vector<RayRef>& rays,
                             const RenderLossOptions& options,
                             FieldGrads* grads = nullptr);

// All pixels of all non-empty views.
std::vector<RayRef> all_rays(const std::vector<ViewTargets>& views);

// Seeded uniform draw (with replacement) over all pixels.
std::vector<RayRef> sample_rays(const std::vector<ViewTargets>& views,
                                int count, RngStream& rng);

// ---------------------------------------------------------------------------
// Scene fitting: direct per-voxel optimization of density, semantic logits,
// and normals against rendered-view losses (plus 3D CE when enabled).

// Raw (pre-activation) per-voxel parameters: density through softplus,
// normals through per-voxel normalization, semantic logits straight through.
struct SceneParams {
  VecXd raw_density;
  MatXd sem_logits;
  MatXd raw_normals;

  static SceneParams init(const VoxelGridSpecd& spec, int num_classes,
                          double init_density, std::uint64_t seed);
};

// One evaluation of the full fitting objective over `rays`, with gradients
// w.r.t. the raw parameters (the quantity the optimizer steps and finite
// differences check). stratified_seed pins jittered sample positions.
LossBreakdownd scene_objective(const CameraRigd& rig,
                               const TrainTargets& targets,
                               const VoxelGridSpecd& spec, const FitConfig& cfg,
                               const std::vector<RayRef>& rays,
                               const SceneParams& params,
                               std::uint64_t stratified_seed,
                               SceneParams* grads);

struct FitResult {
  ScalarFieldd raw_density;   // parameters
  ScalarFieldd density;       // softplus(raw)
  VectorFieldd sem_logits;    // C+1 channels
  VectorFieldd raw_normals;   // parameters
  VectorFieldd normals;       // unit per voxel
  std::vector<LossBreakdownd> trace;
  std::vector<std::pair<int, double>> iou_trace;  // (iteration, geometry IoU)
};

FitResult fit_scene(const CameraRigd& rig, const TrainTargets& targets,
                    const VoxelGridSpecd& spec, const FitConfig& cfg);

// ---------------------------------------------------------------------------
// Toy feed-forward training: fixed feature maps per frame, shared head.

struct FfFrame {
  CameraRigd rig;
  std::vector<FeatureMapd> maps;
  TrainTargets targets;
};

struct FfConfig {
  FitConfig fit;              // sampler/weights/optimizer/iterations/seed
  bool use_conv = false;
  double init_scale = 0.1;
};

struct FfResult {
  HeadParamsd params;
  std::vector<LossBreakdownd> trace;
};

// Objective for one frame of feed-forward training with gradients w.r.t. the
// head parameters; the training loop and the gradient checks share it.
LossBreakdownd ff_objective(const FfFrame& frame, const FeatureVolumed& volume,
                            const FitConfig& cfg,
                            const std::vector<RayRef>& rays,
                            const HeadParamsd& params,
                            std::uint64_t stratified_seed, HeadGradsd* grads);

FfResult train_feedforward(const std::vector<FfFrame>& frames,
                           const VoxelGridSpecd& spec, const FfConfig& cfg);

// Decoded occupancy of a head forward pass on one frame.
SemanticOccupancyd feedforward_decode(const FfFrame& frame,
                                      const VoxelGridSpecd& spec,
                                      const HeadParamsd& params);

// ---------------------------------------------------------------------------
// Evaluation helpers shared by fitting, ablations, and the CLI.

// Voxels visible from at least one camera: the center projects into the
// image and the ground-truth transmittance from the camera to the voxel
// boundary exceeds `min_transmittance`.
std::vector<std::uint8_t> observed_voxel_mask(
    const VoxelGridSpecd& spec, const CameraRigd& rig,
    const ScalarFieldd& gt_density, double min_transmittance = 0.05);

// Density decode: occupied where a voxel-sized step absorbs at least
// `min_opacity`; class = argmax over the C semantic channels.
SemanticOccupancyd decode_density_occupancy(const ScalarFieldd& density,
                                            const VectorFieldd& sem_logits,
                                            double min_opacity = 0.5);

struct GeometryIoU {
  double iou = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;
};

// Occupied-vs-occupied IoU over voxels where mask is set (empty mask = all).
GeometryIoU geometry_iou(const SemanticOccupancyd& pred,
                         const SemanticOccupancyd& gt,
                         const std::vector<std::uint8_t>& mask = {});

// mIoU over semantic classes restricted to voxels that are occupied in both
// prediction and ground truth (and in mask when given).
double semantic_miou_on_recovered(const SemanticOccupancyd& pred,
                                  const SemanticOccupancyd& gt,
                                  const std::vector<std::uint8_t>& mask = {});

// Mean |depth - gt| over gt-masked pixels of a rendered view.
double depth_mae(const RenderedMapsd& rendered, const ViewTargets& gt);

}  // namespace voxlift
