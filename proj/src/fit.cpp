#include "voxlift/fit.hpp"

#include <algorithm>

namespace voxlift {

namespace {

constexpr int kGradSlots = 8;
constexpr int kRayChunk = 512;

// Maps an output pixel of a view rendered at (width, height) to a camera ray.
Rayd pixel_ray(const Camerad& camera, int row, int col, int width, int height,
               const SamplerConfigd& sampler) {
  const double su = double(camera.intrinsics.width) / width;
  const double sv = double(camera.intrinsics.height) / height;
  const double u = std::clamp((col + 0.5) * su - 0.5, 0.0,
                              camera.intrinsics.width - 1e-9);
  const double v = std::clamp((row + 0.5) * sv - 0.5, 0.0,
                              camera.intrinsics.height - 1e-9);
  return ray_through_pixel(camera, u, v, sampler.t_near, sampler.t_far);
}

// Per-ray forward state. Buffers are sized once to the longest possible ray
// so the hot loop never reallocates; `n` rows are valid. Trilinear taps are
// computed once per sample and shared by every field gather and by the
// backward scatter.
struct RayForward {
  RaySamplesd samples;
  int n = 0;
  VecXd tau;
  MatXd sem;   // max_n x (C+1)
  MatXd nrm;   // max_n x 3
  std::vector<TrilinearTaps<double>> taps;
  RayWeightsd weights;
  double depth = 0.0;
  VecXd sem_pix;
  RenderedNormal<double> normal_pix;

  void reserve(int max_n, int sem_channels) {
    if (tau.size() < max_n) {
      tau.resize(max_n);
      sem.resize(max_n, sem_channels);
      nrm.resize(max_n, 3);
      taps.resize(max_n);
    }
  }
};

int max_sample_count(const VoxelGridSpecd& spec, const SamplerConfigd& sampler) {
  if (sampler.strategy == SamplerConfigd::Strategy::stratified)
    return sampler.sample_count;
  const double diag =
      (spec.max_corner() - spec.min_corner).norm();
  return static_cast<int>(diag / sampler.resolved_step(spec.voxel_size)) + 2;
}

void trace_ray(const Camerad& camera, const RayRef& ref,
               const ViewTargets& view, const ScalarFieldd& density,
               const VectorFieldd& semantics, const VectorFieldd& normals,
               const SamplerConfigd& sampler, std::uint64_t stratified_seed,
               Index ray_index, RayForward& fwd,
               bool sem_probabilities = false) {
  const Rayd ray =
      pixel_ray(camera, ref.row, ref.col, view.width, view.height, sampler);
  if (sampler.strategy == SamplerConfigd::Strategy::stratified) {
    RngStream rng = RngStream::substream(stratified_seed, "strat",
                                         static_cast<std::uint64_t>(ray_index));
    fwd.samples = sample_along_ray(ray, density.spec, sampler, &rng);
  } else {
    fwd.samples = sample_along_ray(ray, density.spec, sampler);
  }
  const int n = fwd.samples.size();
  fwd.n = n;
  fwd.reserve(std::max(n, max_sample_count(density.spec, sampler)),
              semantics.channels);
  const bool nearest =
      sampler.field_sampling == SamplerConfigd::FieldSampling::nearest;
  const int channels = semantics.channels;
  const double* dens_v = density.values.data();
  const double* sem_v = semantics.values.data();
  const double* nrm_v = normals.values.data();
  for (int i = 0; i < n; ++i) {
    const Vec3d p = ray.at(fwd.samples.t[i]);
    const auto& taps = fwd.taps[i] = trilinear_taps(density.spec, p);
    double* sem_row = fwd.sem.data() + Index(i) * channels;
    double* nrm_row = fwd.nrm.data() + Index(i) * 3;
    std::fill(sem_row, sem_row + channels, 0.0);
    nrm_row[0] = nrm_row[1] = nrm_row[2] = 0.0;
    double tau = 0.0;
    for (int t = 0; t < taps.count; ++t) {
      const double w = taps.weight[t];
      const Index vox = taps.index[t];
      tau += w * dens_v[vox];
      const double* sem_src = sem_v + vox * channels;
      for (int c = 0; c < channels; ++c) sem_row[c] += w * sem_src[c];
      const double* nrm_src = nrm_v + vox * 3;
      nrm_row[0] += w * nrm_src[0];
      nrm_row[1] += w * nrm_src[1];
      nrm_row[2] += w * nrm_src[2];
    }
    fwd.tau[i] = nearest ? nearest_sample(density, p) : tau;
  }
  if (n > 0) {
    fwd.weights = compute_weights(fwd.tau.head(n), fwd.samples.delta);
    fwd.depth = render_depth(fwd.weights.w, fwd.samples.t);
    fwd.sem_pix =
        sem_probabilities
            ? render_semantics_probabilities(fwd.weights.w, fwd.sem.topRows(n),
                                             sampler.alpha)
            : render_semantics(fwd.weights.w, fwd.sem.topRows(n),
                               sampler.alpha);
    fwd.normal_pix = render_normal(fwd.weights.w, fwd.nrm.topRows(n));
  } else {
    fwd.weights = RayWeightsd{};
    fwd.weights.opacity = 0.0;
    fwd.depth = 0.0;
    fwd.sem_pix = VecXd::Zero(semantics.channels);
    fwd.normal_pix = RenderedNormal<double>{};
  }
}

struct RaySummary {
  double depth = 0.0;
  double opacity = 0.0;
  double distortion = 0.0;
  bool has_samples = false;
  bool depth_active = false;
  bool sem_active = false;
  bool normal_active = false;
};

}  // namespace

SupervisionMode supervision_from_string(const std::string& s) {
  if (s == "3d") return SupervisionMode::s3d;
  if (s == "3d+2d") return SupervisionMode::s3d2d;
  if (s == "2d-only" || s == "2d") return SupervisionMode::s2d;
  throw std::invalid_argument("unknown supervision mode: " + s);
}

std::string to_string(SupervisionMode mode) {
  switch (mode) {
    case SupervisionMode::s3d: return "3d";
    case SupervisionMode::s3d2d: return "3d+2d";
    case SupervisionMode::s2d: return "2d-only";
  }
  return "?";
}

FieldGrads FieldGrads::zeros(const VoxelGridSpecd& spec, int sem_channels) {
  FieldGrads g;
  g.density = VecXd::Zero(spec.num_voxels());
  g.sem = MatXd::Zero(spec.num_voxels(), sem_channels);
  g.normals = MatXd::Zero(spec.num_voxels(), 3);
  return g;
}

void FieldGrads::add(const FieldGrads& other) {
  density += other.density;
  sem += other.sem;
  normals += other.normals;
}

std::vector<RayRef> all_rays(const std::vector<ViewTargets>& views) {
  std::vector<RayRef> rays;
  for (int c = 0; c < static_cast<int>(views.size()); ++c) {
    const auto& v = views[c];
    for (int row = 0; row < v.height; ++row)
      for (int col = 0; col < v.width; ++col) rays.push_back({c, row, col});
  }
  return rays;
}

std::vector<RayRef> sample_rays(const std::vector<ViewTargets>& views,
                                int count, RngStream& rng) {
  std::vector<Index> cumulative;
  Index total = 0;
  for (const auto& v : views) {
    total += Index(v.width) * v.height;
    cumulative.push_back(total);
  }
  if (total == 0) throw std::invalid_argument("sample_rays: no pixels");
  std::vector<RayRef> rays;
  rays.reserve(count);
  for (int i = 0; i < count; ++i) {
    const Index pick = rng.uniform_int(0, total - 1);
    int view = 0;
    while (pick >= cumulative[view]) ++view;
    const Index local =
        pick - (view == 0 ? Index(0) : cumulative[view - 1]);
    rays.push_back({view, static_cast<int>(local / views[view].width),
                    static_cast<int>(local % views[view].width)});
  }
  return rays;
}

LossBreakdownd render_losses(const CameraRigd& rig,
                             const std::vector<ViewTargets>& views,
                             const ScalarFieldd& density,
                             const VectorFieldd& semantics,
                             const VectorFieldd& normals,
                             const std::vector<RayRef>& rays,
                             const RenderLossOptions& options,
                             FieldGrads* grads) {
  if (!(semantics.spec == density.spec) || !(normals.spec == density.spec))
    throw std::invalid_argument("render_losses: fields must share a grid spec");
  if (views.size() != static_cast<std::size_t>(rig.size()))
    throw std::invalid_argument("render_losses: one target set per camera");
  if (grads && options.sampler.field_sampling !=
                   SamplerConfigd::FieldSampling::trilinear)
    throw std::invalid_argument(
        "render_losses: gradients require trilinear field sampling");
  const Index n_rays = static_cast<Index>(rays.size());
  const auto& sampler = options.sampler;
  const auto& lw = options.weights;

  // Pass one: forward values, masks, and counts (the loss denominators).
  std::vector<RaySummary> summary(n_rays);
  std::vector<double> loss_terms(n_rays * 3, 0.0);  // depth, sem, normal
  parallel_for(n_rays, options.threads, [&](Index lo, Index hi) {
    RayForward fwd;
    for (Index r = lo; r < hi; ++r) {
      const RayRef& ref = rays[r];
      const auto& view = views[ref.view];
      trace_ray(rig.by_id(ref.view + 1), ref, view, density, semantics,
                normals, sampler, options.stratified_seed, r, fwd,
                options.sem_probabilities);
      RaySummary& s = summary[r];
      s.depth = fwd.depth;
      s.opacity = fwd.weights.opacity;
      s.has_samples = fwd.samples.size() > 0;
      if (s.has_samples)
        s.distortion = distortion(fwd.weights.w, fwd.samples.t,
                                  fwd.samples.reg_delta());
      const Index px = view.pixel(ref.row, ref.col);
      if (!view.depth_mask.empty() && view.depth_mask[px] &&
          (!options.mask_depth_by_opacity || s.opacity > options.opacity_min)) {
        s.depth_active = true;
        loss_terms[r * 3 + 0] = std::abs(s.depth - view.depth(ref.row, ref.col));
      }
      if (!view.sem_mask.empty() && view.sem_mask[px]) {
        s.sem_active = true;
        loss_terms[r * 3 + 1] =
            options.sem_probabilities
                ? -std::log(fwd.sem_pix[view.sem[px]] + 1e-12)
                : softmax_cross_entropy<double>(fwd.sem_pix, view.sem[px]);
      }
      if (!view.normal_mask.empty() && view.normal_mask[px]) {
        s.normal_active = true;
        const Vec3d nt = view.normal.row(px).transpose();
        loss_terms[r * 3 + 2] =
            (fwd.normal_pix.n - nt).lpNorm<1>() +
            std::abs(1.0 - fwd.normal_pix.n.dot(nt));
      }
    }
  });

  LossBreakdownd breakdown;
  for (Index r = 0; r < n_rays; ++r) {
    const RaySummary& s = summary[r];
    if (s.depth_active) {
      breakdown.depth += loss_terms[r * 3 + 0];
      ++breakdown.depth_count;
    }
    if (s.sem_active) {
      breakdown.sem2d += loss_terms[r * 3 + 1];
      ++breakdown.sem2d_count;
    }
    if (s.normal_active) {
      breakdown.normal += loss_terms[r * 3 + 2];
      ++breakdown.normal_count;
    }
    if (s.has_samples) {
      breakdown.reg += s.distortion;
      ++breakdown.ray_count;
    }
  }
  if (breakdown.depth_count > 0) breakdown.depth /= breakdown.depth_count;
  if (breakdown.sem2d_count > 0) breakdown.sem2d /= breakdown.sem2d_count;
  if (breakdown.normal_count > 0) breakdown.normal /= breakdown.normal_count;
  if (breakdown.ray_count > 0) breakdown.reg /= breakdown.ray_count;
  breakdown.total = lw.lambda_d * breakdown.depth + lw.lambda_s * breakdown.sem2d +
                    lw.lambda_n * breakdown.normal + lw.lambda_r * breakdown.reg;

  if (!grads) return breakdown;

  // Pass two: per-ray adjoints scattered into fixed slot buffers; slots are
  // reduced in index order, so any thread count gives the same bits.
  std::vector<FieldGrads> slots(kGradSlots);
  for (auto& s : slots) s = FieldGrads::zeros(density.spec, semantics.channels);
  const Index n_chunks = (n_rays + kRayChunk - 1) / kRayChunk;

  const int max_n = max_sample_count(density.spec, options.sampler);
  parallel_for(kGradSlots, options.threads, [&](Index slot_lo, Index slot_hi) {
    RayForward fwd;
    MatXd grad_sem_rows(max_n, semantics.channels);
    VecXd grad_w_buf(max_n);
    for (Index slot = slot_lo; slot < slot_hi; ++slot) {
      FieldGrads& acc = slots[slot];
      for (Index chunk = slot; chunk < n_chunks; chunk += kGradSlots) {
        const Index lo = chunk * kRayChunk;
        const Index hi = std::min(n_rays, lo + kRayChunk);
        for (Index r = lo; r < hi; ++r) {
          const RayRef& ref = rays[r];
          const auto& view = views[ref.view];
          const RaySummary& s = summary[r];
          if (!s.has_samples) continue;
          trace_ray(rig.by_id(ref.view + 1), ref, view, density, semantics,
                    normals, sampler, options.stratified_seed, r, fwd,
                    options.sem_probabilities);
          const int n = fwd.samples.size();
          const Index px = view.pixel(ref.row, ref.col);

          auto grad_w = grad_w_buf.head(n);
          grad_w.setZero();
          Vec3d grad_nacc = Vec3d::Zero();
          bool use_sem = false, use_normal = false;

          if (s.depth_active && breakdown.depth_count > 0) {
            const double diff = s.depth - view.depth(ref.row, ref.col);
            const double g = lw.lambda_d *
                             (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) /
                             double(breakdown.depth_count);
            grad_w += g * fwd.samples.t;
          }
          if (s.sem_active && breakdown.sem2d_count > 0) {
            const int m_s = semantic_sample_count<double>(n, sampler.alpha);
            grad_sem_rows.topRows(n).setZero();
            const double scale = lw.lambda_s / double(breakdown.sem2d_count);
            if (options.sem_probabilities) {
              // L = -log(p[label] + eps), p = sum_i w_i softmax(sem_i).
              const double dL_dp =
                  -scale / (fwd.sem_pix[view.sem[px]] + 1e-12);
              VecXd probs(semantics.channels);
              for (int i = 0; i < m_s; ++i) {
                const double m = fwd.sem.row(i).head(semantics.channels)
                                     .maxCoeff();
                double z = 0.0;
                for (int c = 0; c < semantics.channels; ++c) {
                  probs[c] = std::exp(fwd.sem(i, c) - m);
                  z += probs[c];
                }
                probs /= z;
                grad_w[i] += probs[view.sem[px]] * dL_dp;
                // (diag(s) - s s^T) applied to the one-hot cotangent.
                const double gi = fwd.weights.w[i] * dL_dp;
                for (int c = 0; c < semantics.channels; ++c)
                  grad_sem_rows(i, c) =
                      gi * probs[c] *
                      ((c == view.sem[px] ? 1.0 : 0.0) - probs[view.sem[px]]);
              }
            } else {
              VecXd g_logits;
              softmax_cross_entropy<double>(fwd.sem_pix, view.sem[px],
                                            &g_logits);
              g_logits *= scale;
              for (int i = 0; i < m_s; ++i) {
                grad_w[i] += fwd.sem.row(i).head(semantics.channels)
                                 .dot(g_logits.transpose());
                grad_sem_rows.row(i) = fwd.weights.w[i] * g_logits.transpose();
              }
            }
            use_sem = true;
          }
          if (s.normal_active && breakdown.normal_count > 0 &&
              !fwd.normal_pix.no_surface) {
            const Vec3d nt = view.normal.row(px).transpose();
            const Vec3d n_pix = fwd.normal_pix.n;
            Vec3d g = (n_pix - nt).cwiseSign();
            const double one_minus = 1.0 - n_pix.dot(nt);
            g += (one_minus > 0 ? -1.0 : (one_minus < 0 ? 1.0 : 0.0)) * nt;
            g *= lw.lambda_n / double(breakdown.normal_count);
            // Through the post-accumulation normalization.
            grad_nacc = (g - n_pix * n_pix.dot(g)) / fwd.normal_pix.norm;
            for (int i = 0; i < n; ++i)
              grad_w[i] += fwd.nrm.row(i).head(3).dot(grad_nacc.transpose());
            use_normal = true;
          }
          if (breakdown.ray_count > 0 && lw.lambda_r != 0.0) {
            grad_w += (lw.lambda_r / double(breakdown.ray_count)) *
                      distortion_grad_w(fwd.weights.w, fwd.samples.t,
                                        fwd.samples.reg_delta());
          }

          const VecXd grad_tau = weights_backward(
              fwd.tau.head(n), fwd.samples.delta, fwd.weights, grad_w);

          const int channels = semantics.channels;
          double* acc_dens = acc.density.data();
          double* acc_sem = acc.sem.data();
          double* acc_nrm = acc.normals.data();
          for (int i = 0; i < n; ++i) {
            const auto& taps = fwd.taps[i];
            const double* g_sem = grad_sem_rows.data() + Index(i) * channels;
            const double wn = use_normal ? fwd.weights.w[i] : 0.0;
            for (int t = 0; t < taps.count; ++t) {
              const Index vox = taps.index[t];
              const double w = taps.weight[t];
              acc_dens[vox] += w * grad_tau[i];
              if (use_sem) {
                double* dst = acc_sem + vox * channels;
                for (int c = 0; c < channels; ++c) dst[c] += w * g_sem[c];
              }
              if (use_normal) {
                double* dst = acc_nrm + vox * 3;
                const double ww = w * wn;
                dst[0] += ww * grad_nacc[0];
                dst[1] += ww * grad_nacc[1];
                dst[2] += ww * grad_nacc[2];
              }
            }
          }
        }
      }
    }
  });
  for (const auto& slot : slots) grads->add(slot);
  return breakdown;
}

// ---------------------------------------------------------------------------
// fit_scene

namespace {

double inverse_softplus(double y) {
  // softplus(x) = y  =>  x = log(exp(y) - 1)
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

// Per-voxel unit normals from raw parameters; rows with tiny norm stay zero.
void activate_normals(const MatXd& raw, MatXd& unit, VecXd& norms) {
  unit.setZero(raw.rows(), 3);
  norms.resize(raw.rows());
  for (Index v = 0; v < raw.rows(); ++v) {
    const double norm = raw.row(v).norm();
    norms[v] = norm;
    if (norm > kNormalNormFloor) unit.row(v) = raw.row(v) / norm;
  }
}

void normals_backward(const MatXd& raw, const MatXd& unit, const VecXd& norms,
                      const MatXd& grad_unit, MatXd& grad_raw) {
  grad_raw.setZero(raw.rows(), 3);
  for (Index v = 0; v < raw.rows(); ++v) {
    if (norms[v] <= kNormalNormFloor) continue;
    const Vec3d u = unit.row(v).transpose();
    const Vec3d g = grad_unit.row(v).transpose();
    grad_raw.row(v) = ((g - u * u.dot(g)) / norms[v]).transpose();
  }
}

}  // namespace

SceneParams SceneParams::init(const VoxelGridSpecd& spec, int num_classes,
                              double init_density, std::uint64_t seed) {
  SceneParams params;
  const Index n = spec.num_voxels();
  params.raw_density =
      VecXd::Constant(n, inverse_softplus(std::max(init_density, 1e-6)));
  params.sem_logits = MatXd::Zero(n, num_classes + 1);
  params.raw_normals.resize(n, 3);
  RngStream rng = RngStream::substream(seed, "init");
  for (Index i = 0; i < params.raw_normals.size(); ++i)
    params.raw_normals.data()[i] = 0.1 * rng.normal();
  return params;
}

LossBreakdownd scene_objective(const CameraRigd& rig,
                               const TrainTargets& targets,
                               const VoxelGridSpecd& spec, const FitConfig& cfg,
                               const std::vector<RayRef>& rays,
                               const SceneParams& params,
                               std::uint64_t stratified_seed,
                               SceneParams* grads) {
  const Index n = spec.num_voxels();
  const int ch = cfg.num_classes + 1;
  const bool use_2d = cfg.supervision != SupervisionMode::s3d;
  const bool use_3d =
      cfg.supervision != SupervisionMode::s2d && targets.gt_occ.has_value();

  ScalarFieldd density{spec, VecXd(n)};
  for (Index v = 0; v < n; ++v)
    density.values[v] = softplus(params.raw_density[v]);
  VectorFieldd sem_field{spec, ch, params.sem_logits};
  VectorFieldd normal_field{spec, 3, MatXd()};
  VecXd normal_norms;
  activate_normals(params.raw_normals, normal_field.values, normal_norms);

  FieldGrads field_grads;
  if (grads) field_grads = FieldGrads::zeros(spec, ch);
  LossBreakdownd breakdown;

  if (use_2d && !rays.empty()) {
    RenderLossOptions options;
    options.sampler = cfg.sampler;
    options.weights = cfg.weights;
    options.opacity_min = cfg.opacity_min;
    options.mask_depth_by_opacity = cfg.mask_depth_by_opacity;
    options.sem_probabilities = cfg.sem_probabilities;
    options.threads = cfg.threads;
    options.stratified_seed = stratified_seed;
    breakdown = render_losses(rig, targets.views, density, sem_field,
                              normal_field, rays, options,
                              grads ? &field_grads : nullptr);
  }
  if (use_3d) {
    MatXd grad3d;
    Index count = 0;
    breakdown.sem3d = loss_semantic_3d(sem_field, *targets.gt_occ, &count,
                                       grads ? &grad3d : nullptr);
    breakdown.sem3d_count = count;
    breakdown.total += breakdown.sem3d;
    if (grads) field_grads.sem += grad3d;
  }

  if (grads) {
    grads->raw_density.resize(n);
    for (Index v = 0; v < n; ++v)
      grads->raw_density[v] =
          field_grads.density[v] * sigmoid(params.raw_density[v]);
    grads->sem_logits = std::move(field_grads.sem);
    normals_backward(params.raw_normals, normal_field.values, normal_norms,
                     field_grads.normals, grads->raw_normals);
  }
  return breakdown;
}

FitResult fit_scene(const CameraRigd& rig, const TrainTargets& targets,
                    const VoxelGridSpecd& spec, const FitConfig& cfg) {
  rig.validate();
  spec.validate();
  if (cfg.num_classes < 1)
    throw std::invalid_argument("fit_scene: num_classes must be >= 1");
  const bool use_2d = cfg.supervision != SupervisionMode::s3d;
  const bool use_3d =
      cfg.supervision != SupervisionMode::s2d && targets.gt_occ.has_value();
  if (use_2d && !targets.has_any_2d())
    throw std::invalid_argument("fit_scene: no 2D targets provided");
  if (!use_2d && !use_3d)
    throw std::invalid_argument("fit_scene: no supervision targets at all");
  if (use_2d && targets.views.size() != static_cast<std::size_t>(rig.size()))
    throw std::invalid_argument("fit_scene: one view target set per camera");

  const Index n = spec.num_voxels();
  const int ch = cfg.num_classes + 1;
  SceneParams params =
      SceneParams::init(spec, cfg.num_classes, cfg.init_density, cfg.seed);

  AdamMomentsd m_density = AdamMomentsd::zeros(n);
  AdamMomentsd m_sem = AdamMomentsd::zeros(n * ch);
  AdamMomentsd m_normals = AdamMomentsd::zeros(n * 3);

  FitResult result;
  RngStream ray_rng = RngStream::substream(cfg.seed, "sampler");
  const std::vector<RayRef> full_batch = use_2d ? all_rays(targets.views)
                                                : std::vector<RayRef>{};

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    AdamConfigd adam = cfg.adam;
    if (cfg.lr_schedule == LrSchedule::cosine) {
      const double t = double(iter) / std::max(1, cfg.iterations - 1);
      const double scale =
          cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(M_PI * t));
      adam.lr *= scale;
    }
    std::vector<RayRef> batch;
    const std::vector<RayRef>* rays = &full_batch;
    if (use_2d && cfg.rays_per_iter > 0) {
      batch = sample_rays(targets.views, cfg.rays_per_iter, ray_rng);
      rays = &batch;
    }
    const std::uint64_t strat =
        cfg.seed ^ (0x5851f42d4c957f2dull * (std::uint64_t(iter) + 1));
    SceneParams grads;
    const LossBreakdownd breakdown = scene_objective(
        rig, targets, spec, cfg, *rays, params, strat, &grads);
    if (!std::isfinite(breakdown.total))
      throw std::runtime_error("fit_scene: loss diverged at iteration " +
                               std::to_string(iter));
    result.trace.push_back(breakdown);

    const long step = iter + 1;
    adam_step(params.raw_density.data(), grads.raw_density.data(), n,
              m_density, adam, step, "density");
    adam_step(params.sem_logits.data(), grads.sem_logits.data(), n * ch, m_sem,
              adam, step, "sem_logits");
    adam_step(params.raw_normals.data(), grads.raw_normals.data(), n * 3,
              m_normals, adam, step, "normals");

    if (targets.gt_occ && cfg.trace_every > 0 &&
        ((iter + 1) % cfg.trace_every == 0 || iter + 1 == cfg.iterations)) {
      ScalarFieldd density{spec, VecXd(n)};
      for (Index v = 0; v < n; ++v)
        density.values[v] = softplus(params.raw_density[v]);
      VectorFieldd sem_field{spec, ch, params.sem_logits};
      const auto occ = decode_density_occupancy(density, sem_field);
      result.iou_trace.emplace_back(iter + 1,
                                    geometry_iou(occ, *targets.gt_occ).iou);
    }
  }

  ScalarFieldd density{spec, VecXd(n)};
  for (Index v = 0; v < n; ++v)
    density.values[v] = softplus(params.raw_density[v]);
  MatXd unit;
  VecXd norms;
  activate_normals(params.raw_normals, unit, norms);
  result.raw_density = {spec, params.raw_density};
  result.density = density;
  result.sem_logits = {spec, ch, params.sem_logits};
  result.raw_normals = {spec, 3, params.raw_normals};
  result.normals = {spec, 3, unit};
  return result;
}

// ---------------------------------------------------------------------------
// train_feedforward

LossBreakdownd ff_objective(const FfFrame& frame, const FeatureVolumed& volume,
                            const FitConfig& cfg,
                            const std::vector<RayRef>& rays,
                            const HeadParamsd& params,
                            std::uint64_t stratified_seed, HeadGradsd* grads) {
  const bool use_2d = cfg.supervision != SupervisionMode::s3d;
  const bool use_3d = cfg.supervision != SupervisionMode::s2d;

  HeadCached cache;
  const HeadOutputsd outs = head_forward(volume, params, &cache);

  FieldGrads field_grads;
  if (grads) field_grads = FieldGrads::zeros(volume.spec, cfg.num_classes + 1);
  LossBreakdownd breakdown;
  if (use_2d && !rays.empty()) {
    RenderLossOptions options;
    options.sampler = cfg.sampler;
    options.weights = cfg.weights;
    options.opacity_min = cfg.opacity_min;
    options.mask_depth_by_opacity = cfg.mask_depth_by_opacity;
    options.sem_probabilities = cfg.sem_probabilities;
    options.threads = cfg.threads;
    options.stratified_seed = stratified_seed;
    breakdown = render_losses(frame.rig, frame.targets.views, outs.density,
                              outs.semantics, outs.normals, rays, options,
                              grads ? &field_grads : nullptr);
  }
  if (use_3d) {
    if (!frame.targets.gt_occ)
      throw std::invalid_argument("ff_objective: 3D supervision needs gt_occ");
    MatXd grad3d;
    Index count = 0;
    breakdown.sem3d = loss_semantic_3d(outs.semantics, *frame.targets.gt_occ,
                                       &count, grads ? &grad3d : nullptr);
    breakdown.sem3d_count = count;
    breakdown.total += breakdown.sem3d;
    if (grads) field_grads.sem += grad3d;
  }
  if (grads)
    *grads = head_backward(volume, params, cache, field_grads.sem,
                           field_grads.density, field_grads.normals);
  return breakdown;
}

FfResult train_feedforward(const std::vector<FfFrame>& frames,
                           const VoxelGridSpecd& spec, const FfConfig& cfg) {
  if (frames.empty())
    throw std::invalid_argument("train_feedforward: need at least one frame");
  spec.validate();
  const FitConfig& fc = cfg.fit;
  const bool use_2d = fc.supervision != SupervisionMode::s3d;

  // Feature maps are fixed, so the lifted volumes are loop invariants.
  std::vector<FeatureVolumed> volumes;
  LiftConfigd lift_cfg;
  lift_cfg.threads = fc.threads;
  for (const auto& frame : frames) {
    frame.rig.validate();
    volumes.push_back(lift_features(frame.rig, frame.maps, spec, lift_cfg));
  }
  const int in_channels = volumes[0].channels;

  RngStream init_rng = RngStream::substream(fc.seed, "init");
  HeadParamsd params = HeadParamsd::random_init(
      in_channels, fc.num_classes, init_rng, cfg.use_conv, cfg.init_scale);

  AdamMomentsd m_weight = AdamMomentsd::zeros(params.weight.size());
  AdamMomentsd m_bias = AdamMomentsd::zeros(params.bias.size());
  AdamMomentsd m_conv = AdamMomentsd::zeros(params.conv_kernel.size());

  RngStream ray_rng = RngStream::substream(fc.seed, "sampler");
  FfResult result;

  for (int iter = 0; iter < fc.iterations; ++iter) {
    const int f = iter % static_cast<int>(frames.size());
    const auto& frame = frames[f];
    std::vector<RayRef> rays;
    if (use_2d)
      rays = fc.rays_per_iter > 0
                 ? sample_rays(frame.targets.views, fc.rays_per_iter, ray_rng)
                 : all_rays(frame.targets.views);
    const std::uint64_t strat =
        fc.seed ^ (0x5851f42d4c957f2dull * (std::uint64_t(iter) + 1));
    HeadGradsd grads;
    const LossBreakdownd breakdown =
        ff_objective(frame, volumes[f], fc, rays, params, strat, &grads);
    if (!std::isfinite(breakdown.total))
      throw std::runtime_error(
          "train_feedforward: loss diverged at iteration " +
          std::to_string(iter));
    result.trace.push_back(breakdown);

    const long step = iter + 1;
    adam_step(params.weight.data(), grads.weight.data(), params.weight.size(),
              m_weight, fc.adam, step, "head.weight");
    adam_step(params.bias.data(), grads.bias.data(), params.bias.size(),
              m_bias, fc.adam, step, "head.bias");
    if (params.use_conv)
      adam_step(params.conv_kernel.data(), grads.conv_kernel.data(),
                params.conv_kernel.size(), m_conv, fc.adam, step, "head.conv");
  }
  result.params = params;
  return result;
}

SemanticOccupancyd feedforward_decode(const FfFrame& frame,
                                      const VoxelGridSpecd& spec,
                                      const HeadParamsd& params) {
  LiftConfigd lift_cfg;
  const auto volume = lift_features(frame.rig, frame.maps, spec, lift_cfg);
  const auto outs = head_forward(volume, params);
  return decode_occupancy(outs.semantics);
}

// ---------------------------------------------------------------------------
// Evaluation helpers.

std::vector<std::uint8_t> observed_voxel_mask(const VoxelGridSpecd& spec,
                                              const CameraRigd& rig,
                                              const ScalarFieldd& gt_density,
                                              double min_transmittance) {
  rig.validate();
  if (!(gt_density.spec == spec))
    throw std::invalid_argument("observed_voxel_mask: spec mismatch");
  std::vector<std::uint8_t> mask(spec.num_voxels(), 0);
  const double step = 0.25 * spec.voxel_size;
  for (Index v = 0; v < spec.num_voxels(); ++v) {
    const Vec3d p = spec.center(v);
    for (const auto& camera : rig.cameras) {
      const auto proj = project_point(camera, p);
      if (!proj) continue;
      const Vec3d origin = camera.center();
      const Vec3d dir = (p - origin).normalized();
      const double t_total = (p - origin).norm();
      // Integrate to just before the voxel itself.
      const double t_stop = std::max(0.0, t_total - 0.75 * spec.voxel_size);
      double optical_depth = 0.0;
      for (double t = 0.5 * step; t < t_stop; t += step)
        optical_depth +=
            step * nearest_sample(gt_density, (origin + t * dir).eval());
      if (std::exp(-optical_depth) > min_transmittance) {
        mask[v] = 1;
        break;
      }
    }
  }
  return mask;
}

SemanticOccupancyd decode_density_occupancy(const ScalarFieldd& density,
                                            const VectorFieldd& sem_logits,
                                            double min_opacity) {
  if (!(density.spec == sem_logits.spec))
    throw std::invalid_argument("decode_density_occupancy: spec mismatch");
  const int num_classes = sem_logits.channels - 1;
  SemanticOccupancyd occ =
      SemanticOccupancyd::all_free(density.spec, num_classes);
  for (Index v = 0; v < density.spec.num_voxels(); ++v) {
    const double opacity =
        -std::expm1(-density.values[v] * density.spec.voxel_size);
    if (opacity < min_opacity) continue;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (sem_logits.values(v, c) > sem_logits.values(v, best)) best = c;
    occ.labels[v] = static_cast<std::uint8_t>(best);
  }
  return occ;
}

GeometryIoU geometry_iou(const SemanticOccupancyd& pred,
                         const SemanticOccupancyd& gt,
                         const std::vector<std::uint8_t>& mask) {
  if (!(pred.spec == gt.spec))
    throw std::invalid_argument("geometry_iou: spec mismatch");
  GeometryIoU out;
  for (Index v = 0; v < gt.spec.num_voxels(); ++v) {
    if (!mask.empty() && !mask[v]) continue;
    if (gt.labels[v] == kIgnoreLabel) continue;
    const bool p = pred.labels[v] != kFreeLabel && pred.labels[v] != kIgnoreLabel;
    const bool g = gt.labels[v] != kFreeLabel;
    if (p && g) ++out.tp;
    else if (p) ++out.fp;
    else if (g) ++out.fn;
  }
  const std::int64_t denom = out.tp + out.fp + out.fn;
  out.iou = denom > 0 ? double(out.tp) / double(denom) : 0.0;
  return out;
}

double semantic_miou_on_recovered(const SemanticOccupancyd& pred,
                                  const SemanticOccupancyd& gt,
                                  const std::vector<std::uint8_t>& mask) {
  if (!(pred.spec == gt.spec) || pred.num_classes != gt.num_classes)
    throw std::invalid_argument("semantic_miou_on_recovered: mismatch");
  ConfusionCounts counts;
  counts.num_classes = gt.num_classes;
  counts.tp.assign(gt.num_classes, 0);
  counts.fp.assign(gt.num_classes, 0);
  counts.fn.assign(gt.num_classes, 0);
  for (Index v = 0; v < gt.spec.num_voxels(); ++v) {
    if (!mask.empty() && !mask[v]) continue;
    const std::uint8_t g = gt.labels[v];
    const std::uint8_t p = pred.labels[v];
    if (g == kIgnoreLabel || g == kFreeLabel) continue;
    if (p == kFreeLabel || p == kIgnoreLabel) continue;  // recovered only
    ++counts.evaluated;
    if (p == g) ++counts.tp[g];
    else {
      ++counts.fp[p];
      ++counts.fn[g];
    }
  }
  return miou(counts).miou;
}

double depth_mae(const RenderedMapsd& rendered, const ViewTargets& gt) {
  if (rendered.width != gt.width || rendered.height != gt.height)
    throw std::invalid_argument("depth_mae: resolution mismatch");
  double sum = 0.0;
  Index count = 0;
  for (int row = 0; row < gt.height; ++row)
    for (int col = 0; col < gt.width; ++col) {
      if (gt.depth_mask.empty() || !gt.depth_mask[gt.pixel(row, col)]) continue;
      sum += std::abs(rendered.depth(row, col) - gt.depth(row, col));
      ++count;
    }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace voxlift
