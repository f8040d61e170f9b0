#pragma once

#include <limits>
#include <utility>

#include "voxlift/geometry.hpp"
#include "voxlift/grid.hpp"

namespace voxlift {

// ---------------------------------------------------------------------------
// Ray sampling.

template <class S>
struct SamplerConfig {
  enum class Strategy { fixed, stratified };
  enum class FieldSampling { trilinear, nearest };

  Strategy strategy = Strategy::fixed;
  S step_size = S(0);       // fixed strategy; 0 means 0.5 * voxel_size
  int sample_count = 64;    // stratified strategy: M bins
  S alpha = S(1);           // semantic render uses the first ceil(alpha*M)
  S t_near = S(0);
  S t_far = S(1e9);
  S delta_cap = S(1e10);    // interval assigned to the last sample
  FieldSampling field_sampling = FieldSampling::trilinear;

  S resolved_step(S voxel_size) const {
    return step_size > S(0) ? step_size : S(0.5) * voxel_size;
  }

  void validate() const {
    if (strategy == Strategy::stratified && sample_count < 2)
      throw std::invalid_argument("SamplerConfig: stratified needs M >= 2");
    if (!(alpha > S(0)) || alpha > S(1))
      throw std::invalid_argument("SamplerConfig: alpha must be in (0, 1]");
    if (!(t_near < t_far))
      throw std::invalid_argument("SamplerConfig: t_near must be < t_far");
  }
};

// Entry/exit of a ray against an axis-aligned box; nullopt on a miss.
template <class S>
std::optional<std::pair<S, S>> ray_aabb(const Vec3<S>& origin,
                                        const Vec3<S>& direction,
                                        const Vec3<S>& box_min,
                                        const Vec3<S>& box_max) {
  S t0 = -std::numeric_limits<S>::infinity();
  S t1 = std::numeric_limits<S>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (direction[a] == S(0)) {
      if (origin[a] < box_min[a] || origin[a] > box_max[a])
        return std::nullopt;
      continue;
    }
    S lo = (box_min[a] - origin[a]) / direction[a];
    S hi = (box_max[a] - origin[a]) / direction[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(t0, t1);
}

template <class S>
struct RaySamples {
  VecX<S> t;      // ascending distances, meters
  VecX<S> delta;  // delta[i] = t[i+1] - t[i]; last = delta_cap
  // Geometric width of the last bin (to the grid exit). The transmittance
  // quadrature uses the cap so leftover mass lands on the final sample; the
  // distortion regularizer must use this finite width instead.
  S last_interval = S(0);

  int size() const { return static_cast<int>(t.size()); }

  VecX<S> reg_delta() const {
    VecX<S> out = delta;
    if (out.size() > 0) out[out.size() - 1] = last_interval;
    return out;
  }
};

// Fixed strategy: midpoints of `step`-sized strides over the clipped range.
// Stratified: M bins over the clipped range, one uniform draw per bin.
// An empty sample set is valid output (ray misses the grid).
template <class S>
RaySamples<S> sample_along_ray(const Ray<S>& ray, const VoxelGridSpec<S>& spec,
                               const SamplerConfig<S>& cfg,
                               RngStream* rng = nullptr) {
  cfg.validate();
  RaySamples<S> out;
  const auto hit =
      ray_aabb(ray.origin, ray.direction, spec.min_corner, spec.max_corner());
  if (!hit) return out;
  const S t_lo = std::max({hit->first, ray.t_near, cfg.t_near});
  const S t_hi = std::min({hit->second, ray.t_far, cfg.t_far});
  if (!(t_lo < t_hi)) return out;

  if (cfg.strategy == SamplerConfig<S>::Strategy::fixed) {
    const S step = cfg.resolved_step(spec.voxel_size);
    const int n = static_cast<int>(std::floor((t_hi - t_lo) / step));
    if (n <= 0) return out;
    out.t.resize(n);
    for (int i = 0; i < n; ++i) out.t[i] = t_lo + (S(i) + S(0.5)) * step;
  } else {
    if (!rng)
      throw std::invalid_argument("sample_along_ray: stratified needs an rng");
    const int n = cfg.sample_count;
    const S bin = (t_hi - t_lo) / S(n);
    out.t.resize(n);
    for (int i = 0; i < n; ++i)
      out.t[i] = t_lo + (S(i) + S(rng->uniform())) * bin;
  }
  const int n = out.size();
  out.delta.resize(n);
  for (int i = 0; i + 1 < n; ++i) out.delta[i] = out.t[i + 1] - out.t[i];
  out.delta[n - 1] = cfg.delta_cap;
  out.last_interval = t_hi - out.t[n - 1];
  return out;
}

// ---------------------------------------------------------------------------
// Transmittance and rendering weights.
//
//   T[0] = 1,  T[i] = exp(-sum_{j<i} tau[j] * delta[j])
//   w[i] = T[i] * (1 - exp(-tau[i] * delta[i]))

template <class S>
struct RayWeights {
  VecX<S> transmittance;
  VecX<S> w;
  S opacity = S(0);  // sum of w, in [0, 1]
};

template <class TauT, class DeltaT>
RayWeights<typename TauT::Scalar> compute_weights(
    const Eigen::MatrixBase<TauT>& tau, const Eigen::MatrixBase<DeltaT>& delta) {
  using S = typename TauT::Scalar;
  const int n = static_cast<int>(tau.size());
  if (delta.size() != n)
    throw std::invalid_argument("compute_weights: tau/delta length mismatch");
  RayWeights<S> out;
  out.transmittance.resize(n);
  out.w.resize(n);
  S optical_depth = S(0);
  for (int i = 0; i < n; ++i) {
    if (tau[i] < S(0))
      throw std::domain_error("compute_weights: negative density");
    const S T = std::exp(-optical_depth);
    out.transmittance[i] = T;
    out.w[i] = T * (-std::expm1(-tau[i] * delta[i]));
    out.opacity += out.w[i];
    optical_depth += tau[i] * delta[i];
  }
  return out;
}

// Adjoint of compute_weights:
//   dL/dtau[j] = g[j] * T[j] * delta[j] * exp(-tau[j]*delta[j])
//              - delta[j] * sum_{i>j} g[i] * w[i]
template <class TauT, class DeltaT, class GradT, class S>
VecX<S> weights_backward(const Eigen::MatrixBase<TauT>& tau,
                         const Eigen::MatrixBase<DeltaT>& delta,
                         const RayWeights<S>& fwd,
                         const Eigen::MatrixBase<GradT>& grad_w) {
  const int n = static_cast<int>(tau.size());
  VecX<S> grad_tau(n);
  S downstream = S(0);  // sum_{i>j} g[i] * w[i]
  for (int j = n - 1; j >= 0; --j) {
    const S self = grad_w[j] * fwd.transmittance[j] * delta[j] *
                   std::exp(-tau[j] * delta[j]);
    grad_tau[j] = self - delta[j] * downstream;
    downstream += grad_w[j] * fwd.w[j];
  }
  return grad_tau;
}

// ---------------------------------------------------------------------------
// Rendered quantities. Depth and semantics are plain weighted sums; the
// normal is renormalized after accumulation.

template <class WT, class TT>
typename WT::Scalar render_depth(const Eigen::MatrixBase<WT>& w,
                                 const Eigen::MatrixBase<TT>& t) {
  if (w.size() != t.size())
    throw std::invalid_argument("render_depth: length mismatch");
  return w.dot(t);
}

template <class S>
int semantic_sample_count(int n, S alpha) {
  if (!(alpha > S(0)) || alpha > S(1))
    throw std::domain_error("render_semantics: alpha must be in (0, 1]");
  return std::min<int>(n, static_cast<int>(std::ceil(alpha * S(n))));
}

// Weighted per-sample softmax instead of raw logits (config option; the
// default semantic render accumulates logits and softmax lives in the loss).
template <class WT, class SemT>
VecX<typename WT::Scalar> render_semantics_probabilities(
    const Eigen::MatrixBase<WT>& w, const Eigen::MatrixBase<SemT>& sem,
    typename WT::Scalar alpha = typename WT::Scalar(1)) {
  using S = typename WT::Scalar;
  if (sem.rows() != w.size())
    throw std::invalid_argument("render_semantics: length mismatch");
  const int m_s = semantic_sample_count<S>(static_cast<int>(w.size()), alpha);
  VecX<S> out = VecX<S>::Zero(sem.cols());
  VecX<S> probs(sem.cols());
  for (int i = 0; i < m_s; ++i) {
    const S m = sem.row(i).maxCoeff();
    S z = S(0);
    for (Index c = 0; c < sem.cols(); ++c) {
      probs[c] = std::exp(sem(i, c) - m);
      z += probs[c];
    }
    out += (w[i] / z) * probs;
  }
  return out;
}

template <class WT, class SemT>
VecX<typename WT::Scalar> render_semantics(
    const Eigen::MatrixBase<WT>& w, const Eigen::MatrixBase<SemT>& sem,
    typename WT::Scalar alpha = typename WT::Scalar(1)) {
  using S = typename WT::Scalar;
  if (sem.rows() != w.size())
    throw std::invalid_argument("render_semantics: length mismatch");
  const int m_s = semantic_sample_count<S>(static_cast<int>(w.size()), alpha);
  VecX<S> out = VecX<S>::Zero(sem.cols());
  for (int i = 0; i < m_s; ++i) out += w[i] * sem.row(i).transpose();
  return out;
}

template <class S>
struct RenderedNormal {
  Vec3<S> n = Vec3<S>::Zero();
  bool no_surface = true;
  S norm = S(0);  // pre-normalization accumulator norm (backward needs it)
};

template <class WT, class NrmT>
RenderedNormal<typename WT::Scalar> render_normal(
    const Eigen::MatrixBase<WT>& w, const Eigen::MatrixBase<NrmT>& normals) {
  using S = typename WT::Scalar;
  if (normals.rows() != w.size() || normals.cols() != 3)
    throw std::invalid_argument("render_normal: shape mismatch");
  RenderedNormal<S> out;
  Vec3<S> acc = Vec3<S>::Zero();
  for (Index i = 0; i < w.size(); ++i)
    acc += w[i] * normals.row(i).transpose();
  out.norm = acc.norm();
  if (out.norm > S(kNormalNormFloor)) {
    out.n = acc / out.norm;
    out.no_surface = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distortion regularizer (weight compactness along the ray):
//   L = sum_ij w_i w_j |t_i - t_j| + (1/3) sum_i w_i^2 delta_i
// computed in O(M) with prefix sums over the ascending t.

template <class WT, class TT, class DeltaT>
typename WT::Scalar distortion(const Eigen::MatrixBase<WT>& w,
                               const Eigen::MatrixBase<TT>& t,
                               const Eigen::MatrixBase<DeltaT>& delta) {
  using S = typename WT::Scalar;
  const int n = static_cast<int>(w.size());
  if (t.size() != n || delta.size() != n)
    throw std::invalid_argument("distortion: length mismatch");
  S cross = S(0), wsum = S(0), wtsum = S(0), self = S(0);
  for (int i = 0; i < n; ++i) {
    cross += w[i] * (t[i] * wsum - wtsum);
    wsum += w[i];
    wtsum += w[i] * t[i];
    self += w[i] * w[i] * delta[i];
  }
  return S(2) * cross + self / S(3);
}

// dL/dw_k = 2 * sum_j w_j |t_k - t_j| + (2/3) w_k delta_k
template <class WT, class TT, class DeltaT>
VecX<typename WT::Scalar> distortion_grad_w(const Eigen::MatrixBase<WT>& w,
                                            const Eigen::MatrixBase<TT>& t,
                                            const Eigen::MatrixBase<DeltaT>& delta) {
  using S = typename WT::Scalar;
  const int n = static_cast<int>(w.size());
  VecX<S> grad(n);
  S wsum_lo = S(0), wtsum_lo = S(0);
  S wsum_hi = w.sum();
  S wtsum_hi = w.dot(t);
  for (int k = 0; k < n; ++k) {
    wsum_hi -= w[k];
    wtsum_hi -= w[k] * t[k];
    grad[k] = S(2) * ((t[k] * wsum_lo - wtsum_lo) + (wtsum_hi - t[k] * wsum_hi)) +
              S(2) / S(3) * w[k] * delta[k];
    wsum_lo += w[k];
    wtsum_lo += w[k] * t[k];
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Full per-view render.

template <class S>
struct RenderedMaps {
  int width = 0, height = 0;
  int num_channels = 0;          // C+1 semantic channels
  MatX<S> depth;                 // height x width, meters
  MatX<S> opacity;               // height x width, [0, 1]
  MatX<S> sem_logits;            // (height*width) x (C+1)
  MatX<S> normal;                // (height*width) x 3, unit or zero
  std::vector<std::uint8_t> no_surface;  // per pixel

  Index pixel(int row, int col) const { return Index(row) * width + col; }
};

template <class S>
struct RenderViewConfig {
  SamplerConfig<S> sampler;
  int out_width = 0;   // 0 means camera resolution
  int out_height = 0;
  std::uint64_t seed = 0;  // stratified jitter stream
  int threads = 1;
  bool sem_probabilities = false;  // emit weighted softmax instead of logits
};

namespace detail {

template <class S>
S query_density(const ScalarField<S>& field, const Vec3<S>& p,
                typename SamplerConfig<S>::FieldSampling mode) {
  return mode == SamplerConfig<S>::FieldSampling::nearest
             ? nearest_sample(field, p)
             : trilinear_sample(field, p);
}

}  // namespace detail

// One ray per output pixel; per ray: sample, query fields, composite.
// Deterministic given the seed for any thread count (per-pixel substreams).
template <class S>
RenderedMaps<S> render_view(const Camera<S>& camera,
                            const ScalarField<S>& density,
                            const VectorField<S>& semantics,
                            const VectorField<S>& normals,
                            const RenderViewConfig<S>& cfg) {
  if (!(semantics.spec == density.spec) || !(normals.spec == density.spec))
    throw std::invalid_argument("render_view: fields must share one grid spec");
  if (normals.channels != 3)
    throw std::invalid_argument("render_view: normal field needs 3 channels");
  camera.validate();

  RenderedMaps<S> maps;
  maps.width = cfg.out_width > 0 ? cfg.out_width : camera.intrinsics.width;
  maps.height = cfg.out_height > 0 ? cfg.out_height : camera.intrinsics.height;
  maps.num_channels = semantics.channels;
  maps.depth = MatX<S>::Zero(maps.height, maps.width);
  maps.opacity = MatX<S>::Zero(maps.height, maps.width);
  maps.sem_logits = MatX<S>::Zero(Index(maps.height) * maps.width,
                                  semantics.channels);
  maps.normal = MatX<S>::Zero(Index(maps.height) * maps.width, 3);
  maps.no_surface.assign(Index(maps.height) * maps.width, 1);

  const S su = S(camera.intrinsics.width) / S(maps.width);
  const S sv = S(camera.intrinsics.height) / S(maps.height);
  const Index n_pixels = Index(maps.height) * maps.width;

  parallel_for(n_pixels, cfg.threads, [&](Index lo, Index hi) {
    for (Index px = lo; px < hi; ++px) {
      const int row = static_cast<int>(px / maps.width);
      const int col = static_cast<int>(px % maps.width);
      // Pixel centers of the output grid mapped into camera pixel coords.
      const S u = (S(col) + S(0.5)) * su - S(0.5);
      const S v = (S(row) + S(0.5)) * sv - S(0.5);
      const Ray<S> ray = ray_through_pixel(
          camera, std::max(S(0), std::min(u, S(camera.intrinsics.width) - S(1e-9))),
          std::max(S(0), std::min(v, S(camera.intrinsics.height) - S(1e-9))),
          cfg.sampler.t_near, cfg.sampler.t_far);
      RngStream rng = RngStream::substream(cfg.seed, "render.ray",
                                           static_cast<std::uint64_t>(px));
      const auto samples = sample_along_ray(ray, density.spec, cfg.sampler, &rng);
      const int n = samples.size();
      if (n == 0) continue;

      VecX<S> tau(n);
      MatX<S> sem(n, semantics.channels);
      MatX<S> nrm(n, 3);
      for (int i = 0; i < n; ++i) {
        const Vec3<S> p = ray.at(samples.t[i]);
        tau[i] = detail::query_density(density, p, cfg.sampler.field_sampling);
        sem.row(i) = trilinear_sample(semantics, p).transpose();
        nrm.row(i) = trilinear_sample(normals, p).transpose();
      }
      const auto weights = compute_weights(tau, samples.delta);
      maps.depth(row, col) = render_depth(weights.w, samples.t);
      maps.opacity(row, col) = weights.opacity;
      maps.sem_logits.row(px) =
          cfg.sem_probabilities
              ? render_semantics_probabilities(weights.w, sem,
                                               cfg.sampler.alpha).transpose()
              : render_semantics(weights.w, sem, cfg.sampler.alpha).transpose();
      const auto rn = render_normal(weights.w, nrm);
      maps.normal.row(px) = rn.n.transpose();
      maps.no_surface[px] = rn.no_surface ? 1 : 0;
    }
  });
  return maps;
}

using SamplerConfigd = SamplerConfig<double>;
using RaySamplesd = RaySamples<double>;
using RayWeightsd = RayWeights<double>;
using RenderedMapsd = RenderedMaps<double>;
using RenderViewConfigd = RenderViewConfig<double>;

}  // namespace voxlift
