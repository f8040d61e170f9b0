#pragma once

#include <cstdint>

#include "voxlift/geometry.hpp"
#include "voxlift/grid.hpp"

namespace voxlift {

// Per-camera 2D feature tensor standing in for a backbone output. stride is
// image pixels per feature cell; cell (r, c) is centered at image coordinates
// ((c + 0.5) * stride - 0.5, (r + 0.5) * stride - 0.5), so stride = 1 puts
// feature cells exactly on image pixels.
template <class S>
struct FeatureMap {
  int camera_id = 1;
  int channels = 0;
  int height_f = 0, width_f = 0;
  S stride = S(1);
  MatX<S> values;  // (height_f * width_f) x channels, row-major cells

  Index cell_index(int r, int c) const { return Index(r) * width_f + c; }

  void validate(const Intrinsics<S>& intr) const {
    if (!(stride > S(0)))
      throw std::invalid_argument("FeatureMap: stride must be positive");
    if (values.rows() != Index(height_f) * width_f ||
        values.cols() != channels)
      throw std::invalid_argument("FeatureMap: value shape mismatch");
    if (S(height_f) * stride > S(intr.height) + stride ||
        S(width_f) * stride > S(intr.width) + stride)
      throw std::invalid_argument("FeatureMap: grid does not match image size");
  }
};

template <class S>
struct BilinearTaps {
  std::array<Index, 4> cell;
  std::array<S, 4> weight;
  int count = 0;
  bool valid = false;  // query inside the feature grid's center hull
};

// Taps for an image-space query (u, v). Valid queries lie within the convex
// hull of feature-cell centers; everything outside samples as zero.
template <class S>
BilinearTaps<S> bilinear_taps(const FeatureMap<S>& fm, S u, S v) {
  BilinearTaps<S> taps;
  const S gu = (u + S(0.5)) / fm.stride - S(0.5);
  const S gv = (v + S(0.5)) / fm.stride - S(0.5);
  taps.valid = gu >= S(0) && gu <= S(fm.width_f - 1) && gv >= S(0) &&
               gv <= S(fm.height_f - 1);
  if (!taps.valid) return taps;
  const int c0 = static_cast<int>(std::floor(gu));
  const int r0 = static_cast<int>(std::floor(gv));
  const S fu = gu - S(c0), fv = gv - S(r0);
  const S wc[2] = {S(1) - fu, fu};
  const S wr[2] = {S(1) - fv, fv};
  for (int dr = 0; dr < 2; ++dr) {
    const int r = r0 + dr;
    if (r < 0 || r >= fm.height_f) continue;
    for (int dc = 0; dc < 2; ++dc) {
      const int c = c0 + dc;
      if (c < 0 || c >= fm.width_f) continue;
      const S w = wr[dr] * wc[dc];
      if (w != S(0)) {
        taps.cell[taps.count] = fm.cell_index(r, c);
        taps.weight[taps.count] = w;
        ++taps.count;
      }
    }
  }
  return taps;
}

template <class S>
struct BilinearSample {
  VecX<S> value;
  bool valid = false;
};

template <class S>
BilinearSample<S> bilinear_sample_2d(const FeatureMap<S>& fm, S u, S v) {
  const auto taps = bilinear_taps(fm, u, v);
  BilinearSample<S> out;
  out.value = VecX<S>::Zero(fm.channels);
  out.valid = taps.valid;
  for (int t = 0; t < taps.count; ++t)
    out.value += taps.weight[t] * fm.values.row(taps.cell[t]).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Multi-view lifting: project each voxel center into every camera, bilinearly
// sample the 2D features of views with a valid projection, and average.

template <class S>
struct LiftConfig {
  enum class Divide { valid_count, n_cameras };
  Divide divide = Divide::valid_count;
  S z_min = S(kDefaultZMin);
  int threads = 1;
};

namespace detail {

// Maps indexed by camera id so that input order never affects results.
template <class S>
std::vector<const FeatureMap<S>*> maps_by_camera(
    const CameraRig<S>& rig, const std::vector<FeatureMap<S>>& maps) {
  rig.validate();
  if (static_cast<int>(maps.size()) != rig.size())
    throw std::invalid_argument("lift: need exactly one feature map per camera");
  std::vector<const FeatureMap<S>*> by_id(rig.size(), nullptr);
  for (const auto& fm : maps) {
    if (fm.camera_id < 1 || fm.camera_id > rig.size() ||
        by_id[fm.camera_id - 1] != nullptr)
      throw std::invalid_argument("lift: feature-map camera ids must match rig");
    fm.validate(rig.by_id(fm.camera_id).intrinsics);
    by_id[fm.camera_id - 1] = &fm;
  }
  const int channels = by_id[0]->channels;
  for (const auto* fm : by_id)
    if (fm->channels != channels)
      throw std::invalid_argument("lift: feature maps disagree on channels");
  return by_id;
}

}  // namespace detail

template <class S>
FeatureVolume<S> lift_features(const CameraRig<S>& rig,
                               const std::vector<FeatureMap<S>>& maps,
                               const VoxelGridSpec<S>& spec,
                               const LiftConfig<S>& cfg = {}) {
  spec.validate();
  const auto by_id = detail::maps_by_camera(rig, maps);
  const int channels = by_id[0]->channels;
  FeatureVolume<S> volume;
  volume.spec = spec;
  volume.channels = channels;
  volume.values = MatX<S>::Zero(spec.num_voxels(), channels);
  volume.valid_count = Eigen::VectorXi::Zero(spec.num_voxels());

  parallel_for(spec.num_voxels(), cfg.threads, [&](Index lo, Index hi) {
    VecX<S> sum(channels), view_sample(channels);
    for (Index v = lo; v < hi; ++v) {
      const Vec3<S> p = spec.center(v);
      sum.setZero();
      int count = 0;
      // Per-view sample first, then the running sum, in camera-id order;
      // the summation order is part of the bit-exactness contract.
      for (int id = 1; id <= rig.size(); ++id) {
        const auto proj = project_point(rig.by_id(id), p, cfg.z_min);
        if (!proj) continue;
        const auto taps = bilinear_taps(*by_id[id - 1], proj->u, proj->v);
        if (!taps.valid) continue;
        view_sample.setZero();
        for (int t = 0; t < taps.count; ++t)
          view_sample += taps.weight[t] *
                         by_id[id - 1]->values.row(taps.cell[t]).transpose();
        sum += view_sample;
        ++count;
      }
      volume.valid_count[v] = count;
      const int divisor =
          cfg.divide == LiftConfig<S>::Divide::n_cameras ? rig.size() : count;
      if (count > 0) volume.values.row(v) = (sum / S(divisor)).transpose();
    }
  });
  return volume;
}

// Adjoint of lift_features with respect to the feature maps: each voxel
// gradient is distributed to the 4 bilinear taps of every valid view, scaled
// by the same divisor the forward pass used.
template <class S>
std::vector<MatX<S>> lift_backward(const MatX<S>& grad_volume,
                                   const CameraRig<S>& rig,
                                   const std::vector<FeatureMap<S>>& maps,
                                   const VoxelGridSpec<S>& spec,
                                   const LiftConfig<S>& cfg = {}) {
  spec.validate();
  const auto by_id = detail::maps_by_camera(rig, maps);
  const int channels = by_id[0]->channels;
  if (grad_volume.rows() != spec.num_voxels() ||
      grad_volume.cols() != channels)
    throw std::invalid_argument("lift_backward: gradient shape mismatch");

  std::vector<MatX<S>> grads(rig.size());
  for (int id = 1; id <= rig.size(); ++id)
    grads[id - 1] = MatX<S>::Zero(by_id[id - 1]->values.rows(), channels);

  std::vector<BilinearTaps<S>> taps_by_view(rig.size());
  std::vector<int> view_ids(rig.size());
  for (Index v = 0; v < spec.num_voxels(); ++v) {
    const Vec3<S> p = spec.center(v);
    // Recompute the view set; the divisor must match the forward pass.
    int count = 0;
    for (int id = 1; id <= rig.size(); ++id) {
      const auto proj = project_point(rig.by_id(id), p, cfg.z_min);
      if (!proj) continue;
      auto taps = bilinear_taps(*by_id[id - 1], proj->u, proj->v);
      if (!taps.valid) continue;
      taps_by_view[count] = taps;
      view_ids[count] = id;
      ++count;
    }
    if (count == 0) continue;
    const int divisor =
        cfg.divide == LiftConfig<S>::Divide::n_cameras ? rig.size() : count;
    const S scale = S(1) / S(divisor);
    for (int k = 0; k < count; ++k) {
      auto& g = grads[view_ids[k] - 1];
      const auto& taps = taps_by_view[k];
      for (int t = 0; t < taps.count; ++t)
        g.row(taps.cell[t]) += scale * taps.weight[t] * grad_volume.row(v);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Analytic multiply-accumulate model for the 2D->3D transformation.
//
// Lifting: every (voxel, camera) pair costs one 3x4 projection with
// perspective divide (15 MAC-equivalents) plus a 4-tap bilinear gather over
// `channels`. The attention reference models a deformable single-head
// cross-attention layer with n_keys sampled keys per (voxel, camera); each
// key is projected and gathered like a lifting tap and additionally scored
// against the query and accumulated into the output (2 * channels).

inline constexpr std::uint64_t kProjectionMacs = 15;

struct MacReport {
  std::uint64_t lifting_macs = 0;
  std::uint64_t attention_macs = 0;
  double ratio = 0.0;  // attention / lifting
  int n_keys = 8;
};

template <class S>
MacReport estimate_lift_macs(const VoxelGridSpec<S>& spec, int n_cameras,
                             int channels, int n_keys = 8) {
  spec.validate();
  if (n_cameras < 1 || channels < 1 || n_keys < 1)
    throw std::invalid_argument("estimate_lift_macs: arguments must be >= 1");
  const std::uint64_t pairs =
      static_cast<std::uint64_t>(spec.num_voxels()) * n_cameras;
  MacReport report;
  report.n_keys = n_keys;
  report.lifting_macs =
      pairs * (kProjectionMacs + 4ull * static_cast<std::uint64_t>(channels));
  report.attention_macs =
      pairs * static_cast<std::uint64_t>(n_keys) *
      (kProjectionMacs + 6ull * static_cast<std::uint64_t>(channels));
  report.ratio = static_cast<double>(report.attention_macs) /
                 static_cast<double>(report.lifting_macs);
  return report;
}

using FeatureMapd = FeatureMap<double>;
using LiftConfigd = LiftConfig<double>;

}  // namespace voxlift
