#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "voxlift/common.hpp"

namespace voxlift {

// Reserved occupancy label codes (u8 on disk).
inline constexpr std::uint8_t kFreeLabel = 255;
inline constexpr std::uint8_t kIgnoreLabel = 254;

// Axis-aligned voxel grid. dims = (H, W, Z) along x, y, z; voxel (i, j, k)
// has center min_corner + (i+0.5, j+0.5, k+0.5) * voxel_size. Linear layout
// is row-major with i outermost and k innermost: ((i * W) + j) * Z + k.
template <class S>
struct VoxelGridSpec {
  Vec3<S> min_corner = Vec3<S>::Zero();
  S voxel_size = S(1);
  Eigen::Vector3i dims = Eigen::Vector3i::Ones();  // (H, W, Z)

  Index num_voxels() const {
    return Index(dims.x()) * Index(dims.y()) * Index(dims.z());
  }

  Index linear_index(int i, int j, int k) const {
    return (Index(i) * dims.y() + j) * dims.z() + k;
  }

  Vec3<S> center(int i, int j, int k) const {
    return min_corner +
           Vec3<S>(S(i) + S(0.5), S(j) + S(0.5), S(k) + S(0.5)) * voxel_size;
  }

  Vec3<S> center(Index linear) const {
    const int k = static_cast<int>(linear % dims.z());
    const Index ij = linear / dims.z();
    const int j = static_cast<int>(ij % dims.y());
    const int i = static_cast<int>(ij / dims.y());
    return center(i, j, k);
  }

  Vec3<S> max_corner() const {
    return min_corner + voxel_size * dims.template cast<S>();
  }

  void validate() const {
    if (!(voxel_size > S(0)))
      throw std::invalid_argument("VoxelGridSpec: voxel_size must be positive");
    if (dims.minCoeff() < 1)
      throw std::invalid_argument("VoxelGridSpec: dims must be >= 1");
  }

  bool operator==(const VoxelGridSpec& other) const {
    return min_corner == other.min_corner && voxel_size == other.voxel_size &&
           dims == other.dims;
  }
};

template <class S>
struct ScalarField {
  VoxelGridSpec<S> spec;
  VecX<S> values;  // num_voxels

  static ScalarField zeros(const VoxelGridSpec<S>& spec) {
    return {spec, VecX<S>::Zero(spec.num_voxels())};
  }
  static ScalarField constant(const VoxelGridSpec<S>& spec, S value) {
    return {spec, VecX<S>::Constant(spec.num_voxels(), value)};
  }
};

template <class S>
struct VectorField {
  VoxelGridSpec<S> spec;
  int channels = 0;
  MatX<S> values;  // num_voxels x channels

  static VectorField zeros(const VoxelGridSpec<S>& spec, int channels) {
    return {spec, channels, MatX<S>::Zero(spec.num_voxels(), channels)};
  }
};

template <class S>
struct FeatureVolume {
  VoxelGridSpec<S> spec;
  int channels = 0;
  MatX<S> values;               // num_voxels x channels
  Eigen::VectorXi valid_count;  // views with a valid projection per voxel
};

template <class S>
struct SemanticOccupancy {
  VoxelGridSpec<S> spec;
  int num_classes = 0;               // semantic classes 0..C-1
  std::vector<std::uint8_t> labels;  // class id, kFreeLabel, or kIgnoreLabel

  static SemanticOccupancy all_free(const VoxelGridSpec<S>& spec,
                                    int num_classes) {
    return {spec, num_classes,
            std::vector<std::uint8_t>(spec.num_voxels(), kFreeLabel)};
  }
};

// Voxel centers in linear-index order (i outer, k inner).
template <class S>
std::vector<Vec3<S>> voxel_centers(const VoxelGridSpec<S>& spec) {
  spec.validate();
  std::vector<Vec3<S>> points;
  points.reserve(spec.num_voxels());
  for (int i = 0; i < spec.dims.x(); ++i)
    for (int j = 0; j < spec.dims.y(); ++j)
      for (int k = 0; k < spec.dims.z(); ++k)
        points.push_back(spec.center(i, j, k));
  return points;
}

// ---------------------------------------------------------------------------
// Trilinear sampling over voxel-center values.
//
// A query point gathers the 8 surrounding voxel centers. Corners falling
// outside the grid contribute zero, so samples fade to zero past the border
// instead of clamping; taps double as the analytic derivative of the sample
// with respect to each contributing voxel value.

template <class S>
struct TrilinearTaps {
  std::array<Index, 8> index;
  std::array<S, 8> weight;
  int count = 0;

  void push(Index idx, S w) {
    index[count] = idx;
    weight[count] = w;
    ++count;
  }
};

namespace detail {

// Queries landing within kCenterSnap of a voxel center snap onto it, so a
// query at an exactly-stated center reproduces the stored value even when
// the grid origin is not representable.
inline constexpr double kCenterSnap = 1e-9;

template <class S>
void split_grid_coord(S g, int& lo, S& frac) {
  lo = static_cast<int>(std::floor(g));
  frac = g - S(lo);
  if (frac < S(kCenterSnap)) {
    frac = S(0);
  } else if (frac > S(1) - S(kCenterSnap)) {
    lo += 1;
    frac = S(0);
  }
}

}  // namespace detail

template <class S>
TrilinearTaps<S> trilinear_taps(const VoxelGridSpec<S>& spec,
                                const Vec3<S>& p) {
  TrilinearTaps<S> taps;
  // Continuous grid coordinates with voxel centers at integers.
  const Vec3<S> g =
      (p - spec.min_corner) / spec.voxel_size - Vec3<S>::Constant(S(0.5));
  int i0, j0, k0;
  S fx, fy, fz;
  detail::split_grid_coord(g.x(), i0, fx);
  detail::split_grid_coord(g.y(), j0, fy);
  detail::split_grid_coord(g.z(), k0, fz);
  const S wx[2] = {S(1) - fx, fx};
  const S wy[2] = {S(1) - fy, fy};
  const S wz[2] = {S(1) - fz, fz};
  for (int di = 0; di < 2; ++di) {
    const int i = i0 + di;
    if (i < 0 || i >= spec.dims.x()) continue;
    for (int dj = 0; dj < 2; ++dj) {
      const int j = j0 + dj;
      if (j < 0 || j >= spec.dims.y()) continue;
      for (int dk = 0; dk < 2; ++dk) {
        const int k = k0 + dk;
        if (k < 0 || k >= spec.dims.z()) continue;
        const S w = wx[di] * wy[dj] * wz[dk];
        if (w != S(0)) taps.push(spec.linear_index(i, j, k), w);
      }
    }
  }
  return taps;
}

template <class S>
S trilinear_sample(const ScalarField<S>& field, const Vec3<S>& p) {
  const auto taps = trilinear_taps(field.spec, p);
  S value = S(0);
  for (int t = 0; t < taps.count; ++t)
    value += taps.weight[t] * field.values[taps.index[t]];
  return value;
}

template <class S>
VecX<S> trilinear_sample(const VectorField<S>& field, const Vec3<S>& p) {
  const auto taps = trilinear_taps(field.spec, p);
  VecX<S> value = VecX<S>::Zero(field.channels);
  for (int t = 0; t < taps.count; ++t)
    value += taps.weight[t] * field.values.row(taps.index[t]).transpose();
  return value;
}

// Voxel containing p, or nullopt outside the grid (piecewise-constant lookup).
template <class S>
std::optional<Index> nearest_index(const VoxelGridSpec<S>& spec,
                                   const Vec3<S>& p) {
  const Vec3<S> g = (p - spec.min_corner) / spec.voxel_size;
  const int i = static_cast<int>(std::floor(g.x()));
  const int j = static_cast<int>(std::floor(g.y()));
  const int k = static_cast<int>(std::floor(g.z()));
  if (i < 0 || i >= spec.dims.x() || j < 0 || j >= spec.dims.y() || k < 0 ||
      k >= spec.dims.z())
    return std::nullopt;
  return spec.linear_index(i, j, k);
}

template <class S>
S nearest_sample(const ScalarField<S>& field, const Vec3<S>& p) {
  const auto idx = nearest_index(field.spec, p);
  return idx ? field.values[*idx] : S(0);
}

// ---------------------------------------------------------------------------
// Occupancy decoding. Channel layout: 0..C-1 semantic classes, channel C is
// FREE. Per-voxel argmax, ties broken toward the lowest channel index.

template <class S>
SemanticOccupancy<S> decode_occupancy(const VectorField<S>& logits) {
  if (logits.channels < 2)
    throw std::domain_error(
        "decode_occupancy: need C semantic channels plus one FREE channel");
  const int num_classes = logits.channels - 1;
  SemanticOccupancy<S> occ;
  occ.spec = logits.spec;
  occ.num_classes = num_classes;
  occ.labels.resize(logits.spec.num_voxels());
  for (Index v = 0; v < logits.spec.num_voxels(); ++v) {
    int best = 0;
    S best_val = logits.values(v, 0);
    for (int c = 1; c < logits.channels; ++c) {
      if (logits.values(v, c) > best_val) {
        best_val = logits.values(v, c);
        best = c;
      }
    }
    occ.labels[v] =
        (best == num_classes) ? kFreeLabel : static_cast<std::uint8_t>(best);
  }
  return occ;
}

using VoxelGridSpecd = VoxelGridSpec<double>;
using ScalarFieldd = ScalarField<double>;
using VectorFieldd = VectorField<double>;
using FeatureVolumed = FeatureVolume<double>;
using SemanticOccupancyd = SemanticOccupancy<double>;

}  // namespace voxlift
