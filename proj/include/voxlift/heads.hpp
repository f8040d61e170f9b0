#pragma once

#include "voxlift/grid.hpp"

namespace voxlift {

template <class S>
S softplus(S x) {
  if (x > S(30)) return x;
  if (x < S(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <class S>
S sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

// Per-voxel head G mapping lifted features to occupancy outputs. An optional
// 3x3x3 convolution (zero padded, channels -> channels) mixes neighboring
// voxels before the affine projection. Output channel layout:
//   [0 .. C]        semantic logits, FREE at index C
//   [C+1]           raw density (softplus applied downstream)
//   [C+2 .. C+4]    raw normal (normalized per voxel)
template <class S>
struct HeadParams {
  int in_channels = 0;
  int num_classes = 0;  // C
  MatX<S> weight;       // in_channels x (C+5)
  VecX<S> bias;         // C+5
  bool use_conv = false;
  VecX<S> conv_kernel;  // 27 * in_channels * in_channels, [offset][cin][cout]

  int out_channels() const { return num_classes + 5; }

  static HeadParams zeros(int in_channels, int num_classes,
                          bool use_conv = false) {
    HeadParams p;
    p.in_channels = in_channels;
    p.num_classes = num_classes;
    p.weight = MatX<S>::Zero(in_channels, p.out_channels());
    p.bias = VecX<S>::Zero(p.out_channels());
    p.use_conv = use_conv;
    if (use_conv)
      p.conv_kernel = VecX<S>::Zero(27 * in_channels * in_channels);
    return p;
  }

  static HeadParams random_init(int in_channels, int num_classes,
                                RngStream& rng, bool use_conv = false,
                                S scale = S(0.1)) {
    HeadParams p = zeros(in_channels, num_classes, use_conv);
    for (Index i = 0; i < p.weight.size(); ++i)
      p.weight.data()[i] = scale * S(rng.normal());
    if (use_conv) {
      // Identity-plus-noise: center offset starts near identity mixing.
      for (int c = 0; c < in_channels; ++c)
        p.conv_kernel[(13 * in_channels + c) * in_channels + c] = S(1);
      for (Index i = 0; i < p.conv_kernel.size(); ++i)
        p.conv_kernel[i] += S(0.02) * S(rng.normal());
    }
    return p;
  }

  Index kernel_index(int offset, int cin, int cout) const {
    return (Index(offset) * in_channels + cin) * in_channels + cout;
  }

  void validate() const {
    if (in_channels < 1 || num_classes < 1)
      throw std::invalid_argument("HeadParams: need channels and classes >= 1");
    if (weight.rows() != in_channels || weight.cols() != out_channels() ||
        bias.size() != out_channels())
      throw std::invalid_argument("HeadParams: affine shape mismatch");
    if (use_conv &&
        conv_kernel.size() != Index(27) * in_channels * in_channels)
      throw std::invalid_argument("HeadParams: conv kernel shape mismatch");
    if (!weight.allFinite() || !bias.allFinite() ||
        (use_conv && !conv_kernel.allFinite()))
      throw std::invalid_argument("HeadParams: parameters must be finite");
  }
};

template <class S>
struct HeadOutputs {
  VectorField<S> semantics;  // C+1 raw logits
  ScalarField<S> density;    // softplus-activated
  VectorField<S> normals;    // unit per voxel, zero when degenerate
};

template <class S>
struct HeadCache {
  MatX<S> hidden;       // post-conv features (alias of V when no conv)
  VecX<S> raw_density;
  MatX<S> raw_normals;
  VecX<S> normal_norms;
};

namespace detail {

// Zero-padded 3x3x3 convolution over the voxel grid, channels -> channels.
template <class S>
MatX<S> conv3_forward(const VoxelGridSpec<S>& spec, const MatX<S>& input,
                      const HeadParams<S>& params) {
  const int ch = params.in_channels;
  MatX<S> out = MatX<S>::Zero(input.rows(), ch);
  const auto& dims = spec.dims;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj)
      for (int dk = -1; dk <= 1; ++dk) {
        const int offset = ((di + 1) * 3 + (dj + 1)) * 3 + (dk + 1);
        Eigen::Map<const MatX<S>> kernel(
            params.conv_kernel.data() + Index(offset) * ch * ch, ch, ch);
        for (int i = 0; i < dims.x(); ++i) {
          const int si = i + di;
          if (si < 0 || si >= dims.x()) continue;
          for (int j = 0; j < dims.y(); ++j) {
            const int sj = j + dj;
            if (sj < 0 || sj >= dims.y()) continue;
            for (int k = 0; k < dims.z(); ++k) {
              const int sk = k + dk;
              if (sk < 0 || sk >= dims.z()) continue;
              out.row(spec.linear_index(i, j, k)) +=
                  input.row(spec.linear_index(si, sj, sk)) * kernel;
            }
          }
        }
      }
  return out;
}

}  // namespace detail

template <class S>
HeadOutputs<S> head_forward(const FeatureVolume<S>& volume,
                            const HeadParams<S>& params,
                            HeadCache<S>* cache = nullptr) {
  params.validate();
  if (volume.channels != params.in_channels)
    throw std::invalid_argument("head_forward: channel mismatch");
  const Index n = volume.spec.num_voxels();
  const int C = params.num_classes;

  MatX<S> hidden = params.use_conv
                       ? detail::conv3_forward(volume.spec, volume.values, params)
                       : volume.values;
  MatX<S> out = (hidden * params.weight).rowwise() + params.bias.transpose();

  HeadOutputs<S> outputs;
  outputs.semantics = {volume.spec, C + 1, out.leftCols(C + 1)};
  outputs.density = {volume.spec, VecX<S>(n)};
  outputs.normals = {volume.spec, 3, MatX<S>::Zero(n, 3)};
  VecX<S> norms(n);
  for (Index v = 0; v < n; ++v) {
    outputs.density.values[v] = softplus(out(v, C + 1));
    const Vec3<S> raw = out.template block<1, 3>(v, C + 2).transpose();
    const S norm = raw.norm();
    norms[v] = norm;
    if (norm > S(kNormalNormFloor))
      outputs.normals.values.row(v) = (raw / norm).transpose();
  }
  if (cache) {
    cache->hidden = std::move(hidden);
    cache->raw_density = out.col(C + 1);
    cache->raw_normals = out.rightCols(3);
    cache->normal_norms = std::move(norms);
  }
  return outputs;
}

template <class S>
struct HeadGrads {
  MatX<S> weight;
  VecX<S> bias;
  VecX<S> conv_kernel;
  MatX<S> volume;  // d loss / d lifted features
};

// Reverse pass. grad_density is w.r.t. the softplus-activated density;
// grad_normals w.r.t. the unit normals (zero rows where degenerate).
template <class S>
HeadGrads<S> head_backward(const FeatureVolume<S>& volume,
                           const HeadParams<S>& params,
                           const HeadCache<S>& cache,
                           const MatX<S>& grad_sem,
                           const VecX<S>& grad_density,
                           const MatX<S>& grad_normals) {
  const Index n = volume.spec.num_voxels();
  const int C = params.num_classes;
  MatX<S> grad_out(n, params.out_channels());
  grad_out.leftCols(C + 1) = grad_sem;
  for (Index v = 0; v < n; ++v) {
    grad_out(v, C + 1) = grad_density[v] * sigmoid(cache.raw_density[v]);
    const S norm = cache.normal_norms[v];
    if (norm > S(kNormalNormFloor)) {
      const Vec3<S> unit =
          cache.raw_normals.row(v).transpose() / norm;
      const Vec3<S> g = grad_normals.row(v).transpose();
      const Vec3<S> graw = (g - unit * unit.dot(g)) / norm;
      grad_out.template block<1, 3>(v, C + 2) = graw.transpose();
    } else {
      grad_out.template block<1, 3>(v, C + 2).setZero();
    }
  }

  HeadGrads<S> grads;
  grads.weight = cache.hidden.transpose() * grad_out;
  grads.bias = grad_out.colwise().sum().transpose();
  MatX<S> grad_hidden = grad_out * params.weight.transpose();

  if (params.use_conv) {
    const int ch = params.in_channels;
    grads.conv_kernel = VecX<S>::Zero(27 * Index(ch) * ch);
    grads.volume = MatX<S>::Zero(n, ch);
    const auto& dims = volume.spec.dims;
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj)
        for (int dk = -1; dk <= 1; ++dk) {
          const int offset = ((di + 1) * 3 + (dj + 1)) * 3 + (dk + 1);
          Eigen::Map<const MatX<S>> kernel(
              params.conv_kernel.data() + Index(offset) * ch * ch, ch, ch);
          Eigen::Map<MatX<S>> dkernel(
              grads.conv_kernel.data() + Index(offset) * ch * ch, ch, ch);
          for (int i = 0; i < dims.x(); ++i) {
            const int si = i + di;
            if (si < 0 || si >= dims.x()) continue;
            for (int j = 0; j < dims.y(); ++j) {
              const int sj = j + dj;
              if (sj < 0 || sj >= dims.y()) continue;
              for (int k = 0; k < dims.z(); ++k) {
                const int sk = k + dk;
                if (sk < 0 || sk >= dims.z()) continue;
                const Index dst = volume.spec.linear_index(i, j, k);
                const Index src = volume.spec.linear_index(si, sj, sk);
                dkernel +=
                    volume.values.row(src).transpose() * grad_hidden.row(dst);
                grads.volume.row(src) += grad_hidden.row(dst) * kernel.transpose();
              }
            }
          }
        }
  } else {
    grads.volume = std::move(grad_hidden);
  }
  return grads;
}

using HeadParamsd = HeadParams<double>;
using HeadOutputsd = HeadOutputs<double>;
using HeadCached = HeadCache<double>;
using HeadGradsd = HeadGrads<double>;

}  // namespace voxlift
