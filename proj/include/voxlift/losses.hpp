#pragma once

#include "voxlift/grid.hpp"

namespace voxlift {

// Loss weights from the total objective
//   L = L_sem3d + lambda_d * L_depth + lambda_s * L_sem2d
//     + lambda_n * L_normal + lambda_r * L_reg.
template <class S>
struct LossWeights {
  S lambda_d = S(0.05);
  S lambda_s = S(0.05);
  S lambda_n = S(0.05);
  S lambda_r = S(0.005);

  void validate() const {
    if (lambda_d < S(0) || lambda_s < S(0) || lambda_n < S(0) ||
        lambda_r < S(0))
      throw std::invalid_argument("LossWeights: weights must be >= 0");
  }
};

inline constexpr double kDefaultOpacityMin = 1e-3;

template <class S>
struct LossBreakdown {
  S sem3d = S(0);
  S depth = S(0);
  S sem2d = S(0);
  S normal = S(0);
  S reg = S(0);
  S total = S(0);
  Index depth_count = 0, sem2d_count = 0, normal_count = 0, sem3d_count = 0,
        ray_count = 0;
};

// ---------------------------------------------------------------------------
// Softmax cross-entropy, numerically stable. Returns loss; writes
// d(loss)/d(logits) = softmax - onehot into grad when non-null.
template <class S>
S softmax_cross_entropy(const Eigen::Ref<const VecX<S>>& logits, int label,
                        VecX<S>* grad = nullptr) {
  const int n = static_cast<int>(logits.size());
  if (label < 0 || label >= n)
    throw std::domain_error("softmax_cross_entropy: label out of range");
  const S m = logits.maxCoeff();
  S z = S(0);
  for (int c = 0; c < n; ++c) z += std::exp(logits[c] - m);
  const S lse = m + std::log(z);
  if (grad) {
    grad->resize(n);
    for (int c = 0; c < n; ++c) (*grad)[c] = std::exp(logits[c] - lse);
    (*grad)[label] -= S(1);
  }
  return lse - logits[label];
}

// ---------------------------------------------------------------------------
// 2D losses over rendered maps. Pixels enter the depth loss only when their
// target mask is set and the rendered opacity clears opacity_min; semantic
// and normal losses use the target mask alone.

template <class S>
struct DepthLoss {
  S value = S(0);
  Index count = 0;
};

template <class S>
DepthLoss<S> loss_depth(const MatX<S>& depth, const MatX<S>& opacity,
                        const MatX<S>& target,
                        const std::vector<std::uint8_t>& mask,
                        S opacity_min = S(kDefaultOpacityMin),
                        bool mask_by_opacity = true) {
  if (target.rows() != depth.rows() || target.cols() != depth.cols() ||
      static_cast<Index>(mask.size()) != depth.size())
    throw std::invalid_argument("loss_depth: shape mismatch");
  DepthLoss<S> out;
  S sum = S(0);
  for (Index r = 0; r < depth.rows(); ++r)
    for (Index c = 0; c < depth.cols(); ++c) {
      if (!mask[r * depth.cols() + c]) continue;
      if (mask_by_opacity && !(opacity(r, c) > opacity_min)) continue;
      sum += std::abs(depth(r, c) - target(r, c));
      ++out.count;
    }
  out.value = out.count > 0 ? sum / S(out.count) : S(0);
  return out;
}

// Mean softmax CE over masked pixels of a rendered logit image.
// labels use -1 (or any negative) for "no target"; mask gates inclusion.
template <class S>
S loss_semantic_2d(const MatX<S>& logits, const std::vector<int>& labels,
                   const std::vector<std::uint8_t>& mask, Index* count_out,
                   MatX<S>* grad = nullptr) {
  if (static_cast<Index>(labels.size()) != logits.rows() ||
      static_cast<Index>(mask.size()) != logits.rows())
    throw std::invalid_argument("loss_semantic_2d: shape mismatch");
  if (grad) *grad = MatX<S>::Zero(logits.rows(), logits.cols());
  S sum = S(0);
  Index count = 0;
  VecX<S> g;
  for (Index p = 0; p < logits.rows(); ++p) {
    if (!mask[p]) continue;
    if (labels[p] < 0 || labels[p] >= logits.cols())
      throw std::domain_error("loss_semantic_2d: label out of range");
    sum += softmax_cross_entropy<S>(logits.row(p).transpose(), labels[p],
                                    grad ? &g : nullptr);
    if (grad) grad->row(p) = g.transpose();
    ++count;
  }
  if (count_out) *count_out = count;
  if (grad && count > 0) *grad /= S(count);
  return count > 0 ? sum / S(count) : S(0);
}

// Mean softmax CE of per-voxel logits against occupancy labels. FREE maps to
// the last channel; IGNORE voxels are excluded.
template <class S>
S loss_semantic_3d(const VectorField<S>& logits,
                   const SemanticOccupancy<S>& gt, Index* count_out,
                   MatX<S>* grad = nullptr) {
  if (!(logits.spec == gt.spec))
    throw std::invalid_argument("loss_semantic_3d: grid spec mismatch");
  if (logits.channels != gt.num_classes + 1)
    throw std::invalid_argument("loss_semantic_3d: channel/class mismatch");
  if (grad) *grad = MatX<S>::Zero(logits.values.rows(), logits.channels);
  S sum = S(0);
  Index count = 0;
  VecX<S> g;
  for (Index v = 0; v < logits.spec.num_voxels(); ++v) {
    const std::uint8_t label = gt.labels[v];
    if (label == kIgnoreLabel) continue;
    int target;
    if (label == kFreeLabel) {
      target = gt.num_classes;
    } else if (label < gt.num_classes) {
      target = label;
    } else {
      throw std::domain_error("loss_semantic_3d: label out of range");
    }
    sum += softmax_cross_entropy<S>(logits.values.row(v).transpose(), target,
                                    grad ? &g : nullptr);
    if (grad) grad->row(v) = g.transpose();
    ++count;
  }
  if (count_out) *count_out = count;
  if (grad && count > 0) *grad /= S(count);
  return count > 0 ? sum / S(count) : S(0);
}

// Per-pixel normal loss: L1 plus angular |1 - n.n_hat|, mean over masked
// pixels. Targets must be unit vectors where masked.
template <class S>
S loss_normal(const MatX<S>& normals, const MatX<S>& targets,
              const std::vector<std::uint8_t>& mask, Index* count_out,
              MatX<S>* grad = nullptr) {
  if (targets.rows() != normals.rows() || normals.cols() != 3 ||
      targets.cols() != 3 ||
      static_cast<Index>(mask.size()) != normals.rows())
    throw std::invalid_argument("loss_normal: shape mismatch");
  if (grad) *grad = MatX<S>::Zero(normals.rows(), 3);
  S sum = S(0);
  Index count = 0;
  for (Index p = 0; p < normals.rows(); ++p) {
    if (!mask[p]) continue;
    const Vec3<S> n = normals.row(p).transpose();
    const Vec3<S> nt = targets.row(p).transpose();
    const S dot = n.dot(nt);
    sum += (n - nt).template lpNorm<1>() + std::abs(S(1) - dot);
    if (grad) {
      Vec3<S> g = (n - nt).cwiseSign();
      const S sign_term = S(1) - dot > S(0) ? S(-1) : (S(1) - dot < S(0) ? S(1) : S(0));
      g += sign_term * nt;
      grad->row(p) = g.transpose();
    }
    ++count;
  }
  if (count_out) *count_out = count;
  if (grad && count > 0) *grad /= S(count);
  return count > 0 ? sum / S(count) : S(0);
}

using LossWeightsd = LossWeights<double>;
using LossBreakdownd = LossBreakdown<double>;

}  // namespace voxlift
