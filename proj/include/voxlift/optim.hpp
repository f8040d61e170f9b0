#pragma once

#include <string>

#include "voxlift/common.hpp"

namespace voxlift {

// Decoupled-weight-decay Adam.
template <class S>
struct AdamConfig {
  S lr = S(2e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(0.01);
};

template <class S>
struct AdamMoments {
  VecX<S> m, v;

  static AdamMoments zeros(Index n) {
    return {VecX<S>::Zero(n), VecX<S>::Zero(n)};
  }
};

// One update on a flat parameter vector. step counts from 1 for the first
// call (bias correction). Throws on non-finite gradients, naming the tensor.
template <class S>
void adam_step(S* param, const S* grad, Index n, AdamMoments<S>& moments,
               const AdamConfig<S>& cfg, long step, const std::string& name) {
  if (moments.m.size() != n)
    throw std::invalid_argument("adam_step: moment shape mismatch for " + name);
  for (Index i = 0; i < n; ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("adam_step: non-finite gradient in tensor '" +
                               name + "' at element " + std::to_string(i));
  const S bc1 = S(1) - std::pow(cfg.beta1, S(step));
  const S bc2 = S(1) - std::pow(cfg.beta2, S(step));
  for (Index i = 0; i < n; ++i) {
    moments.m[i] = cfg.beta1 * moments.m[i] + (S(1) - cfg.beta1) * grad[i];
    moments.v[i] =
        cfg.beta2 * moments.v[i] + (S(1) - cfg.beta2) * grad[i] * grad[i];
    const S mhat = moments.m[i] / bc1;
    const S vhat = moments.v[i] / bc2;
    param[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                          cfg.weight_decay * param[i]);
  }
}

template <class S, class Derived, class GradDerived>
void adam_step(Eigen::MatrixBase<Derived>& param,
               const Eigen::MatrixBase<GradDerived>& grad,
               AdamMoments<S>& moments, const AdamConfig<S>& cfg, long step,
               const std::string& name) {
  if (param.size() != grad.size())
    throw std::invalid_argument("adam_step: param/grad shape mismatch for " +
                                name);
  adam_step(param.derived().data(), grad.derived().data(), param.size(),
            moments, cfg, step, name);
}

using AdamConfigd = AdamConfig<double>;
using AdamMomentsd = AdamMoments<double>;

}  // namespace voxlift
