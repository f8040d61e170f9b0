#include <doctest.h>

#include <algorithm>

#include "test_util.hpp"
#include "voxlift/heads.hpp"
#include "voxlift/losses.hpp"
#include "voxlift/optim.hpp"

using namespace voxlift;
using testutil::central_diff;
using testutil::random_vector_field;
using testutil::rel_err;

TEST_CASE("loss_depth: perfect, single pixel, scalar-loop oracle") {
  MatXd depth(1, 1), opacity(1, 1), target(1, 1);
  depth << 2.0;
  opacity << 0.9;
  target << 2.0;
  std::vector<std::uint8_t> mask{1};
  CHECK(loss_depth(depth, opacity, target, mask).value == 0.0);

  target << 3.0;
  const auto single = loss_depth(depth, opacity, target, mask);
  CHECK(single.value == doctest::Approx(1.0));
  CHECK(single.count == 1);

  RngStream rng(3);
  MatXd d(4, 5), o(4, 5), t(4, 5);
  std::vector<std::uint8_t> m(20);
  for (Index i = 0; i < 20; ++i) {
    d.data()[i] = rng.uniform(0.0, 5.0);
    o.data()[i] = rng.uniform(0.0, 1.0);
    t.data()[i] = rng.uniform(0.0, 5.0);
    m[i] = rng.uniform() < 0.7 ? 1 : 0;
  }
  const auto loss = loss_depth(d, o, t, m, 0.5);
  double sum = 0.0;
  Index count = 0;
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 5; ++c)
      if (m[r * 5 + c] && o(r, c) > 0.5) {
        sum += std::abs(d(r, c) - t(r, c));
        ++count;
      }
  CHECK(loss.count == count);
  CHECK(std::abs(loss.value - (count ? sum / count : 0.0)) < 1e-10);

  // Low-opacity pixels drop out of the mean.
  const auto unmasked = loss_depth(d, o, t, m, 0.5, false);
  CHECK(unmasked.count >= loss.count);
}

TEST_CASE("softmax CE: one-hot certainty, uniform logits, log-sum-exp oracle") {
  VecXd confident = VecXd::Zero(4);
  confident[2] = 1e6;
  CHECK(softmax_cross_entropy<double>(confident, 2) ==
        doctest::Approx(0.0).epsilon(1e-9));

  const VecXd uniform = VecXd::Zero(4);
  CHECK(softmax_cross_entropy<double>(uniform, 1) ==
        doctest::Approx(std::log(4.0)));

  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    VecXd logits(5);
    for (int i = 0; i < 5; ++i) logits[i] = rng.uniform(-30.0, 30.0);
    const int label = int(rng.uniform_int(0, 4));
    double z = 0.0;
    for (int i = 0; i < 5; ++i) z += std::exp(logits[i] - logits.maxCoeff());
    const double oracle =
        logits.maxCoeff() + std::log(z) - logits[label];
    CHECK(std::abs(softmax_cross_entropy<double>(logits, label) - oracle) <
          1e-8);
  }
  CHECK_THROWS_AS(softmax_cross_entropy<double>(uniform, 7),
                  std::domain_error);
}

TEST_CASE("loss_semantic_3d: IGNORE voxels excluded, FREE maps to last channel") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 1, 1)};
  VectorFieldd logits = VectorFieldd::zeros(spec, 3);  // 2 classes + FREE
  logits.values(0, 1) = 50.0;  // voxel 0 confident class 1
  logits.values(1, 2) = 50.0;  // voxel 1 confident FREE

  SemanticOccupancyd gt = SemanticOccupancyd::all_free(spec, 2);
  gt.labels[0] = 1;
  Index count = 0;
  CHECK(loss_semantic_3d(logits, gt, &count) ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(count == 2);

  gt.labels[1] = kIgnoreLabel;
  CHECK(loss_semantic_3d(logits, gt, &count) ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(count == 1);
}

TEST_CASE("loss_normal: identical, orthogonal, scalar oracle") {
  MatXd n(1, 3), t(1, 3);
  n << 0, 0, 1;
  t << 0, 0, 1;
  std::vector<std::uint8_t> mask{1};
  Index count = 0;
  CHECK(loss_normal(n, t, mask, &count) == doctest::Approx(0.0));

  n << 1, 0, 0;
  t << 0, 1, 0;
  CHECK(loss_normal(n, t, mask, &count) == doctest::Approx(3.0));  // 2 + 1

  RngStream rng(7);
  MatXd nr(10, 3), tr(10, 3);
  std::vector<std::uint8_t> mr(10);
  for (int i = 0; i < 10; ++i) {
    Vec3d a(rng.normal(), rng.normal(), rng.normal());
    Vec3d b(rng.normal(), rng.normal(), rng.normal());
    nr.row(i) = a.normalized().transpose();
    tr.row(i) = b.normalized().transpose();
    mr[i] = rng.uniform() < 0.8 ? 1 : 0;
  }
  const double loss = loss_normal(nr, tr, mr, &count);
  double sum = 0.0;
  Index n_masked = 0;
  for (int i = 0; i < 10; ++i) {
    if (!mr[i]) continue;
    sum += (nr.row(i) - tr.row(i)).lpNorm<1>() +
           std::abs(1.0 - nr.row(i).dot(tr.row(i)));
    ++n_masked;
  }
  CHECK(count == n_masked);
  CHECK(std::abs(loss - sum / n_masked) < 1e-10);
}

TEST_CASE("head_forward: zero parameters give softplus(0) density") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 2, 1)};
  FeatureVolumed volume;
  volume.spec = spec;
  volume.channels = 3;
  volume.values = MatXd::Zero(spec.num_voxels(), 3);
  volume.valid_count = Eigen::VectorXi::Zero(spec.num_voxels());

  const auto params = HeadParamsd::zeros(3, 4);
  const auto outs = head_forward(volume, params);
  for (Index v = 0; v < spec.num_voxels(); ++v) {
    CHECK(outs.density.values[v] == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(outs.normals.values.row(v).norm() == 0.0);  // degenerate, flagged zero
  }
}

TEST_CASE("head_forward: bias raising one class dominates the decode") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 2, 2)};
  RngStream rng(11);
  FeatureVolumed volume;
  volume.spec = spec;
  volume.channels = 2;
  volume.values = MatXd(spec.num_voxels(), 2);
  for (Index i = 0; i < volume.values.size(); ++i)
    volume.values.data()[i] = 0.01 * rng.normal();
  volume.valid_count = Eigen::VectorXi::Ones(spec.num_voxels());

  auto params = HeadParamsd::zeros(2, 4);
  params.bias[2] = 10.0;  // semantic channel 2
  const auto outs = head_forward(volume, params);
  const auto occ = decode_occupancy(outs.semantics);
  for (const auto label : occ.labels) CHECK(label == 2);
}

TEST_CASE("head gradients match finite differences (affine and conv)") {
  RngStream rng(13);
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 0.5, Eigen::Vector3i(3, 2, 2)};
  for (const bool use_conv : {false, true}) {
    FeatureVolumed volume;
    volume.spec = spec;
    volume.channels = 3;
    volume.values = MatXd(spec.num_voxels(), 3);
    for (Index i = 0; i < volume.values.size(); ++i)
      volume.values.data()[i] = rng.normal();
    volume.valid_count = Eigen::VectorXi::Ones(spec.num_voxels());

    HeadParamsd params = HeadParamsd::random_init(3, 2, rng, use_conv, 0.5);
    params.bias[params.num_classes + 3] = 0.8;  // keep normal norms healthy
    const int out_ch = params.out_channels();

    // Random cotangents for every output field.
    MatXd co_sem(spec.num_voxels(), 3);
    VecXd co_density(spec.num_voxels());
    MatXd co_normals(spec.num_voxels(), 3);
    for (Index i = 0; i < co_sem.size(); ++i) co_sem.data()[i] = rng.normal();
    for (Index i = 0; i < co_density.size(); ++i) co_density[i] = rng.normal();
    for (Index i = 0; i < co_normals.size(); ++i)
      co_normals.data()[i] = rng.normal();

    const auto objective = [&] {
      const auto outs = head_forward(volume, params);
      return (outs.semantics.values.array() * co_sem.array()).sum() +
             co_density.dot(outs.density.values) +
             (outs.normals.values.array() * co_normals.array()).sum();
    };

    HeadCached cache;
    head_forward(volume, params, &cache);
    const auto grads = head_backward(volume, params, cache, co_sem, co_density,
                                     co_normals);

    double worst = 0.0;
    for (int probe = 0; probe < 30; ++probe) {
      const Index i = rng.uniform_int(0, params.weight.size() - 1);
      worst = std::max(
          worst, rel_err(grads.weight.data()[i],
                         central_diff(objective, params.weight.data() + i, 1e-4)));
    }
    for (Index i = 0; i < out_ch; ++i)
      worst = std::max(worst,
                       rel_err(grads.bias[i],
                               central_diff(objective, &params.bias[i], 1e-4)));
    if (use_conv)
      for (int probe = 0; probe < 30; ++probe) {
        const Index i = rng.uniform_int(0, params.conv_kernel.size() - 1);
        worst = std::max(
            worst,
            rel_err(grads.conv_kernel[i],
                    central_diff(objective, &params.conv_kernel[i], 1e-4)));
      }
    for (int probe = 0; probe < 30; ++probe) {
      const Index i = rng.uniform_int(0, volume.values.size() - 1);
      worst = std::max(
          worst, rel_err(grads.volume.data()[i],
                         central_diff(objective, volume.values.data() + i, 1e-4)));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("adam_step: zero gradient identity, first-step magnitude") {
  AdamConfigd cfg;
  cfg.weight_decay = 0.0;
  VecXd param(3), grad(3);
  param << 1.0, -2.0, 0.5;
  grad.setZero();
  auto moments = AdamMomentsd::zeros(3);
  VecXd before = param;
  adam_step(param.data(), grad.data(), 3, moments, cfg, 1, "p");
  CHECK((param - before).norm() == 0.0);

  // First step moves by ~lr * sign(g) after bias correction.
  grad << 0.3, -4.0, 1e-3;
  moments = AdamMomentsd::zeros(3);
  before = param;
  adam_step(param.data(), grad.data(), 3, moments, cfg, 1, "p");
  for (int i = 0; i < 3; ++i) {
    const double step = before[i] - param[i];
    CHECK(std::abs(step - cfg.lr * (grad[i] > 0 ? 1.0 : -1.0)) < 1e-6);
  }
}

TEST_CASE("adam_step: lr = 0 identity, non-finite gradient rejected") {
  AdamConfigd cfg;
  cfg.lr = 0.0;
  VecXd param(2), grad(2);
  param << 3.0, -1.0;
  grad << 0.5, 0.25;
  auto moments = AdamMomentsd::zeros(2);
  const VecXd before = param;
  adam_step(param.data(), grad.data(), 2, moments, cfg, 1, "p");
  CHECK((param - before).norm() == 0.0);

  grad[1] = std::numeric_limits<double>::quiet_NaN();
  bool named = false;
  try {
    adam_step(param.data(), grad.data(), 2, moments, cfg, 2, "tensor_xyz");
  } catch (const std::runtime_error& e) {
    named = std::string(e.what()).find("tensor_xyz") != std::string::npos;
  }
  CHECK(named);
}

TEST_CASE("adam_step: converges on a scalar quadratic") {
  AdamConfigd cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  VecXd x(1);
  x << 1.0;
  auto moments = AdamMomentsd::zeros(1);
  for (int step = 1; step <= 100; ++step) {
    VecXd grad(1);
    grad << 2.0 * x[0];
    adam_step(x.data(), grad.data(), 1, moments, cfg, step, "x");
  }
  CHECK(std::abs(x[0]) < 0.05);
}

TEST_CASE("total-loss composition uses the published weights") {
  // L = sem3d + 0.05 (depth + sem2d + normal) + 0.005 reg
  LossWeightsd weights;
  CHECK(weights.lambda_d == 0.05);
  CHECK(weights.lambda_s == 0.05);
  CHECK(weights.lambda_n == 0.05);
  CHECK(weights.lambda_r == 0.005);
  LossBreakdownd b;
  b.sem3d = 2.0;
  b.depth = 1.0;
  b.sem2d = 3.0;
  b.normal = 0.5;
  b.reg = 10.0;
  const double total = b.sem3d + weights.lambda_d * b.depth +
                       weights.lambda_s * b.sem2d +
                       weights.lambda_n * b.normal + weights.lambda_r * b.reg;
  CHECK(total == doctest::Approx(2.0 + 0.05 * 4.5 + 0.05));
}
