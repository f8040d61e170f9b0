#include <doctest.h>

#include <algorithm>

#include "test_util.hpp"
#include "voxlift/render.hpp"
#include "voxlift/scenes.hpp"

using namespace voxlift;
using testutil::central_diff;
using testutil::exact_render_piecewise;
using testutil::random_scalar_field;
using testutil::rel_err;

namespace {

Rayd unit_z_ray(const Vec3d& origin, double t_near = 0.0, double t_far = 100.0) {
  Rayd ray;
  ray.origin = origin;
  ray.direction = Vec3d(0, 0, 1);
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

}  // namespace

TEST_CASE("sample_along_ray: fixed midpoints over the clipped range") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(1, 1, 2)};
  SamplerConfigd cfg;
  cfg.step_size = 0.5;
  const auto samples =
      sample_along_ray(unit_z_ray(Vec3d(0.5, 0.5, 0.0)), spec, cfg);
  REQUIRE(samples.size() == 4);
  CHECK(samples.t[0] == doctest::Approx(0.25));
  CHECK(samples.t[1] == doctest::Approx(0.75));
  CHECK(samples.t[2] == doctest::Approx(1.25));
  CHECK(samples.t[3] == doctest::Approx(1.75));
  CHECK(samples.delta[0] == doctest::Approx(0.5));
  CHECK(samples.delta[3] == doctest::Approx(1e10));
}

TEST_CASE("sample_along_ray: miss produces an empty set") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 2, 2)};
  SamplerConfigd cfg;
  cfg.step_size = 0.25;
  const auto samples =
      sample_along_ray(unit_z_ray(Vec3d(5.0, 5.0, 0.0)), spec, cfg);
  CHECK(samples.size() == 0);
}

TEST_CASE("sample_along_ray: stratified puts one ascending sample per bin") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(1, 1, 4)};
  SamplerConfigd cfg;
  cfg.strategy = SamplerConfigd::Strategy::stratified;
  cfg.sample_count = 8;
  RngStream rng(99);
  const auto samples =
      sample_along_ray(unit_z_ray(Vec3d(0.5, 0.5, 0.0)), spec, cfg, &rng);
  REQUIRE(samples.size() == 8);
  const double bin = 4.0 / 8.0;
  for (int i = 0; i < 8; ++i) {
    CHECK(samples.t[i] >= i * bin);
    CHECK(samples.t[i] < (i + 1) * bin);
    if (i > 0) CHECK(samples.t[i] > samples.t[i - 1]);
  }
  // Deterministic per seed.
  RngStream rng2(99);
  const auto again =
      sample_along_ray(unit_z_ray(Vec3d(0.5, 0.5, 0.0)), spec, cfg, &rng2);
  CHECK(again.t == samples.t);
}

TEST_CASE("compute_weights: empty space, opaque front, hand quadrature") {
  VecXd tau(2), delta(2);
  delta << 1.0, 1.0;

  tau << 0.0, 0.0;
  auto w = compute_weights(tau, delta);
  CHECK(w.w.norm() == 0.0);
  CHECK(w.opacity == 0.0);
  CHECK(w.transmittance[0] == 1.0);
  CHECK(w.transmittance[1] == 1.0);

  tau << 1e9, 1.0;
  w = compute_weights(tau, delta);
  CHECK(w.w[0] == doctest::Approx(1.0));
  CHECK(w.w[1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(w.opacity == doctest::Approx(1.0));

  tau << 0.5, 0.5;
  w = compute_weights(tau, delta);
  CHECK(std::abs(w.w[0] - 0.393469) < 1e-5);
  CHECK(std::abs(w.w[1] - 0.238651) < 1e-5);

  tau << -0.1, 0.5;
  CHECK_THROWS_AS(compute_weights(tau, delta), std::domain_error);
}

TEST_CASE("compute_weights: weights nonneg, opacity in [0,1] on random input") {
  RngStream rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + int(rng.uniform_int(0, 19));
    VecXd tau(n), delta(n);
    for (int i = 0; i < n; ++i) {
      tau[i] = rng.uniform(0.0, 5.0);
      delta[i] = rng.uniform(0.01, 2.0);
    }
    const auto w = compute_weights(tau, delta);
    CHECK(w.w.minCoeff() >= 0.0);
    CHECK(w.opacity >= 0.0);
    CHECK(w.opacity <= 1.0 + 1e-12);
  }
}

TEST_CASE("weights_backward matches finite differences") {
  RngStream rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + int(rng.uniform_int(0, 10));
    VecXd tau(n), delta(n), cotangent(n);
    for (int i = 0; i < n; ++i) {
      tau[i] = rng.uniform(0.05, 2.0);
      delta[i] = rng.uniform(0.05, 1.0);
      cotangent[i] = rng.normal();
    }
    const auto fwd = compute_weights(tau, delta);
    const VecXd grad = weights_backward(tau, delta, fwd, cotangent);
    for (int j = 0; j < n; ++j) {
      const double numeric = central_diff(
          [&] { return cotangent.dot(compute_weights(tau, delta).w); },
          &tau[j], 1e-5);
      worst = std::max(worst, rel_err(grad[j], numeric));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("render_depth: hand values and empty-ray convention") {
  VecXd w(2), t(2);
  w << 1.0, 0.0;
  t << 2.0, 3.0;
  CHECK(render_depth(w, t) == doctest::Approx(2.0));

  w << 0.0, 0.0;
  CHECK(render_depth(w, t) == 0.0);  // depth 0 at opacity 0

  w.resize(2);
  t.resize(2);
  w << 0.393469, 0.238651;
  t << 1.0, 2.0;
  CHECK(std::abs(render_depth(w, t) - 0.870771) < 1e-5);
}

TEST_CASE("render_semantics: opaque sample, zero weights, alpha truncation") {
  MatXd sem(1, 3);
  sem << 1.0, -2.0, 0.5;
  VecXd w(1);
  w << 1.0;
  CHECK((render_semantics(w, sem) - sem.row(0).transpose()).norm() < 1e-14);

  w << 0.0;
  CHECK(render_semantics(w, sem).norm() == 0.0);

  RngStream rng(31);
  MatXd sem4(4, 3);
  VecXd w4(4);
  for (Index i = 0; i < sem4.size(); ++i) sem4.data()[i] = rng.normal();
  for (int i = 0; i < 4; ++i) w4[i] = rng.uniform(0.0, 0.3);
  const VecXd truncated = render_semantics(w4, sem4, 0.5);
  VecXd w_zeroed = w4;
  w_zeroed[2] = w_zeroed[3] = 0.0;  // truncation oracle
  CHECK((truncated - render_semantics(w_zeroed, sem4)).norm() < 1e-14);

  CHECK_THROWS_AS(render_semantics(w4, sem4, 0.0), std::domain_error);
  CHECK_THROWS_AS(render_semantics(w4, sem4, 1.5), std::domain_error);
}

TEST_CASE("render_normal: single sample, zeros flagged, hand normalization") {
  MatXd normals(1, 3);
  normals << 0.0, 0.0, 1.0;
  VecXd w(1);
  w << 1.0;
  auto rn = render_normal(w, normals);
  CHECK_FALSE(rn.no_surface);
  CHECK((rn.n - Vec3d(0, 0, 1)).norm() < 1e-14);

  w << 0.0;
  rn = render_normal(w, normals);
  CHECK(rn.no_surface);
  CHECK(rn.n.norm() == 0.0);

  MatXd two(2, 3);
  two << 1, 0, 0, 0, 1, 0;
  VecXd w2(2);
  w2 << 0.3, 0.3;
  rn = render_normal(w2, two);
  CHECK(std::abs(rn.n.x() - 0.7071) < 1e-4);
  CHECK(std::abs(rn.n.y() - 0.7071) < 1e-4);
  CHECK(std::abs(rn.n.z()) < 1e-12);
}

TEST_CASE("distortion: hand values and the O(M^2) oracle") {
  VecXd w(1), t(1), delta(1);
  w << 0.0;
  t << 1.0;
  delta << 0.5;
  CHECK(distortion(w, t, delta) == 0.0);

  w << 1.0;
  CHECK(distortion(w, t, delta) == doctest::Approx(0.5 / 3.0));

  RngStream rng(41);
  const int n = 16;
  VecXd wr(n), tr(n), dr(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    wr[i] = rng.uniform(0.0, 0.2);
    acc += rng.uniform(0.05, 0.4);
    tr[i] = acc;
    dr[i] = rng.uniform(0.05, 0.4);
  }
  double oracle = 0.0;  // double loop
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) oracle += wr[i] * wr[j] * std::abs(tr[i] - tr[j]);
    oracle += wr[i] * wr[i] * dr[i] / 3.0;
  }
  CHECK(std::abs(distortion(wr, tr, dr) - oracle) < 1e-10);

  // Analytic gradient vs finite differences.
  const VecXd grad = distortion_grad_w(wr, tr, dr);
  double worst = 0.0;
  for (int k = 0; k < n; ++k) {
    const double numeric =
        central_diff([&] { return distortion(wr, tr, dr); }, &wr[k], 1e-6);
    worst = std::max(worst, rel_err(grad[k], numeric));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("scale covariance: depth scales with the ray parameterization") {
  RngStream rng(51);
  const int n = 12;
  VecXd tau(n), delta(n), t(n);
  double acc = 0.3;
  for (int i = 0; i < n; ++i) {
    tau[i] = rng.uniform(0.1, 2.0);
    delta[i] = rng.uniform(0.05, 0.5);
    t[i] = acc;
    acc += delta[i];
  }
  const double s = 3.7;
  const auto base = compute_weights(tau, delta);
  const auto scaled = compute_weights((tau / s).eval(), (delta * s).eval());
  CHECK((base.w - scaled.w).norm() < 1e-12);
  CHECK(render_depth(scaled.w, (t * s).eval()) ==
        doctest::Approx(s * render_depth(base.w, t)));
}

TEST_CASE("render_view: zero density gives zero opacity everywhere") {
  const VoxelGridSpecd spec{Vec3d(-1, -1, 0), 0.25, Eigen::Vector3i(8, 8, 8)};
  Camerad cam;
  cam.intrinsics = {16.0, 16.0, 8.0, 8.0, 16, 16};
  cam.extrinsics.translation = Vec3d(0, 0, 3.0);  // camera at z = -3
  ScalarFieldd density = ScalarFieldd::zeros(spec);
  VectorFieldd sem = VectorFieldd::zeros(spec, 3);
  VectorFieldd normals = VectorFieldd::zeros(spec, 3);
  RenderViewConfigd cfg;
  cfg.sampler.step_size = 0.125;
  const auto maps = render_view(cam, density, sem, normals, cfg);
  CHECK(maps.opacity.maxCoeff() == 0.0);
  CHECK(maps.depth.maxCoeff() == 0.0);
}

TEST_CASE("render_view: opaque slab depth lands within one step") {
  // Slab occupying z in [1.0, 2.0] on a grid in front of the camera.
  const VoxelGridSpecd spec{Vec3d(-2, -2, 0), 0.25, Eigen::Vector3i(16, 16, 16)};
  ScalarFieldd density = ScalarFieldd::zeros(spec);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int k = 4; k < 8; ++k)  // z in [1, 2]
        density.values[spec.linear_index(i, j, k)] = 50.0;
  VectorFieldd sem = VectorFieldd::zeros(spec, 3);
  VectorFieldd normals = VectorFieldd::zeros(spec, 3);

  Camerad cam;
  cam.intrinsics = {32.0, 32.0, 16.0, 16.0, 32, 32};
  cam.extrinsics.translation = Vec3d(0, 0, 1.0);  // center (0,0,-1), +z view

  RenderViewConfigd cfg;
  cfg.sampler.step_size = 0.5 * spec.voxel_size;
  cfg.sampler.field_sampling = SamplerConfigd::FieldSampling::nearest;
  const auto maps = render_view(cam, density, sem, normals, cfg);
  // Principal ray hits the slab at world z = 1, i.e. depth 2 from the camera.
  const double center_depth = maps.depth(16, 16);
  CHECK(maps.opacity(16, 16) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(center_depth - 2.0) <= cfg.sampler.step_size + 1.0 / 50.0);
}

TEST_CASE("render_view: halving the step approaches the analytic render") {
  // Smooth-ish fog sphere with moderate extinction; the fine-step render
  // must not be farther from the closed form than the coarse one.
  const VoxelGridSpecd spec{Vec3d(-4, -4, 0), 0.25, Eigen::Vector3i(32, 32, 32)};
  ScalarFieldd density = ScalarFieldd::zeros(spec);
  const Vec3d center(0, 0, 4.0);
  for (Index v = 0; v < spec.num_voxels(); ++v)
    if ((spec.center(v) - center).norm() < 2.5) density.values[v] = 0.6;
  VectorFieldd sem = VectorFieldd::zeros(spec, 2);
  VectorFieldd normals = VectorFieldd::zeros(spec, 3);

  Camerad cam;
  cam.intrinsics = {24.0, 24.0, 12.0, 12.0, 24, 24};
  cam.extrinsics.translation = Vec3d(0, 0, 2.0);  // center (0,0,-2)

  const auto mae_at_step = [&](double scale) {
    RenderViewConfigd cfg;
    cfg.sampler.step_size = scale * spec.voxel_size;
    cfg.sampler.field_sampling = SamplerConfigd::FieldSampling::nearest;
    const auto maps = render_view(cam, density, sem, normals, cfg);
    double mae = 0.0;
    int count = 0;
    for (int row = 0; row < 24; ++row)
      for (int col = 0; col < 24; ++col) {
        const Rayd ray = ray_through_pixel(cam, double(col), double(row), 0.0,
                                           1e9);
        const auto exact = exact_render_piecewise(density, ray.origin,
                                                  ray.direction, 0.0, 1e9);
        if (exact.opacity < 1e-6) continue;
        mae += std::abs(maps.depth(row, col) - exact.depth);
        ++count;
      }
    return mae / count;
  };

  const double fine = mae_at_step(0.5);
  const double coarse = mae_at_step(1.0);
  CHECK(fine <= coarse + 1e-12);  // refinement does not hurt
  CHECK(fine < 0.05);             // and the fine render is actually close
}

TEST_CASE("render_view: spec mismatch is a caller error") {
  const VoxelGridSpecd a{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 2, 2)};
  const VoxelGridSpecd b{Vec3d(0, 0, 0), 0.5, Eigen::Vector3i(2, 2, 2)};
  Camerad cam;
  cam.intrinsics = {8.0, 8.0, 4.0, 4.0, 8, 8};
  const ScalarFieldd density = ScalarFieldd::zeros(a);
  const VectorFieldd sem = VectorFieldd::zeros(b, 2);
  const VectorFieldd normals = VectorFieldd::zeros(a, 3);
  RenderViewConfigd cfg;
  CHECK_THROWS_AS(render_view(cam, density, sem, normals, cfg),
                  std::invalid_argument);
}

TEST_CASE("render_semantics_probabilities: weighted per-sample softmax") {
  RngStream rng(61);
  MatXd sem(3, 4);
  VecXd w(3);
  for (Index i = 0; i < sem.size(); ++i) sem.data()[i] = rng.normal();
  for (int i = 0; i < 3; ++i) w[i] = rng.uniform(0.0, 0.4);
  const VecXd probs = render_semantics_probabilities(w, sem);
  VecXd expect = VecXd::Zero(4);
  for (int i = 0; i < 3; ++i) {
    VecXd s = (sem.row(i).array() - sem.row(i).maxCoeff()).exp();
    expect += w[i] * (s / s.sum());
  }
  CHECK((probs - expect).norm() < 1e-12);
  // Each per-sample distribution sums to one, so the total mass is opacity.
  CHECK(probs.sum() == doctest::Approx(w.sum()));
}

TEST_CASE("render_view: thread count does not change the output bits") {
  const VoxelGridSpecd spec{Vec3d(-1, -1, 0), 0.25, Eigen::Vector3i(8, 8, 8)};
  RngStream rng(67);
  ScalarFieldd density = testutil::random_scalar_field(spec, rng, 0.0, 3.0);
  VectorFieldd sem = testutil::random_vector_field(spec, 3, rng);
  VectorFieldd normals = testutil::random_vector_field(spec, 3, rng);
  Camerad cam;
  cam.intrinsics = {16.0, 16.0, 8.0, 8.0, 16, 16};
  cam.extrinsics.translation = Vec3d(0, 0, 3.0);
  RenderViewConfigd cfg;
  cfg.sampler.step_size = 0.125;
  cfg.threads = 1;
  const auto a = render_view(cam, density, sem, normals, cfg);
  cfg.threads = 3;
  const auto b = render_view(cam, density, sem, normals, cfg);
  CHECK(a.depth == b.depth);
  CHECK(a.sem_logits == b.sem_logits);
  CHECK(a.normal == b.normal);
}
