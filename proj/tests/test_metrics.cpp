#include <doctest.h>

#include <algorithm>

#include "test_util.hpp"
#include "voxlift/metrics.hpp"

using namespace voxlift;

namespace {

SemanticOccupancyd make_occ(const VoxelGridSpecd& spec, int num_classes,
                            const std::vector<int>& labels) {
  SemanticOccupancyd occ = SemanticOccupancyd::all_free(spec, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    occ.labels[i] = labels[i] < 0 ? kFreeLabel : std::uint8_t(labels[i]);
  return occ;
}

}  // namespace

TEST_CASE("confusion: identical predictions have no FP/FN") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 2, 1)};
  const auto gt = make_occ(spec, 3, {0, 1, 2, -1});
  const auto counts = confusion(gt, gt);
  for (int c = 0; c < 3; ++c) {
    CHECK(counts.fp[c] == 0);
    CHECK(counts.fn[c] == 0);
  }
  CHECK(counts.tp[0] == 1);
  CHECK(counts.tp[1] == 1);
  CHECK(counts.tp[2] == 1);
}

TEST_CASE("confusion: FREE counts as 'not class i'") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(2, 1, 1)};
  const auto gt = make_occ(spec, 2, {1, -1});
  const auto pred = make_occ(spec, 2, {1, 1});
  const auto counts = confusion(pred, gt);
  CHECK(counts.tp[1] == 1);
  CHECK(counts.fp[1] == 1);
  CHECK(counts.fn[1] == 0);
}

TEST_CASE("confusion: IGNORE voxels are excluded; random triple-loop oracle") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(4, 4, 4)};
  RngStream rng(5);
  const int C = 3;
  SemanticOccupancyd gt = SemanticOccupancyd::all_free(spec, C);
  SemanticOccupancyd pred = SemanticOccupancyd::all_free(spec, C);
  for (Index v = 0; v < spec.num_voxels(); ++v) {
    const double roll = rng.uniform();
    gt.labels[v] = roll < 0.15   ? kIgnoreLabel
                   : roll < 0.45 ? kFreeLabel
                                 : std::uint8_t(rng.uniform_int(0, C - 1));
    pred.labels[v] = rng.uniform() < 0.4
                         ? kFreeLabel
                         : std::uint8_t(rng.uniform_int(0, C - 1));
  }
  const auto counts = confusion(pred, gt);
  for (int c = 0; c < C; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (Index v = 0; v < spec.num_voxels(); ++v) {
      if (gt.labels[v] == kIgnoreLabel) continue;
      const bool in_gt = gt.labels[v] == c;
      const bool in_pred = pred.labels[v] == c;
      if (in_gt && in_pred) ++tp;
      if (in_pred && !in_gt) ++fp;
      if (in_gt && !in_pred) ++fn;
    }
    CHECK(counts.tp[c] == tp);
    CHECK(counts.fp[c] == fp);
    CHECK(counts.fn[c] == fn);
  }
}

TEST_CASE("miou: perfect score, 0.5 case, hand-built 3-class table") {
  ConfusionCounts counts;
  counts.num_classes = 2;
  counts.tp = {4, 7};
  counts.fp = {0, 0};
  counts.fn = {0, 0};
  CHECK(miou(counts).miou == doctest::Approx(1.0));

  counts.tp = {1};
  counts.fp = {1};
  counts.fn = {0};
  counts.num_classes = 1;
  CHECK(miou(counts).miou == doctest::Approx(0.5));

  // Hand table: IoU = 2/4, 3/3, absent class excluded.
  counts.num_classes = 3;
  counts.tp = {2, 3, 0};
  counts.fp = {1, 0, 0};
  counts.fn = {1, 0, 0};
  const auto result = miou(counts);
  CHECK(result.per_class[0] == doctest::Approx(0.5));
  CHECK(result.per_class[1] == doctest::Approx(1.0));
  CHECK_FALSE(result.included[2]);
  CHECK(result.miou == doctest::Approx(0.75));
}

TEST_CASE("miou: invariant to voxel iteration order") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(3, 3, 1)};
  RngStream rng(9);
  std::vector<int> gt_labels, pred_labels;
  for (int v = 0; v < 9; ++v) {
    gt_labels.push_back(int(rng.uniform_int(-1, 2)));
    pred_labels.push_back(int(rng.uniform_int(-1, 2)));
  }
  const double base = miou(confusion(make_occ(spec, 3, pred_labels),
                                     make_occ(spec, 3, gt_labels)))
                          .miou;
  // Same multiset of (pred, gt) pairs in a permuted voxel order.
  std::vector<int> perm{4, 2, 7, 0, 8, 5, 1, 6, 3};
  std::vector<int> gt_p(9), pred_p(9);
  for (int v = 0; v < 9; ++v) {
    gt_p[v] = gt_labels[perm[v]];
    pred_p[v] = pred_labels[perm[v]];
  }
  const double permuted =
      miou(confusion(make_occ(spec, 3, pred_p), make_occ(spec, 3, gt_p))).miou;
  CHECK(base == doctest::Approx(permuted).epsilon(1e-15));
}

TEST_CASE("precision/recall/F: identical sets, delta-shift boundary") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(4, 4, 1)};
  const auto occ = make_occ(spec, 2, {0, -1, -1, 1, -1, 0, -1, -1, 1, -1, -1,
                                      0, -1, -1, -1, 1});
  EvalConfig cfg;
  cfg.delta = 1.0;
  const auto same = precision_recall_fscore(occ, occ, cfg);
  CHECK(same.precision == doctest::Approx(1.0));
  CHECK(same.recall == doctest::Approx(1.0));
  CHECK(same.fscore == doctest::Approx(1.0));

  // Prediction shifted by exactly delta along +x: the strict "< delta"
  // convention scores zero.
  std::vector<Vec3d> gt_pts{{0, 0, 0}, {2, 0, 0}};
  std::vector<Vec3d> pred_pts{{1, 0, 0}, {3, 0, 0}};
  const auto shifted = precision_recall_fscore_points(pred_pts, gt_pts, cfg);
  CHECK(shifted.precision == 0.0);
  CHECK(shifted.recall == 0.0);
  CHECK(shifted.fscore == 0.0);

  cfg.delta = 1.0 + 1e-9;
  const auto loose = precision_recall_fscore_points(pred_pts, gt_pts, cfg);
  CHECK(loose.precision == doctest::Approx(1.0));
}

TEST_CASE("precision/recall/F: random sets match the O(n^2) oracle") {
  RngStream rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3d> pred, gt;
    const int np = 1 + int(rng.uniform_int(0, 40));
    const int ng = 1 + int(rng.uniform_int(0, 40));
    for (int i = 0; i < np; ++i)
      pred.emplace_back(rng.uniform(-3, 3), rng.uniform(-3, 3),
                        rng.uniform(-1, 1));
    for (int i = 0; i < ng; ++i)
      gt.emplace_back(rng.uniform(-3, 3), rng.uniform(-3, 3),
                      rng.uniform(-1, 1));
    EvalConfig cfg;
    cfg.delta = rng.uniform(0.2, 1.5);
    const auto fast = precision_recall_fscore_points(pred, gt, cfg);

    int p_hit = 0, g_hit = 0;
    for (const auto& p : pred) {
      double best = 1e30;
      for (const auto& g : gt) best = std::min(best, (p - g).norm());
      if (best < cfg.delta) ++p_hit;
    }
    for (const auto& g : gt) {
      double best = 1e30;
      for (const auto& p : pred) best = std::min(best, (g - p).norm());
      if (best < cfg.delta) ++g_hit;
    }
    const double precision = double(p_hit) / np;
    const double recall = double(g_hit) / ng;
    CHECK(fast.precision == doctest::Approx(precision).epsilon(1e-12));
    CHECK(fast.recall == doctest::Approx(recall).epsilon(1e-12));
    if (precision + recall > 0)
      CHECK(fast.fscore ==
            doctest::Approx(2 * precision * recall / (precision + recall)));
  }
}

TEST_CASE("precision/recall/F: swap symmetry, threshold monotonicity, identity") {
  RngStream rng(17);
  std::vector<Vec3d> a, b;
  for (int i = 0; i < 25; ++i) {
    a.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1));
    b.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1));
  }
  EvalConfig cfg;
  cfg.delta = 0.8;
  const auto ab = precision_recall_fscore_points(a, b, cfg);
  const auto ba = precision_recall_fscore_points(b, a, cfg);
  CHECK(ab.precision == doctest::Approx(ba.recall).epsilon(1e-15));
  CHECK(ab.recall == doctest::Approx(ba.precision).epsilon(1e-15));
  CHECK(ab.fscore == doctest::Approx(ba.fscore).epsilon(1e-12));
  if (ab.precision + ab.recall > 0)
    CHECK(std::abs(ab.fscore - 2 * ab.precision * ab.recall /
                                   (ab.precision + ab.recall)) < 1e-12);

  double prev_p = -1, prev_r = -1;
  for (const double delta : {0.2, 0.5, 1.0, 2.0, 5.0}) {
    cfg.delta = delta;
    const auto prf = precision_recall_fscore_points(a, b, cfg);
    CHECK(prf.precision >= prev_p);
    CHECK(prf.recall >= prev_r);
    prev_p = prf.precision;
    prev_r = prf.recall;
  }
}

TEST_CASE("precision/recall/F: empty sets force zeros with a warning") {
  std::vector<Vec3d> empty, some{{0, 0, 0}};
  EvalConfig cfg;
  cfg.delta = 1.0;
  const auto no_pred = precision_recall_fscore_points(empty, some, cfg);
  CHECK(no_pred.precision == 0.0);
  CHECK(no_pred.recall == 0.0);
  CHECK(no_pred.fscore == 0.0);
}

TEST_CASE("occupied_centers excludes FREE and IGNORE") {
  const VoxelGridSpecd spec{Vec3d(0, 0, 0), 1.0, Eigen::Vector3i(3, 1, 1)};
  SemanticOccupancyd occ = SemanticOccupancyd::all_free(spec, 2);
  occ.labels[0] = 1;
  occ.labels[1] = kIgnoreLabel;
  const auto pts = occupied_centers(occ);
  REQUIRE(pts.size() == 1);
  CHECK((pts[0] - Vec3d(0.5, 0.5, 0.5)).norm() < 1e-15);
}
