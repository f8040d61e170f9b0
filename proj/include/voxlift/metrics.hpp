#pragma once

#include <unordered_map>

#include "voxlift/grid.hpp"

namespace voxlift {

struct ConfusionCounts {
  int num_classes = 0;
  std::vector<std::int64_t> tp, fp, fn;
  std::int64_t evaluated = 0;  // voxels counted (IGNORE excluded)
};

// Per-class confusion over voxel labels. FREE participates only as
// "not class i"; gt IGNORE voxels are excluded entirely.
template <class S>
ConfusionCounts confusion(const SemanticOccupancy<S>& pred,
                          const SemanticOccupancy<S>& gt) {
  if (!(pred.spec == gt.spec) || pred.num_classes != gt.num_classes)
    throw std::invalid_argument("confusion: spec/class mismatch");
  ConfusionCounts counts;
  counts.num_classes = gt.num_classes;
  counts.tp.assign(gt.num_classes, 0);
  counts.fp.assign(gt.num_classes, 0);
  counts.fn.assign(gt.num_classes, 0);
  for (Index v = 0; v < gt.spec.num_voxels(); ++v) {
    const std::uint8_t g = gt.labels[v];
    if (g == kIgnoreLabel) continue;
    const std::uint8_t p = pred.labels[v];
    ++counts.evaluated;
    if (p == g && g != kFreeLabel) ++counts.tp[g];
    if (p != g) {
      if (p != kFreeLabel && p != kIgnoreLabel) ++counts.fp[p];
      if (g != kFreeLabel) ++counts.fn[g];
    }
  }
  return counts;
}

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class;      // NaN for excluded classes
  std::vector<std::uint8_t> included; // class had TP+FP+FN > 0
};

// IoU_i = TP / (TP + FP + FN); classes absent from both prediction and
// ground truth are excluded from the mean.
inline MiouResult miou(const ConfusionCounts& counts) {
  MiouResult result;
  result.per_class.assign(counts.num_classes,
                          std::numeric_limits<double>::quiet_NaN());
  result.included.assign(counts.num_classes, 0);
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < counts.num_classes; ++c) {
    const std::int64_t denom = counts.tp[c] + counts.fp[c] + counts.fn[c];
    if (denom == 0) continue;
    result.per_class[c] =
        static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
    result.included[c] = 1;
    sum += result.per_class[c];
    ++n;
  }
  result.miou = n > 0 ? sum / n : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Geometry-only precision / recall / F-score over occupied-voxel centers.
// A point scores when its nearest neighbor in the other set lies strictly
// within delta (the "< delta" convention is pinned by tests).

struct EvalConfig {
  double delta = 0.4;

  void validate() const {
    if (!(delta > 0)) throw std::invalid_argument("EvalConfig: delta must be > 0");
  }
};

struct PrfResult {
  double precision = 0.0, recall = 0.0, fscore = 0.0;
  std::size_t n_pred = 0, n_gt = 0;
};

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey& o) const {
    return x == o.x && y == o.y && z == o.z;
  }
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4full;
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ull;
    h ^= h >> 29;
    return static_cast<std::size_t>(h);
  }
};

// Uniform spatial hash with cell size = delta; any point strictly within
// delta of a query lies in the query's 27-cell neighborhood.
class PointHash {
 public:
  PointHash(const std::vector<Vec3d>& points, double cell) : cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i)
      cells_[key(points[i])].push_back(i);
    points_ = &points;
  }

  bool has_neighbor_within(const Vec3d& q, double delta) const {
    const CellKey k = key(q);
    const double d2 = delta * delta;
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t idx : it->second)
            if (((*points_)[idx] - q).squaredNorm() < d2) return true;
        }
    return false;
  }

 private:
  CellKey key(const Vec3d& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }

  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
  const std::vector<Vec3d>* points_ = nullptr;
};

}  // namespace detail

template <class S>
std::vector<Vec3d> occupied_centers(const SemanticOccupancy<S>& occ) {
  std::vector<Vec3d> points;
  for (Index v = 0; v < occ.spec.num_voxels(); ++v) {
    const std::uint8_t label = occ.labels[v];
    if (label == kFreeLabel || label == kIgnoreLabel) continue;
    points.push_back(occ.spec.center(v).template cast<double>());
  }
  return points;
}

inline PrfResult precision_recall_fscore_points(
    const std::vector<Vec3d>& pred_points, const std::vector<Vec3d>& gt_points,
    const EvalConfig& cfg) {
  cfg.validate();
  PrfResult result;
  result.n_pred = pred_points.size();
  result.n_gt = gt_points.size();
  if (pred_points.empty() || gt_points.empty()) {
    log_msg(LogLevel::warn,
            "precision_recall_fscore: empty point set, metrics forced to 0");
    return result;
  }
  const detail::PointHash pred_hash(pred_points, cfg.delta);
  const detail::PointHash gt_hash(gt_points, cfg.delta);
  std::size_t pred_matched = 0, gt_matched = 0;
  for (const auto& p : pred_points)
    if (gt_hash.has_neighbor_within(p, cfg.delta)) ++pred_matched;
  for (const auto& g : gt_points)
    if (pred_hash.has_neighbor_within(g, cfg.delta)) ++gt_matched;
  result.precision = static_cast<double>(pred_matched) / pred_points.size();
  result.recall = static_cast<double>(gt_matched) / gt_points.size();
  if (result.precision + result.recall > 0)
    result.fscore = 2.0 * result.precision * result.recall /
                    (result.precision + result.recall);
  return result;
}

template <class S>
PrfResult precision_recall_fscore(const SemanticOccupancy<S>& pred,
                                  const SemanticOccupancy<S>& gt,
                                  const EvalConfig& cfg) {
  if (!(pred.spec == gt.spec))
    throw std::invalid_argument("precision_recall_fscore: spec mismatch");
  return precision_recall_fscore_points(occupied_centers(pred),
                                        occupied_centers(gt), cfg);
}

}  // namespace voxlift
