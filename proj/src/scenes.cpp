#include "voxlift/scenes.hpp"

namespace voxlift {

namespace {
constexpr double kRayEps = 1e-9;
}

int primitive_class(const Primitive& prim) {
  return std::visit([](const auto& p) { return p.class_id; }, prim);
}

bool primitive_contains(const Primitive& prim, const Vec3d& p) {
  if (const auto* s = std::get_if<Sphere>(&prim))
    return (p - s->center).squaredNorm() <= s->radius * s->radius;
  if (const auto* b = std::get_if<Box>(&prim))
    return (p.array() >= b->lo.array()).all() &&
           (p.array() <= b->hi.array()).all();
  const auto& g = std::get<GroundPlane>(prim);
  return p.z() <= g.height;
}

std::optional<PrimitiveHit> intersect_primitive(const Primitive& prim,
                                                const Vec3d& origin,
                                                const Vec3d& direction) {
  if (const auto* s = std::get_if<Sphere>(&prim)) {
    const Vec3d oc = origin - s->center;
    const double b = oc.dot(direction);
    const double c = oc.squaredNorm() - s->radius * s->radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double t = -b - std::sqrt(disc);  // entry root
    if (t <= kRayEps) return std::nullopt;
    const Vec3d p = origin + t * direction;
    return PrimitiveHit{t, (p - s->center).normalized(), s->class_id};
  }
  if (const auto* box = std::get_if<Box>(&prim)) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    int entry_axis = -1;
    double entry_sign = 1.0;
    for (int a = 0; a < 3; ++a) {
      if (direction[a] == 0.0) {
        if (origin[a] < box->lo[a] || origin[a] > box->hi[a])
          return std::nullopt;
        continue;
      }
      double lo = (box->lo[a] - origin[a]) / direction[a];
      double hi = (box->hi[a] - origin[a]) / direction[a];
      double sign = -1.0;  // entering through the lo face
      if (lo > hi) {
        std::swap(lo, hi);
        sign = 1.0;
      }
      if (lo > t0) {
        t0 = lo;
        entry_axis = a;
        entry_sign = sign;
      }
      t1 = std::min(t1, hi);
    }
    if (t0 > t1 || t0 <= kRayEps || entry_axis < 0) return std::nullopt;
    Vec3d normal = Vec3d::Zero();
    normal[entry_axis] = entry_sign;
    return PrimitiveHit{t0, normal, box->class_id};
  }
  const auto& g = std::get<GroundPlane>(prim);
  if (origin.z() <= g.height || direction.z() >= 0.0) return std::nullopt;
  const double t = (g.height - origin.z()) / direction.z();
  if (t <= kRayEps) return std::nullopt;
  return PrimitiveHit{t, Vec3d::UnitZ(), g.class_id};
}

std::optional<PrimitiveHit> intersect_scene(const std::vector<Primitive>& prims,
                                            const Vec3d& origin,
                                            const Vec3d& direction) {
  std::optional<PrimitiveHit> best;
  for (const auto& prim : prims) {
    const auto hit = intersect_primitive(prim, origin, direction);
    if (hit && (!best || hit->t < best->t)) best = hit;
  }
  return best;
}

void SceneConfig::validate() const {
  spec.validate();
  if (primitives.empty())
    throw std::invalid_argument("SceneConfig: no primitives");
  if (num_classes < 1)
    throw std::invalid_argument("SceneConfig: num_classes must be >= 1");
  for (const auto& prim : primitives) {
    const int cls = primitive_class(prim);
    if (cls < 0 || cls >= num_classes)
      throw std::invalid_argument("SceneConfig: class_id outside alphabet");
  }
  // Every primitive must reach into the grid volume.
  const Vec3d lo = spec.min_corner, hi = spec.max_corner();
  for (const auto& prim : primitives) {
    bool overlaps = false;
    if (const auto* s = std::get_if<Sphere>(&prim)) {
      Vec3d clamped = s->center.cwiseMax(lo).cwiseMin(hi);
      overlaps = (clamped - s->center).norm() <= s->radius;
    } else if (const auto* b = std::get_if<Box>(&prim)) {
      overlaps = (b->lo.array() <= hi.array()).all() &&
                 (b->hi.array() >= lo.array()).all();
    } else {
      overlaps = std::get<GroundPlane>(prim).height >= lo.z();
    }
    if (!overlaps)
      throw std::invalid_argument(
          "SceneConfig: primitive does not intersect the grid volume");
  }
}

RasterizedScene rasterize_scene(const SceneConfig& scene) {
  scene.validate();
  RasterizedScene out;
  out.occupancy =
      SemanticOccupancyd::all_free(scene.spec, scene.num_classes);
  out.density = ScalarFieldd::zeros(scene.spec);
  for (Index v = 0; v < scene.spec.num_voxels(); ++v) {
    const Vec3d p = scene.spec.center(v);
    // Later primitives override earlier ones.
    for (const auto& prim : scene.primitives) {
      if (primitive_contains(prim, p)) {
        out.occupancy.labels[v] =
            static_cast<std::uint8_t>(primitive_class(prim));
        out.density.values[v] = scene.tau_occ;
      }
    }
  }
  return out;
}

GtMaps render_gt_labels(const SceneConfig& scene, const Camerad& camera,
                        int supersample, int out_width, int out_height) {
  camera.validate();
  if (supersample < 1)
    throw std::invalid_argument("render_gt_labels: supersample must be >= 1");
  GtMaps maps;
  maps.width = out_width > 0 ? out_width : camera.intrinsics.width;
  maps.height = out_height > 0 ? out_height : camera.intrinsics.height;
  maps.depth = MatXd::Zero(maps.height, maps.width);
  maps.sem.assign(Index(maps.height) * maps.width, -1);
  maps.normal = MatXd::Zero(Index(maps.height) * maps.width, 3);
  maps.mask.assign(Index(maps.height) * maps.width, 0);

  const double su = double(camera.intrinsics.width) / maps.width;
  const double sv = double(camera.intrinsics.height) / maps.height;
  const Vec3d origin = camera.center();
  const Mat3d rot_t = camera.extrinsics.rotation.transpose();

  const int s = supersample;
  std::vector<PrimitiveHit> hits;
  hits.reserve(s * s);
  for (int row = 0; row < maps.height; ++row) {
    for (int col = 0; col < maps.width; ++col) {
      hits.clear();
      for (int a = 0; a < s; ++a) {
        for (int b = 0; b < s; ++b) {
          const double u =
              (col + (b + 0.5) / s) * su - 0.5;
          const double v =
              (row + (a + 0.5) / s) * sv - 0.5;
          Vec3d dir_cam((u - camera.intrinsics.cx) / camera.intrinsics.fx,
                        (v - camera.intrinsics.cy) / camera.intrinsics.fy, 1.0);
          const Vec3d dir = (rot_t * dir_cam).normalized();
          const auto hit = intersect_scene(scene.primitives, origin, dir);
          if (hit) hits.push_back(*hit);
        }
      }
      // Strict majority of sub-rays must hit; winning class by vote,
      // depth/normal from the nearest hit of that class.
      if (static_cast<int>(hits.size()) * 2 <= s * s) continue;
      int best_class = -1, best_votes = 0;
      for (const auto& h : hits) {
        int votes = 0;
        for (const auto& other : hits)
          if (other.class_id == h.class_id) ++votes;
        if (votes > best_votes ||
            (votes == best_votes && h.class_id < best_class)) {
          best_votes = votes;
          best_class = h.class_id;
        }
      }
      const PrimitiveHit* chosen = nullptr;
      for (const auto& h : hits)
        if (h.class_id == best_class && (!chosen || h.t < chosen->t))
          chosen = &h;
      const Index px = Index(row) * maps.width + col;
      maps.depth(row, col) = chosen->t;
      maps.sem[px] = chosen->class_id;
      maps.normal.row(px) = chosen->normal.transpose();
      maps.mask[px] = 1;
    }
  }
  return maps;
}

std::vector<LidarHit> simulate_lidar(const SceneConfig& scene,
                                     const Vec3d& sensor_origin, int n_beams,
                                     int azimuth_count, std::uint64_t seed,
                                     double elevation_lo, double elevation_hi) {
  if (n_beams < 1 || azimuth_count < 1)
    throw std::invalid_argument("simulate_lidar: need beams and azimuths >= 1");
  std::vector<LidarHit> hits;
  RngStream rng = RngStream::substream(seed, "lidar");
  for (int b = 0; b < n_beams; ++b) {
    const double elev =
        n_beams == 1 ? elevation_lo
                     : elevation_lo +
                           (elevation_hi - elevation_lo) * b / (n_beams - 1);
    const double phase = rng.uniform(0.0, 2.0 * M_PI / azimuth_count);
    for (int a = 0; a < azimuth_count; ++a) {
      const double az = phase + 2.0 * M_PI * a / azimuth_count;
      const Vec3d dir(std::cos(elev) * std::cos(az),
                      std::cos(elev) * std::sin(az), std::sin(elev));
      const auto hit = intersect_scene(scene.primitives, sensor_origin, dir);
      if (hit)
        hits.push_back({sensor_origin + hit->t * dir, hit->class_id});
    }
  }
  return hits;
}

SparseMaps project_labels(const std::vector<LidarHit>& hits,
                          const Camerad& camera) {
  SparseMaps maps;
  maps.width = camera.intrinsics.width;
  maps.height = camera.intrinsics.height;
  maps.depth = MatXd::Zero(maps.height, maps.width);
  maps.depth_mask.assign(Index(maps.height) * maps.width, 0);
  maps.sem.assign(Index(maps.height) * maps.width, -1);
  maps.sem_mask.assign(Index(maps.height) * maps.width, 0);
  for (const auto& hit : hits) {
    const auto proj = project_point(camera, hit.point);
    if (!proj) continue;
    // Pixel (i, j) covers [i-0.5, i+0.5); nearest-integer bin.
    const int col = static_cast<int>(std::lround(proj->u));
    const int row = static_cast<int>(std::lround(proj->v));
    if (col < 0 || col >= maps.width || row < 0 || row >= maps.height)
      continue;
    const Index px = Index(row) * maps.width + col;
    if (maps.depth_mask[px] && maps.depth(row, col) <= proj->depth) continue;
    maps.depth(row, col) = proj->depth;  // nearest hit wins
    maps.depth_mask[px] = 1;
    maps.sem[px] = hit.class_id;
    maps.sem_mask[px] = 1;
  }
  return maps;
}

Mat3d look_at_rotation(const Vec3d& eye, const Vec3d& target) {
  const Vec3d forward = (target - eye).normalized();
  Vec3d up = Vec3d::UnitZ();
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3d::UnitY();
  const Vec3d right = forward.cross(up).normalized();
  const Vec3d down = forward.cross(right);  // +y in camera frame
  Mat3d rot;
  rot.row(0) = right.transpose();
  rot.row(1) = down.transpose();
  rot.row(2) = forward.transpose();
  return rot;
}

CameraRigd make_ring_rig(int n_cameras, double ring_radius, double height,
                         const Vec3d& target, const Intrinsicsd& intrinsics) {
  if (n_cameras < 1)
    throw std::invalid_argument("make_ring_rig: need at least one camera");
  CameraRigd rig;
  for (int c = 0; c < n_cameras; ++c) {
    const double angle = 2.0 * M_PI * c / n_cameras;
    const Vec3d eye(ring_radius * std::cos(angle),
                    ring_radius * std::sin(angle), height);
    Camerad cam;
    cam.id = c + 1;
    cam.intrinsics = intrinsics;
    cam.extrinsics.rotation = look_at_rotation(eye, target);
    cam.extrinsics.translation = -cam.extrinsics.rotation * eye;
    rig.cameras.push_back(cam);
  }
  rig.validate();
  return rig;
}

}  // namespace voxlift
