#pragma once

#include <variant>

#include "voxlift/geometry.hpp"
#include "voxlift/grid.hpp"

namespace voxlift {

// Analytic primitives with semantic class ids. The ground plane is the solid
// half-space z <= height.
struct Sphere {
  Vec3d center = Vec3d::Zero();
  double radius = 1.0;
  int class_id = 0;
};

struct Box {
  Vec3d lo = Vec3d::Zero();
  Vec3d hi = Vec3d::Ones();
  int class_id = 0;
};

struct GroundPlane {
  double height = 0.0;
  int class_id = 0;
};

using Primitive = std::variant<Sphere, Box, GroundPlane>;

int primitive_class(const Primitive& prim);
bool primitive_contains(const Primitive& prim, const Vec3d& p);

struct PrimitiveHit {
  double t = 0.0;
  Vec3d normal = Vec3d::UnitZ();  // outward, world frame, unit
  int class_id = 0;
};

// First entry hit of a ray starting outside the primitive; nullopt on a miss.
std::optional<PrimitiveHit> intersect_primitive(const Primitive& prim,
                                                const Vec3d& origin,
                                                const Vec3d& direction);

// Nearest first hit over a primitive list.
std::optional<PrimitiveHit> intersect_scene(const std::vector<Primitive>& prims,
                                            const Vec3d& origin,
                                            const Vec3d& direction);

struct SceneConfig {
  std::vector<Primitive> primitives;
  CameraRigd rig;
  VoxelGridSpecd spec;
  int num_classes = 1;
  double tau_occ = 50.0;  // GT extinction inside primitives, 1/m
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Voxelized ground truth. A voxel takes the class of the last listed
// primitive containing its center (later primitives override earlier ones);
// everything else is FREE. GT density is tau_occ inside, 0 outside.
struct RasterizedScene {
  SemanticOccupancyd occupancy;
  ScalarFieldd density;
};

RasterizedScene rasterize_scene(const SceneConfig& scene);

// ---------------------------------------------------------------------------
// Dense per-pixel 2D ground truth from exact ray-primitive intersection.
// Sky pixels are masked out (mask 0, sem -1, depth 0).
struct GtMaps {
  int width = 0, height = 0;
  MatXd depth;                     // height x width, meters
  std::vector<int> sem;            // per pixel, -1 for sky
  MatXd normal;                    // (height*width) x 3, unit where masked
  std::vector<std::uint8_t> mask;  // 1 where a primitive was hit
};

GtMaps render_gt_labels(const SceneConfig& scene, const Camerad& camera,
                        int supersample = 1, int out_width = 0,
                        int out_height = 0);

// ---------------------------------------------------------------------------
// Simulated LiDAR: a seeded spherical beam pattern cast from a sensor
// position, plus projection of the hits into a camera with z-buffering.
struct LidarHit {
  Vec3d point = Vec3d::Zero();
  int class_id = 0;
};

std::vector<LidarHit> simulate_lidar(const SceneConfig& scene,
                                     const Vec3d& sensor_origin, int n_beams,
                                     int azimuth_count, std::uint64_t seed,
                                     double elevation_lo = -0.45,
                                     double elevation_hi = 0.15);

struct SparseMaps {
  int width = 0, height = 0;
  MatXd depth;                     // camera-frame z of the retained hit
  std::vector<std::uint8_t> depth_mask;
  std::vector<int> sem;
  std::vector<std::uint8_t> sem_mask;
};

SparseMaps project_labels(const std::vector<LidarHit>& hits,
                          const Camerad& camera);

// Surround rig: n cameras on a horizontal ring, evenly spaced, all aimed at
// `target`. Ids run 1..n.
CameraRigd make_ring_rig(int n_cameras, double ring_radius, double height,
                         const Vec3d& target, const Intrinsicsd& intrinsics);

// Rotation (world -> camera) looking from `eye` toward `target`, +z forward,
// +y approximately world-down.
Mat3d look_at_rotation(const Vec3d& eye, const Vec3d& target);

}  // namespace voxlift
