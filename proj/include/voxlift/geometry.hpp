#pragma once

#include <optional>
#include <vector>

#include "voxlift/common.hpp"

namespace voxlift {

// Calibrated pinhole cameras. Extrinsics map world/ego coordinates to the
// camera frame: x_cam = R * x_world + t. The camera looks down +z in its own
// frame; integer pixel coordinate (u, v) refers to the center of pixel (u, v).

inline constexpr double kDefaultZMin = 1e-4;  // near-plane guard for 1/z

template <class S>
struct Intrinsics {
  S fx = S(1), fy = S(1);
  S cx = S(0), cy = S(0);
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > S(0)) || !(fy > S(0)))
      throw std::invalid_argument("Intrinsics: focal lengths must be positive");
    if (width < 1 || height < 1)
      throw std::invalid_argument("Intrinsics: image size must be >= 1");
  }
};

template <class S>
struct Extrinsics {
  Mat3<S> rotation = Mat3<S>::Identity();   // world -> camera
  Vec3<S> translation = Vec3<S>::Zero();    // meters

  void validate(S tol = S(1e-9)) const {
    const Mat3<S> rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3<S>::Identity()).cwiseAbs().maxCoeff() > tol)
      throw std::invalid_argument("Extrinsics: rotation is not orthonormal");
    if (std::abs(rotation.determinant() - S(1)) > tol)
      throw std::invalid_argument("Extrinsics: rotation determinant is not +1");
  }
};

template <class S>
struct Camera {
  Intrinsics<S> intrinsics;
  Extrinsics<S> extrinsics;
  int id = 1;

  Vec3<S> to_camera(const Vec3<S>& p_world) const {
    return extrinsics.rotation * p_world + extrinsics.translation;
  }

  // Camera center in world coordinates.
  Vec3<S> center() const {
    return -(extrinsics.rotation.transpose() * extrinsics.translation);
  }

  void validate() const {
    intrinsics.validate();
    extrinsics.validate();
  }
};

template <class S>
struct CameraRig {
  std::vector<Camera<S>> cameras;

  int size() const { return static_cast<int>(cameras.size()); }

  // Non-empty, ids form the dense set {1..N}.
  void validate() const {
    if (cameras.empty())
      throw std::invalid_argument("CameraRig: rig must be non-empty");
    std::vector<bool> seen(cameras.size(), false);
    for (const auto& cam : cameras) {
      cam.validate();
      if (cam.id < 1 || cam.id > size() || seen[cam.id - 1])
        throw std::invalid_argument("CameraRig: ids must be dense 1..N");
      seen[cam.id - 1] = true;
    }
  }

  const Camera<S>& by_id(int id) const {
    for (const auto& cam : cameras)
      if (cam.id == id) return cam;
    throw std::invalid_argument("CameraRig: no camera with id " +
                                std::to_string(id));
  }
};

template <class S>
struct Ray {
  Vec3<S> origin = Vec3<S>::Zero();     // camera center, world frame
  Vec3<S> direction = Vec3<S>::UnitZ(); // unit norm
  S t_near = S(0), t_far = S(1);

  Vec3<S> at(S t) const { return origin + t * direction; }
};

template <class S>
struct PixelProjection {
  S u, v;   // pixel coordinates
  S depth;  // camera-frame z, meters
};

// Pinhole projection. Returns nullopt when the point is behind the near
// plane or lands outside [0,width) x [0,height); invalidity is a value.
template <class S>
std::optional<PixelProjection<S>> project_point(const Camera<S>& camera,
                                                const Vec3<S>& p_world,
                                                S z_min = S(kDefaultZMin)) {
  const Vec3<S> pc = camera.to_camera(p_world);
  if (!(pc.z() > z_min)) return std::nullopt;
  const S u = camera.intrinsics.fx * pc.x() / pc.z() + camera.intrinsics.cx;
  const S v = camera.intrinsics.fy * pc.y() / pc.z() + camera.intrinsics.cy;
  if (u < S(0) || u >= S(camera.intrinsics.width) || v < S(0) ||
      v >= S(camera.intrinsics.height))
    return std::nullopt;
  return PixelProjection<S>{u, v, pc.z()};
}

// World-frame ray through a pixel. Out-of-bounds pixels are a caller error.
template <class S>
Ray<S> ray_through_pixel(const Camera<S>& camera, S u, S v, S t_near, S t_far) {
  if (u < S(0) || u >= S(camera.intrinsics.width) || v < S(0) ||
      v >= S(camera.intrinsics.height))
    throw std::domain_error("ray_through_pixel: pixel outside image bounds");
  if (!(t_near < t_far) || t_near < S(0))
    throw std::domain_error("ray_through_pixel: need 0 <= t_near < t_far");
  Vec3<S> dir_cam((u - camera.intrinsics.cx) / camera.intrinsics.fx,
                  (v - camera.intrinsics.cy) / camera.intrinsics.fy, S(1));
  dir_cam.normalize();
  Ray<S> ray;
  ray.origin = camera.center();
  ray.direction = camera.extrinsics.rotation.transpose() * dir_cam;
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

using Intrinsicsd = Intrinsics<double>;
using Extrinsicsd = Extrinsics<double>;
using Camerad = Camera<double>;
using CameraRigd = CameraRig<double>;
using Rayd = Ray<double>;

}  // namespace voxlift
