#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <optional>

#include "lcmflow/core.hpp"
#include "lcmflow/flow_field.hpp"

namespace lcmflow {

// Pinhole camera. Axes: +z along the optical axis, +x image right, +y image
// down. Focal length derives from the horizontal field of view; the principal
// point sits at the half-pixel-centered image center.
struct CameraModel {
  int width = 640;
  int height = 360;
  double horizontal_fov = 2.0943951023931953;  // 120 degrees

  double focal() const { return (width / 2.0) / std::tan(horizontal_fov / 2.0); }
  Eigen::Vector2d principal_point() const {
    return {(width - 1) / 2.0, (height - 1) / 2.0};
  }
  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= 0.0 && p.x() <= width - 1.0 && p.y() >= 0.0 && p.y() <= height - 1.0;
  }
  void validate() const;
};

// Camera pose in the world frame: position of the camera center and Z-Y-X
// intrinsic Euler angles (yaw, pitch, roll) of the camera-to-world rotation.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d orientation = Eigen::Vector3d::Zero();  // yaw, pitch, roll [rad]

  Eigen::Matrix3d rotation() const;      // R mapping camera coords to world coords
  Eigen::Isometry3d transform() const;   // camera-to-world rigid transform

  // Z-Y-X angles of a rotation matrix; pitch in [-pi/2, pi/2].
  static Eigen::Vector3d euler_from_rotation(const Eigen::Matrix3d& R);
};

// Per-pixel inverse depth (1/meters, z-depth in the camera frame) aligned to
// a frame. Invalid pixels are flagged as NaN or non-positive values.
struct DepthMap {
  Grid<double> inverse_depth;

  DepthMap() = default;
  explicit DepthMap(Grid<double> g) : inverse_depth(std::move(g)) {}
  DepthMap(int w, int h, double fill = std::numeric_limits<double>::quiet_NaN())
      : inverse_depth(w, h, fill) {}

  int width() const { return inverse_depth.width; }
  int height() const { return inverse_depth.height; }
  bool valid_at(int x, int y) const {
    const double v = inverse_depth.at(x, y);
    return std::isfinite(v) && v > 0.0;
  }
};

// Inverse depth at a (possibly fractional) pixel: bilinear over the four
// surrounding valid entries, exact at integer pixels. Inverse z-depth is
// affine in pixel coordinates for planar patches, so the interpolation is
// exact on planes. Empty when out of bounds or any contributing entry is
// invalid.
std::optional<double> sample_inverse_depth(const DepthMap& depth, const Eigen::Vector2d& p);

// Unit-norm viewing ray of a (possibly fractional) pixel. Throws on pixels
// outside the image domain.
Eigen::Vector3d pixel_to_ray(const CameraModel& camera, const Eigen::Vector2d& p);

// Perspective projection of a camera-frame direction onto the pixel plane.
// The result may lie outside the image bounds; callers check. Throws when the
// direction points to or behind the camera plane (z <= 0).
Eigen::Vector2d ray_to_pixel(const CameraModel& camera, const Eigen::Vector3d& v);

// Rigid transform taking camera-frame points at time k-1 into the camera
// frame at time k.
Eigen::Isometry3d relative_transform(const Pose& x_k, const Pose& x_km1);

// Projection of pixel p (frame k-1, with known inverse depth) into frame k.
// Empty when the pixel's depth is invalid or the point lands behind the
// camera. The inverse depth is read at the nearest integer pixel.
std::optional<Eigen::Vector2d> predict_pixel(const Pose& x_k, const Pose& x_km1,
                                             const Eigen::Vector2d& p, const DepthMap& depth,
                                             const CameraModel& camera);

// Flow implied by a known relative motion and depth: prediction minus pixel,
// evaluated at each requested pixel. Samples with invalid projections carry
// valid = 0.
FlowField ground_truth_flow(const Pose& x_k, const Pose& x_km1,
                            const std::vector<Eigen::Vector2d>& pixels, const DepthMap& depth,
                            const CameraModel& camera);

}  // namespace lcmflow
