#include "lcmflow/geometry.hpp"

#include <cmath>

namespace lcmflow {

void CameraModel::validate() const {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("CameraModel: image dimensions must be positive");
  if (!(horizontal_fov > 0.0 && horizontal_fov < M_PI))
    throw std::invalid_argument("CameraModel: horizontal_fov must lie in (0, pi)");
}

Eigen::Matrix3d Pose::rotation() const {
  const double cy = std::cos(orientation.x()), sy = std::sin(orientation.x());
  const double cp = std::cos(orientation.y()), sp = std::sin(orientation.y());
  const double cr = std::cos(orientation.z()), sr = std::sin(orientation.z());
  Eigen::Matrix3d R;
  // Rz(yaw) * Ry(pitch) * Rx(roll)
  R << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp,     cp * sr,                cp * cr;
  return R;
}

Eigen::Isometry3d Pose::transform() const {
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.linear() = rotation();
  T.translation() = position;
  return T;
}

Eigen::Vector3d Pose::euler_from_rotation(const Eigen::Matrix3d& R) {
  const double sp = std::clamp(-R(2, 0), -1.0, 1.0);
  const double pitch = std::asin(sp);
  double yaw, roll;
  if (std::abs(sp) < 1.0 - 1e-12) {
    yaw = std::atan2(R(1, 0), R(0, 0));
    roll = std::atan2(R(2, 1), R(2, 2));
  } else {
    // gimbal lock: roll is unobservable, fold it into yaw
    yaw = std::atan2(-R(0, 1), R(1, 1));
    roll = 0.0;
  }
  return {yaw, pitch, roll};
}

std::optional<double> sample_inverse_depth(const DepthMap& depth, const Eigen::Vector2d& p) {
  const int w = depth.width(), h = depth.height();
  if (!(p.x() >= 0.0 && p.x() <= w - 1.0 && p.y() >= 0.0 && p.y() <= h - 1.0))
    return std::nullopt;
  const int x0 = static_cast<int>(std::floor(p.x()));
  const int y0 = static_cast<int>(std::floor(p.y()));
  const double fx = p.x() - x0;
  const double fy = p.y() - y0;
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w10 = fx * (1.0 - fy);
  const double w01 = (1.0 - fx) * fy;
  const double w11 = fx * fy;
  if (w00 > 0.0 && !depth.valid_at(x0, y0)) return std::nullopt;
  if (w10 > 0.0 && !depth.valid_at(x1, y0)) return std::nullopt;
  if (w01 > 0.0 && !depth.valid_at(x0, y1)) return std::nullopt;
  if (w11 > 0.0 && !depth.valid_at(x1, y1)) return std::nullopt;
  double v = 0.0;
  if (w00 > 0.0) v += w00 * depth.inverse_depth.at(x0, y0);
  if (w10 > 0.0) v += w10 * depth.inverse_depth.at(x1, y0);
  if (w01 > 0.0) v += w01 * depth.inverse_depth.at(x0, y1);
  if (w11 > 0.0) v += w11 * depth.inverse_depth.at(x1, y1);
  return v;
}

Eigen::Vector3d pixel_to_ray(const CameraModel& camera, const Eigen::Vector2d& p) {
  if (!camera.contains(p))
    throw std::invalid_argument("pixel_to_ray: pixel outside image bounds");
  const Eigen::Vector2d c = camera.principal_point();
  const double f = camera.focal();
  const Eigen::Vector3d v((p.x() - c.x()) / f, (p.y() - c.y()) / f, 1.0);
  return v.normalized();
}

Eigen::Vector2d ray_to_pixel(const CameraModel& camera, const Eigen::Vector3d& v) {
  if (!(v.z() > 0.0))
    throw std::invalid_argument("ray_to_pixel: direction does not point in front of the camera");
  const Eigen::Vector2d c = camera.principal_point();
  const double f = camera.focal();
  return {c.x() + f * v.x() / v.z(), c.y() + f * v.y() / v.z()};
}

Eigen::Isometry3d relative_transform(const Pose& x_k, const Pose& x_km1) {
  return x_k.transform().inverse() * x_km1.transform();
}

std::optional<Eigen::Vector2d> predict_pixel(const Pose& x_k, const Pose& x_km1,
                                             const Eigen::Vector2d& p, const DepthMap& depth,
                                             const CameraModel& camera) {
  const std::optional<double> rho = sample_inverse_depth(depth, p);
  if (!rho) return std::nullopt;

  const Eigen::Vector3d ray = pixel_to_ray(camera, p);
  // The map stores inverse z-depth; the homogeneous lift of the unit ray
  // needs inverse range, which differs by the ray's z component.
  const double inv_range = *rho * ray.z();
  const Eigen::Isometry3d T = relative_transform(x_k, x_km1);
  const Eigen::Vector3d q = T.linear() * ray + T.translation() * inv_range;
  if (!(q.z() > 0.0)) return std::nullopt;
  return ray_to_pixel(camera, q);
}

FlowField ground_truth_flow(const Pose& x_k, const Pose& x_km1,
                            const std::vector<Eigen::Vector2d>& pixels, const DepthMap& depth,
                            const CameraModel& camera) {
  const Eigen::Isometry3d T = relative_transform(x_k, x_km1);
  FlowField field;
  field.reserve(pixels.size());
  for (const Eigen::Vector2d& p : pixels) {
    const std::optional<double> rho = sample_inverse_depth(depth, p);
    if (!rho) {
      field.push(p.x(), p.y(), 0.0, 0.0, false);
      continue;
    }
    const Eigen::Vector3d ray = pixel_to_ray(camera, p);
    const double inv_range = *rho * ray.z();
    const Eigen::Vector3d q = T.linear() * ray + T.translation() * inv_range;
    if (!(q.z() > 0.0)) {
      field.push(p.x(), p.y(), 0.0, 0.0, false);
      continue;
    }
    const Eigen::Vector2d g = ray_to_pixel(camera, q);
    field.push(p.x(), p.y(), g.x() - p.x(), g.y() - p.y(), true);
  }
  return field;
}

}  // namespace lcmflow
