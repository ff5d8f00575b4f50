#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "pcr/errors.hpp"
#include "pcr/random.hpp"

namespace pcr {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

/// Rotation + translation. Rotation is orthonormal with det +1.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Eigen::Vector3d operator()(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
};

/// Max elementwise deviation of R^T R from the identity.
inline double orthogonality_drift(const Eigen::Matrix3d& r) {
  return ((r.transpose() * r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

/// Nearest rotation in Frobenius norm (polar factor, reflection repaired).
inline Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

/// apply(compose(a, b), p) == apply(a, apply(b, p)).
/// Re-orthonormalizes when accumulated drift exceeds 1e-9, so long
/// compose chains stay valid.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  if (orthogonality_drift(out.rotation) > 1e-9) {
    out.rotation = project_to_rotation(out.rotation);
  }
  return out;
}

inline RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

/// Rodrigues rotation about a unit axis.
inline Eigen::Matrix3d axis_angle_rotation(const Eigen::Vector3d& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

/// Geodesic rotation angle in radians, in [0, pi].
inline double rotation_angle(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

/// Random transform: axis uniform on the sphere, angle uniform in
/// [0, max_angle_deg], translation components uniform in +-trans_range.
inline RigidTransform random_rigid_transform(Rng& rng, double max_angle_deg,
                                             double trans_range) {
  if (!(max_angle_deg >= 0.0 && max_angle_deg <= 180.0))
    throw ArgumentError("random_rigid_transform: max_angle_deg must be in [0, 180]");
  if (!(trans_range >= 0.0))
    throw ArgumentError("random_rigid_transform: trans_range must be >= 0");

  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Eigen::Vector3d axis(s * std::cos(phi), s * std::sin(phi), z);
  const double angle = deg_to_rad(rng.uniform(0.0, max_angle_deg));

  RigidTransform t;
  t.rotation = angle > 0.0 ? axis_angle_rotation(axis, angle) : Eigen::Matrix3d::Identity();
  t.translation = Eigen::Vector3d(rng.uniform(-trans_range, trans_range),
                                  rng.uniform(-trans_range, trans_range),
                                  rng.uniform(-trans_range, trans_range));
  return t;
}

} // namespace pcr
