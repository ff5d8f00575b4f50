#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <utility>
#include <vector>

#include "pcr/errors.hpp"
#include "pcr/rigid_transform.hpp"

namespace pcr {

/// Ordered set of 3D points with optional per-point unit normals.
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> normals; // empty, or one unit vector per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
};

/// Checks finiteness, normal count and unit length. Throws ArgumentError.
inline void validate(const PointCloud& cloud) {
  if (cloud.empty()) throw ArgumentError("point cloud is empty");
  for (const auto& p : cloud.points)
    if (!p.allFinite()) throw ArgumentError("point cloud contains non-finite coordinates");
  if (cloud.has_normals()) {
    if (cloud.normals.size() != cloud.points.size())
      throw ArgumentError("normal count does not match point count");
    for (const auto& n : cloud.normals)
      if (std::abs(n.norm() - 1.0) > 1e-6)
        throw ArgumentError("normals must have unit length");
  }
}

/// Rotates and translates points; normals are rotated only.
inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(t.rotation * p + t.translation);
  out.normals.reserve(cloud.normals.size());
  for (const auto& n : cloud.normals) out.normals.push_back(t.rotation * n);
  return out;
}

inline Eigen::Vector3d centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw ArgumentError("centroid: empty cloud");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.size());
}

/// Translates the cloud so its centroid is at the origin.
/// Returns the centered cloud and the removed centroid.
inline std::pair<PointCloud, Eigen::Vector3d> center(const PointCloud& cloud) {
  const Eigen::Vector3d c = centroid(cloud);
  PointCloud out = cloud;
  for (auto& p : out.points) p -= c;
  return {std::move(out), c};
}

/// Scales the cloud so the farthest point from the origin has norm 1.
/// Intended to be applied after center(). Returns the scaled cloud and the
/// scale that undoes it. Throws DegeneracyError when all points coincide
/// with the origin.
inline std::pair<PointCloud, double> normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.empty()) throw ArgumentError("normalize_unit_sphere: empty cloud");
  double max_norm = 0.0;
  for (const auto& p : cloud.points) max_norm = std::max(max_norm, p.norm());
  if (max_norm <= 0.0)
    throw DegeneracyError("normalize_unit_sphere: scale undefined, all points identical");
  PointCloud out = cloud;
  for (auto& p : out.points) p /= max_norm;
  return {std::move(out), max_norm};
}

/// Inverse of center + normalize_unit_sphere.
inline PointCloud denormalize(const PointCloud& cloud, const Eigen::Vector3d& offset,
                              double scale) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = p * scale + offset;
  return out;
}

} // namespace pcr
