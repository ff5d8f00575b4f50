#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <vector>

#include "pcr/errors.hpp"
#include "pcr/kdtree.hpp"
#include "pcr/point_cloud.hpp"

namespace pcr {

namespace detail {

/// Least-eigenvalue eigenvector of the covariance of a neighborhood.
inline Eigen::Vector3d covariance_normal(const std::vector<Eigen::Vector3d>& neighborhood) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : neighborhood) mean += p;
  mean /= static_cast<double>(neighborhood.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : neighborhood) {
    const Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  return es.eigenvectors().col(0).normalized();
}

/// Sign rule: non-negative dot with the centroid-to-point direction;
/// exact ties resolve lexicographically toward +z, then +y, then +x.
inline Eigen::Vector3d orient_normal(Eigen::Vector3d n, const Eigen::Vector3d& point,
                                     const Eigen::Vector3d& cloud_centroid) {
  const double d = n.dot(point - cloud_centroid);
  if (d < 0.0) return -n;
  if (d > 0.0) return n;
  if (n.z() != 0.0) return n.z() > 0.0 ? n : -n;
  if (n.y() != 0.0) return n.y() > 0.0 ? n : -n;
  return n.x() >= 0.0 ? n : -n;
}

} // namespace detail

/// Per-point normals from the k nearest neighbors (the point included).
inline PointCloud estimate_normals(const PointCloud& cloud, int k) {
  if (k < 3) throw ArgumentError("estimate_normals: k must be >= 3");
  if (cloud.size() <= static_cast<std::size_t>(k))
    throw ArgumentError("estimate_normals: cloud must have more than k points");

  const KNeighborIndex index(cloud);
  const Eigen::Vector3d c = centroid(cloud);
  PointCloud out = cloud;
  out.normals.resize(cloud.size());
  std::vector<Eigen::Vector3d> neighborhood;
  neighborhood.reserve(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    neighborhood.clear();
    for (const auto& nb : index.knn(cloud.points[i], k))
      neighborhood.push_back(cloud.points[static_cast<std::size_t>(nb.id)]);
    const Eigen::Vector3d n = detail::covariance_normal(neighborhood);
    out.normals[i] = detail::orient_normal(n, cloud.points[i], c);
  }
  return out;
}

} // namespace pcr
