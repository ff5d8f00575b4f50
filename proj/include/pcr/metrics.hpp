#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "pcr/errors.hpp"
#include "pcr/kdtree.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/rigid_transform.hpp"

namespace pcr {

struct MetricsConfig {
  double tau = 0.05; // inlier threshold, normalized units

  /// When set, the inlier error follows the unsquared-norm variant
  /// sqrt(mean of distances) instead of the standard RMSE.
  bool rmse_unsquared = false;
};

struct MetricsReport {
  std::optional<double> rre_deg; // requires ground truth
  std::optional<double> rte;     // requires ground truth
  double chamfer = 0.0;
  double fitness = 0.0;
  double inlier_rmse = 0.0;
  std::size_t inlier_count = 0;
  bool rmse_vacuous = false; // true when there were no inliers at all
  double elapsed_s = 0.0;
};

/// Geodesic angle of R_gt * R_est^T in degrees. The trace is clamped so
/// numerical drift cannot produce NaN.
inline double rre(const RigidTransform& gt, const RigidTransform& est) {
  const Eigen::Matrix3d rel = gt.rotation * est.rotation.transpose();
  return rad_to_deg(std::acos(std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0)));
}

/// Euclidean distance between the translation vectors.
inline double rte(const Eigen::Vector3d& gt, const Eigen::Vector3d& est) {
  return (gt - est).norm();
}

/// Mean nearest-neighbor distance from a to b plus mean from b to a
/// (plain L2 norms, not squared).
inline double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw ArgumentError("chamfer: empty cloud");
  const KNeighborIndex ia(a), ib(b);
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a.points) ab += ib.knn(p, 1)[0].distance;
  for (const auto& p : b.points) ba += ia.knn(p, 1)[0].distance;
  return ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size());
}

struct FitnessResult {
  double fitness = 0.0;
  double inlier_rmse = 0.0;
  std::size_t inlier_count = 0;
  bool vacuous = false;
};

/// Inliers are target points whose nearest neighbor in the result cloud
/// lies strictly within tau; fitness divides by the target size. With no
/// inliers the error is reported as 0 and flagged vacuous, since a zero
/// would otherwise suggest a perfect alignment.
inline FitnessResult fitness_and_rmse(const PointCloud& result, const PointCloud& target,
                                      const MetricsConfig& cfg) {
  if (result.empty() || target.empty()) throw ArgumentError("fitness_and_rmse: empty cloud");
  if (!(cfg.tau > 0.0)) throw ArgumentError("fitness_and_rmse: tau must be > 0");
  const KNeighborIndex index(result);
  double accum = 0.0;
  std::size_t inliers = 0;
  for (const auto& p : target.points) {
    const double d = index.knn(p, 1)[0].distance;
    if (d < cfg.tau) {
      ++inliers;
      accum += cfg.rmse_unsquared ? d : d * d;
    }
  }
  FitnessResult out;
  out.inlier_count = inliers;
  out.fitness = static_cast<double>(inliers) / static_cast<double>(target.size());
  if (inliers == 0) {
    out.vacuous = true;
    return out;
  }
  out.inlier_rmse = std::sqrt(accum / static_cast<double>(inliers));
  return out;
}

/// Bundles every applicable metric for an estimated transform. RRE/RTE are
/// omitted when no ground truth is supplied.
inline MetricsReport evaluate(const std::optional<RigidTransform>& gt,
                              const RigidTransform& est, const PointCloud& source,
                              const PointCloud& target, const MetricsConfig& cfg,
                              double elapsed_s = 0.0) {
  const PointCloud result = apply_transform(source, est);
  MetricsReport report;
  if (gt) {
    report.rre_deg = rre(*gt, est);
    report.rte = rte(gt->translation, est.translation);
  }
  report.chamfer = chamfer(result, target);
  const FitnessResult f = fitness_and_rmse(result, target, cfg);
  report.fitness = f.fitness;
  report.inlier_rmse = f.inlier_rmse;
  report.inlier_count = f.inlier_count;
  report.rmse_vacuous = f.vacuous;
  report.elapsed_s = elapsed_s;
  return report;
}

} // namespace pcr
