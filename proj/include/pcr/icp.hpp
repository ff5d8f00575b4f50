#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <chrono>
#include <string>
#include <vector>

#include "pcr/errors.hpp"
#include "pcr/kdtree.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/rigid_transform.hpp"
#include "pcr/sampling.hpp"
#include "pcr/solver.hpp"

namespace pcr {

struct IcpConfig {
  enum class Variant { point_to_point, generalized };

  int max_iterations = 50;
  double max_correspondence_distance = 0.1; // normalized units
  double convergence_eps = 1e-8;            // relative residual change
  Variant variant = Variant::generalized;
  int gicp_k = 20;
  double gicp_epsilon = 1e-3;
};

/// Per-point plane-regularized covariances: eigenvalues of the local
/// covariance are replaced by (epsilon, 1, 1), keeping the eigenbasis.
struct CovarianceCloud {
  std::vector<Eigen::Matrix3d> covariances;
};

inline CovarianceCloud compute_covariances(const PointCloud& cloud, const KNeighborIndex& index,
                                           int k, double epsilon) {
  if (k < 3) throw ArgumentError("compute_covariances: k must be >= 3");
  CovarianceCloud out;
  out.covariances.resize(cloud.size());
  const int kk = std::min<int>(k, static_cast<int>(cloud.size()));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto neighbors = index.knn(cloud.points[i], kk);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& nb : neighbors) mean += index.point(nb.id);
    mean /= static_cast<double>(neighbors.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& nb : neighbors) {
      const Eigen::Vector3d d = index.point(nb.id) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    Eigen::Vector3d lambda(epsilon, 1.0, 1.0); // ascending order: normal direction first
    out.covariances[i] =
        es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  }
  return out;
}

namespace detail {

struct Correspondences {
  std::vector<int> source_ids;
  std::vector<int> target_ids;
  double mean_distance = 0.0;
};

inline Correspondences associate(const std::vector<Eigen::Vector3d>& moved,
                                 const KNeighborIndex& target_index, double gate) {
  Correspondences out;
  double sum = 0.0;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const auto nn = target_index.knn(moved[i], 1);
    if (nn[0].distance <= gate) {
      out.source_ids.push_back(static_cast<int>(i));
      out.target_ids.push_back(nn[0].id);
      sum += nn[0].distance;
    }
  }
  if (!out.source_ids.empty()) out.mean_distance = sum / static_cast<double>(out.source_ids.size());
  return out;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

} // namespace detail

/// Local refinement from an initial transform.
///
/// point_to_point alternates gated nearest-neighbor association with an
/// unweighted Procrustes update. generalized builds plane-regularized
/// covariances and takes Gauss-Newton steps on the Mahalanobis objective
/// with a 6-parameter twist, halving the step (at most 8 times) whenever
/// the objective would increase. The returned transform includes the
/// initial one.
inline RegistrationResult icp_refine(const PointCloud& source, const PointCloud& target,
                                     const RigidTransform& initial, const IcpConfig& cfg) {
  if (source.size() < 3 || target.size() < 3)
    throw ArgumentError("icp_refine: clouds must have at least 3 points");
  const auto start = std::chrono::steady_clock::now();

  const KNeighborIndex target_index(target);
  const bool gicp = cfg.variant == IcpConfig::Variant::generalized;

  CovarianceCloud source_cov, target_cov;
  if (gicp) {
    const KNeighborIndex source_index(source);
    source_cov = compute_covariances(source, source_index, cfg.gicp_k, cfg.gicp_epsilon);
    target_cov = compute_covariances(target, target_index, cfg.gicp_k, cfg.gicp_epsilon);
  }

  RigidTransform total = initial;
  std::vector<Eigen::Vector3d> moved(source.size());
  RegistrationResult result;
  double prev_residual = -1.0;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < source.size(); ++i) moved[i] = total(source.points[i]);
    const auto corr = detail::associate(moved, target_index, cfg.max_correspondence_distance);
    if (corr.source_ids.empty())
      throw DegeneracyError("icp_refine: no gated correspondences at iteration " +
                            std::to_string(it));

    RigidTransform delta;
    if (!gicp) {
      PointCloud xs, ys;
      xs.points.reserve(corr.source_ids.size());
      ys.points.reserve(corr.source_ids.size());
      for (std::size_t c = 0; c < corr.source_ids.size(); ++c) {
        xs.points.push_back(moved[corr.source_ids[c]]);
        ys.points.push_back(target.points[corr.target_ids[c]]);
      }
      const std::vector<double> ones(xs.size(), 1.0);
      delta = weighted_svd(xs, ys, ones);
    } else {
      // Mahalanobis weights with the source covariance rotated by the
      // current estimate; frozen during the step-halving line search.
      std::vector<Eigen::Matrix3d> w(corr.source_ids.size());
      std::vector<Eigen::Vector3d> p(corr.source_ids.size()), q(corr.source_ids.size());
      for (std::size_t c = 0; c < corr.source_ids.size(); ++c) {
        const int si = corr.source_ids[c];
        const int ti = corr.target_ids[c];
        p[c] = moved[si];
        q[c] = target.points[ti];
        const Eigen::Matrix3d cov = target_cov.covariances[ti] +
                                    total.rotation * source_cov.covariances[si] *
                                        total.rotation.transpose();
        w[c] = cov.inverse();
      }
      const auto objective = [&](const RigidTransform& d) {
        double f = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) {
          const Eigen::Vector3d r = q[c] - d(p[c]);
          f += r.dot(w[c] * r);
        }
        return f;
      };

      Eigen::Matrix<double, 6, 6> hess = Eigen::Matrix<double, 6, 6>::Zero();
      Eigen::Matrix<double, 6, 1> grad = Eigen::Matrix<double, 6, 1>::Zero();
      for (std::size_t c = 0; c < p.size(); ++c) {
        Eigen::Matrix<double, 3, 6> jac;
        jac.leftCols<3>() = detail::skew(p[c]);
        jac.rightCols<3>() = -Eigen::Matrix3d::Identity();
        const Eigen::Vector3d r = q[c] - p[c];
        hess += jac.transpose() * w[c] * jac;
        grad += jac.transpose() * w[c] * r;
      }
      Eigen::Matrix<double, 6, 1> xi = hess.ldlt().solve(-grad);
      if (!xi.allFinite())
        throw DegeneracyError("icp_refine: singular normal equations at iteration " +
                              std::to_string(it));

      const double f0 = objective(RigidTransform::identity());
      for (int halving = 0;; ++halving) {
        RigidTransform cand;
        const Eigen::Vector3d omega = xi.head<3>();
        const double angle = omega.norm();
        cand.rotation = angle > 0.0 ? axis_angle_rotation(omega / angle, angle)
                                    : Eigen::Matrix3d::Identity();
        cand.translation = xi.tail<3>();
        if (objective(cand) <= f0 || halving >= 8) {
          delta = halving >= 8 && objective(cand) > f0 ? RigidTransform::identity() : cand;
          break;
        }
        xi *= 0.5;
      }
    }

    total = compose(delta, total);

    IterationStat stat;
    stat.mean_residual = corr.mean_distance;
    stat.delta_magnitude = rotation_angle(delta.rotation) + delta.translation.norm();
    result.per_iteration.push_back(stat);

    const double residual = corr.mean_distance;
    if (residual == 0.0) break;
    if (prev_residual >= 0.0 &&
        std::abs(prev_residual - residual) <= cfg.convergence_eps * std::max(prev_residual, 1e-300))
      break;
    prev_residual = residual;
  }

  result.transform = total;
  result.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Full pipeline: uniform downsample, centroid alignment, joint scaling by
/// the target's unit-sphere scale, coarse registration, local refinement,
/// and re-expression of the result in the raw input frame.
inline RegistrationResult coarse_to_fine(const PointCloud& source_raw,
                                         const PointCloud& target_raw,
                                         const EncoderWeights& weights,
                                         const RegistrationConfig& reg_cfg,
                                         const IcpConfig& icp_cfg) {
  if (source_raw.empty() || target_raw.empty())
    throw ArgumentError("coarse_to_fine: empty input cloud");
  const auto start = std::chrono::steady_clock::now();

  const auto n = static_cast<std::size_t>(reg_cfg.downsample_points);
  Rng source_rng(reg_cfg.seed);
  Rng target_rng(reg_cfg.seed);
  const PointCloud source_ds = subsample_uniform(source_raw, n, source_rng);
  const PointCloud target_ds = subsample_uniform(target_raw, n, target_rng);

  auto [source_centered, source_offset] = center(source_ds);
  auto [target_centered, target_offset] = center(target_ds);
  auto [target_norm, scale] = normalize_unit_sphere(target_centered);
  PointCloud source_norm = source_centered;
  for (auto& p : source_norm.points) p /= scale;

  RegistrationConfig cfg = reg_cfg;
  if (cfg.oracle_features && cfg.oracle_gt) {
    // Map the raw-frame ground truth into the normalized frame.
    RigidTransform gt_norm;
    gt_norm.rotation = cfg.oracle_gt->rotation;
    gt_norm.translation = (cfg.oracle_gt->rotation * source_offset +
                           cfg.oracle_gt->translation - target_offset) /
                          scale;
    cfg.oracle_gt = gt_norm;
  }

  RegistrationResult coarse;
  try {
    coarse = register_clouds(source_norm, target_norm, weights, cfg);
  } catch (const Error& e) {
    throw DegeneracyError(std::string("coarse_to_fine: coarse stage: ") + e.what());
  }

  RegistrationResult refined;
  try {
    refined = icp_refine(source_norm, target_norm, coarse.transform, icp_cfg);
  } catch (const Error& e) {
    throw DegeneracyError(std::string("coarse_to_fine: refinement stage: ") + e.what());
  }

  RegistrationResult result;
  result.transform.rotation = refined.transform.rotation;
  result.transform.translation = scale * refined.transform.translation + target_offset -
                                 refined.transform.rotation * source_offset;
  result.per_iteration = coarse.per_iteration;
  result.per_iteration.insert(result.per_iteration.end(), refined.per_iteration.begin(),
                              refined.per_iteration.end());
  result.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

} // namespace pcr
