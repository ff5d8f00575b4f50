#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "pcr/encoder.hpp"
#include "pcr/errors.hpp"
#include "pcr/matching.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/rigid_transform.hpp"

namespace pcr {

/// Closed-form weighted Procrustes: argmin over rigid transforms of
/// sum_j w_j ||R x_j + t - yhat_j||^2.
///
/// Weighted centroids are removed, the cross-covariance is decomposed by
/// SVD and the reflection corrected, so det(R) = +1 always.
inline RigidTransform weighted_svd(const PointCloud& x, const PointCloud& yhat,
                                   const std::vector<double>& weights) {
  const std::size_t n = x.size();
  if (n < 3) throw ArgumentError("weighted_svd: need at least 3 correspondences");
  if (yhat.size() != n || weights.size() != n)
    throw ArgumentError("weighted_svd: size mismatch");

  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ArgumentError("weighted_svd: weights must be non-negative");
    total += w;
  }
  if (total < 1e-12) throw DegeneracyError("weighted_svd: total weight is vanishing");

  Eigen::Vector3d x_bar = Eigen::Vector3d::Zero(), y_bar = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    x_bar += weights[i] * x.points[i];
    y_bar += weights[i] * yhat.points[i];
  }
  x_bar /= total;
  y_bar /= total;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i)
    h += weights[i] * (x.points[i] - x_bar) * (yhat.points[i] - y_bar).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0))
    throw DegeneracyError(
        "weighted_svd: cross-covariance rank < 2, rotation is not uniquely determined");

  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  RigidTransform out;
  out.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  out.translation = y_bar - out.rotation * x_bar;
  return out;
}

/// Mean L1 distance between the source transformed by the ground truth and
/// by the prediction.
inline double registration_loss(const PointCloud& source, const RigidTransform& gt,
                                const RigidTransform& pred) {
  if (source.empty()) throw ArgumentError("registration_loss: empty source");
  double sum = 0.0;
  for (const auto& p : source.points)
    sum += ((gt.rotation * p + gt.translation) - (pred.rotation * p + pred.translation))
               .lpNorm<1>();
  return sum / static_cast<double>(source.size());
}

/// Mean squared L2 distance between each source descriptor and its soft
/// counterpart (match-weighted sum of target descriptors, non-slack only).
inline double geo_align_loss(const FeatureMatrix& fx, const FeatureMatrix& fy,
                             const MatchMatrix& m) {
  const Eigen::Index j = m.source_size(), k = m.target_size();
  if (fx.rows() != j || fy.rows() != k || fx.cols() != fy.cols())
    throw ArgumentError("geo_align_loss: dimension mismatch");
  const Eigen::MatrixXd weights =
      m.log_values.topLeftCorner(j, k).array().exp().matrix();
  return (fx.values - weights * fy.values).rowwise().squaredNorm().mean();
}

struct LossReport {
  double l_reg = 0.0;
  double l_geo_align = 0.0;
  double l_total = 0.0;
};

inline LossReport make_loss_report(double l_reg, double l_geo_align) {
  return {l_reg, l_geo_align, l_reg + l_geo_align};
}

struct RegistrationConfig {
  int num_iterations = 5;
  AnnealingSchedule schedule;
  int sinkhorn_iterations = 5;
  InputFeatureMode mode = InputFeatureMode::direct();

  /// Test harness: descriptors become the raw coordinates of the
  /// ground-truth-transformed source and of the target, so feature
  /// distance equals geometric correspondence distance.
  bool oracle_features = false;
  /// Ground truth used by oracle_features, expressed in the frame of the
  /// clouds handed to register_clouds. Identity when absent.
  std::optional<RigidTransform> oracle_gt;

  // coarse_to_fine preprocessing knobs
  int downsample_points = 1024;
  std::uint64_t seed = 0;
};

struct IterationStat {
  double alpha = 0.0;
  double beta = 0.0;
  double mean_residual = 0.0;   // weighted mean distance to the soft targets
  double delta_magnitude = 0.0; // rotation angle (rad) + translation norm of the update
};

struct RegistrationResult {
  RigidTransform transform;
  std::vector<IterationStat> per_iteration;
  double elapsed_s = 0.0;
};

namespace detail {

inline FeatureMatrix coordinates_as_features(const PointCloud& cloud) {
  FeatureMatrix f;
  f.values.resize(static_cast<Eigen::Index>(cloud.size()), 3);
  for (Eigen::Index i = 0; i < f.values.rows(); ++i)
    f.values.row(i) = cloud.points[static_cast<std::size_t>(i)].transpose();
  return f;
}

} // namespace detail

/// Coarse registration: per iteration, encode the current source and the
/// target with shared weights, build the annealed match matrix, normalize,
/// synthesize soft targets and solve the weighted Procrustes update.
///
/// Inputs are expected to be centered/normalized. Deterministic.
inline RegistrationResult register_clouds(const PointCloud& source, const PointCloud& target,
                                          const EncoderWeights& weights,
                                          const RegistrationConfig& cfg) {
  if (source.size() < 3 || target.size() < 3)
    throw ArgumentError("register_clouds: clouds must have at least 3 points");
  if (cfg.num_iterations < 1)
    throw ArgumentError("register_clouds: num_iterations must be >= 1");
  if (cfg.schedule.iterations < cfg.num_iterations)
    throw ArgumentError("register_clouds: annealing schedule shorter than iteration count");

  const auto start = std::chrono::steady_clock::now();

  // Oracle descriptors never change across iterations, so their distance
  // matrix is computed once.
  FeatureMatrix target_features;
  Eigen::MatrixXd oracle_dist_sq;
  if (cfg.oracle_features) {
    const RigidTransform gt = cfg.oracle_gt.value_or(RigidTransform::identity());
    const FeatureMatrix fx = detail::coordinates_as_features(apply_transform(source, gt));
    target_features = detail::coordinates_as_features(target);
    oracle_dist_sq = feature_distance_sq(fx, target_features);
  } else {
    target_features = encode(target, weights, cfg.mode);
  }

  PointCloud current = source;
  RigidTransform total;
  RegistrationResult result;
  result.per_iteration.reserve(cfg.num_iterations);

  for (int it = 0; it < cfg.num_iterations; ++it) {
    const AnnealingParams params = annealing_params_at(cfg.schedule, it);
    Eigen::MatrixXd dist_sq;
    if (cfg.oracle_features) {
      dist_sq = oracle_dist_sq;
    } else {
      const FeatureMatrix fx = encode(current, weights, cfg.mode);
      dist_sq = feature_distance_sq(fx, target_features);
    }

    try {
      const MatchMatrix m =
          sinkhorn_normalize(init_match_matrix(dist_sq, params), cfg.sinkhorn_iterations);
      const SoftCorrespondences soft = soft_correspondences(m, target);
      const RigidTransform delta = weighted_svd(current, soft.targets, soft.weights);
      current = apply_transform(current, delta);
      total = compose(delta, total);

      double residual = 0.0, mass = 0.0;
      for (std::size_t i = 0; i < current.size(); ++i) {
        residual += soft.weights[i] * (current.points[i] - soft.targets.points[i]).norm();
        mass += soft.weights[i];
      }
      IterationStat stat;
      stat.alpha = params.alpha;
      stat.beta = params.beta;
      stat.mean_residual = mass > 0.0 ? residual / mass : 0.0;
      stat.delta_magnitude = rotation_angle(delta.rotation) + delta.translation.norm();
      result.per_iteration.push_back(stat);
    } catch (const DegeneracyError& e) {
      throw DegeneracyError("register_clouds: iteration " + std::to_string(it) + ": " +
                            e.what());
    }
  }

  result.transform = total;
  result.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

} // namespace pcr
