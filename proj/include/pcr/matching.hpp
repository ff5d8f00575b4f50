#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pcr/encoder.hpp"
#include "pcr/errors.hpp"
#include "pcr/parallel.hpp"
#include "pcr/point_cloud.hpp"

namespace pcr {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Outlier threshold on squared feature distance plus inverse temperature.
struct AnnealingParams {
  double alpha = 0.5;
  double beta = 1.0;
};

/// beta grows geometrically per iteration; alpha stays constant.
struct AnnealingSchedule {
  double alpha0 = 0.5;
  double beta0 = 1.0;
  double beta_growth = 1.5; // > 1
  int iterations = 5;
};

inline AnnealingParams annealing_params_at(const AnnealingSchedule& schedule, int iteration) {
  if (iteration < 0 || iteration >= schedule.iterations)
    throw ArgumentError("annealing_params_at: iteration out of range");
  return {schedule.alpha0, schedule.beta0 * std::pow(schedule.beta_growth, iteration)};
}

/// (J+1) x (K+1) soft assignment with a slack row and column absorbing
/// unmatched mass. Entries are kept in the log domain; the slack-slack
/// corner is identically zero (log -inf).
struct MatchMatrix {
  RowMatrixXd log_values; // (J+1) x (K+1)

  Eigen::Index source_size() const { return log_values.rows() - 1; }
  Eigen::Index target_size() const { return log_values.cols() - 1; }

  double value(Eigen::Index j, Eigen::Index k) const { return std::exp(log_values(j, k)); }

  Eigen::MatrixXd values() const {
    return log_values.array().exp().matrix();
  }

  static MatchMatrix from_values(const Eigen::MatrixXd& values) {
    if (values.rows() < 2 || values.cols() < 2)
      throw ArgumentError("MatchMatrix: need at least one non-slack row and column");
    if ((values.array() < 0.0).any())
      throw ArgumentError("MatchMatrix: entries must be non-negative");
    MatchMatrix m;
    m.log_values = values.array().log().matrix(); // log(0) == -inf
    m.log_values(values.rows() - 1, values.cols() - 1) =
        -std::numeric_limits<double>::infinity();
    return m;
  }
};

/// Squared Euclidean distances between descriptor rows.
inline Eigen::MatrixXd feature_distance_sq(const FeatureMatrix& fx, const FeatureMatrix& fy) {
  if (fx.cols() != fy.cols())
    throw ArgumentError("feature_distance_sq: feature dimensions differ");
  const Eigen::VectorXd x2 = fx.values.rowwise().squaredNorm();
  const Eigen::VectorXd y2 = fy.values.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * (fx.values * fy.values.transpose());
  d.colwise() += x2;
  d.rowwise() += y2.transpose();
  return d.cwiseMax(0.0); // clip tiny negative round-off
}

/// Gibbs kernel of the squared distances: exp(-beta * (d^2 - alpha)) for
/// non-slack entries, exp(0) = 1 for the slack row and column. Built in
/// the log domain; entries may exceed 1 before normalization.
inline MatchMatrix init_match_matrix(const Eigen::MatrixXd& dist_sq,
                                     const AnnealingParams& params) {
  if ((dist_sq.array() < 0.0).any())
    throw ArgumentError("init_match_matrix: squared distances must be non-negative");
  if (!(params.beta > 0.0) || !(params.alpha >= 0.0))
    throw ArgumentError("init_match_matrix: require beta > 0 and alpha >= 0");
  const Eigen::Index j = dist_sq.rows(), k = dist_sq.cols();
  MatchMatrix m;
  m.log_values.resize(j + 1, k + 1);
  m.log_values.topLeftCorner(j, k) = -params.beta * (dist_sq.array() - params.alpha);
  m.log_values.row(j).setZero();
  m.log_values.col(k).setZero();
  m.log_values(j, k) = -std::numeric_limits<double>::infinity();
  return m;
}

namespace detail {

/// logsumexp of (row + shift) over all entries.
///
/// The caller asserts via fast_path that no exponent can overflow; a
/// zero sum (all entries underflowed or -inf) still falls back to the
/// max-subtracted form, so the result is always the true logsumexp.
inline double log_sum_exp_shifted(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                  const Eigen::RowVectorXd& shift, bool fast_path) {
  if (fast_path) {
    const double s = (row.array() + shift.array()).exp().sum();
    if (s > 0.0 && std::isfinite(s)) return std::log(s);
  }
  const double m = (row.array() + shift.array()).maxCoeff();
  if (!std::isfinite(m)) return m; // all entries -inf
  const double s = (row.array() + shift.array() - m).exp().sum();
  return m + std::log(s);
}

} // namespace detail

/// Alternating row/column normalization in the log domain.
///
/// One iteration normalizes every non-slack row over all K+1 entries, then
/// every non-slack column over all J+1 entries. The slack row and column
/// are rescaled only as members of the normalized columns/rows; the corner
/// stays zero. Throws DegeneracyError when a non-slack row or column
/// carries no mass at all.
inline MatchMatrix sinkhorn_normalize(const MatchMatrix& m, int iterations) {
  if (iterations < 1) throw ArgumentError("sinkhorn_normalize: iterations must be >= 1");
  const Eigen::Index j = m.source_size(), k = m.target_size();
  const RowMatrixXd& log_m = m.log_values;
  const RowMatrixXd log_m_t = log_m.transpose();

  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < j; ++r)
    if (!(log_m.row(r).maxCoeff() > -kInf))
      throw DegeneracyError("sinkhorn_normalize: row " + std::to_string(r) +
                            " is identically zero");
  for (Eigen::Index c = 0; c < k; ++c)
    if (!(log_m.col(c).maxCoeff() > -kInf))
      throw DegeneracyError("sinkhorn_normalize: column " + std::to_string(c) +
                            " is identically zero");

  // Potentials: row j and column k are never normalized themselves, so
  // their potentials stay pinned at zero.
  Eigen::RowVectorXd u = Eigen::RowVectorXd::Zero(j + 1);
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(k + 1);

  double finite_max = -kInf;
  for (Eigen::Index r = 0; r < log_m.rows(); ++r)
    for (Eigen::Index c = 0; c < log_m.cols(); ++c) {
      const double x = log_m(r, c);
      if (std::isfinite(x)) finite_max = std::max(finite_max, x);
    }

  // A pass may skip max-subtraction when its largest possible exponent is
  // far from double overflow.
  const auto fast_pass = [&](const Eigen::RowVectorXd& shift) {
    return finite_max + shift.maxCoeff() < 650.0;
  };

  for (int it = 0; it < iterations; ++it) {
    const bool fast_rows = fast_pass(v);
    parallel_for(j, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
      for (std::ptrdiff_t r = begin; r < end; ++r)
        u(r) = -detail::log_sum_exp_shifted(log_m.row(r), v, fast_rows);
    });
    const bool fast_cols = fast_pass(u);
    parallel_for(k, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
      for (std::ptrdiff_t c = begin; c < end; ++c)
        v(c) = -detail::log_sum_exp_shifted(log_m_t.row(c), u, fast_cols);
    });
  }

  MatchMatrix out;
  out.log_values.resize(j + 1, k + 1);
  parallel_for(j + 1, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    for (std::ptrdiff_t r = begin; r < end; ++r)
      out.log_values.row(r) = log_m.row(r) + v + Eigen::RowVectorXd::Constant(k + 1, u(r));
  });
  out.log_values(j, k) = -kInf;
  return out;
}

/// Soft targets and row masses of a normalized match matrix.
///
/// yhat_j is the mass-weighted mean of the non-slack target points of row
/// j; weight_j is the row's non-slack mass. Rows with vanishing non-slack
/// mass get weight 0 and a zero target (excluded downstream).
struct SoftCorrespondences {
  PointCloud targets;          // one soft target per source point
  std::vector<double> weights; // non-slack row masses in [0, 1]
};

inline SoftCorrespondences soft_correspondences(const MatchMatrix& m, const PointCloud& target) {
  const Eigen::Index j = m.source_size(), k = m.target_size();
  if (static_cast<Eigen::Index>(target.size()) != k)
    throw ArgumentError("soft_correspondences: target size does not match match matrix");

  Eigen::MatrixXd target_mat(k, 3);
  for (Eigen::Index i = 0; i < k; ++i) target_mat.row(i) = target.points[i].transpose();

  SoftCorrespondences out;
  out.targets.points.resize(j);
  out.weights.assign(j, 0.0);
  parallel_for(j, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    Eigen::RowVectorXd row(k);
    for (std::ptrdiff_t r = begin; r < end; ++r) {
      row = m.log_values.row(r).head(k).array().exp();
      const double mass = row.sum();
      if (mass < 1e-12) {
        out.targets.points[r].setZero();
        out.weights[r] = 0.0;
        continue;
      }
      out.targets.points[r] = (row * target_mat).transpose() / mass;
      out.weights[r] = mass;
    }
  });
  return out;
}

} // namespace pcr
