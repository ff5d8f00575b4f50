#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pcr/errors.hpp"

namespace pcr {

/// Reverse-mode differentiation record over a scalar loss.
///
/// Nodes hold matrix values with analytic pullbacks per op kind; creation
/// order is topological, so the backward pass walks the node list once in
/// reverse. Non-finite forward values abort immediately, naming the
/// offending node.
class Tape {
public:
  using NodeId = int;

  enum class Op {
    input,
    matmul,
    add_rowvec,
    relu,
    pool_concat,
    row_l2_normalize,
    pairwise_sqdist,
    affine,
    exp,
    augment_slack,
    normalize_rows_nonslack,
    normalize_cols_nonslack,
    slice_topleft,
    sub,
    mean_row_sqnorm,
  };

  NodeId input(Eigen::MatrixXd value) {
    return push(Op::input, -1, -1, std::move(value));
  }

  NodeId matmul(NodeId a, NodeId b) {
    return push(Op::matmul, a, b, val(a) * val(b));
  }

  /// A + ones * b, where b is a 1 x p node.
  NodeId add_rowvec(NodeId a, NodeId b) {
    Eigen::MatrixXd v = val(a);
    v.rowwise() += val(b).row(0);
    return push(Op::add_rowvec, a, b, std::move(v));
  }

  NodeId relu(NodeId a) { return push(Op::relu, a, -1, val(a).cwiseMax(0.0)); }

  /// [A | ones * colmax(A)]: per-point features concatenated with the
  /// pooled context. Ties resolve to the lowest row.
  NodeId pool_concat(NodeId a) {
    const Eigen::MatrixXd& x = val(a);
    Eigen::VectorXi arg(x.cols());
    Eigen::RowVectorXd pooled(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Eigen::Index best = 0;
      for (Eigen::Index r = 1; r < x.rows(); ++r)
        if (x(r, c) > x(best, c)) best = r;
      arg(c) = static_cast<int>(best);
      pooled(c) = x(best, c);
    }
    Eigen::MatrixXd v(x.rows(), 2 * x.cols());
    v << x, pooled.replicate(x.rows(), 1);
    const NodeId id = push(Op::pool_concat, a, -1, std::move(v));
    nodes_[id].arg = std::move(arg);
    return id;
  }

  NodeId row_l2_normalize(NodeId a) {
    const Eigen::MatrixXd& x = val(a);
    Eigen::VectorXd norms = x.rowwise().norm();
    for (Eigen::Index r = 0; r < norms.size(); ++r)
      if (norms(r) < 1e-12)
        throw DegeneracyError("row_l2_normalize: zero row " + std::to_string(r));
    const NodeId id =
        push(Op::row_l2_normalize, a, -1, norms.cwiseInverse().asDiagonal() * x);
    nodes_[id].aux = std::move(norms);
    return id;
  }

  /// d(j, k) = ||x_j - y_k||^2 over rows of two matrices.
  NodeId pairwise_sqdist(NodeId a, NodeId b) {
    const Eigen::MatrixXd& x = val(a);
    const Eigen::MatrixXd& y = val(b);
    Eigen::MatrixXd d = -2.0 * (x * y.transpose());
    d.colwise() += x.rowwise().squaredNorm();
    d.rowwise() += y.rowwise().squaredNorm().transpose();
    return push(Op::pairwise_sqdist, a, b, d.cwiseMax(0.0));
  }

  /// s0 * A + s1 elementwise.
  NodeId affine(NodeId a, double s0, double s1) {
    const NodeId id = push(Op::affine, a, -1, (s0 * val(a).array() + s1).matrix());
    nodes_[id].s0 = s0;
    return id;
  }

  NodeId exp(NodeId a) { return push(Op::exp, a, -1, val(a).array().exp().matrix()); }

  /// J x K -> (J+1) x (K+1) with unit slack row/column and a zero corner.
  NodeId augment_slack(NodeId a) {
    const Eigen::MatrixXd& x = val(a);
    Eigen::MatrixXd v = Eigen::MatrixXd::Ones(x.rows() + 1, x.cols() + 1);
    v.topLeftCorner(x.rows(), x.cols()) = x;
    v(x.rows(), x.cols()) = 0.0;
    return push(Op::augment_slack, a, -1, std::move(v));
  }

  /// Divides every non-slack row by its sum over all columns; the slack
  /// row passes through.
  NodeId normalize_rows_nonslack(NodeId a) {
    Eigen::MatrixXd v = val(a);
    const Eigen::Index j = v.rows() - 1;
    Eigen::VectorXd sums(j);
    for (Eigen::Index r = 0; r < j; ++r) {
      sums(r) = v.row(r).sum();
      if (sums(r) < 1e-300)
        throw DegeneracyError("normalize_rows_nonslack: zero row " + std::to_string(r));
      v.row(r) /= sums(r);
    }
    const NodeId id = push(Op::normalize_rows_nonslack, a, -1, std::move(v));
    nodes_[id].aux = std::move(sums);
    return id;
  }

  NodeId normalize_cols_nonslack(NodeId a) {
    Eigen::MatrixXd v = val(a);
    const Eigen::Index k = v.cols() - 1;
    Eigen::VectorXd sums(k);
    for (Eigen::Index c = 0; c < k; ++c) {
      sums(c) = v.col(c).sum();
      if (sums(c) < 1e-300)
        throw DegeneracyError("normalize_cols_nonslack: zero column " + std::to_string(c));
      v.col(c) /= sums(c);
    }
    const NodeId id = push(Op::normalize_cols_nonslack, a, -1, std::move(v));
    nodes_[id].aux = std::move(sums);
    return id;
  }

  /// Drops the slack row and column.
  NodeId slice_topleft(NodeId a) {
    const Eigen::MatrixXd& x = val(a);
    return push(Op::slice_topleft, a, -1, x.topLeftCorner(x.rows() - 1, x.cols() - 1));
  }

  NodeId sub(NodeId a, NodeId b) { return push(Op::sub, a, b, val(a) - val(b)); }

  /// (1/N) * sum of squared row norms; the scalar loss node.
  NodeId mean_row_sqnorm(NodeId a) {
    const Eigen::MatrixXd& x = val(a);
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = x.array().square().sum() / static_cast<double>(x.rows());
    return push(Op::mean_row_sqnorm, a, -1, std::move(v));
  }

  const Eigen::MatrixXd& val(NodeId id) const { return nodes_[id].value; }
  const Eigen::MatrixXd& grad(NodeId id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates parent adjoints in reverse
  /// creation order.
  void backward(NodeId loss) {
    if (val(loss).size() != 1) throw ArgumentError("backward: loss node must be scalar");
    for (auto& n : nodes_) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    nodes_[loss].grad(0, 0) = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.isZero(0.0)) continue;
      const Eigen::MatrixXd& g = n.grad;
      switch (n.op) {
        case Op::input:
          break;
        case Op::matmul:
          nodes_[n.a].grad += g * nodes_[n.b].value.transpose();
          nodes_[n.b].grad += nodes_[n.a].value.transpose() * g;
          break;
        case Op::add_rowvec:
          nodes_[n.a].grad += g;
          nodes_[n.b].grad.row(0) += g.colwise().sum();
          break;
        case Op::relu:
          nodes_[n.a].grad.array() += g.array() * (n.value.array() > 0.0).cast<double>();
          break;
        case Op::pool_concat: {
          const Eigen::Index p = n.value.cols() / 2;
          nodes_[n.a].grad += g.leftCols(p);
          for (Eigen::Index c = 0; c < p; ++c)
            nodes_[n.a].grad(n.arg(c), c) += g.col(p + c).sum();
          break;
        }
        case Op::row_l2_normalize: {
          for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
            const double dot = g.row(r).dot(n.value.row(r));
            nodes_[n.a].grad.row(r) += (g.row(r) - dot * n.value.row(r)) / n.aux(r);
          }
          break;
        }
        case Op::pairwise_sqdist: {
          const Eigen::MatrixXd& x = nodes_[n.a].value;
          const Eigen::MatrixXd& y = nodes_[n.b].value;
          const Eigen::VectorXd row_sums = g.rowwise().sum();
          const Eigen::VectorXd col_sums = g.colwise().sum();
          nodes_[n.a].grad += 2.0 * (row_sums.asDiagonal() * x - g * y);
          nodes_[n.b].grad += 2.0 * (col_sums.asDiagonal() * y - g.transpose() * x);
          break;
        }
        case Op::affine:
          nodes_[n.a].grad += n.s0 * g;
          break;
        case Op::exp:
          nodes_[n.a].grad.array() += g.array() * n.value.array();
          break;
        case Op::augment_slack:
          nodes_[n.a].grad += g.topLeftCorner(n.value.rows() - 1, n.value.cols() - 1);
          break;
        case Op::normalize_rows_nonslack: {
          const Eigen::Index j = n.value.rows() - 1;
          for (Eigen::Index r = 0; r < j; ++r) {
            const double dot = g.row(r).dot(n.value.row(r));
            nodes_[n.a].grad.row(r) += (g.row(r).array() - dot).matrix() / n.aux(r);
          }
          nodes_[n.a].grad.row(j) += g.row(j);
          break;
        }
        case Op::normalize_cols_nonslack: {
          const Eigen::Index k = n.value.cols() - 1;
          for (Eigen::Index c = 0; c < k; ++c) {
            const double dot = g.col(c).dot(n.value.col(c));
            nodes_[n.a].grad.col(c) += (g.col(c).array() - dot).matrix() / n.aux(c);
          }
          nodes_[n.a].grad.col(k) += g.col(k);
          break;
        }
        case Op::slice_topleft:
          nodes_[n.a].grad.topLeftCorner(n.value.rows(), n.value.cols()) += g;
          break;
        case Op::sub:
          nodes_[n.a].grad += g;
          nodes_[n.b].grad -= g;
          break;
        case Op::mean_row_sqnorm: {
          const double scale = 2.0 * g(0, 0) / static_cast<double>(nodes_[n.a].value.rows());
          nodes_[n.a].grad += scale * nodes_[n.a].value;
          break;
        }
      }
    }
  }

private:
  struct Node {
    Op op = Op::input;
    NodeId a = -1, b = -1;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Eigen::VectorXd aux; // row norms / normalization sums
    Eigen::VectorXi arg; // pooled argmax rows
    double s0 = 0.0;
  };

  static const char* op_name(Op op) {
    switch (op) {
      case Op::input: return "input";
      case Op::matmul: return "matmul";
      case Op::add_rowvec: return "add_rowvec";
      case Op::relu: return "relu";
      case Op::pool_concat: return "pool_concat";
      case Op::row_l2_normalize: return "row_l2_normalize";
      case Op::pairwise_sqdist: return "pairwise_sqdist";
      case Op::affine: return "affine";
      case Op::exp: return "exp";
      case Op::augment_slack: return "augment_slack";
      case Op::normalize_rows_nonslack: return "normalize_rows_nonslack";
      case Op::normalize_cols_nonslack: return "normalize_cols_nonslack";
      case Op::slice_topleft: return "slice_topleft";
      case Op::sub: return "sub";
      case Op::mean_row_sqnorm: return "mean_row_sqnorm";
    }
    return "?";
  }

  NodeId push(Op op, NodeId a, NodeId b, Eigen::MatrixXd value) {
    if (!value.allFinite())
      throw NumericError("tape: non-finite value at node " + std::to_string(nodes_.size()) +
                         " (op " + op_name(op) + ")");
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

} // namespace pcr
