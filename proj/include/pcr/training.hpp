#pragma once

#include <Eigen/Dense>
#include <numeric>
#include <utility>
#include <vector>

#include "pcr/autodiff.hpp"
#include "pcr/encoder.hpp"
#include "pcr/errors.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/random.hpp"
#include "pcr/rigid_transform.hpp"
#include "pcr/solver.hpp"

namespace pcr {

/// Parameter gradients shaped like the encoder weights.
struct EncoderGradients {
  std::vector<EncoderWeights::Layer> layers;
};

/// Inverse temperature used for the single unrolled matching iteration the
/// trainer differentiates through (a mid-schedule sharpness).
inline constexpr double kTrainBeta = 2.0;

/// Forward: encode both clouds with shared weights (the source is
/// pre-transformed by the ground truth so correspondences are geometric),
/// build the annealed kernel, run a fixed number of Sinkhorn sweeps and
/// evaluate the feature alignment loss. Backward: exact reverse-mode
/// gradients for every encoder parameter.
inline std::pair<double, EncoderGradients> loss_and_gradients(const PointCloud& source,
                                                              const PointCloud& target,
                                                              const RigidTransform& gt,
                                                              const EncoderWeights& w,
                                                              const RegistrationConfig& cfg) {
  validate(w);
  const InputFeatures source_rows =
      build_input_features(apply_transform(source, gt), cfg.mode);
  const InputFeatures target_rows = build_input_features(target, cfg.mode);

  Tape tape;
  std::vector<Tape::NodeId> weight_nodes, bias_nodes;
  for (const auto& layer : w.layers) {
    weight_nodes.push_back(tape.input(layer.weight));
    bias_nodes.push_back(tape.input(layer.bias.transpose()));
  }

  const auto encode_branch = [&](const Eigen::MatrixXd& rows) {
    Tape::NodeId h = tape.input(rows);
    for (int l = 0; l < 3; ++l)
      h = tape.relu(tape.add_rowvec(tape.matmul(h, weight_nodes[l]), bias_nodes[l]));
    h = tape.pool_concat(h);
    h = tape.relu(tape.add_rowvec(tape.matmul(h, weight_nodes[3]), bias_nodes[3]));
    h = tape.add_rowvec(tape.matmul(h, weight_nodes[4]), bias_nodes[4]);
    return tape.row_l2_normalize(h);
  };

  const Tape::NodeId fx = encode_branch(source_rows.rows);
  const Tape::NodeId fy = encode_branch(target_rows.rows);

  const double alpha = cfg.schedule.alpha0;
  Tape::NodeId m = tape.augment_slack(
      tape.exp(tape.affine(tape.pairwise_sqdist(fx, fy), -kTrainBeta, kTrainBeta * alpha)));
  for (int it = 0; it < cfg.sinkhorn_iterations; ++it)
    m = tape.normalize_cols_nonslack(tape.normalize_rows_nonslack(m));

  const Tape::NodeId predicted = tape.matmul(tape.slice_topleft(m), fy);
  const Tape::NodeId loss = tape.mean_row_sqnorm(tape.sub(fx, predicted));
  tape.backward(loss);

  EncoderGradients grads;
  grads.layers.resize(w.layers.size());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    grads.layers[l].weight = tape.grad(weight_nodes[l]);
    grads.layers[l].bias = tape.grad(bias_nodes[l]).row(0).transpose();
  }
  return {tape.val(loss)(0, 0), grads};
}

/// Adam optimizer state; moment buffers are shaped like the parameters.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<EncoderWeights::Layer> m; // first moments
  std::vector<EncoderWeights::Layer> v; // second moments

  static AdamState init(const EncoderWeights& w, double lr = 1e-3) {
    AdamState s;
    s.lr = lr;
    for (const auto& layer : w.layers) {
      EncoderWeights::Layer zero;
      zero.weight = Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols());
      zero.bias = Eigen::VectorXd::Zero(layer.bias.size());
      s.m.push_back(zero);
      s.v.push_back(std::move(zero));
    }
    return s;
  }
};

/// Standard bias-corrected Adam update, in place.
inline void adam_step(EncoderWeights& w, const EncoderGradients& grads, AdamState& state) {
  if (grads.layers.size() != w.layers.size() || state.m.size() != w.layers.size())
    throw ArgumentError("adam_step: shape mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto update = [&](Eigen::MatrixXd& param, const Eigen::MatrixXd& g,
                            Eigen::MatrixXd& m, Eigen::MatrixXd& v) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v.array().matrix() + (1.0 - state.beta2) * g.array().square().matrix();
      const Eigen::ArrayXXd m_hat = m.array() / bc1;
      const Eigen::ArrayXXd v_hat = v.array() / bc2;
      param.array() -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    };
    update(w.layers[l].weight, grads.layers[l].weight, state.m[l].weight, state.v[l].weight);
    Eigen::MatrixXd bias = w.layers[l].bias, gb = grads.layers[l].bias;
    Eigen::MatrixXd mb = state.m[l].bias, vb = state.v[l].bias;
    update(bias, gb, mb, vb);
    w.layers[l].bias = bias;
    state.m[l].bias = mb;
    state.v[l].bias = vb;
  }
}

struct TrainingPair {
  PointCloud source;
  PointCloud target;
  RigidTransform gt; // registers source back onto target
};

struct TrainResult {
  EncoderWeights weights;
  std::vector<double> history; // per-step loss
};

/// Shuffled per-epoch passes with one Adam step per pair. Deterministic
/// given the stream.
inline TrainResult train(const std::vector<TrainingPair>& pairs, const EncoderWeights& w0,
                         int epochs, Rng& rng, const RegistrationConfig& cfg = {},
                         double lr = 1e-3) {
  if (pairs.empty()) throw ArgumentError("train: empty dataset");
  if (epochs < 0) throw ArgumentError("train: epochs must be >= 0");

  TrainResult out;
  out.weights = w0;
  AdamState state = AdamState::init(w0, lr);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t j = i + rng.uniform_index(order.size() - i);
      std::swap(order[i], order[j]);
    }
    for (const std::size_t idx : order) {
      const auto& pair = pairs[idx];
      auto [loss, grads] = loss_and_gradients(pair.source, pair.target, pair.gt,
                                              out.weights, cfg);
      adam_step(out.weights, grads, state);
      out.history.push_back(loss);
    }
  }
  return out;
}

} // namespace pcr
