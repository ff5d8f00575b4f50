#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pcr/errors.hpp"
#include "pcr/kdtree.hpp"
#include "pcr/normals.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/random.hpp"

namespace pcr {

/// How raw clouds are turned into encoder input rows.
struct InputFeatureMode {
  enum class Kind { direct_points, normals_fixed_radius, normals_flexible_radius };

  Kind kind = Kind::direct_points;
  double fixed_radius = 0.0; // > 0 for normals_fixed_radius

  static InputFeatureMode direct() { return {}; }
  static InputFeatureMode fixed_radius_normals(double radius) {
    if (!(radius > 0.0)) throw ArgumentError("fixed radius must be > 0");
    return {Kind::normals_fixed_radius, radius};
  }
  static InputFeatureMode flexible_radius_normals() {
    return {Kind::normals_flexible_radius, 0.0};
  }

  int input_dim() const { return kind == Kind::direct_points ? 3 : 6; }
};

/// Five-layer point-wise MLP. Layer matrices are stored input-dim x
/// output-dim so that a batch of row vectors maps through `rows * weight`.
/// Layer 4 consumes the layer-3 output concatenated with the pooled
/// context, so its input width is twice the layer-3 output width.
struct EncoderWeights {
  struct Layer {
    Eigen::MatrixXd weight; // in x out
    Eigen::VectorXd bias;   // out
  };

  std::vector<Layer> layers; // exactly 5
  InputFeatureMode mode;

  int input_dim() const { return static_cast<int>(layers.front().weight.rows()); }
  int feature_dim() const { return static_cast<int>(layers.back().weight.cols()); }
};

/// Validates layer count and dimension chaining. Throws ArgumentError.
inline void validate(const EncoderWeights& w) {
  if (w.layers.size() != 5) throw ArgumentError("encoder must have exactly 5 layers");
  for (const auto& layer : w.layers) {
    if (layer.weight.rows() < 1 || layer.weight.cols() < 1)
      throw ArgumentError("encoder layer has empty weight matrix");
    if (layer.bias.size() != layer.weight.cols())
      throw ArgumentError("encoder bias length does not match layer output width");
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw ArgumentError("encoder parameters must be finite");
  }
  for (int l : {1, 2}) {
    if (w.layers[l].weight.rows() != w.layers[l - 1].weight.cols())
      throw ArgumentError("encoder layer dimensions do not chain at layer " + std::to_string(l + 1));
  }
  if (w.layers[3].weight.rows() != 2 * w.layers[2].weight.cols())
    throw ArgumentError("encoder layer 4 must consume the concatenated pooled context");
  if (w.layers[4].weight.rows() != w.layers[3].weight.cols())
    throw ArgumentError("encoder layer dimensions do not chain at layer 5");
  if (w.layers[0].weight.rows() != w.mode.input_dim())
    throw ArgumentError("encoder input width does not match the input feature mode");
}

/// Per-point descriptors, one row per input point.
struct FeatureMatrix {
  Eigen::MatrixXd values; // N x D
  bool l2_normalized = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Default layer widths: in -> 64 -> 64 -> 64 -> 128 -> 1024.
inline std::array<int, 5> default_layer_widths() { return {64, 64, 64, 128, 1024}; }

/// Uniform +-sqrt(6 / fan_in) weights, zero biases. Values are quantized
/// to f32 so that the binary weight file round-trips bit-exactly.
inline EncoderWeights init_weights(Rng& rng, InputFeatureMode mode,
                                   const std::array<int, 5>& widths = default_layer_widths()) {
  EncoderWeights w;
  w.mode = mode;
  int in_dim = mode.input_dim();
  for (int l = 0; l < 5; ++l) {
    const int rows = l == 3 ? 2 * widths[2] : in_dim;
    const int cols = widths[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(rows));
    EncoderWeights::Layer layer;
    layer.weight.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        layer.weight(r, c) = static_cast<float>(rng.uniform(-bound, bound));
    layer.bias = Eigen::VectorXd::Zero(cols);
    w.layers.push_back(std::move(layer));
    in_dim = cols;
  }
  validate(w);
  return w;
}

/// Encoder input rows plus the count of points that fell back to k-NN
/// neighborhoods because their radius ball was too sparse.
struct InputFeatures {
  Eigen::MatrixXd rows;
  int radius_fallbacks = 0;
};

/// direct_points: raw xyz rows. Normal modes: xyz followed by a unit
/// normal estimated from the radius neighborhood (flexible radius = max
/// over points of the nearest-neighbor distance). Neighborhoods with
/// fewer than 3 points fall back to 10-NN.
inline InputFeatures build_input_features(const PointCloud& cloud, InputFeatureMode mode) {
  validate(cloud);
  const auto n = static_cast<Eigen::Index>(cloud.size());
  InputFeatures out;
  if (mode.kind == InputFeatureMode::Kind::direct_points) {
    out.rows.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) out.rows.row(i) = cloud.points[i].transpose();
    return out;
  }

  constexpr int kFallbackK = 10;
  if (cloud.size() <= kFallbackK)
    throw ArgumentError("build_input_features: normal modes need more than 10 points");

  const KNeighborIndex index(cloud);
  double radius = mode.fixed_radius;
  if (mode.kind == InputFeatureMode::Kind::normals_flexible_radius) {
    radius = 0.0;
    for (const auto& p : cloud.points) {
      const auto nn = index.knn(p, 2); // self plus nearest other point
      radius = std::max(radius, nn[1].distance);
    }
  }

  const Eigen::Vector3d c = centroid(cloud);
  out.rows.resize(n, 6);
  std::vector<Eigen::Vector3d> neighborhood;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d& p = cloud.points[i];
    auto hits = index.radius_search(p, radius);
    if (hits.size() < 3) {
      hits = index.knn(p, kFallbackK);
      ++out.radius_fallbacks;
    }
    neighborhood.clear();
    for (const auto& h : hits) neighborhood.push_back(index.point(h.id));
    const Eigen::Vector3d normal =
        detail::orient_normal(detail::covariance_normal(neighborhood), p, c);
    out.rows.row(i) << p.transpose(), normal.transpose();
  }
  return out;
}

/// Maps each point to a D-dimensional descriptor.
///
/// Layers 1-3 run point-wise with ReLU; the coordinate-wise max of the
/// layer-3 output over all points is broadcast and concatenated to every
/// row; layers 4-5 finish the map (ReLU after 4 only); rows are then
/// L2-normalized. Rows are permutation-equivariant and the pooled context
/// is permutation-invariant.
inline FeatureMatrix encode(const PointCloud& cloud, const EncoderWeights& w,
                            InputFeatureMode mode) {
  validate(w);
  if (mode.input_dim() != w.input_dim())
    throw ArgumentError("encode: input feature mode does not match encoder input width");
  const InputFeatures input = build_input_features(cloud, mode);

  Eigen::MatrixXd h = input.rows;
  for (int l = 0; l < 3; ++l) {
    h = ((h * w.layers[l].weight).rowwise() + w.layers[l].bias.transpose()).cwiseMax(0.0);
  }
  const Eigen::RowVectorXd pooled = h.colwise().maxCoeff();
  Eigen::MatrixXd cat(h.rows(), 2 * h.cols());
  cat << h, pooled.replicate(h.rows(), 1);
  Eigen::MatrixXd h4 =
      ((cat * w.layers[3].weight).rowwise() + w.layers[3].bias.transpose()).cwiseMax(0.0);
  Eigen::MatrixXd h5 = (h4 * w.layers[4].weight).rowwise() + w.layers[4].bias.transpose();

  FeatureMatrix out;
  out.values = std::move(h5);
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
    const double norm = out.values.row(i).norm();
    if (norm < 1e-12)
      throw DegeneracyError("encode: descriptor row " + std::to_string(i) + " is zero");
    out.values.row(i) /= norm;
  }
  out.l2_normalized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Weight file (binary, little-endian):
//   magic "R3PMW001"
//   u32 layer count (= 5)
//   per layer: u32 rows, u32 cols, rows*cols f32 weights row-major,
//              cols f32 biases
//   u32 input-mode tag: 0 = direct, 1 = fixed-radius normals (f32 radius
//   follows), 2 = flexible-radius normals
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kWeightMagic[8] = {'R', '3', 'P', 'M', 'W', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& field) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw FormatError("weight file truncated while reading " + field);
  return value;
}

} // namespace detail

inline void save_weights(const EncoderWeights& w, const std::filesystem::path& path) {
  validate(w);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open weight file for writing: " + path.string());
  os.write(detail::kWeightMagic, sizeof(detail::kWeightMagic));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(w.layers.size()));
  for (const auto& layer : w.layers) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(layer.weight.rows()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        detail::write_pod<float>(os, static_cast<float>(layer.weight(r, c)));
    for (Eigen::Index c = 0; c < layer.bias.size(); ++c)
      detail::write_pod<float>(os, static_cast<float>(layer.bias(c)));
  }
  switch (w.mode.kind) {
    case InputFeatureMode::Kind::direct_points:
      detail::write_pod<std::uint32_t>(os, 0u);
      break;
    case InputFeatureMode::Kind::normals_fixed_radius:
      detail::write_pod<std::uint32_t>(os, 1u);
      detail::write_pod<float>(os, static_cast<float>(w.mode.fixed_radius));
      break;
    case InputFeatureMode::Kind::normals_flexible_radius:
      detail::write_pod<std::uint32_t>(os, 2u);
      break;
  }
  if (!os) throw FormatError("failed writing weight file: " + path.string());
}

inline EncoderWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open weight file: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kWeightMagic, sizeof(magic)) != 0)
    throw FormatError("weight file magic mismatch (expected R3PMW001)");
  const auto layer_count = detail::read_pod<std::uint32_t>(is, "layer count");
  if (layer_count != 5)
    throw FormatError("weight file layer count must be 5, got " + std::to_string(layer_count));
  EncoderWeights w;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const auto rows = detail::read_pod<std::uint32_t>(is, "layer rows");
    const auto cols = detail::read_pod<std::uint32_t>(is, "layer cols");
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20))
      throw FormatError("weight file layer " + std::to_string(l + 1) + " has invalid shape");
    EncoderWeights::Layer layer;
    layer.weight.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        layer.weight(r, c) = detail::read_pod<float>(is, "layer weights");
    layer.bias.resize(cols);
    for (std::uint32_t c = 0; c < cols; ++c)
      layer.bias(c) = detail::read_pod<float>(is, "layer biases");
    w.layers.push_back(std::move(layer));
  }
  const auto tag = detail::read_pod<std::uint32_t>(is, "input-mode tag");
  switch (tag) {
    case 0:
      w.mode = InputFeatureMode::direct();
      break;
    case 1:
      w.mode = InputFeatureMode::fixed_radius_normals(
          detail::read_pod<float>(is, "fixed radius"));
      break;
    case 2:
      w.mode = InputFeatureMode::flexible_radius_normals();
      break;
    default:
      throw FormatError("unknown input-mode tag " + std::to_string(tag));
  }
  try {
    validate(w);
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("weight file dimension mismatch: ") + e.what());
  }
  return w;
}

} // namespace pcr
