#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "pcr/errors.hpp"
#include "pcr/point_cloud.hpp"

namespace pcr {

/// One query hit: point id into the indexed cloud plus Euclidean distance.
struct Neighbor {
  int id = -1;
  double distance = 0.0;
};

/// Immutable spatial index with exact k-NN and radius queries.
///
/// Results are sorted by (distance, id) ascending; equidistant points are
/// therefore always resolved toward the lower id.
class KNeighborIndex {
public:
  explicit KNeighborIndex(const PointCloud& cloud) : points_(cloud.points) {
    if (points_.empty()) throw ArgumentError("KNeighborIndex: empty cloud");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    root_ = build(0, static_cast<int>(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  const Eigen::Vector3d& point(int id) const { return points_[static_cast<std::size_t>(id)]; }

  /// Exact k nearest neighbors, ascending by (distance, id).
  std::vector<Neighbor> knn(const Eigen::Vector3d& query, int k) const {
    if (k <= 0) throw ArgumentError("knn: k must be positive");
    if (static_cast<std::size_t>(k) > points_.size())
      throw ArgumentError("knn: k exceeds indexed cloud size");
    Heap heap;
    heap.reserve(static_cast<std::size_t>(k));
    search_knn(root_, query, k, heap);
    std::vector<Neighbor> out(heap.size());
    std::sort(heap.begin(), heap.end(), CloserFirst{});
    for (std::size_t i = 0; i < heap.size(); ++i)
      out[i] = {heap[i].second, std::sqrt(heap[i].first)};
    return out;
  }

  /// All points with distance <= radius, ascending by (distance, id).
  std::vector<Neighbor> radius_search(const Eigen::Vector3d& query, double radius) const {
    if (!(radius >= 0.0)) throw ArgumentError("radius_search: radius must be >= 0");
    std::vector<std::pair<double, int>> hits;
    search_radius(root_, query, radius * radius, hits);
    std::sort(hits.begin(), hits.end(), CloserFirst{});
    std::vector<Neighbor> out(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) out[i] = {hits[i].second, std::sqrt(hits[i].first)};
    return out;
  }

private:
  static constexpr int kLeafSize = 16;

  struct Node {
    int axis = -1;        // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0; // leaf range into order_
  };

  // (squared distance, id); "closer" prefers smaller distance then lower id
  using Entry = std::pair<double, int>;
  using Heap = std::vector<Entry>;

  struct CloserFirst {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.first < b.first || (a.first == b.first && a.second < b.second);
    }
  };
  struct FartherFirst {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.first < b.first || (a.first == b.first && a.second > b.second);
    }
  };

  int build(int begin, int end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    Eigen::Vector3d lo = points_[order_[begin]];
    Eigen::Vector3d hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double pa = points_[a][axis], pb = points_[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    node.axis = axis;
    node.split = points_[order_[mid]][axis];
    nodes_.push_back(node);
    const int self = static_cast<int>(nodes_.size()) - 1;
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void consider(const Eigen::Vector3d& query, int id, int k, Heap& heap) const {
    const double d2 = (points_[id] - query).squaredNorm();
    const Entry cand{d2, id};
    if (static_cast<int>(heap.size()) < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), FartherFirst{});
    } else if (CloserFirst{}(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), FartherFirst{});
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), FartherFirst{});
    }
  }

  void search_knn(int idx, const Eigen::Vector3d& query, int k, Heap& heap) const {
    const Node& node = nodes_[idx];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) consider(query, order_[i], k, heap);
      return;
    }
    const double delta = query[node.axis] - node.split;
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search_knn(near, query, k, heap);
    // the far side may hold an equidistant point with a lower id, so do not
    // prune on exact equality
    if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first)
      search_knn(far, query, k, heap);
  }

  void search_radius(int idx, const Eigen::Vector3d& query, double r2,
                     std::vector<Entry>& hits) const {
    const Node& node = nodes_[idx];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int id = order_[i];
        const double d2 = (points_[id] - query).squaredNorm();
        if (d2 <= r2) hits.emplace_back(d2, id);
      }
      return;
    }
    const double delta = query[node.axis] - node.split;
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search_radius(near, query, r2, hits);
    if (delta * delta <= r2) search_radius(far, query, r2, hits);
  }

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = 0;
};

/// Convenience single-query form of KNeighborIndex::knn.
inline std::vector<Neighbor> nearest_neighbor(const KNeighborIndex& index,
                                              const Eigen::Vector3d& query, int k) {
  return index.knn(query, k);
}

} // namespace pcr
