#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "pcr/errors.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/random.hpp"

namespace pcr {

/// Keeps min(n, N) points chosen uniformly without replacement
/// (partial Fisher-Yates). Normals follow their points.
inline PointCloud subsample_uniform(const PointCloud& cloud, std::size_t n, Rng& rng) {
  if (n < 1) throw ArgumentError("subsample_uniform: n must be >= 1");
  const std::size_t count = std::min(n, cloud.size());
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  PointCloud out;
  out.points.reserve(count);
  if (cloud.has_normals()) out.normals.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.points.push_back(cloud.points[idx[i]]);
    if (cloud.has_normals()) out.normals.push_back(cloud.normals[idx[i]]);
  }
  return out;
}

/// One centroid per occupied voxel of the grid anchored at the cloud's
/// minimum corner. Output is ordered by voxel index, so the result is
/// reproducible for a given cloud.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ArgumentError("voxel_downsample: voxel_size must be > 0");
  if (cloud.empty()) throw ArgumentError("voxel_downsample: empty cloud");
  Eigen::Vector3d lo = cloud.points.front();
  for (const auto& p : cloud.points) lo = lo.cwiseMin(p);

  struct Accum {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    std::size_t count = 0;
  };
  std::map<std::array<std::int64_t, 3>, Accum> cells;
  for (const auto& p : cloud.points) {
    const Eigen::Vector3d rel = (p - lo) / voxel_size;
    const std::array<std::int64_t, 3> key = {static_cast<std::int64_t>(std::floor(rel.x())),
                                             static_cast<std::int64_t>(std::floor(rel.y())),
                                             static_cast<std::int64_t>(std::floor(rel.z()))};
    auto& cell = cells[key];
    cell.sum += p;
    cell.count += 1;
  }
  PointCloud out;
  out.points.reserve(cells.size());
  for (const auto& [key, cell] : cells)
    out.points.push_back(cell.sum / static_cast<double>(cell.count));
  return out;
}

/// Indexed triangle mesh.
struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
};

inline double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                            const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

/// n points by area-weighted triangle selection and uniform barycentric
/// sampling. Deterministic given the stream.
inline PointCloud sample_mesh_surface(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
  if (mesh.faces.empty()) throw ArgumentError("sample_mesh_surface: mesh has no faces");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw DegeneracyError("sample_mesh_surface: total mesh area is zero");

  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(0.0, total);
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    const std::size_t face = std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), mesh.faces.size() - 1);
    const auto& f = mesh.faces[face];
    double s = rng.uniform();
    double t = rng.uniform();
    if (s + t > 1.0) {
      s = 1.0 - s;
      t = 1.0 - t;
    }
    const Eigen::Vector3d& a = mesh.vertices[f[0]];
    const Eigen::Vector3d& b = mesh.vertices[f[1]];
    const Eigen::Vector3d& c = mesh.vertices[f[2]];
    out.points.push_back(a + s * (b - a) + t * (c - a));
  }
  return out;
}

} // namespace pcr
