#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcr/errors.hpp"
#include "pcr/point_cloud.hpp"
#include "pcr/rigid_transform.hpp"
#include "pcr/sampling.hpp"

namespace pcr {

namespace detail {

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

inline FormatError parse_error(const std::filesystem::path& path, std::size_t line,
                               const std::string& what) {
  return FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

// --------------------------------- .xyz ----------------------------------
// ASCII, one "x y z" (optionally "x y z nx ny nz") per line, '#' comments.

inline PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x)) continue; // blank or comment-only line
    if (!(ss >> y >> z)) throw parse_error(path, line_no, "expected 3 coordinates");
    cloud.points.emplace_back(x, y, z);
    double nx, ny, nz;
    if (ss >> nx) {
      if (!(ss >> ny >> nz)) throw parse_error(path, line_no, "expected 3 normal components");
      cloud.normals.emplace_back(nx, ny, nz);
    }
  }
  if (cloud.empty()) throw FormatError(path.string() + ": no points");
  if (!cloud.normals.empty() && cloud.normals.size() != cloud.points.size())
    throw FormatError(path.string() + ": normals present on only some lines");
  return cloud;
}

inline void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << std::setprecision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    os << p.x() << " " << p.y() << " " << p.z();
    if (cloud.has_normals()) {
      const auto& n = cloud.normals[i];
      os << " " << n.x() << " " << n.y() << " " << n.z();
    }
    os << "\n";
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

// --------------------------------- .off ----------------------------------
// Header "OFF", counts line, vertex lines, triangle face lines.

inline TriangleMesh load_off(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;

  const auto next_content_line = [&]() -> std::optional<std::string> {
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r\n") != std::string::npos) return line;
    }
    return std::nullopt;
  };

  auto header = next_content_line();
  if (!header) throw parse_error(path, line_no, "missing OFF header");
  {
    std::istringstream ss(*header);
    std::string tag;
    ss >> tag;
    if (tag != "OFF") throw parse_error(path, line_no, "expected OFF header, got '" + tag + "'");
  }
  auto counts = next_content_line();
  if (!counts) throw parse_error(path, line_no, "missing counts line");
  std::size_t n_vertices = 0, n_faces = 0, n_edges = 0;
  {
    std::istringstream ss(*counts);
    if (!(ss >> n_vertices >> n_faces >> n_edges))
      throw parse_error(path, line_no, "expected 'vertices faces edges' counts");
  }
  TriangleMesh mesh;
  mesh.vertices.reserve(n_vertices);
  for (std::size_t i = 0; i < n_vertices; ++i) {
    auto v = next_content_line();
    if (!v) throw parse_error(path, line_no, "truncated vertex list");
    std::istringstream ss(*v);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw parse_error(path, line_no, "bad vertex line");
    mesh.vertices.emplace_back(x, y, z);
  }
  mesh.faces.reserve(n_faces);
  for (std::size_t i = 0; i < n_faces; ++i) {
    auto f = next_content_line();
    if (!f) throw parse_error(path, line_no, "truncated face list");
    std::istringstream ss(*f);
    int arity;
    if (!(ss >> arity)) throw parse_error(path, line_no, "bad face line");
    if (arity != 3)
      throw parse_error(path, line_no,
                        "only triangles are supported, face has " + std::to_string(arity) +
                            " vertices");
    std::array<int, 3> face{};
    if (!(ss >> face[0] >> face[1] >> face[2]))
      throw parse_error(path, line_no, "bad face indices");
    for (int idx : face)
      if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size())
        throw parse_error(path, line_no, "face index out of range");
    mesh.faces.push_back(face);
  }
  return mesh;
}

// --------------------------------- .ply ----------------------------------
// ascii and binary_little_endian; float/double x/y/z vertex properties,
// other per-vertex properties skipped; optional triangle faces.

struct PlyProperty {
  std::string name;
  std::string type;      // scalar type, or list index type
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

inline std::size_t ply_type_size(const std::string& t, const std::filesystem::path& path,
                                 std::size_t line) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw parse_error(path, line, "unknown ply type '" + t + "'");
}

struct PlyFile {
  bool binary = false;
  std::vector<PlyElement> elements;
  std::size_t header_lines = 0;
};

inline PlyFile parse_ply_header(std::istream& is, const std::filesystem::path& path) {
  PlyFile ply;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw parse_error(path, 1, "empty file");
  ++line_no;
  if (line.rfind("ply", 0) != 0) throw parse_error(path, 1, "missing 'ply' magic");
  bool have_format = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii")
        ply.binary = false;
      else if (fmt == "binary_little_endian")
        ply.binary = true;
      else
        throw parse_error(path, line_no, "unsupported ply format '" + fmt + "'");
      have_format = true;
    } else if (kw == "element") {
      PlyElement el;
      if (!(ss >> el.name >> el.count))
        throw parse_error(path, line_no, "bad element declaration");
      ply.elements.push_back(el);
    } else if (kw == "property") {
      if (ply.elements.empty())
        throw parse_error(path, line_no, "property before any element");
      PlyProperty prop;
      std::string t;
      ss >> t;
      if (t == "list") {
        prop.is_list = true;
        ss >> prop.count_type >> prop.type >> prop.name;
      } else {
        prop.type = t;
        ss >> prop.name;
      }
      if (prop.name.empty()) throw parse_error(path, line_no, "bad property declaration");
      ply.elements.back().properties.push_back(prop);
    } else if (kw == "end_header") {
      if (!have_format) throw parse_error(path, line_no, "missing format line");
      ply.header_lines = line_no;
      return ply;
    } else {
      throw parse_error(path, line_no, "unknown header keyword '" + kw + "'");
    }
  }
  throw parse_error(path, line_no, "missing end_header");
}

inline double ply_read_binary_scalar(std::istream& is, const std::string& type,
                                     const std::filesystem::path& path) {
  const auto fail = [&]() -> FormatError {
    return FormatError(path.string() + ": truncated at byte offset " +
                       std::to_string(static_cast<long long>(is.tellg())));
  };
  const auto read_raw = [&](auto value) -> double {
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(value))) throw fail();
    return static_cast<double>(value);
  };
  if (type == "char" || type == "int8") return read_raw(std::int8_t{});
  if (type == "uchar" || type == "uint8") return read_raw(std::uint8_t{});
  if (type == "short" || type == "int16") return read_raw(std::int16_t{});
  if (type == "ushort" || type == "uint16") return read_raw(std::uint16_t{});
  if (type == "int" || type == "int32") return read_raw(std::int32_t{});
  if (type == "uint" || type == "uint32") return read_raw(std::uint32_t{});
  if (type == "float" || type == "float32") return read_raw(float{});
  return read_raw(double{});
}

struct PlyContents {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
};

inline PlyContents load_ply(const std::filesystem::path& path, bool want_faces) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const PlyFile ply = parse_ply_header(is, path);

  PlyContents out;
  std::size_t line_no = ply.header_lines;
  for (const auto& el : ply.elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    int ix = -1, iy = -1, iz = -1;
    if (is_vertex) {
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        if (el.properties[p].name == "x") ix = static_cast<int>(p);
        if (el.properties[p].name == "y") iy = static_cast<int>(p);
        if (el.properties[p].name == "z") iz = static_cast<int>(p);
      }
      if (ix < 0 || iy < 0 || iz < 0)
        throw FormatError(path.string() + ": vertex element lacks x/y/z properties");
    }
    for (std::size_t i = 0; i < el.count; ++i) {
      if (!ply.binary) {
        std::string line;
        if (!std::getline(is, line))
          throw parse_error(path, line_no, "truncated " + el.name + " element (" +
                                               std::to_string(i) + " of " +
                                               std::to_string(el.count) + " read)");
        ++line_no;
        std::istringstream ss(line);
        if (is_vertex) {
          std::vector<double> values(el.properties.size());
          for (std::size_t p = 0; p < el.properties.size(); ++p)
            if (!(ss >> values[p]))
              throw parse_error(path, line_no, "bad vertex line");
          out.vertices.emplace_back(values[ix], values[iy], values[iz]);
        } else if (is_face) {
          int arity;
          if (!(ss >> arity)) throw parse_error(path, line_no, "bad face line");
          std::vector<int> idx(arity);
          for (int p = 0; p < arity; ++p)
            if (!(ss >> idx[p])) throw parse_error(path, line_no, "bad face indices");
          if (want_faces) {
            if (arity != 3)
              throw parse_error(path, line_no, "only triangle faces are supported");
            out.faces.push_back({idx[0], idx[1], idx[2]});
          }
        }
        // other elements: line already consumed
      } else {
        if (is_vertex) {
          Eigen::Vector3d v = Eigen::Vector3d::Zero();
          for (std::size_t p = 0; p < el.properties.size(); ++p) {
            const auto& prop = el.properties[p];
            if (prop.is_list)
              throw FormatError(path.string() + ": list property in vertex element");
            const double value = ply_read_binary_scalar(is, prop.type, path);
            if (static_cast<int>(p) == ix) v.x() = value;
            if (static_cast<int>(p) == iy) v.y() = value;
            if (static_cast<int>(p) == iz) v.z() = value;
          }
          out.vertices.push_back(v);
        } else {
          for (const auto& prop : el.properties) {
            if (!prop.is_list) {
              ply_read_binary_scalar(is, prop.type, path);
              continue;
            }
            const int arity =
                static_cast<int>(ply_read_binary_scalar(is, prop.count_type, path));
            std::vector<int> idx(arity);
            for (int p = 0; p < arity; ++p)
              idx[p] = static_cast<int>(ply_read_binary_scalar(is, prop.type, path));
            if (is_face && want_faces && prop.name == "vertex_indices") {
              if (arity != 3)
                throw FormatError(path.string() + ": only triangle faces are supported");
              out.faces.push_back({idx[0], idx[1], idx[2]});
            }
          }
        }
      }
    }
  }
  return out;
}

} // namespace detail

/// Loads a point cloud from .xyz, .ply or .off (vertices only for meshes).
inline PointCloud load_cloud(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".xyz") return detail::load_xyz(path);
  if (ext == ".off") {
    const TriangleMesh mesh = detail::load_off(path);
    PointCloud cloud;
    cloud.points = mesh.vertices;
    if (cloud.empty()) throw FormatError(path.string() + ": no vertices");
    return cloud;
  }
  if (ext == ".ply") {
    const auto ply = detail::load_ply(path, false);
    if (ply.vertices.empty()) throw FormatError(path.string() + ": no vertices");
    PointCloud cloud;
    cloud.points = ply.vertices;
    return cloud;
  }
  throw ArgumentError("unsupported point cloud extension: " + path.string());
}

/// Saves to .xyz (full double precision) or ascii .ply.
inline void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".xyz") {
    detail::save_xyz(cloud, path);
    return;
  }
  if (ext == ".ply") {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
       << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
    os << std::setprecision(17);
    for (const auto& p : cloud.points) os << p.x() << " " << p.y() << " " << p.z() << "\n";
    if (!os) throw FormatError("failed writing " + path.string());
    return;
  }
  throw ArgumentError("unsupported point cloud extension: " + path.string());
}

/// Loads a triangle mesh from .off or .ply.
inline TriangleMesh load_mesh(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".off") return detail::load_off(path);
  if (ext == ".ply") {
    const auto ply = detail::load_ply(path, true);
    TriangleMesh mesh;
    mesh.vertices = ply.vertices;
    mesh.faces = ply.faces;
    if (mesh.faces.empty()) throw FormatError(path.string() + ": mesh has no faces");
    return mesh;
  }
  throw ArgumentError("unsupported mesh extension: " + path.string());
}

/// Whether the file can carry faces (used to decide surface sampling).
inline bool is_mesh_file(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".off") return true;
  if (ext != ".ply") return false;
  try {
    return !load_mesh(path).faces.empty();
  } catch (const Error&) {
    return false;
  }
}

// transform JSON: {"rotation": [[3x3 row-major]], "translation": [tx,ty,tz]}

inline nlohmann::json transform_to_json(const RigidTransform& t) {
  nlohmann::json j;
  for (int r = 0; r < 3; ++r)
    j["rotation"].push_back({t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2)});
  j["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
  return j;
}

inline RigidTransform transform_from_json(const nlohmann::json& j) {
  RigidTransform t;
  try {
    const auto& rot = j.at("rotation");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t.rotation(r, c) = rot.at(r).at(c).get<double>();
    const auto& trans = j.at("translation");
    for (int i = 0; i < 3; ++i) t.translation(i) = trans.at(i).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad transform JSON: ") + e.what());
  }
  if (orthogonality_drift(t.rotation) > 1e-6 || t.rotation.determinant() < 0.0)
    throw FormatError("transform JSON rotation is not a proper rotation");
  return t;
}

inline void save_transform_json(const RigidTransform& t, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << transform_to_json(t).dump(2) << "\n";
}

inline RigidTransform load_transform_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return transform_from_json(j);
}

} // namespace pcr
