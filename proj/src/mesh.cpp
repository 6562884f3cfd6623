// SPDX-License-Identifier: Apache-2.0
#include "fg3d/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "fg3d/error.hpp"

namespace fg3d {

void Mesh::validate() const {
  if (faces.empty()) throw GeometryError("mesh has no faces");
  if (part_labels.size() != faces.size()) {
    throw GeometryError("mesh has " + std::to_string(part_labels.size()) + " labels for " +
                        std::to_string(faces.size()) + " faces");
  }
  for (const auto& f : faces) {
    for (auto i : f) {
      if (i >= vertices.size()) {
        throw GeometryError("face index " + std::to_string(i) + " >= vertex count " +
                            std::to_string(vertices.size()));
      }
    }
  }
}

std::vector<int> Mesh::distinct_labels() const {
  std::set<int> s(part_labels.begin(), part_labels.end());
  return {s.begin(), s.end()};
}

namespace {

// Next non-empty, non-comment line; false at EOF.
bool next_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

}  // namespace

Mesh parse_off(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_line(in, line, line_no)) throw ParseError(source, line_no + 1, "missing OFF header");
  std::istringstream header(line);
  std::string magic;
  header >> magic;
  if (magic != "OFF") throw ParseError(source, line_no, "expected 'OFF' header, got '" + magic + "'");

  long long nv = -1, nf = -1, ne = 0;
  if (!(header >> nv)) {
    if (!next_line(in, line, line_no)) throw ParseError(source, line_no + 1, "missing counts line");
    std::istringstream counts(line);
    if (!(counts >> nv >> nf)) throw ParseError(source, line_no, "malformed counts line");
    counts >> ne;
  } else if (!(header >> nf)) {
    throw ParseError(source, line_no, "malformed counts on header line");
  }
  if (nv < 0 || nf < 0) throw ParseError(source, line_no, "negative element counts");

  Mesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(nv));
  for (long long i = 0; i < nv; ++i) {
    if (!next_line(in, line, line_no)) throw ParseError(source, line_no + 1, "unexpected end of vertices");
    std::istringstream ls(line);
    Vec3 v{};
    if (!(ls >> v[0] >> v[1] >> v[2])) throw ParseError(source, line_no, "malformed vertex");
    mesh.vertices.push_back(v);
  }
  for (long long i = 0; i < nf; ++i) {
    if (!next_line(in, line, line_no)) throw ParseError(source, line_no + 1, "unexpected end of faces");
    std::istringstream ls(line);
    long long n = 0;
    if (!(ls >> n) || n < 3) throw ParseError(source, line_no, "face needs at least 3 vertices");
    std::vector<std::uint32_t> idx;
    for (long long j = 0; j < n; ++j) {
      long long v = -1;
      if (!(ls >> v)) throw ParseError(source, line_no, "malformed face index");
      if (v < 0 || v >= nv) {
        throw ParseError(source, line_no,
                         "face index " + std::to_string(v) + " out of range (" +
                             std::to_string(nv) + " vertices)");
      }
      idx.push_back(static_cast<std::uint32_t>(v));
    }
    for (std::size_t j = 1; j + 1 < idx.size(); ++j) {
      mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
      mesh.part_labels.push_back(0);
    }
  }
  if (mesh.faces.empty()) throw ParseError(source, line_no, "mesh has no faces");
  return mesh;
}

std::vector<int> load_labels(const std::filesystem::path& path, std::size_t face_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file " + path.string());
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long v = 0;
    std::string rest;
    if (!(ls >> v) || (ls >> rest) || v < 0) {
      throw ParseError(path.string(), line_no, "expected one non-negative integer label");
    }
    labels.push_back(static_cast<int>(v));
  }
  if (labels.size() != face_count) {
    throw ParseError(path.string(), line_no,
                     std::to_string(labels.size()) + " labels for " + std::to_string(face_count) +
                         " triangles");
  }
  return labels;
}

Mesh load_off(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Mesh mesh = parse_off(in, path.string());
  auto label_path = path;
  label_path.replace_extension(".lbl");
  if (std::filesystem::exists(label_path)) {
    mesh.part_labels = load_labels(label_path, mesh.faces.size());
  }
  return mesh;
}

std::string format_off(const Mesh& mesh) {
  std::string out = "OFF\n" + std::to_string(mesh.vertices.size()) + " " +
                    std::to_string(mesh.faces.size()) + " 0\n";
  char buf[96];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", v[0], v[1], v[2]);
    out += buf;
  }
  for (const auto& f : mesh.faces) {
    out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  }
  return out;
}

void write_off(const Mesh& mesh, const std::filesystem::path& path) {
  mesh.validate();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_off(mesh);
  }
  auto label_path = path;
  label_path.replace_extension(".lbl");
  std::ofstream out(label_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + label_path.string());
  for (int l : mesh.part_labels) out << l << "\n";
}

Mesh normalize_mesh(const Mesh& mesh) {
  if (mesh.vertices.empty()) throw GeometryError("normalize_mesh: no vertices");
  Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
  for (const auto& v : mesh.vertices) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  const Vec3 center{(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  double radius = 0.0;
  for (const auto& v : mesh.vertices) {
    const double dx = v[0] - center[0], dy = v[1] - center[1], dz = v[2] - center[2];
    radius = std::max(radius, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  if (!(radius > 0.0)) throw GeometryError("normalize_mesh: zero-extent mesh");
  Mesh out = mesh;
  for (auto& v : out.vertices) {
    for (int a = 0; a < 3; ++a) v[a] = (v[a] - center[a]) / radius;
  }
  return out;
}

void append_cuboid(Mesh& mesh, const Vec3& lo, const Vec3& hi, int label) {
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
  for (int i = 0; i < 8; ++i) {
    mesh.vertices.push_back({(i & 1) ? hi[0] : lo[0], (i & 2) ? hi[1] : lo[1],
                             (i & 4) ? hi[2] : lo[2]});
  }
  // Outward-facing quads as corner indices (bit0 = x, bit1 = y, bit2 = z).
  static constexpr std::array<std::array<std::uint32_t, 4>, 6> kQuads{{
      {0, 4, 6, 2},  // -x
      {1, 3, 7, 5},  // +x
      {0, 1, 5, 4},  // -y
      {2, 6, 7, 3},  // +y
      {0, 2, 3, 1},  // -z
      {4, 5, 7, 6},  // +z
  }};
  for (const auto& q : kQuads) {
    mesh.faces.push_back({base + q[0], base + q[1], base + q[2]});
    mesh.faces.push_back({base + q[0], base + q[2], base + q[3]});
    mesh.part_labels.push_back(label);
    mesh.part_labels.push_back(label);
  }
}

Mesh rotate_y(const Mesh& mesh, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  Mesh out = mesh;
  for (auto& v : out.vertices) {
    const double x = v[0], z = v[2];
    v[0] = c * x + s * z;
    v[2] = -s * x + c * z;
  }
  return out;
}

}  // namespace fg3d
