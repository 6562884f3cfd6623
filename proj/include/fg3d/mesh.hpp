// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fg3d {

using Vec3 = std::array<double, 3>;
using Triangle = std::array<std::uint32_t, 3>;

/// Triangle mesh with one part label per face.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> faces;
  std::vector<int> part_labels;

  /// Throws GeometryError when indices, label count or face count are bad.
  void validate() const;
  std::vector<int> distinct_labels() const;
};

/// Parses ASCII OFF text. Polygons are fan-triangulated from their first
/// vertex; every face gets label 0.
Mesh parse_off(std::istream& in, const std::string& source = "<stream>");

/// Loads `path` and, when `<path without extension>.lbl` exists, its labels.
Mesh load_off(const std::filesystem::path& path);

/// Reads a label sidecar (one integer per line) for `face_count` faces.
std::vector<int> load_labels(const std::filesystem::path& path, std::size_t face_count);

/// Writes `path` as OFF with 9 significant digits, plus the `.lbl` sidecar.
void write_off(const Mesh& mesh, const std::filesystem::path& path);
std::string format_off(const Mesh& mesh);

/// Centers the bounding box at the origin and scales the bounding sphere
/// (around that center) to radius 1.
Mesh normalize_mesh(const Mesh& mesh);

/// Axis-aligned cuboid given min/max corners; 8 vertices, 12 faces.
void append_cuboid(Mesh& mesh, const Vec3& lo, const Vec3& hi, int label);

/// Rotation about +y by `degrees`.
Mesh rotate_y(const Mesh& mesh, double degrees);

}  // namespace fg3d
