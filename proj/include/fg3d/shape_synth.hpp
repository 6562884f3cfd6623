// SPDX-License-Identifier: Apache-2.0
//
// Procedural part-labeled shape families. Each part is a labeled cuboid;
// subcategories are disjoint regimes of the generator parameters.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fg3d/mesh.hpp"

namespace fg3d {

struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct SubcategorySpec {
  std::string name;
  std::map<std::string, ParamRange> ranges;
};

struct FamilySpec {
  std::string name;
  std::vector<std::string> part_names;     // index == part label
  std::vector<int> part_category;          // semantic category per label
  std::vector<std::string> category_names;
  std::vector<SubcategorySpec> subcategories;
};

/// Throws ConfigError for unknown family names.
const FamilySpec& family_spec(std::string_view family);
std::vector<std::string> family_names();

struct ShapeFamily {
  std::string family_id;
  std::size_t subcategory_id = 0;
};

using ShapeParams = std::map<std::string, double>;

/// Uniform draw of every parameter inside the subcategory's regime.
ShapeParams sample_parameters(const ShapeFamily& family, std::uint64_t seed);
Mesh build_shape(const ShapeFamily& family, const ShapeParams& params);
/// build_shape(sample_parameters(...)); a pure function of its inputs.
Mesh generate_shape(const ShapeFamily& family, std::uint64_t seed);

}  // namespace fg3d
