// SPDX-License-Identifier: Apache-2.0
#include "fg3d/shape_synth.hpp"

#include <random>

#include "fg3d/error.hpp"

namespace fg3d {

namespace {

std::vector<FamilySpec> make_families() {
  std::vector<FamilySpec> out;

  FamilySpec chair;
  chair.name = "chair";
  chair.part_names = {"seat", "back", "leg_fl", "leg_fr", "leg_bl", "leg_br"};
  chair.part_category = {0, 1, 2, 2, 2, 2};
  chair.category_names = {"seat", "back", "leg"};
  const std::map<std::string, ParamRange> chair_common{
      {"seat_w", {0.9, 1.1}}, {"seat_d", {0.9, 1.1}}, {"seat_t", {0.08, 0.12}},
      {"leg_t", {0.14, 0.18}}, {"back_t", {0.08, 0.12}}};
  auto chair_sub = [&](std::string name, ParamRange back_h, ParamRange leg_h) {
    SubcategorySpec s{std::move(name), chair_common};
    s.ranges["back_h"] = back_h;
    s.ranges["leg_h"] = leg_h;
    return s;
  };
  chair.subcategories = {chair_sub("tall_back", {1.0, 1.3}, {0.7, 0.9}),
                         chair_sub("low_back", {0.35, 0.55}, {0.7, 0.9}),
                         chair_sub("high_stool", {0.35, 0.55}, {1.3, 1.6})};
  out.push_back(std::move(chair));

  FamilySpec table;
  table.name = "table";
  table.part_names = {"top", "leg_fl", "leg_fr", "leg_bl", "leg_br"};
  table.part_category = {0, 1, 1, 1, 1};
  table.category_names = {"top", "leg"};
  const std::map<std::string, ParamRange> table_common{
      {"top_d", {0.8, 1.0}}, {"top_t", {0.08, 0.12}}, {"leg_t", {0.12, 0.16}}};
  auto table_sub = [&](std::string name, ParamRange top_w, ParamRange leg_h) {
    SubcategorySpec s{std::move(name), table_common};
    s.ranges["top_w"] = top_w;
    s.ranges["leg_h"] = leg_h;
    return s;
  };
  table.subcategories = {table_sub("coffee", {1.4, 1.7}, {0.3, 0.45}),
                         table_sub("dining", {1.4, 1.7}, {0.8, 1.0}),
                         table_sub("bar", {0.7, 0.9}, {1.2, 1.5})};
  out.push_back(std::move(table));

  FamilySpec plane;
  plane.name = "plane";
  plane.part_names = {"body", "wing_l", "wing_r", "tail"};
  plane.part_category = {0, 1, 1, 2};
  plane.category_names = {"body", "wing", "tail"};
  const std::map<std::string, ParamRange> plane_common{
      {"body_l", {2.0, 2.4}}, {"body_w", {0.25, 0.35}}, {"wing_c", {0.4, 0.55}},
      {"wing_t", {0.06, 0.09}}, {"tail_c", {0.25, 0.35}}};
  auto plane_sub = [&](std::string name, ParamRange span, ParamRange tail_h) {
    SubcategorySpec s{std::move(name), plane_common};
    s.ranges["wing_span"] = span;
    s.ranges["tail_h"] = tail_h;
    return s;
  };
  plane.subcategories = {plane_sub("short_span", {0.7, 0.9}, {0.25, 0.4}),
                         plane_sub("long_span", {1.5, 1.8}, {0.25, 0.4}),
                         plane_sub("high_tail", {0.7, 0.9}, {0.6, 0.8})};
  out.push_back(std::move(plane));
  return out;
}

const std::vector<FamilySpec>& families() {
  static const std::vector<FamilySpec> kFamilies = make_families();
  return kFamilies;
}

const SubcategorySpec& subcategory(const ShapeFamily& family) {
  const FamilySpec& spec = family_spec(family.family_id);
  if (family.subcategory_id >= spec.subcategories.size()) {
    throw ConfigError("family '" + family.family_id + "' has no subcategory " +
                      std::to_string(family.subcategory_id));
  }
  return spec.subcategories[family.subcategory_id];
}

// Portable uniform in [0, 1]: 53 random bits, no library distribution.
double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double param(const ShapeParams& p, const char* name) {
  auto it = p.find(name);
  if (it == p.end()) throw ConfigError(std::string("missing shape parameter '") + name + "'");
  return it->second;
}

Mesh build_chair(const ShapeParams& p) {
  const double sw = param(p, "seat_w"), sd = param(p, "seat_d"), st = param(p, "seat_t");
  const double lh = param(p, "leg_h"), lt = param(p, "leg_t");
  const double bh = param(p, "back_h"), bt = param(p, "back_t");
  Mesh m;
  append_cuboid(m, {-sw / 2, lh, -sd / 2}, {sw / 2, lh + st, sd / 2}, 0);
  append_cuboid(m, {-sw / 2, lh + st, -sd / 2}, {sw / 2, lh + st + bh, -sd / 2 + bt}, 1);
  int label = 2;
  for (double zs : {1.0, -1.0}) {
    for (double xs : {-1.0, 1.0}) {
      const double x0 = xs < 0 ? -sw / 2 : sw / 2 - lt;
      const double z0 = zs < 0 ? -sd / 2 : sd / 2 - lt;
      append_cuboid(m, {x0, 0.0, z0}, {x0 + lt, lh, z0 + lt}, label++);
    }
  }
  return m;
}

Mesh build_table(const ShapeParams& p) {
  const double tw = param(p, "top_w"), td = param(p, "top_d"), tt = param(p, "top_t");
  const double lh = param(p, "leg_h"), lt = param(p, "leg_t");
  Mesh m;
  append_cuboid(m, {-tw / 2, lh, -td / 2}, {tw / 2, lh + tt, td / 2}, 0);
  int label = 1;
  for (double zs : {1.0, -1.0}) {
    for (double xs : {-1.0, 1.0}) {
      const double x0 = xs < 0 ? -tw / 2 + lt / 2 : tw / 2 - 1.5 * lt;
      const double z0 = zs < 0 ? -td / 2 + lt / 2 : td / 2 - 1.5 * lt;
      append_cuboid(m, {x0, 0.0, z0}, {x0 + lt, lh, z0 + lt}, label++);
    }
  }
  return m;
}

Mesh build_plane(const ShapeParams& p) {
  const double bl = param(p, "body_l"), bw = param(p, "body_w");
  const double span = param(p, "wing_span"), wc = param(p, "wing_c"), wt = param(p, "wing_t");
  const double th = param(p, "tail_h"), tc = param(p, "tail_c");
  Mesh m;
  // Body along z, nose at +z.
  append_cuboid(m, {-bw / 2, -bw / 2, -bl / 2}, {bw / 2, bw / 2, bl / 2}, 0);
  const double wz = 0.05 * bl;
  append_cuboid(m, {-bw / 2 - span, -wt / 2, wz - wc / 2}, {-bw / 2, wt / 2, wz + wc / 2}, 1);
  append_cuboid(m, {bw / 2, -wt / 2, wz - wc / 2}, {bw / 2 + span, wt / 2, wz + wc / 2}, 2);
  append_cuboid(m, {-wt / 2, bw / 2, -bl / 2}, {wt / 2, bw / 2 + th, -bl / 2 + tc}, 3);
  return m;
}

}  // namespace

const FamilySpec& family_spec(std::string_view family) {
  for (const auto& f : families()) {
    if (f.name == family) return f;
  }
  throw ConfigError("unknown shape family '" + std::string(family) + "'");
}

std::vector<std::string> family_names() {
  std::vector<std::string> out;
  for (const auto& f : families()) out.push_back(f.name);
  return out;
}

ShapeParams sample_parameters(const ShapeFamily& family, std::uint64_t seed) {
  const SubcategorySpec& sub = subcategory(family);
  // Mix in the subcategory so equal seeds across regimes stay uncorrelated.
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (family.subcategory_id + 1)));
  ShapeParams out;
  for (const auto& [name, range] : sub.ranges) {
    out[name] = range.lo + (range.hi - range.lo) * unit_draw(rng);
  }
  return out;
}

Mesh build_shape(const ShapeFamily& family, const ShapeParams& params) {
  const FamilySpec& spec = family_spec(family.family_id);
  if (spec.name == "chair") return build_chair(params);
  if (spec.name == "table") return build_table(params);
  return build_plane(params);
}

Mesh generate_shape(const ShapeFamily& family, std::uint64_t seed) {
  return build_shape(family, sample_parameters(family, seed));
}

}  // namespace fg3d
