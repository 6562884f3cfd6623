// SPDX-License-Identifier: Apache-2.0
#include "fg3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "fg3d/error.hpp"
#include "fg3d/mesh.hpp"
#include "fg3d/shape_synth.hpp"

namespace fg3d {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_listing(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing split listing " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

DatasetEntry make_entry(const std::string& rel) {
  const fs::path p(rel);
  if (p.parent_path().empty() || p.extension() != ".off") {
    throw DataError("listing entry '" + rel + "' is not <subcategory>/<shape_id>.off");
  }
  return {rel, p.parent_path().generic_string(), p.stem().string(), 0};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

const std::vector<DatasetEntry>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  if (name == "val") return val;
  throw DataError("unknown split '" + name + "'");
}

void carve_validation(Dataset& dataset, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1), got " + std::to_string(fraction));
  }
  std::vector<DatasetEntry> keep;
  for (std::size_t c = 0; c < dataset.classes.size(); ++c) {
    std::vector<DatasetEntry> members;
    for (const auto& e : dataset.train) {
      if (e.label == c) members.push_back(e);
    }
    const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i + n_val < members.size() ? keep : dataset.val).push_back(members[i]);
    }
  }
  // Preserve the listing order of the remaining training shapes.
  std::vector<DatasetEntry> train;
  for (const auto& e : dataset.train) {
    for (const auto& k : keep) {
      if (k.rel_path == e.rel_path) {
        train.push_back(e);
        break;
      }
    }
  }
  dataset.train = std::move(train);
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.root = root;
  std::set<std::string> classes;
  for (const auto* split : {"train", "test"}) {
    auto& dst = std::string(split) == "train" ? ds.train : ds.test;
    for (const auto& rel : read_listing(root / (std::string(split) + ".txt"))) {
      DatasetEntry e = make_entry(rel);
      if (!fs::exists(root / rel)) throw DataError("listed shape missing: " + (root / rel).string());
      classes.insert(e.subcategory);
      dst.push_back(std::move(e));
    }
  }
  ds.classes.assign(classes.begin(), classes.end());
  for (auto* split : {&ds.train, &ds.test}) {
    for (auto& e : *split) {
      e.label = static_cast<std::size_t>(
          std::lower_bound(ds.classes.begin(), ds.classes.end(), e.subcategory) -
          ds.classes.begin());
    }
  }
  return ds;
}

std::uint64_t shape_seed(std::uint64_t dataset_seed, std::size_t subcategory, std::size_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ splitmix64((subcategory << 32) | index));
}

Dataset generate_dataset(const GenerateOptions& options, const fs::path& root) {
  const FamilySpec& spec = family_spec(options.family);
  if (options.shapes_per_subcategory == 0 ||
      options.test_per_subcategory >= options.shapes_per_subcategory) {
    throw ConfigError("need 0 <= test_per_subcategory < shapes_per_subcategory");
  }
  fs::create_directories(root);
  std::ofstream train(root / "train.txt", std::ios::binary);
  std::ofstream test(root / "test.txt", std::ios::binary);
  if (!train || !test) throw IoError("cannot write split listings under " + root.string());
  const std::size_t n_train = options.shapes_per_subcategory - options.test_per_subcategory;
  for (std::size_t s = 0; s < spec.subcategories.size(); ++s) {
    const std::string& sub = spec.subcategories[s].name;
    fs::create_directories(root / sub);
    for (std::size_t i = 0; i < options.shapes_per_subcategory; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%03zu", sub.c_str(), i);
      const std::string rel = sub + "/" + id + ".off";
      const Mesh mesh =
          normalize_mesh(generate_shape({options.family, s}, shape_seed(options.seed, s, i)));
      write_off(mesh, root / rel);
      (i < n_train ? train : test) << rel << "\n";
    }
  }
  train.close();
  test.close();
  return load_dataset(root);
}

}  // namespace fg3d
