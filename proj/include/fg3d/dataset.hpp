// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset layout:
//   <root>/<subcategory>/<shape_id>.off (+ .lbl)
//   <root>/train.txt, <root>/test.txt   relative .off paths, one per line
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fg3d {

struct DatasetEntry {
  std::string rel_path;  // "<subcategory>/<shape_id>.off"
  std::string subcategory;
  std::string shape_id;
  std::size_t label = 0;  // index into Dataset::classes
};

struct Dataset {
  std::filesystem::path root;
  std::vector<std::string> classes;  // sorted subcategory names
  std::vector<DatasetEntry> train;
  std::vector<DatasetEntry> test;
  std::vector<DatasetEntry> val;  // empty unless carved out of train

  std::filesystem::path path_of(const DatasetEntry& e) const { return root / e.rel_path; }
  const std::vector<DatasetEntry>& split(const std::string& name) const;
};

/// Reads train.txt / test.txt. Throws DataError when listings are missing
/// or name files that do not exist.
Dataset load_dataset(const std::filesystem::path& root);

struct GenerateOptions {
  std::string family = "chair";
  std::size_t shapes_per_subcategory = 20;
  std::size_t test_per_subcategory = 5;
  std::uint64_t seed = 1;
};

/// Writes normalized generated meshes for every subcategory of the family
/// and the split listings. Output is a pure function of the options.
Dataset generate_dataset(const GenerateOptions& options, const std::filesystem::path& root);

/// Moves the last floor(fraction × n) training shapes of every class into
/// `val`. fraction must lie in [0, 1).
void carve_validation(Dataset& dataset, double fraction);

/// Per-shape seed derived from the dataset seed.
std::uint64_t shape_seed(std::uint64_t dataset_seed, std::size_t subcategory, std::size_t index);

}  // namespace fg3d
