// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: line-oriented `key = value` text, `#` starts a comment,
// lists are comma-separated. Unknown keys are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fg3d/attention.hpp"
#include "fg3d/detector.hpp"
#include "fg3d/render.hpp"

namespace fg3d {

struct Config {
  // data
  std::string family = "chair";
  std::size_t shapes_per_subcategory = 20;
  std::size_t test_per_subcategory = 5;
  std::uint64_t seed = 1;
  std::string dataset_root = "data";
  std::string out_dir = "out";
  // views
  std::size_t views = 12;
  std::size_t image_size = 64;
  // detector
  std::vector<std::size_t> backbone_channels{16, 32};  // blocks before the last
  std::size_t feature_channels = 64;                   // D, channels of the last block
  std::string backbone_padding = "same";
  std::vector<double> anchor_scales{1, 2, 4, 8, 16, 32};
  std::vector<std::string> anchor_ratios{"1:1", "1:2", "2:1"};
  double s_d = 0.7;
  double lambda = 1.0;
  std::size_t head_hidden = 512;
  std::size_t anchor_batch = 64;
  bool smooth_l1 = false;
  bool nms = false;
  // attention
  std::size_t k_parts = 5;
  std::size_t hidden_dim = 128;
  std::string attention_mode = "full";
  double psi = 1.0;
  // training
  double lr = 1e-5;
  std::size_t batch = 1;
  std::size_t rounds = 4;
  std::size_t epochs_per_phase = 5;
  std::size_t recall_top_n = 100;
  double val_fraction = 0.0;  // share of each class's training shapes held out
  std::size_t threads = 1;

  bool operator==(const Config&) const = default;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  CameraRig rig() const;
  DetectorConfig detector() const;
  AttentionDims attention_dims(std::size_t classes) const;
  AttentionMode mode() const { return parse_attention_mode(attention_mode); }
};

/// Parses config text; `source` is used in error messages. Fields not
/// mentioned keep their defaults. The result is validated.
Config parse_config(const std::string& text, const std::string& source = "<config>");
Config load_config(const std::filesystem::path& path);
/// Every field, one per line, in a fixed order; doubles keep 17 digits.
std::string serialize_config(const Config& config);

}  // namespace fg3d
