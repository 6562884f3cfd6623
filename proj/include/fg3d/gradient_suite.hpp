// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of every differentiable op and of the composed
// detection and classification paths.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fg3d/config.hpp"
#include "fg3d/optim.hpp"

namespace fg3d {

struct GradientCase {
  std::string name;
  GradCheckResult result;
};

struct GradientSuiteOptions {
  double h = 1e-5;
  std::uint64_t seed = 11;
  /// Coordinates probed per tensor in the composed cases; 0 means all.
  std::size_t composed_coords = 6;
  /// Size of the composed classification instance. The backbone and image
  /// size come from the config; these replace D, H, K, V and C.
  std::size_t composed_views = 4;
  std::size_t composed_parts = 3;
  std::size_t composed_feature = 6;
  std::size_t composed_hidden = 8;
  std::size_t composed_classes = 3;
  /// Upper end of the uniform pixel range of the classification images.
  /// Summed part features grow with it; large values saturate the gates
  /// and push gradients below what central differences resolve.
  double composed_image_scale = 0.1;
};

/// Op-level cases on small random inputs, every coordinate probed.
std::vector<GradientCase> op_gradient_cases(const GradientSuiteOptions& options = {});

/// Detection loss through backbone and heads, and the classification loss
/// from images through backbone, RoI pooling of fixed proposals and the
/// attention branch (one case per attention mode). These pass through
/// ReLU and max units, so coordinates sitting on a kink are skipped.
std::vector<GradientCase> composed_gradient_cases(const Config& config, const GradientSuiteOptions& options = {});

double max_rel_error(const std::vector<GradientCase>& cases);

/// Share of probed coordinates skipped as non-differentiable within ±h.
double kink_fraction(const std::vector<GradientCase>& cases);

}  // namespace fg3d
