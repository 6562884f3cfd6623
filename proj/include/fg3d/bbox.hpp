// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

namespace fg3d {

/// Axis-aligned box in pixel coordinates; max edges are exclusive.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  BBox clipped(double width_limit, double height_limit) const {
    return {std::clamp(x_min, 0.0, width_limit), std::clamp(y_min, 0.0, height_limit),
            std::clamp(x_max, 0.0, width_limit), std::clamp(y_max, 0.0, height_limit)};
  }

  bool operator==(const BBox&) const = default;
};

}  // namespace fg3d
