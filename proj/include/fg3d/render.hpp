// SPDX-License-Identifier: Apache-2.0
//
// Software z-buffer rasterization of meshes into an azimuth-ordered view
// sequence, and ground-truth part boxes from flat part-colored renders.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "fg3d/bbox.hpp"
#include "fg3d/dataset.hpp"
#include "fg3d/image.hpp"
#include "fg3d/mesh.hpp"

namespace fg3d {

struct CameraRig {
  std::size_t views = 12;
  double elevation_deg = 30.0;
  double distance = 2.5;
  double fov_deg = 40.0;
  std::size_t image_size = 64;

  double azimuth_deg(std::size_t view) const {
    return 360.0 * static_cast<double>(view) / static_cast<double>(views);
  }
};

/// Pinhole camera on the rig's orbit, looking at the origin with +y up.
class Camera {
 public:
  Camera(const CameraRig& rig, std::size_t view);

  struct Projected {
    double px = 0.0;     // pixel x (0 = left edge)
    double py = 0.0;     // pixel y (0 = top edge)
    double depth = 0.0;  // distance along the viewing axis
  };
  Projected project(const Vec3& p) const;
  const Vec3& forward() const { return forward_; }

  static constexpr double kNear = 1e-3;

 private:
  Vec3 eye_{}, right_{}, up_{}, forward_{};
  double focal_ = 1.0;  // pixels per unit at depth 1
  double half_ = 0.0;
};

struct ViewSet {
  std::vector<Image> images;
  CameraRig rig;
};

/// Per-pixel z-buffer result: label of the visible face, or -1.
struct LabelImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<int> labels;
  std::vector<double> shade;  // headlight brightness of the visible face

  int at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
};

/// Rasterizes one view. Triangles with a vertex behind the near plane are
/// skipped; depth ties keep the earlier face.
LabelImage rasterize(const Mesh& mesh, const CameraRig& rig, std::size_t view);

/// Grayscale headlight shading (replicated to RGB), white background.
ViewSet render_views(const Mesh& mesh, const CameraRig& rig);
Image shade_image(const LabelImage& raster);

inline constexpr std::size_t kPaletteSize = 64;
std::array<std::uint8_t, 3> palette_color(int label);
/// Palette index for an 8-bit color, or -1 if it is not a palette entry.
int palette_index(std::array<std::uint8_t, 3> rgb);

/// Flat palette color per part label, shared z-buffer, white background.
ViewSet render_part_colored(const Mesh& mesh, const CameraRig& rig);
Image color_image(const LabelImage& raster);

struct LabeledBox {
  int part_label = 0;
  BBox box;
  bool operator==(const LabeledBox&) const = default;
};

/// Tight integer box per palette color present; background is skipped.
/// Throws DataError on pixels that are neither background nor palette.
std::vector<LabeledBox> extract_part_bboxes(const Image& colored);

/// Drops boxes whose area is < ratio × the largest area among boxes of the
/// same category. `category_of` maps a part label to its category; the
/// default treats every label as its own category.
std::vector<LabeledBox> clean_small_parts(std::vector<LabeledBox> boxes,
                                          const std::function<int(int)>& category_of = {},
                                          double ratio = 0.45);

/// Cleaned, class-agnostic ground-truth boxes for every view of a mesh.
std::vector<std::vector<BBox>> gsp_boxes_for_mesh(const Mesh& mesh, const CameraRig& rig,
                                                  const std::function<int(int)>& category_of);

/// GT CSV: header `view_index,x_min,y_min,x_max,y_max`, one row per GSP.
void write_gt_csv(const std::vector<std::vector<BBox>>& per_view, const std::filesystem::path& path);
std::vector<std::vector<BBox>> read_gt_csv(const std::filesystem::path& path, std::size_t views);

std::filesystem::path gt_path(const std::filesystem::path& gt_root, const DatasetEntry& entry);

/// Writes `<gt_root>/<subcategory>/<shape_id>.csv` for every shape in both
/// splits. Returns the number of files written.
std::size_t build_gsp_ground_truth(const Dataset& dataset, const CameraRig& rig,
                                   const std::filesystem::path& gt_root,
                                   const std::function<int(int)>& category_of);

}  // namespace fg3d
