// SPDX-License-Identifier: Apache-2.0
#include "fg3d/render.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "fg3d/error.hpp"

namespace fg3d {

namespace {

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(dot3(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

constexpr std::array<std::uint8_t, 4> kLevels{0, 80, 160, 240};

// Shading keeps faces seen head-on distinguishable from the white background.
constexpr double kAmbient = 0.1;
constexpr double kDiffuse = 0.8;

}  // namespace

Camera::Camera(const CameraRig& rig, std::size_t view) {
  const double az = rig.azimuth_deg(view) * std::numbers::pi / 180.0;
  const double el = rig.elevation_deg * std::numbers::pi / 180.0;
  eye_ = {rig.distance * std::cos(el) * std::sin(az), rig.distance * std::sin(el),
          rig.distance * std::cos(el) * std::cos(az)};
  forward_ = normalized({-eye_[0], -eye_[1], -eye_[2]});
  right_ = normalized(cross3(forward_, {0.0, 1.0, 0.0}));
  up_ = cross3(right_, forward_);
  half_ = static_cast<double>(rig.image_size) / 2.0;
  focal_ = half_ / std::tan(rig.fov_deg * std::numbers::pi / 360.0);
}

Camera::Projected Camera::project(const Vec3& p) const {
  const Vec3 v = sub3(p, eye_);
  const double depth = dot3(v, forward_);
  return {half_ + focal_ * dot3(v, right_) / depth, half_ - focal_ * dot3(v, up_) / depth, depth};
}

LabelImage rasterize(const Mesh& mesh, const CameraRig& rig, std::size_t view) {
  mesh.validate();
  const Camera cam(rig, view);
  const std::size_t n = rig.image_size;
  LabelImage out{n, n, std::vector<int>(n * n, -1), std::vector<double>(n * n, 1.0)};
  std::vector<double> inv_depth(n * n, 0.0);

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& tri = mesh.faces[f];
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    const Camera::Projected p[3] = {cam.project(a), cam.project(b), cam.project(c)};
    if (p[0].depth <= Camera::kNear || p[1].depth <= Camera::kNear || p[2].depth <= Camera::kNear) {
      continue;
    }
    auto edge = [](const Camera::Projected& u, const Camera::Projected& v, double x, double y) {
      return (v.px - u.px) * (y - u.py) - (v.py - u.py) * (x - u.px);
    };
    double area = edge(p[0], p[1], p[2].px, p[2].py);
    if (std::fabs(area) < 1e-12) continue;
    const double sign = area > 0 ? 1.0 : -1.0;
    area *= sign;

    const Vec3 normal = cross3(sub3(b, a), sub3(c, a));
    const double nn = std::sqrt(dot3(normal, normal));
    const double shade =
        nn > 0 ? kAmbient + kDiffuse * std::fabs(dot3(normal, cam.forward())) / nn : kAmbient;

    const double min_x = std::min({p[0].px, p[1].px, p[2].px});
    const double max_x = std::max({p[0].px, p[1].px, p[2].px});
    const double min_y = std::min({p[0].py, p[1].py, p[2].py});
    const double max_y = std::max({p[0].py, p[1].py, p[2].py});
    const auto lo = [](double v) { return static_cast<long>(std::max(0.0, std::floor(v - 0.5))); };
    const auto hi = [n](double v) {
      return static_cast<long>(std::min(static_cast<double>(n) - 1, std::ceil(v - 0.5)));
    };
    for (long y = lo(min_y); y <= hi(max_y); ++y) {
      for (long x = lo(min_x); x <= hi(max_x); ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        const double w0 = sign * edge(p[1], p[2], cx, cy);
        const double w1 = sign * edge(p[2], p[0], cx, cy);
        const double w2 = sign * edge(p[0], p[1], cx, cy);
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double inv = (w0 / p[0].depth + w1 / p[1].depth + w2 / p[2].depth) / area;
        const std::size_t idx = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
        if (inv > inv_depth[idx]) {
          inv_depth[idx] = inv;
          out.labels[idx] = mesh.part_labels[f];
          out.shade[idx] = shade;
        }
      }
    }
  }
  return out;
}

Image shade_image(const LabelImage& raster) {
  Image img(raster.width, raster.height, 1.0);
  for (std::size_t i = 0; i < raster.labels.size(); ++i) {
    if (raster.labels[i] < 0) continue;
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = raster.shade[i];
  }
  return img;
}

ViewSet render_views(const Mesh& mesh, const CameraRig& rig) {
  ViewSet vs{{}, rig};
  for (std::size_t v = 0; v < rig.views; ++v) vs.images.push_back(shade_image(rasterize(mesh, rig, v)));
  return vs;
}

std::array<std::uint8_t, 3> palette_color(int label) {
  if (label < 0 || label >= static_cast<int>(kPaletteSize)) {
    throw ConfigError("part label " + std::to_string(label) + " exceeds palette of " +
                      std::to_string(kPaletteSize) + " colors");
  }
  return {kLevels[(label >> 4) & 3], kLevels[(label >> 2) & 3], kLevels[label & 3]};
}

int palette_index(std::array<std::uint8_t, 3> rgb) {
  int idx = 0;
  for (int c = 0; c < 3; ++c) {
    const auto it = std::find(kLevels.begin(), kLevels.end(), rgb[c]);
    if (it == kLevels.end()) return -1;
    idx = idx * 4 + static_cast<int>(it - kLevels.begin());
  }
  return idx;
}

Image color_image(const LabelImage& raster) {
  Image img(raster.width, raster.height, 1.0);
  for (std::size_t y = 0; y < raster.height; ++y) {
    for (std::size_t x = 0; x < raster.width; ++x) {
      const int l = raster.at(x, y);
      if (l >= 0) img.set_rgb8(x, y, palette_color(l));
    }
  }
  return img;
}

ViewSet render_part_colored(const Mesh& mesh, const CameraRig& rig) {
  for (int l : mesh.distinct_labels()) palette_color(l);  // validates label range
  ViewSet vs{{}, rig};
  for (std::size_t v = 0; v < rig.views; ++v) vs.images.push_back(color_image(rasterize(mesh, rig, v)));
  return vs;
}

std::vector<LabeledBox> extract_part_bboxes(const Image& colored) {
  struct Extent {
    std::size_t x0, y0, x1, y1;
  };
  std::map<int, Extent> extents;
  for (std::size_t y = 0; y < colored.height; ++y) {
    for (std::size_t x = 0; x < colored.width; ++x) {
      const auto rgb = colored.rgb8(x, y);
      if (rgb == std::array<std::uint8_t, 3>{255, 255, 255}) continue;
      const int label = palette_index(rgb);
      if (label < 0) {
        throw DataError("off-palette pixel at (" + std::to_string(x) + "," + std::to_string(y) + ")");
      }
      auto [it, fresh] = extents.try_emplace(label, Extent{x, y, x, y});
      if (!fresh) {
        auto& e = it->second;
        e.x0 = std::min(e.x0, x);
        e.y0 = std::min(e.y0, y);
        e.x1 = std::max(e.x1, x);
        e.y1 = std::max(e.y1, y);
      }
    }
  }
  std::vector<LabeledBox> out;
  for (const auto& [label, e] : extents) {
    out.push_back({label, BBox{static_cast<double>(e.x0), static_cast<double>(e.y0),
                               static_cast<double>(e.x1 + 1), static_cast<double>(e.y1 + 1)}});
  }
  return out;
}

std::vector<LabeledBox> clean_small_parts(std::vector<LabeledBox> boxes,
                                          const std::function<int(int)>& category_of, double ratio) {
  auto category = [&](int label) { return category_of ? category_of(label) : label; };
  std::map<int, double> max_area;
  for (const auto& b : boxes) {
    double& m = max_area[category(b.part_label)];
    m = std::max(m, b.box.area());
  }
  std::erase_if(boxes, [&](const LabeledBox& b) {
    return b.box.area() < ratio * max_area[category(b.part_label)];
  });
  return boxes;
}

std::vector<std::vector<BBox>> gsp_boxes_for_mesh(const Mesh& mesh, const CameraRig& rig,
                                                  const std::function<int(int)>& category_of) {
  const ViewSet colored = render_part_colored(mesh, rig);
  std::vector<std::vector<BBox>> out;
  for (const auto& img : colored.images) {
    std::vector<BBox> view;
    for (const auto& lb : clean_small_parts(extract_part_bboxes(img), category_of)) {
      view.push_back(lb.box);
    }
    out.push_back(std::move(view));
  }
  return out;
}

void write_gt_csv(const std::vector<std::vector<BBox>>& per_view, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "view_index,x_min,y_min,x_max,y_max\n";
  for (std::size_t v = 0; v < per_view.size(); ++v) {
    for (const auto& b : per_view[v]) {
      out << v << "," << b.x_min << "," << b.y_min << "," << b.x_max << "," << b.y_max << "\n";
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::vector<BBox>> read_gt_csv(const std::filesystem::path& path, std::size_t views) {
  std::ifstream in(path);
  if (!in) throw DataError("missing GSP ground truth " + path.string());
  std::vector<std::vector<BBox>> out(views);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::size_t v = 0;
    BBox b;
    if (!(ls >> v >> b.x_min >> b.y_min >> b.x_max >> b.y_max) || v >= views || !b.valid()) {
      throw ParseError(path.string(), line_no, "malformed ground-truth row");
    }
    out[v].push_back(b);
  }
  return out;
}

std::filesystem::path gt_path(const std::filesystem::path& gt_root, const DatasetEntry& entry) {
  return gt_root / entry.subcategory / (entry.shape_id + ".csv");
}

std::size_t build_gsp_ground_truth(const Dataset& dataset, const CameraRig& rig,
                                   const std::filesystem::path& gt_root,
                                   const std::function<int(int)>& category_of) {
  std::size_t written = 0;
  for (const auto* split : {&dataset.train, &dataset.test}) {
    for (const auto& e : *split) {
      const Mesh mesh = load_off(dataset.path_of(e));
      const auto boxes = gsp_boxes_for_mesh(mesh, rig, category_of);
      std::filesystem::create_directories(gt_root / e.subcategory);
      write_gt_csv(boxes, gt_path(gt_root, e));
      ++written;
    }
  }
  return written;
}

}  // namespace fg3d
