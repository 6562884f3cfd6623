// SPDX-License-Identifier: Apache-2.0
#include "fg3d/render.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "fg3d/dataset.hpp"
#include "fg3d/error.hpp"
#include "fg3d/image.hpp"
#include "fg3d/shape_synth.hpp"
#include "test_util.hpp"

namespace fg3d {
namespace {

// --- independent ray-cast oracle ------------------------------------------

struct Ray {
  Vec3 origin, dir;
};

Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 unit(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

Ray pixel_ray(const CameraRig& rig, std::size_t view, double px, double py) {
  const double az = 2 * std::numbers::pi * static_cast<double>(view) / static_cast<double>(rig.views);
  const double el = rig.elevation_deg * std::numbers::pi / 180;
  const Vec3 eye{rig.distance * std::cos(el) * std::sin(az), rig.distance * std::sin(el),
                 rig.distance * std::cos(el) * std::cos(az)};
  const Vec3 fwd = unit({-eye[0], -eye[1], -eye[2]});
  const Vec3 right = unit(cross(fwd, {0, 1, 0}));
  const Vec3 up = cross(right, fwd);
  const double half = rig.image_size / 2.0;
  const double t = std::tan(rig.fov_deg * std::numbers::pi / 360);
  const double u = (px - half) / half * t, v = (half - py) / half * t;
  return {eye, unit({fwd[0] + u * right[0] + v * up[0], fwd[1] + u * right[1] + v * up[1],
                     fwd[2] + u * right[2] + v * up[2]})};
}

// Möller–Trumbore; returns hit distance or +inf.
double intersect(const Ray& r, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = cross(r.dir, e2);
  const double det = dot(e1, p);
  if (std::fabs(det) < 1e-14) return INFINITY;
  const Vec3 s = r.origin - a;
  const double u = dot(s, p) / det;
  if (u < 0 || u > 1) return INFINITY;
  const Vec3 q = cross(s, e1);
  const double v = dot(r.dir, q) / det;
  if (v < 0 || u + v > 1) return INFINITY;
  const double t = dot(e2, q) / det;
  return t > 0 ? t : INFINITY;
}

std::vector<int> raycast_labels(const Mesh& m, const CameraRig& rig, std::size_t view) {
  const std::size_t n = rig.image_size;
  std::vector<int> out(n * n, -1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Ray r = pixel_ray(rig, view, x + 0.5, y + 0.5);
      double best = INFINITY;
      for (std::size_t f = 0; f < m.faces.size(); ++f) {
        const auto& t = m.faces[f];
        const double d = intersect(r, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
        if (d < best) {
          best = d;
          out[y * n + x] = m.part_labels[f];
        }
      }
    }
  return out;
}

bool is_white(const Image& img, std::size_t x, std::size_t y) {
  return img.at(x, y, 0) == 1.0 && img.at(x, y, 1) == 1.0 && img.at(x, y, 2) == 1.0;
}

// --- tests ----------------------------------------------------------------

TEST(Render, DefaultRigGivesTwelveViews) {
  const Mesh m = normalize_mesh(generate_shape({"chair", 0}, 1));
  const ViewSet vs = render_views(m, CameraRig{});
  ASSERT_EQ(vs.images.size(), 12u);
  for (const auto& img : vs.images) {
    EXPECT_EQ(img.width, 64u);
    EXPECT_EQ(img.height, 64u);
    for (double v : img.pixels) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
      EXPECT_EQ(img.pixels[i], img.pixels[i + 1]);
      EXPECT_EQ(img.pixels[i], img.pixels[i + 2]);
    }
  }
}

TEST(Render, CubeSilhouetteMatchesAnalyticProjection) {
  Mesh cube;
  append_cuboid(cube, {-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}, 0);
  CameraRig rig;
  rig.elevation_deg = 0;
  rig.image_size = 65;
  const Image img = render_views(cube, rig).images[0];
  long x0 = 1000, x1 = -1, y0 = 1000, y1 = -1;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (!is_white(img, x, y)) {
        x0 = std::min<long>(x0, x), x1 = std::max<long>(x1, x);
        y0 = std::min<long>(y0, y), y1 = std::max<long>(y1, y);
      }
  // Front face at depth 2.0 bounds the silhouette: half-width 0.5/2.0 of the tangent plane.
  const double half = rig.image_size / 2.0;
  const double f = half / std::tan(rig.fov_deg * std::numbers::pi / 360);
  const double ext = f * 0.5 / 2.0;
  EXPECT_NEAR(x0, half - ext, 1.0);
  EXPECT_NEAR(x1 + 1, half + ext, 1.0);
  EXPECT_NEAR(y0, half - ext, 1.0);
  EXPECT_NEAR(y1 + 1, half + ext, 1.0);
  EXPECT_LE(std::abs((x0 + x1 + 1) - 2 * half), 1.0);
  EXPECT_LE(std::abs((y0 + y1 + 1) - 2 * half), 1.0);
}

TEST(Render, ProjectionMatchesRayOracle) {
  CameraRig rig;
  for (std::size_t view = 0; view < 12; view += 5) {
    const Camera cam(rig, view);
    const Vec3 p{0.3, -0.2, 0.4};
    const auto pr = cam.project(p);
    const Ray r = pixel_ray(rig, view, pr.px, pr.py);
    // p must lie on the ray through its projected pixel.
    const Vec3 d = p - r.origin;
    const Vec3 c = cross(d, r.dir);
    EXPECT_LT(std::sqrt(dot(c, c)), 1e-12);
  }
}

TEST(Render, SceneBehindCameraIsBlank) {
  Mesh m;
  append_cuboid(m, {-0.5, -0.5, 4.0}, {0.5, 0.5, 5.0}, 0);
  const Image img = render_views(m, CameraRig{}).images[0];
  for (double v : img.pixels) EXPECT_EQ(v, 1.0);
}

TEST(Render, DeterministicBitIdentical) {
  const Mesh m = normalize_mesh(generate_shape({"plane", 2}, 8));
  const auto a = render_views(m, CameraRig{});
  const auto b = render_views(m, CameraRig{});
  for (std::size_t v = 0; v < 12; ++v) EXPECT_TRUE(a.images[v] == b.images[v]);
}

TEST(Render, ZBufferAgreesWithRayCastOracle) {
  CameraRig rig;
  rig.image_size = 32;
  for (const auto& fam : family_names()) {
    const Mesh m = normalize_mesh(generate_shape({fam, 1}, 17));
    for (std::size_t view = 0; view < rig.views; view += 3) {
      const auto got = rasterize(m, rig, view).labels;
      const auto want = raycast_labels(m, rig, view);
      std::size_t diff = 0;
      for (std::size_t i = 0; i < got.size(); ++i) diff += got[i] != want[i];
      EXPECT_LE(diff, 2u) << fam << " view " << view;  // exact-edge pixel centers only
    }
  }
}

TEST(Render, RotationByAzimuthStepShiftsSequence) {
  CameraRig rig;
  rig.image_size = 48;
  const Mesh m = normalize_mesh(generate_shape({"chair", 2}, 3));
  const Mesh r = rotate_y(m, 360.0 / rig.views);
  const auto a = render_views(m, rig);
  const auto b = render_views(r, rig);
  for (std::size_t v = 0; v < rig.views; ++v) {
    const Image& orig = a.images[v];
    const Image& rot = b.images[(v + 1) % rig.views];
    for (std::size_t y = 0; y < orig.height; ++y)
      for (std::size_t x = 0; x < orig.width; ++x) {
        if (std::fabs(orig.at(x, y, 0) - rot.at(x, y, 0)) < 1e-9) continue;
        // Mismatch allowed only on boundaries: a 3x3 neighbour must match.
        bool near = false;
        for (long dy = -1; dy <= 1 && !near; ++dy)
          for (long dx = -1; dx <= 1 && !near; ++dx) {
            const long xx = static_cast<long>(x) + dx, yy = static_cast<long>(y) + dy;
            if (xx < 0 || yy < 0 || xx >= static_cast<long>(orig.width) || yy >= static_cast<long>(orig.height))
              continue;
            near = std::fabs(orig.at(xx, yy, 0) - rot.at(x, y, 0)) < 1e-9;
          }
        EXPECT_TRUE(near) << "view " << v << " pixel " << x << "," << y;
      }
  }
}

TEST(Palette, DistinctNonWhiteAndInvertible) {
  std::set<std::array<std::uint8_t, 3>> seen;
  for (int l = 0; l < static_cast<int>(kPaletteSize); ++l) {
    const auto c = palette_color(l);
    EXPECT_NE(c, (std::array<std::uint8_t, 3>{255, 255, 255}));
    EXPECT_EQ(palette_index(c), l);
    seen.insert(c);
  }
  EXPECT_EQ(seen.size(), kPaletteSize);
  EXPECT_THROW(palette_color(64), ConfigError);
  Mesh m;
  append_cuboid(m, {0, 0, 0}, {0.1, 0.1, 0.1}, 70);
  EXPECT_THROW(render_part_colored(m, CameraRig{}), ConfigError);
}

std::set<std::array<std::uint8_t, 3>> colors_in(const Image& img) {
  std::set<std::array<std::uint8_t, 3>> out;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (img.rgb8(x, y) != std::array<std::uint8_t, 3>{255, 255, 255}) out.insert(img.rgb8(x, y));
  return out;
}

TEST(PartColored, SingleAndDisjointParts) {
  Mesh one;
  append_cuboid(one, {-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}, 4);
  EXPECT_EQ(colors_in(render_part_colored(one, CameraRig{}).images[0]).size(), 1u);
  Mesh two;
  append_cuboid(two, {-0.9, -0.3, -0.3}, {-0.3, 0.3, 0.3}, 0);
  append_cuboid(two, {0.3, -0.3, -0.3}, {0.9, 0.3, 0.3}, 1);
  const Image img = render_part_colored(two, CameraRig{}).images[0];
  EXPECT_EQ(colors_in(img).size(), 2u);
  const auto boxes = extract_part_bboxes(img);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_LE(boxes[0].box.x_max, boxes[1].box.x_min);  // no shared pixels
}

TEST(PartColored, VisibleColorCountMatchesOracle) {
  CameraRig rig;
  rig.image_size = 32;
  const Mesh m = normalize_mesh(generate_shape({"chair", 0}, 21));
  const auto colored = render_part_colored(m, rig);
  for (std::size_t v = 0; v < rig.views; ++v) {
    const auto raster = rasterize(m, rig, v);
    std::set<int> visible(raster.labels.begin(), raster.labels.end());
    visible.erase(-1);
    EXPECT_EQ(colors_in(colored.images[v]).size(), visible.size());
    std::set<int> oracle;
    for (int l : raycast_labels(m, rig, v)) if (l >= 0) oracle.insert(l);
    EXPECT_EQ(visible, oracle) << "view " << v;
  }
}

TEST(Extract, BlockAndEmpty) {
  Image img(32, 32);
  for (std::size_t y = 5; y < 15; ++y)
    for (std::size_t x = 5; x < 15; ++x) img.set_rgb8(x, y, palette_color(7));
  const auto boxes = extract_part_bboxes(img);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].part_label, 7);
  EXPECT_EQ(boxes[0].box, (BBox{5, 5, 15, 15}));
  EXPECT_TRUE(extract_part_bboxes(Image(8, 8)).empty());
  img.set_rgb8(0, 0, {1, 2, 3});
  EXPECT_THROW(extract_part_bboxes(img), DataError);
}

TEST(Extract, InterleavedColumnsMatchPixelScan) {
  Image img(10, 6);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 2; x < 9; ++x) img.set_rgb8(x, y, palette_color(x % 2 ? 1 : 2));
  const auto boxes = extract_part_bboxes(img);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0], (LabeledBox{1, {3, 0, 8, 6}}));
  EXPECT_EQ(boxes[1], (LabeledBox{2, {2, 0, 9, 6}}));
}

TEST(Extract, BoxesContainEveryPixelOfTheirPart) {
  CameraRig rig;
  rig.image_size = 40;
  const Mesh m = normalize_mesh(generate_shape({"table", 2}, 4));
  for (std::size_t v = 0; v < rig.views; ++v) {
    const auto raster = rasterize(m, rig, v);
    const auto boxes = extract_part_bboxes(color_image(raster));
    for (std::size_t y = 0; y < raster.height; ++y)
      for (std::size_t x = 0; x < raster.width; ++x) {
        const int l = raster.at(x, y);
        if (l < 0) continue;
        const auto it = std::find_if(boxes.begin(), boxes.end(), [&](auto& b) { return b.part_label == l; });
        ASSERT_NE(it, boxes.end());
        EXPECT_TRUE(x >= it->box.x_min && x < it->box.x_max && y >= it->box.y_min && y < it->box.y_max);
      }
  }
}

TEST(Clean, ThresholdExamples) {
  auto box = [](int label, double area) { return LabeledBox{label, {0, 0, area, 1}}; };
  auto same = [](int) { return 0; };
  EXPECT_EQ(clean_small_parts({box(0, 100), box(1, 44)}, same).size(), 1u);
  EXPECT_EQ(clean_small_parts({box(0, 100), box(1, 45)}, same).size(), 2u);
  EXPECT_EQ(clean_small_parts({box(0, 3)}, same).size(), 1u);
  EXPECT_TRUE(clean_small_parts({}, same).empty());
  // Different categories never compete.
  EXPECT_EQ(clean_small_parts({box(0, 100), box(1, 10)}).size(), 2u);
}

TEST(Clean, NeverRemovesLargestBox) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabeledBox> boxes;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i)
      boxes.push_back({i, {0, 0, testing::uniform(rng, 1, 50), testing::uniform(rng, 1, 50)}});
    const auto largest = *std::max_element(boxes.begin(), boxes.end(),
                                           [](auto& a, auto& b) { return a.box.area() < b.box.area(); });
    const auto kept = clean_small_parts(boxes, [](int) { return 0; });
    EXPECT_NE(std::find(kept.begin(), kept.end(), largest), kept.end());
  }
}

TEST(GspTruth, OccludedPartIsAbsent) {
  Mesh m;
  append_cuboid(m, {-0.6, -0.6, -0.2}, {0.6, 0.6, 0.2}, 0);   // wall facing view 0
  append_cuboid(m, {-0.1, -0.1, -0.6}, {0.1, 0.1, -0.4}, 1);  // hidden behind it
  CameraRig rig;
  rig.elevation_deg = 0;
  const auto per_view = gsp_boxes_for_mesh(m, rig, {});
  ASSERT_EQ(per_view.size(), 12u);
  EXPECT_EQ(per_view[0].size(), 1u);
  const auto oracle = raycast_labels(m, rig, 0);
  EXPECT_EQ(std::count(oracle.begin(), oracle.end(), 1), 0);
  EXPECT_EQ(per_view[6].size(), 2u);  // seen from behind
}

TEST(GspTruth, FilesAreCompleteAndReproducible) {
  testing::TempDir dir("gt");
  const Dataset ds = generate_dataset({"chair", 2, 1, 1}, dir / "data");
  const auto& spec = family_spec("chair");
  auto cat = [&](int l) { return spec.part_category.at(l); };
  EXPECT_EQ(build_gsp_ground_truth(ds, CameraRig{}, dir / "gt", cat), 6u);
  const auto first = gt_path(dir / "gt", ds.train[0]);
  const auto rows = read_gt_csv(first, 12);
  EXPECT_EQ(rows.size(), 12u);
  for (const auto& view : rows) EXPECT_FALSE(view.empty());
  std::stringstream a;
  a << std::ifstream(first).rdbuf();
  build_gsp_ground_truth(ds, CameraRig{}, dir / "gt", cat);
  std::stringstream b;
  b << std::ifstream(first).rdbuf();
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().rfind("view_index,x_min,y_min,x_max,y_max\n", 0), 0u);
}

TEST(Image, PpmAndPgmRoundTrip) {
  testing::TempDir dir("img");
  Image img(3, 2, 0.0);
  img.set_rgb8(1, 1, {10, 200, 255});
  write_ppm(img, dir / "a.ppm");
  EXPECT_TRUE(read_ppm(dir / "a.ppm") == img);
  write_pgm(2, 1, {0.0, 1.0}, dir / "a.pgm");
  std::size_t w = 0, h = 0;
  EXPECT_EQ(read_pgm(dir / "a.pgm", w, h), (std::vector<std::uint8_t>{0, 255}));
  EXPECT_EQ(w, 2u);
}

}  // namespace
}  // namespace fg3d
