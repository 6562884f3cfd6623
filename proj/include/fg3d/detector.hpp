// SPDX-License-Identifier: Apache-2.0
//
// Part detector: convolutional backbone, anchor grid, IoU labeling, box
// regression coding, RoI max pooling and the proposal scoring head.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fg3d/bbox.hpp"
#include "fg3d/image.hpp"
#include "fg3d/optim.hpp"
#include "fg3d/tensor.hpp"

namespace fg3d {

inline constexpr std::size_t kRoiBins = 7;

struct DetectorConfig {
  std::size_t image_size = 64;
  std::vector<std::size_t> backbone_channels{16, 32, 64};
  /// "same" pads every 3×3 convolution by one pixel, "valid" does not.
  std::string backbone_padding = "same";
  std::vector<double> anchor_scales{1, 2, 4, 8, 16, 32};
  /// Width over height.
  std::vector<double> anchor_ratios{1.0, 0.5, 2.0};
  double s_d = 0.7;
  double lambda = 1.0;
  std::size_t head_hidden = 512;
  std::size_t anchor_batch = 64;
  bool smooth_l1 = false;
  bool nms = false;
  double nms_iou = 0.7;
};

/// Parses "w:h" (e.g. "2:1") into the width/height ratio.
double parse_ratio(const std::string& text);
std::string format_ratio(double ratio);

/// Spatial side of the backbone output for a config; throws ConfigError
/// when the image does not survive the pooling chain.
std::size_t feature_map_size(const DetectorConfig& config);

struct Anchor {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  BBox box() const { return BBox::from_center(cx, cy, w, h); }
};

/// One anchor per (cell, scale, ratio), ordered row, column, scale, ratio.
/// Base side is scale × stride; ratio r gives w = base·√r, h = base/√r.
std::vector<Anchor> generate_anchors(std::size_t S, const std::vector<double>& scales,
                                     const std::vector<double>& ratios, double stride);

double iou(const BBox& a, const BBox& b);

struct AnchorLabels {
  std::vector<int> label;            // 1 positive, 0 negative
  std::vector<std::ptrdiff_t> match;  // matched GT index, -1 for negatives
};

/// Positive when the best IoU exceeds s_d, plus the best anchor of every
/// GT box (ties to the lowest anchor index) whenever that IoU is nonzero.
AnchorLabels assign_labels(const std::vector<BBox>& anchors, const std::vector<BBox>& gt,
                           double s_d);

using BoxDelta = std::array<double, 4>;

/// Center offsets relative to anchor size, then log size ratios.
BoxDelta encode_bbox(const BBox& anchor, const BBox& gt);
/// Exact inverse of encode_bbox (no clipping).
BBox decode_bbox(const BBox& anchor, const BoxDelta& t);

/// Feature-cell window [x0, x1) × [y0, y1) covered by an image-space box.
struct RoiWindow {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const RoiWindow&) const = default;
  auto operator<=>(const RoiWindow&) const = default;
};

/// Maps with floor/ceil and clamps to the map; throws GeometryError when
/// nothing of the box is left on the map.
RoiWindow roi_window(const BBox& box, double spatial_scale, std::size_t S);

/// Per-channel max over each of the 7×7 bins of a window of fm[C×S×S].
/// Bin p spans [x0 + floor(p·L/7), x0 + ceil((p+1)·L/7)). The result is
/// [n×C×7×7]; the gradient goes to each bin's first maximal cell.
Tensor roi_pool(const Tensor& fm, const std::vector<RoiWindow>& windows);
Tensor roi_pool(const Tensor& fm, const BBox& box, double spatial_scale);

/// Channel-major [3×H×W] tensor of an image.
Tensor image_tensor(const Image& image);

struct Proposal {
  std::size_t view_index = 0;
  std::size_t anchor_index = 0;
  double score = 0.0;  // p_D
  BoxDelta t{};        // regressed encoding
  BBox box;            // decoded and clipped
  Tensor roi_feature;  // [C×7×7], may be left undefined until needed
};

/// Order used for top-K: score descending, then lower anchor index.
bool proposal_before(const Proposal& a, const Proposal& b);

/// Per-channel spatial max of each of the top-K proposals' RoI features,
/// stacked [K×C]. Fewer than K proposals are padded with the best one.
/// Throws DetectionError on an empty list.
Tensor select_top_k(std::vector<Proposal> proposals, std::size_t K);

/// L_sem + λ·L_reg over a sampled anchor batch. `probs` is [n×2] with
/// column 1 the part probability, `deltas` and `targets` are [n×4]; target
/// rows of negatives are ignored.
Tensor detection_loss(const Tensor& probs, const std::vector<int>& labels, const Tensor& deltas,
                      const Tensor& targets, double lambda, bool smooth_l1 = false);

/// Greedy suppression by score order; returns kept indices into `proposals`
/// (which must already be sorted with proposal_before).
std::vector<std::size_t> nms(const std::vector<Proposal>& proposals, double threshold);

class Detector {
 public:
  explicit Detector(DetectorConfig config);

  const DetectorConfig& config() const { return config_; }
  std::size_t feature_size() const { return S_; }
  std::size_t channels() const { return config_.backbone_channels.back(); }
  double stride() const { return static_cast<double>(config_.image_size) / static_cast<double>(S_); }
  double spatial_scale() const { return 1.0 / stride(); }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  /// Anchor boxes clipped to the image, used for matching, coding and RoIs.
  const std::vector<BBox>& anchor_boxes() const { return anchor_boxes_; }

  /// Adds every "det.*" parameter to the store.
  void init_params(ParamStore& store, std::uint64_t seed) const;
  static bool owns(const std::string& param_name);

  /// [3×H×W] image tensor to [C×S×S] features.
  Tensor backbone(const ParamStore& store, const Tensor& image) const;

  struct HeadOutput {
    Tensor probs;   // [n×2]
    Tensor deltas;  // [n×4]
  };
  HeadOutput head(const ParamStore& store, const Tensor& fm, const std::vector<RoiWindow>& windows) const;

  /// Detection loss of one view: labels anchors against `gt`, samples the
  /// anchor minibatch from `rng`, runs the head on it.
  Tensor view_loss(const ParamStore& store, const Tensor& fm, const std::vector<BBox>& gt,
                   std::mt19937_64& rng) const;

  /// Scores every anchor of a view (identical feature windows are scored
  /// once), decodes and clips its box. Anchors whose decoded box is under
  /// one pixel are dropped. Sorted with proposal_before; NMS if enabled.
  std::vector<Proposal> propose(const ParamStore& store, const Tensor& fm, std::size_t view) const;

  /// [K×C] part features of a view from the ranked proposals.
  Tensor part_features(const Tensor& fm, const std::vector<Proposal>& ranked, std::size_t K) const;

 private:
  DetectorConfig config_;
  std::size_t S_ = 0;
  std::vector<Anchor> anchors_;
  std::vector<BBox> anchor_boxes_;
  std::vector<RoiWindow> anchor_windows_;
};

/// Rows `shape_id,view_index,score,x_min,y_min,x_max,y_max` (header first).
void write_detections_csv(const std::vector<std::pair<std::string, std::vector<Proposal>>>& shapes,
                          const std::filesystem::path& path, bool header = true);

/// Draws a one-pixel red outline of every box scoring above `threshold`.
/// Returns the number of boxes drawn.
std::size_t draw_boxes(Image& image, const std::vector<Proposal>& proposals, double threshold = 0.8);

}  // namespace fg3d
