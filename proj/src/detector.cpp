// SPDX-License-Identifier: Apache-2.0
#include "fg3d/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "fg3d/error.hpp"

namespace fg3d {

using detail::Node;

namespace {

// Caps log-size deltas before decoding so exp() stays finite.
const double kMaxLogDelta = std::log(1000.0 / 16.0);

std::vector<std::size_t> sample_indices(std::vector<std::size_t> pool, std::size_t k,
                                        std::mt19937_64& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t remaining = pool.size() - i;
    const std::size_t j = i + std::min(remaining - 1, static_cast<std::size_t>(
                                                          unit_uniform(rng) * static_cast<double>(remaining)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

double parse_ratio(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      std::size_t used = 0;
      const double r = std::stod(text, &used);
      if (used == text.size() && r > 0 && std::isfinite(r)) return r;
    } else {
      std::size_t uw = 0, uh = 0;
      const std::string ws = text.substr(0, colon), hs = text.substr(colon + 1);
      const double w = std::stod(ws, &uw), h = std::stod(hs, &uh);
      if (uw == ws.size() && uh == hs.size() && w > 0 && h > 0) return w / h;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid anchor ratio '" + text + "' (expected w:h)");
}

std::string format_ratio(double ratio) {
  if (ratio == 1.0) return "1:1";
  if (ratio > 1.0 && std::round(ratio) == ratio) return std::to_string(static_cast<long>(ratio)) + ":1";
  if (ratio < 1.0 && std::round(1.0 / ratio) == 1.0 / ratio) {
    return "1:" + std::to_string(static_cast<long>(1.0 / ratio));
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g:1", ratio);
  return buf;
}

std::size_t feature_map_size(const DetectorConfig& config) {
  if (config.backbone_channels.empty()) throw ConfigError("backbone needs at least one block");
  const bool valid = config.backbone_padding == "valid";
  if (!valid && config.backbone_padding != "same") {
    throw ConfigError("backbone_padding must be 'same' or 'valid', got '" + config.backbone_padding + "'");
  }
  const std::size_t blocks = config.backbone_channels.size();
  if (!valid && config.image_size % (std::size_t{1} << blocks) != 0) {
    throw ConfigError("image_size " + std::to_string(config.image_size) + " is not divisible by stride " +
                      std::to_string(std::size_t{1} << blocks));
  }
  std::size_t s = config.image_size;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (valid) {
      if (s < 4) throw ConfigError("image_size too small for the backbone");
      s -= 2;
    }
    if (s < 2) throw ConfigError("image_size too small for the backbone");
    s /= 2;
  }
  return s;
}

std::vector<Anchor> generate_anchors(std::size_t S, const std::vector<double>& scales,
                                     const std::vector<double>& ratios, double stride) {
  std::vector<Anchor> out;
  out.reserve(S * S * scales.size() * ratios.size());
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) * stride;
      const double cy = (static_cast<double>(i) + 0.5) * stride;
      for (double scale : scales) {
        const double base = scale * stride;
        for (double r : ratios) out.push_back({cx, cy, base * std::sqrt(r), base / std::sqrt(r)});
      }
    }
  }
  return out;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

AnchorLabels assign_labels(const std::vector<BBox>& anchors, const std::vector<BBox>& gt, double s_d) {
  AnchorLabels out{std::vector<int>(anchors.size(), 0), std::vector<std::ptrdiff_t>(anchors.size(), -1)};
  if (gt.empty()) return out;
  std::vector<double> best_for_gt(gt.size(), 0.0);
  std::vector<std::ptrdiff_t> best_anchor(gt.size(), -1);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double best = 0.0;
    std::ptrdiff_t arg = -1;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = iou(anchors[i], gt[j]);
      if (arg < 0 || v > best) {
        best = v;
        arg = static_cast<std::ptrdiff_t>(j);
      }
      if (v > best_for_gt[j]) {
        best_for_gt[j] = v;
        best_anchor[j] = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (best > s_d) {
      out.label[i] = 1;
      out.match[i] = arg;
    }
  }
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const std::ptrdiff_t a = best_anchor[j];
    if (a < 0 || out.label[a]) continue;
    out.label[a] = 1;
    out.match[a] = static_cast<std::ptrdiff_t>(j);
  }
  return out;
}

BoxDelta encode_bbox(const BBox& anchor, const BBox& gt) {
  if (!anchor.valid() || !gt.valid()) throw GeometryError("encode_bbox: non-positive box size");
  const double aw = anchor.width(), ah = anchor.height();
  return {(gt.center_x() - anchor.center_x()) / aw, (gt.center_y() - anchor.center_y()) / ah,
          std::log(gt.width() / aw), std::log(gt.height() / ah)};
}

BBox decode_bbox(const BBox& anchor, const BoxDelta& t) {
  if (!anchor.valid()) throw GeometryError("decode_bbox: non-positive anchor size");
  const double aw = anchor.width(), ah = anchor.height();
  return BBox::from_center(anchor.center_x() + t[0] * aw, anchor.center_y() + t[1] * ah,
                           aw * std::exp(t[2]), ah * std::exp(t[3]));
}

RoiWindow roi_window(const BBox& box, double spatial_scale, std::size_t S) {
  const double lim = static_cast<double>(S);
  auto lo = [&](double v) { return static_cast<std::size_t>(std::clamp(std::floor(v * spatial_scale), 0.0, lim)); };
  auto hi = [&](double v) { return static_cast<std::size_t>(std::clamp(std::ceil(v * spatial_scale), 0.0, lim)); };
  const RoiWindow w{lo(box.x_min), lo(box.y_min), hi(box.x_max), hi(box.y_max)};
  if (!(box.x_min < box.x_max && box.y_min < box.y_max) || w.x1 <= w.x0 || w.y1 <= w.y0) {
    throw GeometryError("roi_pool: box collapses below one feature cell");
  }
  return w;
}

Tensor roi_pool(const Tensor& fm, const std::vector<RoiWindow>& windows) {
  if (fm.rank() != 3 || fm.dim(1) == 0 || fm.dim(2) == 0) {
    throw DimensionError("roi_pool: expected C×H×W feature map, got " + shape_str(fm.shape()));
  }
  const std::size_t C = fm.dim(0), H = fm.dim(1), W = fm.dim(2);
  const std::size_t per = C * kRoiBins * kRoiBins;
  std::vector<double> out(windows.size() * per);
  std::vector<std::size_t> arg(out.size());
  const auto in = fm.data();
  for (std::size_t n = 0; n < windows.size(); ++n) {
    const RoiWindow& r = windows[n];
    if (r.x1 <= r.x0 || r.y1 <= r.y0 || r.x1 > W || r.y1 > H) {
      throw GeometryError("roi_pool: window outside the feature map");
    }
    const std::size_t lw = r.x1 - r.x0, lh = r.y1 - r.y0;
    for (std::size_t py = 0; py < kRoiBins; ++py) {
      const std::size_t ys = r.y0 + py * lh / kRoiBins;
      const std::size_t ye = r.y0 + ((py + 1) * lh + kRoiBins - 1) / kRoiBins;
      for (std::size_t px = 0; px < kRoiBins; ++px) {
        const std::size_t xs = r.x0 + px * lw / kRoiBins;
        const std::size_t xe = r.x0 + ((px + 1) * lw + kRoiBins - 1) / kRoiBins;
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = (c * H + ys) * W + xs;
          for (std::size_t y = ys; y < ye; ++y) {
            for (std::size_t x = xs; x < xe; ++x) {
              const std::size_t idx = (c * H + y) * W + x;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const std::size_t o = n * per + (c * kRoiBins + py) * kRoiBins + px;
          out[o] = in[best];
          arg[o] = best;
        }
      }
    }
  }
  return make_result({windows.size(), C, kRoiBins, kRoiBins}, std::move(out), {fm},
                     [arg = std::move(arg)](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < arg.size(); ++i) p.grad[arg[i]] += self.grad[i];
                     });
}

Tensor roi_pool(const Tensor& fm, const BBox& box, double spatial_scale) {
  if (fm.rank() != 3) throw DimensionError("roi_pool: expected C×H×W, got " + shape_str(fm.shape()));
  const RoiWindow w = roi_window(box, spatial_scale, std::min(fm.dim(1), fm.dim(2)));
  return reshape(roi_pool(fm, std::vector<RoiWindow>{w}), {fm.dim(0), kRoiBins, kRoiBins});
}

Tensor image_tensor(const Image& image) {
  const std::size_t H = image.height, W = image.width;
  std::vector<double> v(3 * H * W);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) v[(c * H + y) * W + x] = image.at(x, y, c);
    }
  }
  return Tensor::from({3, H, W}, std::move(v));
}

bool proposal_before(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.anchor_index < b.anchor_index;
}

Tensor select_top_k(std::vector<Proposal> proposals, std::size_t K) {
  if (K == 0) throw ContractError("select_top_k: K must be at least 1");
  if (proposals.empty()) throw DetectionError("select_top_k: no proposals");
  std::sort(proposals.begin(), proposals.end(), proposal_before);
  std::vector<Tensor> feats;
  for (std::size_t k = 0; k < std::min(K, proposals.size()); ++k) {
    const Tensor& roi = proposals[k].roi_feature;
    if (!roi.defined() || roi.rank() != 3) throw ContractError("select_top_k: proposal lacks a C×7×7 RoI feature");
    feats.push_back(reduce_max(reshape(roi, {roi.dim(0), roi.dim(1) * roi.dim(2)}), 1));
  }
  while (feats.size() < K) feats.push_back(feats.front());
  return stack(feats);
}

Tensor detection_loss(const Tensor& probs, const std::vector<int>& labels, const Tensor& deltas,
                      const Tensor& targets, double lambda, bool smooth) {
  const std::size_t n = labels.size();
  if (n == 0) throw ContractError("detection_loss: empty anchor batch");
  if (probs.shape() != Shape{n, 2} || deltas.shape() != Shape{n, 4} || targets.shape() != Shape{n, 4}) {
    throw DimensionError("detection_loss: expected probs [n×2], deltas/targets [n×4] for n=" +
                         std::to_string(n));
  }
  std::vector<double> onehot(2 * n, 0.0);
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i) {
    onehot[2 * i + (labels[i] ? 1 : 0)] = 1.0;
    if (labels[i]) pos.push_back(i);
  }
  Tensor loss = scale(cross_entropy(probs, Tensor::from({n, 2}, std::move(onehot))), 1.0 / static_cast<double>(n));
  if (pos.empty()) return loss;
  const Tensor diff = sub(gather_rows(deltas, pos), gather_rows(targets, pos));
  const Tensor reg = scale(sum(smooth ? smooth_l1(diff) : abs(diff)), 1.0 / static_cast<double>(pos.size()));
  return add(loss, scale(reg, lambda));
}

std::vector<std::size_t> nms(const std::vector<Proposal>& proposals, double threshold) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (iou(proposals[i].box, proposals[k].box) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

Detector::Detector(DetectorConfig config) : config_(std::move(config)) {
  S_ = feature_map_size(config_);
  if (config_.anchor_scales.empty() || config_.anchor_ratios.empty()) {
    throw ConfigError("anchor scales and ratios must be nonempty");
  }
  for (double s : config_.anchor_scales) {
    if (!(s > 0)) throw ConfigError("anchor scales must be positive");
  }
  for (double r : config_.anchor_ratios) {
    if (!(r > 0)) throw ConfigError("anchor ratios must be positive");
  }
  if (!(config_.s_d > 0 && config_.s_d < 1)) throw ConfigError("s_d must lie in (0, 1)");
  if (config_.head_hidden == 0 || config_.anchor_batch == 0) throw ConfigError("head_hidden and anchor_batch must be positive");
  anchors_ = generate_anchors(S_, config_.anchor_scales, config_.anchor_ratios, stride());
  const double side = static_cast<double>(config_.image_size);
  for (const auto& a : anchors_) {
    anchor_boxes_.push_back(a.box().clipped(side, side));
    anchor_windows_.push_back(roi_window(anchor_boxes_.back(), spatial_scale(), S_));
  }
}

bool Detector::owns(const std::string& name) { return name.rfind("det.", 0) == 0; }

void Detector::init_params(ParamStore& store, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  auto he = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double b = std::sqrt(6.0 / static_cast<double>(fan_in));
    store.add(name, uniform_tensor(std::move(shape), -b, b, rng));
  };
  auto plain = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    store.add(name, uniform_tensor(std::move(shape), -b, b, rng));
  };
  std::size_t c_in = 3;
  for (std::size_t b = 0; b < config_.backbone_channels.size(); ++b) {
    const std::size_t c_out = config_.backbone_channels[b];
    const std::string p = "det.conv" + std::to_string(b);
    he(p + ".w", {c_out, c_in, 3, 3}, c_in * 9);
    store.add(p + ".b", Tensor::zeros({c_out}));
    c_in = c_out;
  }
  const std::size_t flat = channels() * kRoiBins * kRoiBins, hid = config_.head_hidden;
  he("det.fc1.w", {hid, flat}, flat);
  store.add("det.fc1.b", Tensor::zeros({hid}));
  he("det.fc2.w", {hid, hid}, hid);
  store.add("det.fc2.b", Tensor::zeros({hid}));
  plain("det.score.w", {2, hid}, hid);
  store.add("det.score.b", Tensor::zeros({2}));
  plain("det.reg.w", {4, hid}, hid);
  store.add("det.reg.b", Tensor::zeros({4}));
}

Tensor Detector::backbone(const ParamStore& store, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != config_.image_size ||
      image.dim(2) != config_.image_size) {
    throw ConfigError("backbone expects a 3×" + std::to_string(config_.image_size) + "×" +
                      std::to_string(config_.image_size) + " image, got " + shape_str(image.shape()));
  }
  const std::size_t pad = config_.backbone_padding == "valid" ? 0 : 1;
  Tensor x = image;
  for (std::size_t b = 0; b < config_.backbone_channels.size(); ++b) {
    const std::string p = "det.conv" + std::to_string(b);
    x = max_pool2d(relu(conv2d(x, store.get(p + ".w"), store.get(p + ".b"), 1, pad)), 2, 2);
  }
  return x;
}

Detector::HeadOutput Detector::head(const ParamStore& store, const Tensor& fm,
                                    const std::vector<RoiWindow>& windows) const {
  const std::size_t n = windows.size();
  Tensor x = reshape(roi_pool(fm, windows), {n, fm.dim(0) * kRoiBins * kRoiBins});
  x = relu(linear(x, store.get("det.fc1.w"), store.get("det.fc1.b")));
  x = relu(linear(x, store.get("det.fc2.w"), store.get("det.fc2.b")));
  return {softmax(linear(x, store.get("det.score.w"), store.get("det.score.b")), 1),
          linear(x, store.get("det.reg.w"), store.get("det.reg.b"))};
}

Tensor Detector::view_loss(const ParamStore& store, const Tensor& fm, const std::vector<BBox>& gt,
                           std::mt19937_64& rng) const {
  const AnchorLabels lab = assign_labels(anchor_boxes_, gt, config_.s_d);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < lab.label.size(); ++i) (lab.label[i] ? pos : neg).push_back(i);
  const std::size_t n_pos = std::min(pos.size(), config_.anchor_batch / 2);
  std::vector<std::size_t> chosen = sample_indices(std::move(pos), n_pos, rng);
  const auto negs = sample_indices(std::move(neg), config_.anchor_batch - chosen.size(), rng);
  chosen.insert(chosen.end(), negs.begin(), negs.end());

  std::vector<RoiWindow> windows;
  std::vector<int> labels;
  std::vector<double> targets(chosen.size() * 4, 0.0);
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const std::size_t a = chosen[r];
    windows.push_back(anchor_windows_[a]);
    labels.push_back(lab.label[a]);
    if (lab.label[a]) {
      const BoxDelta t = encode_bbox(anchor_boxes_[a], gt[static_cast<std::size_t>(lab.match[a])]);
      std::copy(t.begin(), t.end(), targets.begin() + static_cast<std::ptrdiff_t>(r * 4));
    }
  }
  const HeadOutput out = head(store, fm, windows);
  return detection_loss(out.probs, labels, out.deltas, Tensor::from({chosen.size(), 4}, std::move(targets)),
                        config_.lambda, config_.smooth_l1);
}

std::vector<Proposal> Detector::propose(const ParamStore& store, const Tensor& fm, std::size_t view) const {
  std::map<RoiWindow, std::size_t> unique;
  std::vector<RoiWindow> windows;
  std::vector<std::size_t> slot(anchors_.size());
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    auto [it, fresh] = unique.try_emplace(anchor_windows_[a], windows.size());
    if (fresh) windows.push_back(anchor_windows_[a]);
    slot[a] = it->second;
  }
  const HeadOutput out = head(store, fm, windows);
  const auto probs = out.probs.data();
  const auto deltas = out.deltas.data();
  const double side = static_cast<double>(config_.image_size);
  std::vector<Proposal> props;
  props.reserve(anchors_.size());
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    const std::size_t u = slot[a];
    Proposal p;
    p.view_index = view;
    p.anchor_index = a;
    p.score = probs[u * 2 + 1];
    p.t = {deltas[u * 4], deltas[u * 4 + 1], std::min(deltas[u * 4 + 2], kMaxLogDelta),
           std::min(deltas[u * 4 + 3], kMaxLogDelta)};
    p.box = decode_bbox(anchor_boxes_[a], p.t).clipped(side, side);
    if (!std::isfinite(p.box.x_min + p.box.x_max + p.box.y_min + p.box.y_max) || p.box.width() < 1.0 ||
        p.box.height() < 1.0) {
      continue;
    }
    props.push_back(std::move(p));
  }
  std::sort(props.begin(), props.end(), proposal_before);
  if (config_.nms) {
    std::vector<Proposal> kept;
    for (std::size_t i : nms(props, config_.nms_iou)) kept.push_back(props[i]);
    props = std::move(kept);
  }
  return props;
}

Tensor Detector::part_features(const Tensor& fm, const std::vector<Proposal>& ranked, std::size_t K) const {
  if (K == 0) throw ContractError("part_features: K must be at least 1");
  if (ranked.empty()) throw DetectionError("no valid proposals in view");
  const std::size_t take = std::min(K, ranked.size());
  std::vector<RoiWindow> windows;
  for (std::size_t k = 0; k < take; ++k) windows.push_back(roi_window(ranked[k].box, spatial_scale(), S_));
  const std::size_t C = fm.dim(0);
  const Tensor feats = reduce_max(reshape(roi_pool(fm, windows), {take, C, kRoiBins * kRoiBins}), 2);
  if (take == K) return feats;
  std::vector<std::size_t> rows(K, 0);
  std::iota(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), 0);
  return gather_rows(feats, rows);
}

void write_detections_csv(const std::vector<std::pair<std::string, std::vector<Proposal>>>& shapes,
                          const std::filesystem::path& path, bool header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  if (header) out << "shape_id,view_index,score,x_min,y_min,x_max,y_max\n";
  char buf[256];
  for (const auto& [id, props] : shapes) {
    for (const auto& p : props) {
      std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%.3f,%.3f,%.3f,%.3f\n", id.c_str(), p.view_index, p.score,
                    p.box.x_min, p.box.y_min, p.box.x_max, p.box.y_max);
      out << buf;
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::size_t draw_boxes(Image& image, const std::vector<Proposal>& proposals, double threshold) {
  std::size_t drawn = 0;
  const long W = static_cast<long>(image.width), H = static_cast<long>(image.height);
  for (const auto& p : proposals) {
    if (!(p.score > threshold)) continue;
    const long x0 = std::clamp(static_cast<long>(std::floor(p.box.x_min)), 0L, W - 1);
    const long y0 = std::clamp(static_cast<long>(std::floor(p.box.y_min)), 0L, H - 1);
    const long x1 = std::clamp(static_cast<long>(std::ceil(p.box.x_max)) - 1, 0L, W - 1);
    const long y1 = std::clamp(static_cast<long>(std::ceil(p.box.y_max)) - 1, 0L, H - 1);
    for (long x = x0; x <= x1; ++x) {
      image.set_rgb8(static_cast<std::size_t>(x), static_cast<std::size_t>(y0), {255, 0, 0});
      image.set_rgb8(static_cast<std::size_t>(x), static_cast<std::size_t>(y1), {255, 0, 0});
    }
    for (long y = y0; y <= y1; ++y) {
      image.set_rgb8(static_cast<std::size_t>(x0), static_cast<std::size_t>(y), {255, 0, 0});
      image.set_rgb8(static_cast<std::size_t>(x1), static_cast<std::size_t>(y), {255, 0, 0});
    }
    ++drawn;
  }
  return drawn;
}

}  // namespace fg3d
