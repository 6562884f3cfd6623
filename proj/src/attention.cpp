// SPDX-License-Identifier: Apache-2.0
#include "fg3d/attention.hpp"

#include <algorithm>
#include <cmath>

#include "fg3d/error.hpp"
#include "fg3d/image.hpp"

namespace fg3d {

namespace {

AttentionResult bilinear_attention(const char* op, const Tensor& rows, const Tensor& S, bool learned) {
  if (rows.rank() != 2 || rows.dim(0) == 0 || S.rank() != 2 || S.dim(0) != S.dim(1) ||
      S.dim(0) != rows.dim(1)) {
    throw DimensionError(std::string(op) + ": features " + shape_str(rows.shape()) +
                         " incompatible with bilinear matrix " + shape_str(S.shape()));
  }
  const Tensor weights = softmax(matmul(matmul(rows, S), transpose(rows)), 1);
  if (!learned) return {reduce_sum(rows, 0), weights};
  return {reduce_sum(matmul(weights, rows), 0), weights};
}

}  // namespace

AttentionMode parse_attention_mode(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "full") return AttentionMode::kFull;
  if (t == "opa") return AttentionMode::kOpa;
  if (t == "ova") return AttentionMode::kOva;
  if (t == "na") return AttentionMode::kNa;
  if (t == "nr") return AttentionMode::kNr;
  throw ConfigError("unknown attention mode '" + text + "' (full, opa, ova, na, nr)");
}

std::string attention_mode_name(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kFull: return "full";
    case AttentionMode::kOpa: return "opa";
    case AttentionMode::kOva: return "ova";
    case AttentionMode::kNa: return "na";
    case AttentionMode::kNr: return "nr";
  }
  return "full";
}

std::vector<AttentionMode> all_attention_modes() {
  return {AttentionMode::kFull, AttentionMode::kOpa, AttentionMode::kOva, AttentionMode::kNa, AttentionMode::kNr};
}

void init_attention_params(ParamStore& store, const AttentionDims& dims, std::uint64_t seed) {
  if (dims.feature == 0 || dims.hidden == 0 || dims.classes < 2) {
    throw ConfigError("attention needs D ≥ 1, H ≥ 1 and at least two classes");
  }
  std::mt19937_64 rng(seed);
  const std::size_t D = dims.feature, H = dims.hidden, C = dims.classes;
  auto bilinear = [&](const std::string& name) {
    Tensor t = uniform_tensor({D, D}, -0.01, 0.01, rng);
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < D; ++i) v[i * D + i] += 1.0;
    store.add(name, t);
  };
  auto weight = [&](const std::string& name, std::size_t out, std::size_t in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in));
    store.add(name, uniform_tensor({out, in}, -b, b, rng));
  };
  bilinear("att.S_p");
  bilinear("att.S_v");
  for (const char* gate : {"z", "r", "h"}) {
    weight(std::string("att.gru.W_") + gate, H, D);
    weight(std::string("att.gru.U_") + gate, H, H);
    store.add(std::string("att.gru.b_") + gate, Tensor::zeros({H}));
  }
  weight("att.W_a", D, H);
  weight("att.W_c", C, D);
  store.add("att.a_c", Tensor::zeros({C}));
}

bool is_attention_param(const std::string& name) { return name.rfind("att.", 0) == 0; }

AttentionResult part_attention(const Tensor& parts, const Tensor& S_p, AttentionMode mode) {
  return bilinear_attention("part_attention", parts, S_p, learned_part_weights(mode));
}

AttentionResult view_attention(const Tensor& views, const Tensor& S_v, AttentionMode mode) {
  return bilinear_attention("view_attention", views, S_v, learned_view_weights(mode));
}

GruParams GruParams::from(const ParamStore& s) {
  return {s.get("att.gru.W_z"), s.get("att.gru.U_z"), s.get("att.gru.b_z"),
          s.get("att.gru.W_r"), s.get("att.gru.U_r"), s.get("att.gru.b_r"),
          s.get("att.gru.W_h"), s.get("att.gru.U_h"), s.get("att.gru.b_h")};
}

Tensor gru_step(const Tensor& h_prev, const Tensor& x, const GruParams& p) {
  if (h_prev.rank() != 1 || x.rank() != 1 || p.W_z.rank() != 2 || p.W_z.dim(0) != h_prev.numel() ||
      p.W_z.dim(1) != x.numel()) {
    throw DimensionError("gru_step: state " + shape_str(h_prev.shape()) + " / input " + shape_str(x.shape()) +
                         " incompatible with W_z " + shape_str(p.W_z.shape()));
  }
  const Tensor z = sigmoid(add(linear(x, p.W_z, p.b_z), linear(h_prev, p.U_z)));
  const Tensor r = sigmoid(add(linear(x, p.W_r, p.b_r), linear(h_prev, p.U_r)));
  const Tensor cand = tanh(add(linear(x, p.W_h, p.b_h), linear(mul(r, h_prev), p.U_h)));
  return add(h_prev, mul(z, sub(cand, h_prev)));
}

Enhanced view_feature_enhance(const Tensor& view_feats, const Tensor& f, const GruParams& gru,
                              const Tensor& W_a, AttentionMode mode) {
  if (mode == AttentionMode::kNr) return {f, {}};
  const std::size_t V = view_feats.dim(0);
  Tensor h = Tensor::zeros({gru.U_z.dim(0)});
  Enhanced out;
  for (std::size_t t = 0; t < V; ++t) {
    h = gru_step(h, add(row(view_feats, t), f), gru);
    out.y.push_back(linear(h, W_a));
  }
  out.g = reduce_max(stack(out.y), 0);
  return out;
}

Tensor classify(const Tensor& g, const Tensor& W_c, const Tensor& a_c) { return softmax(linear(g, W_c, a_c), 0); }

Tensor classification_loss(const Tensor& p, const Tensor& p_true) { return cross_entropy(p, p_true); }

Tensor total_loss(const Tensor& det_loss, const Tensor& cls_loss, double psi) {
  return add(det_loss, scale(cls_loss, psi));
}

Tensor one_hot(std::size_t index, std::size_t size) {
  if (index >= size) throw ContractError("one_hot: index " + std::to_string(index) + " >= " + std::to_string(size));
  std::vector<double> v(size, 0.0);
  v[index] = 1.0;
  return Tensor::from({size}, std::move(v));
}

ShapeForward attention_forward(const ParamStore& store, const std::vector<Tensor>& parts_per_view,
                               AttentionMode mode) {
  if (parts_per_view.empty()) throw ContractError("attention_forward: no views");
  ShapeForward out;
  std::vector<Tensor> view_feats;
  for (const auto& parts : parts_per_view) {
    AttentionResult r = part_attention(parts, store.get("att.S_p"), mode);
    view_feats.push_back(r.feature);
    out.part_weights.push_back(r.weights);
  }
  out.view_feats = stack(view_feats);
  AttentionResult v = view_attention(out.view_feats, store.get("att.S_v"), mode);
  out.f = v.feature;
  out.view_weights = v.weights;
  out.g = view_feature_enhance(out.view_feats, out.f, GruParams::from(store), store.get("att.W_a"), mode).g;
  out.probs = classify(out.g, store.get("att.W_c"), store.get("att.a_c"));
  return out;
}

void write_heatmap(const Tensor& matrix, const std::filesystem::path& path) {
  if (matrix.rank() != 2) throw DimensionError("write_heatmap: expected a matrix, got " + shape_str(matrix.shape()));
  const auto v = matrix.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> norm(v.size(), 0.0);
  if (*hi > *lo) {
    for (std::size_t i = 0; i < v.size(); ++i) norm[i] = (v[i] - *lo) / (*hi - *lo);
  }
  write_pgm(matrix.dim(1), matrix.dim(0), norm, path);
}

std::vector<std::filesystem::path> export_attention_maps(const std::vector<Tensor>& q, const Tensor& theta,
                                                         const std::filesystem::path& prefix) {
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::filesystem::path p = prefix;
    p += "_view" + std::to_string(i) + "_parts.pgm";
    write_heatmap(q[i], p);
    written.push_back(p);
  }
  std::filesystem::path p = prefix;
  p += "_views.pgm";
  write_heatmap(theta, p);
  written.push_back(p);
  return written;
}

}  // namespace fg3d
