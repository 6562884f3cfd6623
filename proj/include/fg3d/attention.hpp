// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical part/view attention over detected part features, the GRU
// view-sequence enhancement and the softmax classifier.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fg3d/optim.hpp"
#include "fg3d/tensor.hpp"

namespace fg3d {

/// kOpa keeps only part attention (view weights fixed at 1/V), kOva keeps
/// only view attention (part weights fixed at 1/K), kNa fixes both, kNr
/// keeps both attentions but skips the recurrent stage.
enum class AttentionMode { kFull, kOpa, kOva, kNa, kNr };

AttentionMode parse_attention_mode(const std::string& text);
std::string attention_mode_name(AttentionMode mode);
std::vector<AttentionMode> all_attention_modes();

inline bool learned_part_weights(AttentionMode m) { return m == AttentionMode::kFull || m == AttentionMode::kOpa || m == AttentionMode::kNr; }
inline bool learned_view_weights(AttentionMode m) { return m == AttentionMode::kFull || m == AttentionMode::kOva || m == AttentionMode::kNr; }

struct AttentionDims {
  std::size_t feature = 64;  // D
  std::size_t hidden = 128;  // H
  std::size_t classes = 3;   // C
};

/// Adds every "att.*" parameter: S_p, S_v start at identity plus
/// U[-0.01, 0.01]; weights U[±1/√fan_in]; biases zero.
void init_attention_params(ParamStore& store, const AttentionDims& dims, std::uint64_t seed);
bool is_attention_param(const std::string& name);

struct AttentionResult {
  Tensor feature;  // [D]
  Tensor weights;  // raw softmax attention, rows sum to 1
};

/// parts [K×D] → Σ_k Σ_k' q(k,k')·f^k', q = row softmax of P·S_p·Pᵀ.
/// Constant-weight modes return Σ_k f^k; `weights` is always the learned q.
AttentionResult part_attention(const Tensor& parts, const Tensor& S_p, AttentionMode mode);
/// views [V×D] with the view-level bilinear matrix.
AttentionResult view_attention(const Tensor& views, const Tensor& S_v, AttentionMode mode);

struct GruParams {
  Tensor W_z, U_z, b_z;
  Tensor W_r, U_r, b_r;
  Tensor W_h, U_h, b_h;
  static GruParams from(const ParamStore& store);
};

/// h = (1 − z)⊙h_prev + z⊙h̃ with the usual update/reset gates.
Tensor gru_step(const Tensor& h_prev, const Tensor& x, const GruParams& p);

struct Enhanced {
  Tensor g;               // [D]
  std::vector<Tensor> y;  // per-step projections, empty in NR mode
};

/// Adds f to every view feature, runs the GRU from h=0 in view order,
/// projects each state with W_a [D×H] and max-pools over steps.
/// NR mode returns g = f.
Enhanced view_feature_enhance(const Tensor& view_feats, const Tensor& f, const GruParams& gru,
                              const Tensor& W_a, AttentionMode mode);

/// softmax(W_c·g + a_c).
Tensor classify(const Tensor& g, const Tensor& W_c, const Tensor& a_c);
Tensor classification_loss(const Tensor& p, const Tensor& p_true);
Tensor total_loss(const Tensor& det_loss, const Tensor& cls_loss, double psi);
Tensor one_hot(std::size_t index, std::size_t size);

struct ShapeForward {
  std::vector<Tensor> part_weights;  // q per view [K×K]
  Tensor view_weights;               // θ [V×V]
  Tensor view_feats;                 // [V×D]
  Tensor f;                          // [D]
  Tensor g;                          // [D]
  Tensor probs;                      // [C]
};

/// Full attention branch for one shape from its per-view [K×D] part features.
ShapeForward attention_forward(const ParamStore& store, const std::vector<Tensor>& parts_per_view,
                               AttentionMode mode);

/// Min-max normalized grayscale PGM of a square matrix; all zeros when the
/// matrix is constant.
void write_heatmap(const Tensor& matrix, const std::filesystem::path& path);

/// Writes `<prefix>_view<i>_parts.pgm` for every q and `<prefix>_views.pgm`.
std::vector<std::filesystem::path> export_attention_maps(const std::vector<Tensor>& q, const Tensor& theta,
                                                         const std::filesystem::path& prefix);

}  // namespace fg3d
