// SPDX-License-Identifier: Apache-2.0
#include "fg3d/gradient_suite.hpp"

#include <algorithm>
#include <random>

#include "fg3d/attention.hpp"
#include "fg3d/detector.hpp"

namespace fg3d {

namespace {

using Inputs = std::vector<std::pair<std::string, Tensor>>;

Tensor leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = uniform_tensor(std::move(shape), lo, hi, rng);
  return t.detach(true);
}

/// Fixed random weights turn any output into a scalar that touches every element.
Tensor weighted(const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(x, uniform_tensor(x.shape(), -1.0, 1.0, rng)));
}

struct CaseBuilder {
  const GradientSuiteOptions& options;
  std::vector<GradientCase> cases;
  std::mt19937_64 rng;

  void run(const std::string& name, Inputs inputs, const std::function<Tensor(const Inputs&)>& f,
           std::size_t coords = 0) {
    GradCheckOptions gc;
    gc.h = options.h;
    gc.max_coords_per_tensor = coords;
    gc.seed = options.seed;
    const Inputs& in = inputs;
    cases.push_back({name, grad_check([&] { return f(in); }, inputs, gc)});
  }

  /// Elementwise or shape op of a single input, scalarized with fixed weights.
  void unary(const std::string& name, Shape shape, const std::function<Tensor(const Tensor&)>& op,
             double lo = -1.0, double hi = 1.0) {
    run(name, {{"x", leaf(shape, rng, lo, hi)}}, [op](const Inputs& in) { return weighted(op(in[0].second), 5); });
  }

  void binary(const std::string& name, Shape a, Shape b, const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    run(name, {{"a", leaf(a, rng)}, {"b", leaf(b, rng)}},
        [op](const Inputs& in) { return weighted(op(in[0].second, in[1].second), 5); });
  }
};

}  // namespace

std::vector<GradientCase> op_gradient_cases(const GradientSuiteOptions& options) {
  CaseBuilder b{options, {}, std::mt19937_64(options.seed)};
  b.binary("add", {3, 4}, {3, 4}, [](const Tensor& x, const Tensor& y) { return add(x, y); });
  b.binary("sub", {5}, {5}, [](const Tensor& x, const Tensor& y) { return sub(x, y); });
  b.binary("mul", {2, 3}, {2, 3}, [](const Tensor& x, const Tensor& y) { return mul(x, y); });
  b.unary("scale", {4, 2}, [](const Tensor& x) { return scale(x, -1.7); });
  b.unary("relu", {12}, [](const Tensor& x) { return relu(x); });
  b.unary("sigmoid", {3, 3}, [](const Tensor& x) { return sigmoid(x); }, -4, 4);
  b.unary("tanh", {3, 3}, [](const Tensor& x) { return tanh(x); }, -3, 3);
  b.unary("abs", {10}, [](const Tensor& x) { return abs(x); });
  b.unary("smooth_l1", {12}, [](const Tensor& x) { return smooth_l1(x); }, -3, 3);
  b.binary("matmul", {3, 4}, {4, 5}, [](const Tensor& x, const Tensor& y) { return matmul(x, y); });
  b.unary("transpose", {3, 5}, [](const Tensor& x) { return transpose(x); });
  b.run("linear", {{"x", leaf({4, 3}, b.rng)}, {"w", leaf({5, 3}, b.rng)}, {"bias", leaf({5}, b.rng)}},
        [](const Inputs& in) { return weighted(linear(in[0].second, in[1].second, in[2].second), 5); });
  b.run("linear_vector", {{"x", leaf({3}, b.rng)}, {"w", leaf({2, 3}, b.rng)}},
        [](const Inputs& in) { return weighted(linear(in[0].second, in[1].second), 5); });
  b.binary("add_row", {4, 3}, {3}, [](const Tensor& x, const Tensor& y) { return add_row(x, y); });
  b.unary("reshape", {2, 6}, [](const Tensor& x) { return reshape(x, {3, 4}); });
  b.binary("concat", {2, 3}, {4, 3}, [](const Tensor& x, const Tensor& y) { return concat({x, y}); });
  b.binary("stack", {3}, {3}, [](const Tensor& x, const Tensor& y) { return stack({x, y, x}); });
  b.unary("gather_rows", {4, 3}, [](const Tensor& x) {
    const std::vector<std::size_t> rows{2, 0, 2, 3};
    return gather_rows(x, rows);
  });
  b.unary("row", {4, 3}, [](const Tensor& x) { return row(x, 1); });
  b.unary("softmax_rows", {3, 4}, [](const Tensor& x) { return softmax(x, 1); }, -2, 2);
  b.unary("softmax_cols", {3, 4}, [](const Tensor& x) { return softmax(x, 0); }, -2, 2);
  b.unary("softmax_vector", {6}, [](const Tensor& x) { return softmax(x, 0); }, -2, 2);
  b.unary("reduce_max", {4, 5}, [](const Tensor& x) { return reduce_max(x, 0); });
  b.unary("reduce_max_inner", {2, 3, 4}, [](const Tensor& x) { return reduce_max(x, 2); });
  b.unary("reduce_sum", {4, 5}, [](const Tensor& x) { return reduce_sum(x, 1); });
  b.unary("sum", {3, 2}, [](const Tensor& x) { return scale(sum(x), 1.0); });
  b.unary("mean", {3, 2}, [](const Tensor& x) { return mean(x); });
  b.run("cross_entropy", {{"logits", leaf({5}, b.rng, -2, 2)}}, [](const Inputs& in) {
    return cross_entropy(softmax(in[0].second, 0), Tensor::vector({0, 0, 1, 0, 0}));
  });
  b.run("conv2d_same", {{"x", leaf({2, 6, 5}, b.rng)}, {"w", leaf({3, 2, 3, 3}, b.rng)}, {"bias", leaf({3}, b.rng)}},
        [](const Inputs& in) { return weighted(conv2d(in[0].second, in[1].second, in[2].second, 1, 1), 5); });
  b.run("conv2d_valid_stride2", {{"x", leaf({2, 7, 7}, b.rng)}, {"w", leaf({2, 2, 3, 3}, b.rng)}},
        [](const Inputs& in) { return weighted(conv2d(in[0].second, in[1].second, Tensor(), 2, 0), 5); });
  b.unary("max_pool2d", {2, 6, 7}, [](const Tensor& x) { return max_pool2d(x, 2, 2); });
  b.unary("roi_pool", {2, 9, 8}, [](const Tensor& x) {
    return roi_pool(x, std::vector<RoiWindow>{{0, 0, 8, 9}, {1, 2, 4, 5}, {3, 3, 4, 4}});
  });
  for (bool smooth : {false, true}) {
    b.run(smooth ? "detection_loss_smooth_l1" : "detection_loss",
          {{"logits", leaf({6, 2}, b.rng, -2, 2)}, {"deltas", leaf({6, 4}, b.rng)}}, [smooth](const Inputs& in) {
            const Tensor targets = Tensor::from({6, 4}, {0.1, -0.2, 0.3, 0.0, 0, 0, 0, 0, -1.5, 2.0, 0.2, 0.4,
                                                         0, 0, 0, 0, 0.5, 0.5, -0.5, 1.2, 0, 0, 0, 0});
            return detection_loss(softmax(in[0].second, 1), {1, 0, 1, 0, 1, 0}, in[1].second, targets, 0.7, smooth);
          });
  }
  b.run("bilinear_attention",
        {{"parts", leaf({4, 3}, b.rng)}, {"S", leaf({3, 3}, b.rng)}},
        [](const Inputs& in) { return weighted(part_attention(in[0].second, in[1].second, AttentionMode::kFull).feature, 5); });
  {
    std::mt19937_64 r(options.seed + 1);
    ParamStore gru;
    init_attention_params(gru, {3, 4, 2}, options.seed);
    Inputs in{{"h", leaf({4}, b.rng)}, {"x", leaf({3}, b.rng)}};
    for (const char* n : {"att.gru.W_z", "att.gru.U_z", "att.gru.b_z", "att.gru.W_r", "att.gru.U_r", "att.gru.b_r",
                          "att.gru.W_h", "att.gru.U_h", "att.gru.b_h"}) {
      in.emplace_back(n, gru.get(n));
    }
    // Nonzero biases so every gate input is exercised.
    for (const char* n : {"att.gru.b_z", "att.gru.b_r", "att.gru.b_h"}) {
      auto v = gru.get(n).mutable_data();
      for (double& x : v) x = unit_uniform(r) - 0.5;
    }
    b.run("gru_step", in, [&gru](const Inputs& x) {
      return weighted(gru_step(x[0].second, x[1].second, GruParams::from(gru)), 5);
    });
  }
  return b.cases;
}

std::vector<GradientCase> composed_gradient_cases(const Config& base, const GradientSuiteOptions& options) {
  std::vector<GradientCase> out;
  Config config = base;
  config.feature_channels = options.composed_feature;
  config.hidden_dim = options.composed_hidden;
  config.k_parts = options.composed_parts;
  config.validate();
  const std::size_t classes = options.composed_classes;
  const Detector detector(config.detector());
  std::mt19937_64 rng(options.seed);
  ParamStore det;
  detector.init_params(det, options.seed);
  GradCheckOptions gc;
  gc.h = options.h;
  gc.max_coords_per_tensor = options.composed_coords;
  gc.seed = options.seed;
  gc.skip_kinks = true;

  const std::size_t side = config.image_size;
  auto image = [&](double hi) { return uniform_tensor({3, side, side}, 0.0, hi, rng); };

  // Detection loss of one view against a few random boxes.
  {
    const Tensor img = image(1.0);
    std::vector<BBox> gt;
    for (int i = 0; i < 3; ++i) {
      const double s = static_cast<double>(side);
      const double x0 = unit_uniform(rng) * s * 0.6, y0 = unit_uniform(rng) * s * 0.6;
      gt.push_back({x0, y0, x0 + s * (0.15 + 0.25 * unit_uniform(rng)), y0 + s * (0.15 + 0.25 * unit_uniform(rng))});
    }
    const auto f = [&] {
      std::mt19937_64 sampler(options.seed);
      return detector.view_loss(det, detector.backbone(det, img), gt, sampler);
    };
    out.push_back({"detection_path", grad_check(f, det, gc)});
  }

  // Classification loss from images through fixed top-K proposals.
  const std::size_t V = std::max<std::size_t>(1, options.composed_views);
  std::vector<Tensor> imgs;
  std::vector<std::vector<Proposal>> ranked;
  {
    NoGradGuard guard;
    for (std::size_t v = 0; v < V; ++v) {
      imgs.push_back(image(options.composed_image_scale));
      auto props = detector.propose(det, detector.backbone(det, imgs.back()), v);
      props.resize(std::min(props.size(), config.k_parts));
      ranked.push_back(std::move(props));
    }
  }
  Inputs conv_params;
  for (const auto& [name, t] : det) {
    if (name.rfind("det.conv", 0) == 0) conv_params.emplace_back(name, t);
  }
  for (AttentionMode mode : all_attention_modes()) {
    ParamStore att;
    init_attention_params(att, config.attention_dims(classes), options.seed + 1);
    // Perturb zero-initialized biases so they do not sit on special values.
    for (auto& [name, t] : att) {
      if (name.find("b_") != std::string::npos || name == "att.a_c") {
        for (double& x : t.mutable_data()) x = 0.2 * (unit_uniform(rng) - 0.5);
      }
    }
    const auto f = [&] {
      std::vector<Tensor> parts;
      for (std::size_t v = 0; v < V; ++v) {
        parts.push_back(detector.part_features(detector.backbone(det, imgs[v]), ranked[v], config.k_parts));
      }
      return cross_entropy(attention_forward(att, parts, mode).probs, one_hot(0, classes));
    };
    Inputs params = conv_params;
    for (const auto& p : att) params.push_back(p);
    out.push_back({"classification_path_" + attention_mode_name(mode), grad_check(f, params, gc)});
  }
  return out;
}

double max_rel_error(const std::vector<GradientCase>& cases) {
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, c.result.max_rel_error);
  return worst;
}

double kink_fraction(const std::vector<GradientCase>& cases) {
  std::size_t probed = 0, kinks = 0;
  for (const auto& c : cases) {
    probed += c.result.coords_checked + c.result.kinks_skipped;
    kinks += c.result.kinks_skipped;
  }
  return probed ? static_cast<double>(kinks) / static_cast<double>(probed) : 0.0;
}

}  // namespace fg3d
