// SPDX-License-Identifier: Apache-2.0
#include "fg3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fg3d/error.hpp"

namespace fg3d {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * unit_uniform(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  if (!value.requires_grad()) value = value.detach(true);
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) {
    auto g = t.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

void adam_step(ParamStore& params, AdamState& state, const AdamSettings& s) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, step);
  const double c2 = 1.0 - std::pow(s.beta2, step);
  for (auto& [name, t] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(t.numel(), 0.0);
    if (v.empty()) v.assign(t.numel(), 0.0);
    auto w = t.mutable_data();
    auto g = t.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
    }
  }
  params.bump_version();
}

GradCheckResult grad_check(const std::function<Tensor()>& f,
                           std::vector<std::pair<std::string, Tensor>> params,
                           const GradCheckOptions& options) {
  for (auto& [name, t] : params) {
    auto g = t.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : params) analytic.push_back(t.grad());

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  const double base = options.skip_kinks ? f().item() : 0.0;
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, t] = params[p];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto data = t.mutable_data();
    for (std::size_t i : coords) {
      const double saved = data[i];
      data[i] = saved + options.h;
      const double plus = f().item();
      data[i] = saved - options.h;
      const double minus = f().item();
      data[i] = saved;
      if (options.skip_kinks) {
        const double right = (plus - base) / options.h;
        const double left = (base - minus) / options.h;
        const double roundoff = 64.0 * kEps * (std::fabs(plus) + std::fabs(base) + std::fabs(minus)) / options.h;
        if (std::fabs(right - left) > options.kink_tolerance * (std::fabs(right) + std::fabs(left)) + roundoff) {
          ++result.kinks_skipped;
          continue;
        }
      }
      const double numeric = (plus - minus) / (2.0 * options.h);
      const double a = analytic[p][i];
      const double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = name;
          result.worst_index = i;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor()>& f, ParamStore& params,
                           const GradCheckOptions& options) {
  std::vector<std::pair<std::string, Tensor>> list(params.begin(), params.end());
  return grad_check(f, std::move(list), options);
}

}  // namespace fg3d
