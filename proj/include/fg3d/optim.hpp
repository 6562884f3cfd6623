// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fg3d/tensor.hpp"

namespace fg3d {

/// Ordered, named collection of learnable leaf tensors. The version counter
/// increases every time an optimizer writes to the store.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> names() const;

  /// Allocates (if needed) and clears every gradient.
  void zero_grad();

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::uint64_t version_ = 0;
};

/// Uniform in [0, 1) from 53 random bits; identical on every platform.
double unit_uniform(std::mt19937_64& rng);
/// Leaf tensor with entries drawn uniformly from [lo, hi).
Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng);

struct AdamSettings {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, keyed by parameter name.
struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over every parameter in the store.
/// Throws ContractError if a parameter has no gradient buffer.
void adam_step(ParamStore& params, AdamState& state, const AdamSettings& settings);

struct GradCheckOptions {
  double h = 1e-5;
  /// Coordinates probed per tensor; 0 means all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 7;
  /// Skip coordinates where f is not differentiable within ±h (a ReLU or max
  /// switching branch). Detected from f alone: the one-sided differences
  /// disagree by more than the tolerance below plus a roundoff bound.
  bool skip_kinks = false;
  double kink_tolerance = 1e-4;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
};

/// Compares backward() against central differences of `f`, which must
/// rebuild the graph from `params` on every call and return a scalar.
/// Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const std::function<Tensor()>& f,
                           std::vector<std::pair<std::string, Tensor>> params,
                           const GradCheckOptions& options = {});

GradCheckResult grad_check(const std::function<Tensor()>& f, ParamStore& params,
                           const GradCheckOptions& options = {});

}  // namespace fg3d
