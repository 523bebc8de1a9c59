#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kgalign/autograd.hpp"
#include "kgalign/rng.hpp"

namespace kgalign {

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t steps = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Named learned tensors plus optimizer state. Iteration order is the
// lexicographic name order, which fixes the serialization layout.
class ParameterStore {
 public:
  Var& add(const std::string& name, Tensor value);
  const Var& get(const std::string& name) const;
  Var& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_entries() const;

  void zero_grad();
  const std::map<std::string, Var>& entries() const { return params_; }
  std::map<std::string, AdamState>& adam_states() { return adam_; }
  const std::map<std::string, AdamState>& adam_states() const { return adam_; }

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, AdamState> adam_;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter '" + param + "'"), param_(param) {}
  const std::string& parameter() const { return param_; }

 private:
  std::string param_;
};

// Applies one bias-corrected Adam update to every parameter that received
// a gradient, then clears gradients. Parameters without an allocated
// gradient are skipped and keep their step count.
void adam_step(ParameterStore& store, double lr, const AdamConfig& cfg = {});

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

// Central finite differences against reverse-mode gradients. Tensors with
// more than `sample_limit` entries are checked on a deterministic random
// sample of that many entries. Relative error uses max(|a|, |b|, 1e-8).
GradCheckResult grad_check(const std::function<Var(ParameterStore&)>& loss_fn, ParameterStore& store,
                           double h = 1e-5, std::size_t sample_limit = 200, std::uint64_t seed = 0);

}  // namespace kgalign
