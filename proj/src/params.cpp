#include "kgalign/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kgalign {

Var& ParameterStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto [it, _] = params_.emplace(name, Var::leaf(std::move(value), true));
  return it->second;
}

const Var& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

Var& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_entries() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : params_) v.mutable_grad() = Tensor();
}

void adam_step(ParameterStore& store, double lr, const AdamConfig& cfg) {
  for (const auto& [name, var] : store.entries()) {
    if (!var.grad().empty() && !var.grad().all_finite()) throw NonFiniteGradientError(name);
  }
  for (auto& [name, cvar] : store.entries()) {
    Var var = cvar;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    AdamState& st = store.adam_states()[name];
    if (st.first_moment.empty()) {
      st.first_moment = Tensor(g.rows(), g.cols());
      st.second_moment = Tensor(g.rows(), g.cols());
    }
    ++st.steps;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.steps));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.steps));
    Tensor& w = var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double& m = st.first_moment[i];
      double& v = st.second_moment[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m / c1;
      const double vhat = v / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
  store.zero_grad();
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(fan_in, fan_out);
  for (auto& x : t.values()) x = rng.uniform(-limit, limit);
  return t;
}

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& x : t.values()) x = rng.normal(0.0, stddev);
  return t;
}

GradCheckResult grad_check(const std::function<Var(ParameterStore&)>& loss_fn, ParameterStore& store,
                           double h, std::size_t sample_limit, std::uint64_t seed) {
  store.zero_grad();
  {
    Var loss = loss_fn(store);
    backward(loss);
  }
  // Snapshot analytic gradients before perturbation passes.
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, var] : store.entries()) {
    analytic[name] = var.grad().empty() ? Tensor(var.rows(), var.cols()) : var.grad();
  }
  store.zero_grad();

  auto eval = [&]() {
    NoGradGuard guard;
    return loss_fn(store).item();
  };

  Rng rng(seed);
  GradCheckResult result;
  for (auto& [name, cvar] : store.entries()) {
    Var var = cvar;
    Tensor& w = var.mutable_value();
    std::vector<std::size_t> indices(w.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (indices.size() > sample_limit) {
      rng.shuffle(indices);
      indices.resize(sample_limit);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      const double orig = w[i];
      w[i] = orig + h;
      const double fp = eval();
      w[i] = orig - h;
      const double fm = eval();
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[name][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace kgalign
