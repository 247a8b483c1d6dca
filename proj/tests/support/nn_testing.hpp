#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "thz/nn/params.hpp"
#include "thz/nn/tensor.hpp"

namespace thz::testing {

template <typename T>
nn::Tensor<T> random_tensor(nn::Shape4 shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nn::Tensor<T> t(shape);
  for (T& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

struct Probe {
  nn::Var<double> node;
  std::size_t index = 0;
};

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t nonzero = 0;  ///< probes whose gradient magnitude exceeded the floor
};

/// Compares reverse-mode gradients with central differences of `loss` at the
/// given entries. `loss` must rebuild the graph from the current values.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const std::function<nn::Var<double>()>& loss, const std::vector<Probe>& probes,
                                 double step, double floor = 1e-6) {
  for (const auto& p : probes) p.node->grad.clear();
  const auto root = loss();
  nn::backward(root);
  std::vector<double> analytic;
  for (const auto& p : probes) analytic.push_back(p.node->has_grad() ? p.node->grad[p.index] : 0.0);
  nn::release_graph(root);

  GradCheck out;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    double& v = probes[k].node->value.data[probes[k].index];
    const double saved = v;
    v = saved + step;
    const double up = loss()->value.data[0];
    v = saved - step;
    const double down = loss()->value.data[0];
    v = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[k] - numeric) / scale);
    out.nonzero += scale > floor;
    ++out.probes;
  }
  return out;
}

/// `count` random entries drawn across all parameters of a store (uniform
/// over tensors, then over entries).
inline std::vector<Probe> random_param_probes(const nn::ParamStore<double>& store, std::size_t count,
                                              std::mt19937_64& rng) {
  std::vector<nn::Var<double>> params;
  for (const auto& [path, var] : store.params()) params.push_back(var);
  std::vector<Probe> out;
  for (std::size_t k = 0; k < count; ++k) {
    const auto& var = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    out.push_back({var, std::uniform_int_distribution<std::size_t>(0, var->value.numel() - 1)(rng)});
  }
  return out;
}

/// Every entry of every listed node, up to `limit` per node.
inline std::vector<Probe> all_probes(const std::vector<nn::Var<double>>& nodes, std::size_t limit = 64) {
  std::vector<Probe> out;
  for (const auto& n : nodes) {
    const std::size_t m = std::min(limit, n->value.numel());
    for (std::size_t i = 0; i < m; ++i) out.push_back({n, i * (n->value.numel() / m)});
  }
  return out;
}

}  // namespace thz::testing
