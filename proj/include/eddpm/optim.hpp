#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace eddpm {

/// Adam moments, one slot per parameter tensor. Each slot keeps its own step
/// count so a parameter that sits out some updates still gets exact bias correction.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::vector<std::uint64_t> steps;

  void resize_for(const std::vector<const Tensor*>& params) {
    m.clear();
    v.clear();
    steps.assign(params.size(), 0);
    for (const auto* p : params) {
      m.emplace_back(p->size(), 0.0);
      v.emplace_back(p->size(), 0.0);
    }
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam update (no weight decay) of `param` in slot `slot` from `param.grad`.
inline void adam_update(AdamState& opt, std::size_t slot, Tensor& param, double lr) {
  if (slot >= opt.m.size() || opt.m[slot].size() != param.size())
    throw ShapeError("adam_update: moment shape does not match parameter");
  if (param.grad.size() != param.size()) throw StateError("adam_update: parameter has no gradient");
  auto& m = opt.m[slot];
  auto& v = opt.v[slot];
  const auto t = ++opt.steps[slot];
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = param.grad[k];
    m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g;
    v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g * g;
    param.data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + opt.eps);
  }
}

}  // namespace eddpm
