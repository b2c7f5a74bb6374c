#include "geoecon/adam.hpp"

#include <cmath>

#include "geoecon/error.hpp"

namespace geoecon {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " grads");
  if (state.t < 0) throw ContractError("adam_step: negative step counter");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.m[i].shape())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " shape " +
                       shape_str(params[i]->shape()) + " vs grad " + shape_str(grads[i]->shape()));
  }

  const AdamConfig& c = state.config;
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace geoecon
