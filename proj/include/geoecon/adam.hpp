#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "geoecon/tensor.hpp"

namespace geoecon {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
};

// One bias-corrected Adam update. Moments are created on the first call;
// later calls must pass parameters in the same order and shapes.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state);

}  // namespace geoecon
