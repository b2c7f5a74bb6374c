#pragma once

#include <vector>

#include "geoecon/tape.hpp"
#include "geoecon/tensor.hpp"

// Differentiable primitives. Matrix-valued operands are rank-2 [rows x cols];
// bias/scale vectors are rank-1. Shape violations throw ShapeError.
namespace geoecon::ops {

Var matmul(const Var& a, const Var& b);     // [m x k] . [k x n]
Var matmul_nt(const Var& a, const Var& b);  // [m x k] . [n x k]^T
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);  // bias broadcast over rows
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var relu(const Var& x);
Var gelu(const Var& x);  // exact erf form

// Row-wise softmax with max subtraction.
Var softmax_rows(const Var& x);

// Standardises each row over its last dimension, then applies gamma/beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

Var sum(const Var& x);
Var mean(const Var& x);

// Mean squared residual; differentiable in both arguments.
Var mse(const Var& yhat, const Var& y);

// Inverted dropout: entries are 0 with probability `rate`, else 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);
Var apply_mask(const Var& x, const Tensor& mask);

inline Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

}  // namespace geoecon::ops
