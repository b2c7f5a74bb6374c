#include "geoecon/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "geoecon/error.hpp"

namespace geoecon::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}
Map as_mat(Tensor& t) {
  return Map(t.data().data(), static_cast<Eigen::Index>(t.rows()),
             static_cast<Eigen::Index>(t.cols()));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void accumulate(Tensor* slot, const Tensor& g) {
  if (!slot) return;
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out = x;
  for (auto& v : out.vec()) v = f(v);
  return out;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner dims differ " + shape_str(A.shape()) + " . " +
                     shape_str(B.shape()));
  Tensor out({A.dim(0), B.dim(1)});
  as_mat(out).noalias() = as_mat(A) * as_mat(B);
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    const auto G = as_mat(g);
    if (Tensor* ga = t.grad_slot(a.id())) as_mat(*ga).noalias() += G * as_mat(b.value()).transpose();
    if (Tensor* gb = t.grad_slot(b.id())) as_mat(*gb).noalias() += as_mat(a.value()).transpose() * G;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  if (A.dim(1) != B.dim(1))
    throw ShapeError("matmul_nt: inner dims differ " + shape_str(A.shape()) + " . " +
                     shape_str(B.shape()) + "^T");
  Tensor out({A.dim(0), B.dim(0)});
  as_mat(out).noalias() = as_mat(A) * as_mat(B).transpose();
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    const auto G = as_mat(g);
    if (Tensor* ga = t.grad_slot(a.id())) as_mat(*ga).noalias() += G * as_mat(b.value());
    if (Tensor* gb = t.grad_slot(b.id())) as_mat(*gb).noalias() += G.transpose() * as_mat(a.value());
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  require_matrix(A, "transpose");
  Tensor out({A.dim(1), A.dim(0)});
  as_mat(out) = as_mat(A).transpose();
  return a.tape()->push(std::move(out), {a}, [a](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a.id())) as_mat(*ga) += as_mat(g).transpose();
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  {
    auto d = out.data();
    auto s = b.value().data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    accumulate(t.grad_slot(a.id()), g);
    accumulate(t.grad_slot(b.id()), g);
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  if (B.rank() != 1 || B.dim(0) != X.cols())
    throw ShapeError("add_bias: bias " + shape_str(B.shape()) + " vs input " +
                     shape_str(X.shape()));
  Tensor out = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += B[c];
  return x.tape()->push(std::move(out), {x, bias}, [x, bias, n](const Tensor& g, const Tensor&, Tape& t) {
    accumulate(t.grad_slot(x.id()), g);
    if (Tensor* gb = t.grad_slot(bias.id()))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % n] += g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  {
    auto d = out.data();
    auto s = b.value().data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s[i];
  }
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a.id())) {
      const auto& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_slot(b.id())) {
      const auto& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = map_values(a.value(), [s](double v) { return v * s; });
  return a.tape()->push(std::move(out), {a}, [a, s](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a.id()))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * s;
  });
}

Var relu(const Var& x) {
  Tensor out = map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.tape()->push(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* gx = t.grad_slot(x.id())) {
      const auto& xv = x.value();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Tensor out = map_values(x.value(), [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return x.tape()->push(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* gx = t.grad_slot(x.id())) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      const auto& xv = x.value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*gx)[i] += g[i] * (cdf + v * pdf);
      }
    }
  });
}

Var softmax_rows(const Var& x) {
  const Tensor& X = x.value();
  Tensor out = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double* row = out.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      row[c] = std::exp(row[c] - mx);
      s += row[c];
    }
    for (std::size_t c = 0; c < n; ++c) row[c] /= s;
  }
  return x.tape()->push(std::move(out), {x}, [x, n](const Tensor& g, const Tensor& Y, Tape& t) {
    Tensor* gx = t.grad_slot(x.id());
    if (!gx) return;
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * Y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) (*gx)[r * n + c] += Y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t d = X.cols();
  if (gamma.value().shape() != Shape{d} || beta.value().shape() != Shape{d})
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(d) + "], got " +
                     shape_str(gamma.value().shape()) + " and " + shape_str(beta.value().shape()));
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  const std::size_t m = X.rows();
  Tensor xhat(X.shape());
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = X.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat[r * d + c] = (row[c] - mu) * inv_std[r];
  }
  Tensor out = xhat;
  const auto& G = gamma.value();
  const auto& B = beta.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = out[r * d + c] * G[c] + B[c];

  return x.tape()->push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor& g, const Tensor&, Tape& t) {
        if (Tensor* gb = t.grad_slot(beta.id()))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
        if (Tensor* gg = t.grad_slot(gamma.id()))
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % d] += g[i] * xhat[i];
        if (Tensor* gx = t.grad_slot(x.id())) {
          const auto& G = gamma.value();
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < m; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = g[r * d + c] * G[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat[r * d + c];
            }
            mean_d /= static_cast<double>(d);
            mean_dx /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c)
              (*gx)[r * d + c] += inv_std[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
          }
        }
      });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  require_matrix(X, "slice_rows");
  if (count == 0 || begin + count > X.dim(0))
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(X.shape()));
  const std::size_t n = X.cols();
  std::vector<double> data(X.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           X.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return x.tape()->push(Tensor({count, n}, std::move(data)), {x},
                        [x, begin, n](const Tensor& g, const Tensor&, Tape& t) {
                          if (Tensor* gx = t.grad_slot(x.id()))
                            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[begin * n + i] += g[i];
                        });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  require_matrix(X, "slice_cols");
  const std::size_t m = X.dim(0), n = X.dim(1);
  if (count == 0 || begin + count > n)
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(X.shape()));
  Tensor out({m, count});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = X[r * n + begin + c];
  return x.tape()->push(std::move(out), {x}, [x, begin, count, m, n](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* gx = t.grad_slot(x.id()))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < count; ++c) (*gx)[r * n + begin + c] += g[r * count + c];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows: column counts differ");
    m += p.value().rows();
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  return parts.front().tape()->push(Tensor({m, n}, std::move(data)), parts,
                                    [parts](const Tensor& g, const Tensor&, Tape& t) {
                                      std::size_t off = 0;
                                      for (const auto& p : parts) {
                                        const std::size_t len = p.value().size();
                                        if (Tensor* gp = t.grad_slot(p.id()))
                                          for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[off + i];
                                        off += len;
                                      }
                                    });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row counts differ");
    n += p.value().cols();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    const std::size_t w = P.cols();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * n + off + c] = P[r * w + c];
    off += w;
  }
  return parts.front().tape()->push(std::move(out), parts, [parts, m, n](const Tensor& g, const Tensor&, Tape& t) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().cols();
      if (Tensor* gp = t.grad_slot(p.id()))
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) (*gp)[r * w + c] += g[r * n + off + c];
      off += w;
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->push(Tensor::scalar(s), {x}, [x](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* gx = t.grad_slot(x.id()))
      for (auto& v : gx->vec()) v += g[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(const Var& yhat, const Var& y) {
  require_same(yhat.value(), y.value(), "mse");
  const auto& a = yhat.value();
  const auto& b = y.value();
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return yhat.tape()->push(Tensor::scalar(s / n), {yhat, y}, [yhat, y, n](const Tensor& g, const Tensor&, Tape& t) {
    const auto& a = yhat.value();
    const auto& b = y.value();
    if (Tensor* ga = t.grad_slot(yhat.id()))
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g[0] * 2.0 * (a[i] - b[i]) / n;
    if (Tensor* gb = t.grad_slot(y.id()))
      for (std::size_t i = 0; i < a.size(); ++i) (*gb)[i] -= g[0] * 2.0 * (a[i] - b[i]) / n;
  });
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must be in [0, 1)");
  Tensor mask(shape, 1.0);
  if (rate == 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : mask.vec()) v = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

Var apply_mask(const Var& x, const Tensor& mask) {
  return mul(x, x.tape()->constant(mask));
}

}  // namespace geoecon::ops
