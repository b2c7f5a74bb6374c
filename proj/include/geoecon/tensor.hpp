#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace geoecon {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major float64 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Leading dims flattened; last dim kept. A rank-1 tensor is one row.
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  void fill(double v);
  Tensor reshaped(Shape s) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Seeded generator threaded explicitly through every stochastic operation.
// Conversions to real values are implemented here (not via <random>
// distributions) so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next();
  double uniform();  // [0, 1)
  double normal();
  std::uint64_t below(std::uint64_t n);
  bool coin() { return (next() >> 63) != 0; }
  Rng fork(std::uint64_t stream);

 private:
  std::uint64_t state_;
};

}  // namespace geoecon
