#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dcap/error.hpp"

namespace dcap {

/// Dense row-major array of doubles with rank 1 to 3. Tensors are plain
/// values; all model quantities (embeddings, projections, activations,
/// gradients) are stored in this one type.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  /// Rank-2 element access.
  double at(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }

  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  std::span<const double> row(std::size_t i) const;
  std::span<double> row(std::size_t i);

  bool all_finite() const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class Elementwise { add, sub, mul };
enum class Reduce { sum, mean };

/// a[m x k] * b[k x p]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[p x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a[k x m]^T * b[k x p]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// Row-wise softmax of a rank-2 tensor; stable under large magnitudes
/// via per-row max subtraction.
Tensor softmax_rows(const Tensor& a);

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind);

/// Removes `axis`; entries are summed (or averaged) along it.
Tensor reduce(const Tensor& a, std::size_t axis, Reduce kind);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);

Tensor scale(const Tensor& a, double c);

void add_in_place(Tensor& a, const Tensor& b);

double l2_norm(const Tensor& a);

}  // namespace dcap
