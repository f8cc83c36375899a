#include "dcap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dcap {

namespace {

std::size_t checked_size(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw ShapeError("tensor rank must be 1..3, got shape " + shape_string(shape));
  }
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

// Extents before, at, and after `axis`.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const std::vector<std::size_t>& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  values_.assign(checked_size(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (checked_size(shape_) != values_.size()) {
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t w = size() / shape_[0];
  return {values_.data() + i * w, w};
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t w = size() / shape_[0];
  return {values_.data() + i * w, w};
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " requires a rank-2 tensor, got " + shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor c({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a.at(i, t);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) c.at(i, j) += av * b.at(t, j);
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(0);
  Tensor c({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a.at(i, t) * b.at(j, t);
      c.at(i, j) = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("matmul_tn mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(1), k = a.dim(0), p = b.dim(1);
  Tensor c({m, p});
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a.at(t, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) c.at(i, j) += av * b.at(t, j);
    }
  }
  return c;
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = a.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= denom;
  }
  return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
  if (!a.same_shape(b)) {
    throw ShapeError("elementwise mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out(a.shape());
  const std::size_t n = a.size();
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

Tensor reduce(const Tensor& a, std::size_t axis, Reduce kind) {
  if (axis >= a.rank()) {
    throw ShapeError("reduce axis " + std::to_string(axis) + " out of range for shape " + shape_string(a.shape()));
  }
  const AxisSplit s = split_at(a.shape(), axis);
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);  // reducing a vector yields a scalar
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double acc = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        acc += a[(o * s.extent + e) * s.inner + in];
      }
      out[o * s.inner + in] = kind == Reduce::mean ? acc / static_cast<double>(s.extent) : acc;
    }
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat requires at least one part");
  const Tensor& first = parts[0];
  if (axis >= first.rank()) {
    throw ShapeError("concat axis " + std::to_string(axis) + " out of range for shape " + shape_string(first.shape()));
  }
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) {
      throw ShapeError("concat rank mismatch: " + shape_string(first.shape()) + " vs " + shape_string(p.shape()));
    }
    for (std::size_t i = 0; i < first.rank(); ++i) {
      if (i != axis && p.shape()[i] != first.shape()[i]) {
        throw ShapeError("concat extent mismatch on axis " + std::to_string(i) + ": " +
                         shape_string(first.shape()) + " vs " + shape_string(p.shape()));
      }
    }
    total += p.shape()[axis];
  }
  std::vector<std::size_t> out_shape = first.shape();
  out_shape[axis] = total;
  Tensor out(out_shape);
  const AxisSplit so = split_at(out_shape, axis);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const AxisSplit sp = split_at(p.shape(), axis);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double* src = p.data() + (o * sp.extent + e) * sp.inner;
        double* dst = out.data() + (o * so.extent + offset + e) * so.inner;
        std::copy(src, src + sp.inner, dst);
      }
    }
    offset += p.shape()[axis];
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return out;
}

void add_in_place(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add_in_place mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

double l2_norm(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
  return std::sqrt(acc);
}

}  // namespace dcap
