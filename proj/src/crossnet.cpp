#include "dcap/crossnet.hpp"

#include <string>

namespace dcap {
namespace {

void require_equal_vectors(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
    throw ShapeError("product operands must be equal-length vectors, got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

/// n x d -> n x d matrix whose every entry in row i is sum of b's row i.
Var row_sums_spread(Tape& tape, Var b) {
  const std::size_t d = tape.value(b).dim(1);
  Var ones = tape.constant(Tensor({d, d}, std::vector<double>(d * d, 1.0)));
  return tape.matmul(b, ones);
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> pair_index(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  return pairs;
}

Var inner_product(Tape& tape, Var a, Var b) {
  require_equal_vectors(tape.value(a), tape.value(b));
  return tape.mul(a, b);
}

Var outer_product(Tape& tape, Var a, Var b) {
  require_equal_vectors(tape.value(a), tape.value(b));
  const std::size_t d = tape.value(a).size();
  Var spread = row_sums_spread(tape, tape.reshape(b, {1, d}));
  return tape.reshape(tape.mul(tape.reshape(a, {1, d}), spread), {d});
}

Var pair_products(Tape& tape, Var z, Var x, ProductKind kind) {
  const Tensor& zv = tape.value(z);
  const Tensor& xv = tape.value(x);
  if (zv.rank() != 2 || !zv.same_shape(xv))
    throw ShapeError("pair_products needs matching n x d operands, got " +
                     shape_string(zv.shape()) + " and " + shape_string(xv.shape()));
  const std::size_t n = zv.dim(0);
  if (n < 2) throw ContractError("pairwise products need at least 2 fields");
  std::vector<std::uint32_t> left, right;
  for (auto [i, j] : pair_index(n)) {
    left.push_back(static_cast<std::uint32_t>(i));
    right.push_back(static_cast<std::uint32_t>(j));
  }
  Var z_rows = tape.gather_rows(z, std::move(left));
  Var other = kind == ProductKind::inner ? x : row_sums_spread(tape, x);
  Var x_rows = tape.gather_rows(other, std::move(right));
  return tape.mul(z_rows, x_rows);
}

Var sum_embedding_axis(Tape& tape, Var p) {
  if (tape.value(p).rank() != 2)
    throw ContractError("sum_embedding_axis expects a rank-2 input");
  return tape.reduce(p, 1, Reduce::sum);
}

Var adaptive_avg_pool(Tape& tape, Var p, std::size_t target_rows) {
  const Tensor& pv = tape.value(p);
  if (pv.rank() != 2) throw ContractError("adaptive_avg_pool expects a rank-2 input");
  const std::size_t m = pv.dim(0);
  if (target_rows < 1 || target_rows > m)
    throw ConfigError("cannot pool " + std::to_string(m) + " rows to " +
                      std::to_string(target_rows));
  Tensor weights({target_rows, m});
  for (std::size_t i = 0; i < target_rows; ++i) {
    const std::size_t lo = i * m / target_rows;
    const std::size_t hi = ((i + 1) * m + target_rows - 1) / target_rows;  // ceil
    for (std::size_t r = lo; r < hi; ++r)
      weights.at(i, r) = 1.0 / static_cast<double>(hi - lo);
  }
  return tape.matmul(tape.constant(std::move(weights)), p);
}

std::size_t pooled_length(std::size_t l_in, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  if (kernel < 1 || stride < 1) throw ConfigError("kernel and stride must be >= 1");
  if (l_in + 2 * padding < kernel)
    throw ConfigError("kernel larger than padded input");
  return (l_in + 2 * padding - kernel) / stride + 1;
}

LayerTrace layer_forward(Tape& tape, Var x_l, Var x0, const MultiHeadVars& params,
                         ProductKind kind, bool residual,
                         const std::vector<Tensor>* frozen_alpha) {
  LayerTrace trace;
  MultiHeadOut attn = multi_head(tape, x_l, params, residual, frozen_alpha);
  trace.z = attn.z;
  trace.alpha = std::move(attn.alpha);
  trace.p = pair_products(tape, trace.z, x0, kind);
  trace.y = sum_embedding_axis(tape, trace.p);
  trace.x_next = adaptive_avg_pool(tape, trace.p, tape.value(x_l).dim(0));
  return trace;
}

std::vector<LayerTrace> stack_layers(
    Tape& tape, Var x0, const std::vector<MultiHeadVars>& params, ProductKind kind,
    bool residual, const std::vector<std::vector<Tensor>>* frozen_alpha) {
  if (params.empty()) throw ConfigError("network needs at least one cross layer");
  if (frozen_alpha && frozen_alpha->size() != params.size())
    throw ContractError("frozen coefficients must cover every layer");
  std::vector<LayerTrace> traces;
  traces.reserve(params.size());
  Var x = x0;
  for (std::size_t l = 0; l < params.size(); ++l) {
    traces.push_back(layer_forward(tape, x, x0, params[l], kind, residual,
                                   frozen_alpha ? &(*frozen_alpha)[l] : nullptr));
    x = traces.back().x_next;
  }
  return traces;
}

}  // namespace dcap
