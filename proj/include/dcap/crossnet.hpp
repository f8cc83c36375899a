#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "dcap/attention.hpp"
#include "dcap/tape.hpp"

namespace dcap {

enum class ProductKind { inner, outer };

/// All unordered field pairs (i, j) with i < j, lexicographically ordered;
/// length n(n-1)/2.
std::vector<std::pair<std::size_t, std::size_t>> pair_index(std::size_t n);

/// Component i of the result is a_i * b_i (a d-vector, not a scalar).
Var inner_product(Tape& tape, Var a, Var b);

/// Component i of the result is a_i * sum(b).
Var outer_product(Tape& tape, Var a, Var b);

/// Row for pair (i, j) is product(z_i, x_j) in pair_index order. The right
/// operand is the original input embedding, not the current layer state.
Var pair_products(Tape& tape, Var z, Var x, ProductKind kind);

/// Collapses the embedding axis: Y_k = sum_d P[k, d].
Var sum_embedding_axis(Tape& tape, Var p);

/// Output row i averages input rows [floor(i*m/n), ceil((i+1)*m/n)); each
/// embedding column pools independently.
Var adaptive_avg_pool(Tape& tape, Var p, std::size_t target_rows);

/// floor((l_in + 2*padding - kernel) / stride) + 1
std::size_t pooled_length(std::size_t l_in, std::size_t kernel, std::size_t stride,
                          std::size_t padding = 0);

struct LayerTrace {
  Var z;                   // n x d attention output
  Var p;                   // n(n-1)/2 x d pairwise products
  Var y;                   // n(n-1)/2 cross-feature sums
  Var x_next;              // n x d pooled state for the next layer
  std::vector<Var> alpha;  // per-head attention coefficients
};

LayerTrace layer_forward(Tape& tape, Var x_l, Var x0, const MultiHeadVars& params,
                         ProductKind kind, bool residual = false,
                         const std::vector<Tensor>* frozen_alpha = nullptr);

/// Layer l+1 consumes layer l's pooled state; the product right-operand is
/// always the original x0.
std::vector<LayerTrace> stack_layers(
    Tape& tape, Var x0, const std::vector<MultiHeadVars>& params, ProductKind kind,
    bool residual = false,
    const std::vector<std::vector<Tensor>>* frozen_alpha = nullptr);

}  // namespace dcap
