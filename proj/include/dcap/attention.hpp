#pragma once

#include <vector>

#include "dcap/rng.hpp"
#include "dcap/tape.hpp"

namespace dcap {

/// Per-head projections (each d x d_v with d_v = d/h) and the output
/// projection (h*d_v x d). All projections are bias-free.
struct MultiHeadParams {
  std::vector<Tensor> wq, wk, wv;
  Tensor wo;

  std::size_t heads() const { return wq.size(); }
  std::size_t model_dim() const { return wq.empty() ? 0 : wq[0].dim(0); }
  std::size_t head_dim() const { return wq.empty() ? 0 : wq[0].dim(1); }
};

/// Tape handles for one attention block's parameters.
struct MultiHeadVars {
  std::vector<Var> wq, wk, wv;
  Var wo;
};

/// Entries uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
MultiHeadParams init_attention(std::size_t d, std::size_t h, Rng& rng);

MultiHeadVars attention_leaves(Tape& tape, const MultiHeadParams& p);
MultiHeadVars attention_constants(Tape& tape, const MultiHeadParams& p);

struct ScaledAttentionOut {
  Var z;      // n x d_v
  Var alpha;  // n x n, rows sum to 1
};

/// softmax(Q K^T / sqrt(d_v)) V. When frozen_alpha is given the softmax is
/// skipped and the supplied coefficients are used as constants.
ScaledAttentionOut scaled_attention(Tape& tape, Var q, Var k, Var v,
                                    const Tensor* frozen_alpha = nullptr);

struct MultiHeadOut {
  Var z;                   // n x d
  std::vector<Var> alpha;  // per head, n x n
};

/// Heads run independently on the same input, are concatenated and projected.
/// residual adds the input back onto the projection (off by default).
MultiHeadOut multi_head(Tape& tape, Var x, const MultiHeadVars& params,
                        bool residual = false,
                        const std::vector<Tensor>* frozen_alpha = nullptr);

}  // namespace dcap
