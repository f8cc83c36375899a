#include "dcap/attention.hpp"

#include <cmath>
#include <string>

namespace dcap {
namespace {

Tensor uniform_init(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor m({rows, cols});
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

MultiHeadParams init_attention(std::size_t d, std::size_t h, Rng& rng) {
  if (h < 1) throw ConfigError("head count must be >= 1");
  if (d % h != 0)
    throw ConfigError("embedding dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(h) + " heads");
  const std::size_t d_v = d / h;
  MultiHeadParams p;
  for (std::size_t i = 0; i < h; ++i) {
    p.wq.push_back(uniform_init(d, d_v, rng));
    p.wk.push_back(uniform_init(d, d_v, rng));
    p.wv.push_back(uniform_init(d, d_v, rng));
  }
  p.wo = uniform_init(h * d_v, d, rng);
  return p;
}

MultiHeadVars attention_leaves(Tape& tape, const MultiHeadParams& p) {
  MultiHeadVars v;
  for (std::size_t i = 0; i < p.heads(); ++i) {
    v.wq.push_back(tape.leaf(p.wq[i]));
    v.wk.push_back(tape.leaf(p.wk[i]));
    v.wv.push_back(tape.leaf(p.wv[i]));
  }
  v.wo = tape.leaf(p.wo);
  return v;
}

MultiHeadVars attention_constants(Tape& tape, const MultiHeadParams& p) {
  MultiHeadVars v;
  for (std::size_t i = 0; i < p.heads(); ++i) {
    v.wq.push_back(tape.constant(p.wq[i]));
    v.wk.push_back(tape.constant(p.wk[i]));
    v.wv.push_back(tape.constant(p.wv[i]));
  }
  v.wo = tape.constant(p.wo);
  return v;
}

ScaledAttentionOut scaled_attention(Tape& tape, Var q, Var k, Var v,
                                    const Tensor* frozen_alpha) {
  const Tensor& qv = tape.value(q);
  const Tensor& kv = tape.value(k);
  const Tensor& vv = tape.value(v);
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2)
    throw ContractError("scaled_attention expects rank-2 Q, K, V");
  const std::size_t n = qv.dim(0);
  if (kv.dim(0) != n || vv.dim(0) != n)
    throw ShapeError("Q, K, V row counts differ: " + shape_string(qv.shape()) +
                     " " + shape_string(kv.shape()) + " " + shape_string(vv.shape()));
  ScaledAttentionOut out;
  if (frozen_alpha) {
    out.alpha = tape.constant(*frozen_alpha);
  } else {
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(qv.dim(1)));
    Var logits = tape.scale(tape.matmul_nt(q, k), inv_scale);
    out.alpha = tape.softmax_rows(logits);
  }
  out.z = tape.matmul(out.alpha, v);
  return out;
}

MultiHeadOut multi_head(Tape& tape, Var x, const MultiHeadVars& params,
                        bool residual, const std::vector<Tensor>* frozen_alpha) {
  const std::size_t h = params.wq.size();
  if (h == 0) throw ConfigError("attention block has no heads");
  if (frozen_alpha && frozen_alpha->size() != h)
    throw ContractError("frozen coefficients must cover every head");
  const Tensor& xv = tape.value(x);
  const std::size_t d = tape.value(params.wq[0]).dim(0);
  if (xv.rank() != 2 || xv.dim(1) != d)
    throw ShapeError("attention input " + shape_string(xv.shape()) +
                     " does not match projection width " + std::to_string(d));
  MultiHeadOut out;
  std::vector<Var> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    Var q = tape.matmul(x, params.wq[i]);
    Var k = tape.matmul(x, params.wk[i]);
    Var v = tape.matmul(x, params.wv[i]);
    ScaledAttentionOut head =
        scaled_attention(tape, q, k, v, frozen_alpha ? &(*frozen_alpha)[i] : nullptr);
    heads.push_back(head.z);
    out.alpha.push_back(head.alpha);
  }
  out.z = tape.matmul(tape.concat(heads, 1), params.wo);
  if (residual) out.z = tape.add(out.z, x);
  return out;
}

}  // namespace dcap
