#include "dcap/tape.hpp"

#include <cmath>
#include <utility>

namespace dcap {

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  nodes_.push_back(Node{std::move(value), std::move(fn), requires_grad});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::make_node(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
  return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = dcap::matmul(value(a), value(b));
  const Var parents[] = {a, b};
  return make_node(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate_grad(a, dcap::matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) t.accumulate_grad(b, dcap::matmul_tn(t.value(a), g));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  Tensor out = dcap::matmul_nt(value(a), value(b));
  const Var parents[] = {a, b};
  return make_node(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate_grad(a, dcap::matmul(g, t.value(b)));
    if (t.requires_grad(b)) t.accumulate_grad(b, dcap::matmul_tn(g, t.value(a)));
  });
}

Var Tape::elementwise(Var a, Var b, Elementwise kind) {
  Tensor out = dcap::elementwise(value(a), value(b), kind);
  const Var parents[] = {a, b};
  return make_node(std::move(out), parents, [a, b, kind](Tape& t, const Tensor& g) {
    switch (kind) {
      case Elementwise::add:
        t.accumulate_grad(a, g);
        t.accumulate_grad(b, g);
        break;
      case Elementwise::sub:
        t.accumulate_grad(a, g);
        t.accumulate_grad(b, dcap::scale(g, -1.0));
        break;
      case Elementwise::mul:
        if (t.requires_grad(a)) t.accumulate_grad(a, dcap::elementwise(g, t.value(b), Elementwise::mul));
        if (t.requires_grad(b)) t.accumulate_grad(b, dcap::elementwise(g, t.value(a), Elementwise::mul));
        break;
    }
  });
}

Var Tape::softmax_rows(Var a) {
  Tensor out = dcap::softmax_rows(value(a));
  // the node pushed below gets this id; its value is the softmax output
  const Var self{static_cast<std::uint32_t>(nodes_.size())};
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a, self](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(self);
    Tensor da(s.shape());
    const std::size_t m = s.dim(0), n = s.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * s.at(i, j);
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) = s.at(i, j) * (g.at(i, j) - dot);
    }
    t.accumulate_grad(a, da);
  });
}

Var Tape::reduce(Var a, std::size_t axis, Reduce kind) {
  Tensor out = dcap::reduce(value(a), axis, kind);
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a, axis, kind](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    std::size_t outer = 1, inner = 1;
    const std::size_t extent = av.shape()[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= av.shape()[i];
    for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.shape()[i];
    const double w = kind == Reduce::mean ? 1.0 / static_cast<double>(extent) : 1.0;
    Tensor da(av.shape());
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t e = 0; e < extent; ++e) {
        for (std::size_t in = 0; in < inner; ++in) {
          da[(o * extent + e) * inner + in] = g[o * inner + in] * w;
        }
      }
    }
    t.accumulate_grad(a, da);
  });
}

Var Tape::concat(std::span<const Var> parts, std::size_t axis) {
  std::vector<Tensor> vals;
  vals.reserve(parts.size());
  for (Var p : parts) vals.push_back(value(p));
  Tensor out = dcap::concat(vals, axis);
  std::vector<Var> ids(parts.begin(), parts.end());
  return make_node(std::move(out), parts, [ids = std::move(ids), axis](Tape& t, const Tensor& g) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= g.shape()[i];
    for (std::size_t i = axis + 1; i < g.rank(); ++i) inner *= g.shape()[i];
    const std::size_t total = g.shape()[axis];
    std::size_t offset = 0;
    for (Var p : ids) {
      const Tensor& pv = t.value(p);
      const std::size_t extent = pv.shape()[axis];
      if (t.requires_grad(p)) {
        Tensor dp(pv.shape());
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t e = 0; e < extent; ++e) {
            const double* src = g.data() + (o * total + offset + e) * inner;
            double* dst = dp.data() + (o * extent + e) * inner;
            for (std::size_t in = 0; in < inner; ++in) dst[in] = src[in];
          }
        }
        t.accumulate_grad(p, dp);
      }
      offset += extent;
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = dcap::scale(value(a), c);
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a, c](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, dcap::scale(g, c));
  });
}

Var Tape::scale_by(Var a, Tensor mask) {
  Tensor out = dcap::elementwise(value(a), mask, Elementwise::mul);
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a, mask = std::move(mask)](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, dcap::elementwise(g, mask, Elementwise::mul));
  });
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  Tensor out(shape, value(a).values());
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, Tensor(t.value(a).shape(), g.values()));
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    Tensor da(av.shape());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = av[i] > 0.0 ? g[i] : 0.0;
    t.accumulate_grad(a, da);
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  const Var self{static_cast<std::uint32_t>(nodes_.size())};
  const Var parents[] = {a};
  return make_node(std::move(out), parents, [a, self](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(self);
    Tensor da(s.shape());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = g[i] * s[i] * (1.0 - s[i]);
    t.accumulate_grad(a, da);
  });
}

Var Tape::gather_rows(Var table, std::vector<std::uint32_t> ids) {
  const Tensor& tv = value(table);
  if (tv.rank() != 2) throw ShapeError("gather_rows requires a rank-2 table, got " + shape_string(tv.shape()));
  const std::size_t d = tv.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.dim(0)) {
      throw ContractError("gather_rows id " + std::to_string(ids[r]) + " out of range for table " +
                          shape_string(tv.shape()));
    }
    const auto src = tv.row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const Var parents[] = {table};
  return make_node(std::move(out), parents, [table, ids = std::move(ids)](Tape& t, const Tensor& g) {
    Tensor* buf = t.grad_buffer(table);
    if (!buf) return;
    const std::size_t d = buf->dim(1);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      double* dst = buf->data() + ids[r] * d;
      const double* src = g.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::bce(Var prob, double label, double eps) {
  const Tensor& pv = value(prob);
  if (pv.size() != 1) throw ContractError("bce expects a scalar probability");
  const double p = std::min(std::max(pv[0], eps), 1.0 - eps);
  const double loss = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  const Var parents[] = {prob};
  return make_node(Tensor::scalar(loss), parents, [prob, label, eps](Tape& t, const Tensor& g) {
    const double raw = t.value(prob)[0];
    double dp = 0.0;
    if (raw > eps && raw < 1.0 - eps) {
      dp = (-label / raw + (1.0 - label) / (1.0 - raw)) * g[0];
    }
    t.accumulate_grad(prob, Tensor::scalar(dp));
  });
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) {
    throw ContractError("backward root must be a scalar, got shape " + shape_string(value(root).shape()));
  }
  grads_.assign(nodes_.size(), std::nullopt);
  Tensor seed(value(root).shape());
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = 1.0;
  grads_[root.id] = std::move(seed);
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.backprop || !grads_[id].has_value()) continue;
    node.backprop(*this, *grads_[id]);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id].has_value()) return *grads_[v.id];
  return Tensor::zeros_like(value(v));
}

Tensor* Tape::grad_buffer(Var v) {
  if (!nodes_[v.id].requires_grad) return nullptr;
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  if (!grads_[v.id].has_value()) grads_[v.id] = Tensor::zeros_like(nodes_[v.id].value);
  return &*grads_[v.id];
}

void Tape::accumulate_grad(Var v, const Tensor& delta) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor* buf = grad_buffer(v);
  add_in_place(*buf, delta);
}

}  // namespace dcap
