#include "dcap/model.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "binio.hpp"

namespace dcap {
namespace {

using binio::get_bytes;
using binio::get_f64;
using binio::put_bytes;
using binio::put_f64;

constexpr char kCheckpointMagic[] = "DCAPCK1";
constexpr std::uint8_t kCheckpointVersion = 1;

Tensor uniform_init(std::size_t rows, std::size_t cols, Rng& rng, double bound) {
  Tensor m({rows, cols});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
  return m;
}

DenseLayer init_dense(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer;
  layer.w = uniform_init(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  layer.b = Tensor({1, out});
  return layer;
}

/// w x + b, as a 1 x out row.
Var dense(Tape& tape, Var x, Var w, Var b) {
  return tape.add(tape.matmul(x, w), b);
}

std::vector<std::size_t> field_rows(const std::vector<Tensor>& tables) {
  std::vector<std::size_t> rows;
  rows.reserve(tables.size());
  for (const auto& t : tables) rows.push_back(t.dim(0));
  return rows;
}

}  // namespace

void DcapConfig::validate() const {
  if (n < 3)
    throw ConfigError("need at least 3 fields so that n(n-1)/2 >= n rows can "
                      "be pooled back to n");
  if (d < 1 || heads < 1 || d % heads != 0)
    throw ConfigError("embedding width " + std::to_string(d) +
                      " must be a positive multiple of " + std::to_string(heads) +
                      " heads");
  if (layers < 1) throw ConfigError("need at least one cross layer");
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("hidden sizes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("dropout must lie in [0, 1)");
}

DcapParams init_dcap(const DcapConfig& config,
                     const std::vector<std::size_t>& vocab_sizes, Rng& rng) {
  config.validate();
  if (vocab_sizes.size() != config.n)
    throw ConfigError("got " + std::to_string(vocab_sizes.size()) +
                      " vocabularies for " + std::to_string(config.n) + " fields");
  DcapParams p;
  p.config = config;
  p.embedding = init_embedding(vocab_sizes, config.d, rng);
  for (std::size_t l = 0; l < config.layers; ++l)
    p.attention.push_back(init_attention(config.d, config.heads, rng));
  p.head1 = init_dense(config.head_input(), config.hidden1, rng);
  p.head2 = init_dense(config.hidden1, config.hidden2, rng);
  p.head_out = init_dense(config.hidden2, 1, rng);
  return p;
}

LrParams init_lr(const std::vector<std::size_t>& vocab_sizes) {
  LrParams p;
  for (std::size_t rows : vocab_sizes) p.weights.push_back(Tensor({rows, 1}));
  p.bias = Tensor({1});
  return p;
}

FmParams init_fm(const std::vector<std::size_t>& vocab_sizes, std::size_t k,
                 Rng& rng) {
  if (k < 1) throw ConfigError("factor width must be >= 1");
  FmParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t rows : vocab_sizes) {
    p.weights.push_back(Tensor({rows, 1}));
    p.factors.push_back(uniform_init(rows, k, rng, bound));
  }
  p.bias = Tensor({1});
  return p;
}

namespace {

std::vector<Tensor*> strip_const(std::vector<const Tensor*> tensors) {
  std::vector<Tensor*> out;
  out.reserve(tensors.size());
  for (const Tensor* t : tensors) out.push_back(const_cast<Tensor*>(t));
  return out;
}

}  // namespace

std::vector<const Tensor*> param_tensors(const DcapParams& p) {
  std::vector<const Tensor*> out;
  for (const auto& field : p.embedding.fields) out.push_back(&field);
  for (const auto& block : p.attention) {
    for (const auto& w : block.wq) out.push_back(&w);
    for (const auto& w : block.wk) out.push_back(&w);
    for (const auto& w : block.wv) out.push_back(&w);
    out.push_back(&block.wo);
  }
  for (const DenseLayer* layer : {&p.head1, &p.head2, &p.head_out}) {
    out.push_back(&layer->w);
    out.push_back(&layer->b);
  }
  return out;
}

std::vector<const Tensor*> param_tensors(const LrParams& p) {
  std::vector<const Tensor*> out;
  for (const auto& w : p.weights) out.push_back(&w);
  out.push_back(&p.bias);
  return out;
}

std::vector<const Tensor*> param_tensors(const FmParams& p) {
  std::vector<const Tensor*> out;
  for (const auto& w : p.weights) out.push_back(&w);
  for (const auto& v : p.factors) out.push_back(&v);
  out.push_back(&p.bias);
  return out;
}

// Must mirror the param_tensors order above.
std::vector<Var> flat_vars(const DcapVars& vars) {
  std::vector<Var> flat(vars.embedding.begin(), vars.embedding.end());
  for (const MultiHeadVars& a : vars.attention) {
    flat.insert(flat.end(), a.wq.begin(), a.wq.end());
    flat.insert(flat.end(), a.wk.begin(), a.wk.end());
    flat.insert(flat.end(), a.wv.begin(), a.wv.end());
    flat.push_back(a.wo);
  }
  for (Var w : {vars.w1, vars.b1, vars.w2, vars.b2, vars.w3, vars.b3})
    flat.push_back(w);
  return flat;
}

std::vector<Var> flat_vars(const LrVars& vars) {
  std::vector<Var> flat(vars.weights.begin(), vars.weights.end());
  flat.push_back(vars.bias);
  return flat;
}

std::vector<Var> flat_vars(const FmVars& vars) {
  std::vector<Var> flat(vars.weights.begin(), vars.weights.end());
  flat.insert(flat.end(), vars.factors.begin(), vars.factors.end());
  flat.push_back(vars.bias);
  return flat;
}

std::vector<Tensor*> param_tensors(DcapParams& p) {
  return strip_const(param_tensors(static_cast<const DcapParams&>(p)));
}

std::vector<Tensor*> param_tensors(LrParams& p) {
  return strip_const(param_tensors(static_cast<const LrParams&>(p)));
}

std::vector<Tensor*> param_tensors(FmParams& p) {
  return strip_const(param_tensors(static_cast<const FmParams&>(p)));
}

namespace {

template <class Reg>
DcapVars dcap_register(const DcapParams& p, Reg&& reg) {
  DcapVars v;
  for (const auto& field : p.embedding.fields) v.embedding.push_back(reg(field));
  for (const auto& block : p.attention) {
    MultiHeadVars mv;
    for (const auto& w : block.wq) mv.wq.push_back(reg(w));
    for (const auto& w : block.wk) mv.wk.push_back(reg(w));
    for (const auto& w : block.wv) mv.wv.push_back(reg(w));
    mv.wo = reg(block.wo);
    v.attention.push_back(std::move(mv));
  }
  v.w1 = reg(p.head1.w);
  v.b1 = reg(p.head1.b);
  v.w2 = reg(p.head2.w);
  v.b2 = reg(p.head2.b);
  v.w3 = reg(p.head_out.w);
  v.b3 = reg(p.head_out.b);
  return v;
}

}  // namespace

DcapVars dcap_leaves(Tape& tape, const DcapParams& p) {
  return dcap_register(p, [&](const Tensor& t) { return tape.leaf(t); });
}

DcapVars dcap_constants(Tape& tape, const DcapParams& p) {
  return dcap_register(p, [&](const Tensor& t) { return tape.constant(t); });
}

Var dcap_sample_forward(Tape& tape, const DcapVars& vars, const DcapConfig& config,
                        const EncodedSample& sample, const Tensor* mask1,
                        const Tensor* mask2, std::vector<LayerTrace>* traces) {
  Var x0 = embed(tape, sample, vars.embedding);
  auto layer_traces =
      stack_layers(tape, x0, vars.attention, config.kind, config.residual);
  std::vector<Var> parts;
  parts.push_back(tape.reshape(x0, {1, config.n * config.d}));
  for (const auto& trace : layer_traces)
    parts.push_back(tape.reshape(trace.y, {1, config.cross_features()}));
  Var flat = tape.concat(parts, 1);

  Var a1 = tape.relu(dense(tape, flat, vars.w1, vars.b1));
  if (mask1) a1 = tape.scale_by(a1, *mask1);
  Var a2 = tape.relu(dense(tape, a1, vars.w2, vars.b2));
  if (mask2) a2 = tape.scale_by(a2, *mask2);
  Var logit = dense(tape, a2, vars.w3, vars.b3);
  if (traces) *traces = std::move(layer_traces);
  return tape.reshape(tape.sigmoid(logit), {1});
}

LrVars lr_leaves(Tape& tape, const LrParams& p) {
  LrVars v;
  for (const auto& w : p.weights) v.weights.push_back(tape.leaf(w));
  v.bias = tape.leaf(p.bias);
  return v;
}

LrVars lr_constants(Tape& tape, const LrParams& p) {
  LrVars v;
  for (const auto& w : p.weights) v.weights.push_back(tape.constant(w));
  v.bias = tape.constant(p.bias);
  return v;
}

namespace {

/// Stacks the selected weight rows of every field into an n x c matrix.
Var gather_active(Tape& tape, const std::vector<Var>& tables,
                  const EncodedSample& sample) {
  if (sample.feature_ids.size() != tables.size())
    throw ShapeError("sample has " + std::to_string(sample.feature_ids.size()) +
                     " ids for " + std::to_string(tables.size()) + " fields");
  std::vector<Var> rows;
  rows.reserve(tables.size());
  for (std::size_t f = 0; f < tables.size(); ++f) {
    const std::uint32_t id = sample.feature_ids[f];
    if (id >= tape.value(tables[f]).dim(0))
      throw DataError("field " + std::to_string(f) + ": id " + std::to_string(id) +
                      " outside table with " +
                      std::to_string(tape.value(tables[f]).dim(0)) + " rows");
    rows.push_back(tape.gather_rows(tables[f], {id}));
  }
  return tape.concat(rows, 0);
}

}  // namespace

Var lr_sample_forward(Tape& tape, const LrVars& vars, const EncodedSample& sample) {
  Var active = gather_active(tape, vars.weights, sample);  // n x 1
  Var sum = tape.reduce(tape.reshape(active, {sample.feature_ids.size()}), 0,
                        Reduce::sum);
  return tape.sigmoid(tape.add(sum, vars.bias));
}

FmVars fm_leaves(Tape& tape, const FmParams& p) {
  FmVars v;
  for (const auto& w : p.weights) v.weights.push_back(tape.leaf(w));
  for (const auto& f : p.factors) v.factors.push_back(tape.leaf(f));
  v.bias = tape.leaf(p.bias);
  return v;
}

FmVars fm_constants(Tape& tape, const FmParams& p) {
  FmVars v;
  for (const auto& w : p.weights) v.weights.push_back(tape.constant(w));
  for (const auto& f : p.factors) v.factors.push_back(tape.constant(f));
  v.bias = tape.constant(p.bias);
  return v;
}

Var fm_sample_forward(Tape& tape, const FmVars& vars, const EncodedSample& sample) {
  const std::size_t n = sample.feature_ids.size();
  Var linear = tape.reduce(
      tape.reshape(gather_active(tape, vars.weights, sample), {n}), 0, Reduce::sum);
  // pairwise interactions via 1/2 * [(sum v)^2 - sum v^2] per factor column
  Var v = gather_active(tape, vars.factors, sample);  // n x k
  Var col_sum = tape.reduce(v, 0, Reduce::sum);       // k
  Var square_of_sum = tape.mul(col_sum, col_sum);
  Var sum_of_square = tape.reduce(tape.mul(v, v), 0, Reduce::sum);
  Var pairwise = tape.scale(tape.sub(square_of_sum, sum_of_square), 0.5);
  Var interaction = tape.reduce(pairwise, 0, Reduce::sum);
  return tape.sigmoid(tape.add(tape.add(linear, interaction), vars.bias));
}

namespace {

constexpr std::size_t kEvalChunk = 256;

template <class MakeVars, class ForwardOne>
std::vector<double> batched_eval(std::size_t count, MakeVars&& make_vars,
                                 ForwardOne&& forward_one) {
  if (count == 0) throw ContractError("empty batch");
  std::vector<double> probs;
  probs.reserve(count);
  for (std::size_t start = 0; start < count; start += kEvalChunk) {
    const std::size_t stop = std::min(count, start + kEvalChunk);
    Tape tape;
    auto vars = make_vars(tape);
    for (std::size_t i = start; i < stop; ++i)
      probs.push_back(forward_one(tape, vars, i));
  }
  return probs;
}

}  // namespace

std::vector<double> dcap_forward(const DcapParams& params,
                                 std::span<const EncodedSample> batch,
                                 std::vector<ForwardTrace>* traces) {
  if (traces) {
    traces->clear();
    traces->reserve(batch.size());
  }
  return batched_eval(
      batch.size(),
      [&](Tape& tape) { return dcap_constants(tape, params); },
      [&](Tape& tape, const DcapVars& vars, std::size_t i) {
        std::vector<LayerTrace> layer_traces;
        Var p = dcap_sample_forward(tape, vars, params.config, batch[i], nullptr,
                                    nullptr, traces ? &layer_traces : nullptr);
        if (traces) {
          ForwardTrace trace;
          for (const auto& layer : layer_traces) {
            std::vector<Tensor> alphas;
            for (Var a : layer.alpha) alphas.push_back(tape.value(a));
            trace.alpha.push_back(std::move(alphas));
          }
          traces->push_back(std::move(trace));
        }
        return tape.value(p)[0];
      });
}

std::vector<double> lr_forward(const LrParams& params,
                               std::span<const EncodedSample> batch) {
  return batched_eval(
      batch.size(), [&](Tape& tape) { return lr_constants(tape, params); },
      [&](Tape& tape, const LrVars& vars, std::size_t i) {
        return tape.value(lr_sample_forward(tape, vars, batch[i]))[0];
      });
}

std::vector<double> fm_forward(const FmParams& params,
                               std::span<const EncodedSample> batch) {
  return batched_eval(
      batch.size(), [&](Tape& tape) { return fm_constants(tape, params); },
      [&](Tape& tape, const FmVars& vars, std::size_t i) {
        return tape.value(fm_sample_forward(tape, vars, batch[i]))[0];
      });
}

double logloss(std::span<const double> probabilities,
               std::span<const std::uint8_t> labels) {
  if (probabilities.empty()) throw ContractError("logloss of an empty batch");
  if (probabilities.size() != labels.size())
    throw ContractError("probability/label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = std::min(std::max(probabilities[i], kProbEps), 1.0 - kProbEps);
    total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(probabilities.size());
}

double objective(double loss, const std::vector<const Tensor*>& params,
                 double lambda) {
  if (lambda < 0.0) throw ContractError("regularization weight must be >= 0");
  double norm2 = 0.0;
  for (const Tensor* t : params)
    for (std::size_t i = 0; i < t->size(); ++i) norm2 += (*t)[i] * (*t)[i];
  return loss + lambda * norm2;
}

ModelKind params_kind(const AnyParams& p) {
  return std::holds_alternative<DcapParams>(p)   ? ModelKind::dcap
         : std::holds_alternative<LrParams>(p)   ? ModelKind::lr
                                                 : ModelKind::fm;
}

std::vector<Tensor*> param_tensors(AnyParams& p) {
  return std::visit([](auto& alt) { return param_tensors(alt); }, p);
}

std::vector<const Tensor*> param_tensors(const AnyParams& p) {
  return std::visit([](const auto& alt) { return param_tensors(alt); }, p);
}

namespace {

void put_tensor(std::ostream& os, const Tensor& t) {
  put_bytes(os, t.rank(), 1);
  for (std::size_t a = 0; a < t.rank(); ++a) put_bytes(os, t.dim(a), 4);
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

void get_tensor_into(std::istream& is, Tensor& t) {
  const std::size_t rank = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 1));
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
  if (dims != t.shape())
    throw CheckpointError("parameter shape " + shape_string(dims) +
                          " does not match expected " + shape_string(t.shape()));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64<CheckpointError>(is);
}

void put_rows(std::ostream& os, const std::vector<std::size_t>& rows) {
  for (std::size_t r : rows) put_bytes(os, r, 4);
}

std::vector<std::size_t> get_rows(std::istream& is, std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
  return rows;
}

}  // namespace

void save_checkpoint(const std::string& path, const AnyParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kCheckpointMagic, 7);
  put_bytes(os, kCheckpointVersion, 1);
  put_bytes(os, static_cast<std::uint64_t>(params_kind(params)), 1);
  std::vector<const Tensor*> tensors;
  if (const auto* dcap = std::get_if<DcapParams>(&params)) {
    const DcapConfig& c = dcap->config;
    put_bytes(os, c.n, 4);
    put_bytes(os, c.d, 4);
    put_bytes(os, c.layers, 4);
    put_bytes(os, c.heads, 4);
    put_bytes(os, static_cast<std::uint64_t>(c.kind), 1);
    put_bytes(os, c.hidden1, 4);
    put_bytes(os, c.hidden2, 4);
    put_f64(os, c.dropout);
    put_bytes(os, c.residual ? 1 : 0, 1);
    put_bytes(os, c.seed, 8);
    put_rows(os, field_rows(dcap->embedding.fields));
    tensors = param_tensors(*dcap);
  } else if (const auto* lr = std::get_if<LrParams>(&params)) {
    put_bytes(os, lr->weights.size(), 4);
    put_rows(os, field_rows(lr->weights));
    tensors = param_tensors(*lr);
  } else {
    const auto& fm = std::get<FmParams>(params);
    put_bytes(os, fm.weights.size(), 4);
    put_bytes(os, fm.factors.empty() ? 0 : fm.factors[0].dim(1), 4);
    put_rows(os, field_rows(fm.weights));
    tensors = param_tensors(fm);
  }
  for (const Tensor* t : tensors) put_tensor(os, *t);
  if (!os) throw IoError("write failed for " + path);
}

AnyParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[7];
  is.read(magic, 7);
  if (is.gcount() != 7 || std::string(magic, 7) != kCheckpointMagic)
    throw CheckpointError(path + " is not a checkpoint (bad magic)");
  const auto version = get_bytes<CheckpointError>(is, 1);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const auto kind = static_cast<ModelKind>(get_bytes<CheckpointError>(is, 1));
  AnyParams out;
  std::vector<Tensor*> tensors;
  if (kind == ModelKind::dcap) {
    DcapConfig c;
    c.n = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    c.d = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    c.layers = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    c.heads = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    c.kind = static_cast<ProductKind>(get_bytes<CheckpointError>(is, 1));
    c.hidden1 = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    c.hidden2 = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    c.dropout = get_f64<CheckpointError>(is);
    c.residual = get_bytes<CheckpointError>(is, 1) != 0;
    c.seed = get_bytes<CheckpointError>(is, 8);
    const auto rows = get_rows(is, c.n);
    Rng dummy(0);
    out = init_dcap(c, rows, dummy);
    tensors = param_tensors(std::get<DcapParams>(out));
  } else if (kind == ModelKind::lr) {
    const auto n = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    out = init_lr(get_rows(is, n));
    tensors = param_tensors(std::get<LrParams>(out));
  } else if (kind == ModelKind::fm) {
    const auto n = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    const auto k = static_cast<std::size_t>(get_bytes<CheckpointError>(is, 4));
    Rng dummy(0);
    out = init_fm(get_rows(is, n), k, dummy);
    tensors = param_tensors(std::get<FmParams>(out));
  } else {
    throw CheckpointError("unknown model kind byte");
  }
  for (Tensor* t : tensors) get_tensor_into(is, *t);
  return out;
}

}  // namespace dcap
