#include "dcap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <type_traits>
#include <utility>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dcap/rng.hpp"
#include "dcap/tape.hpp"

namespace dcap {

// -- Adam ----------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (params_.empty()) throw ContractError("optimizer needs at least one parameter");
  if (config_.lr <= 0.0 || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
      config_.beta2 < 0.0 || config_.beta2 >= 1.0 || config_.eps <= 0.0 ||
      config_.weight_decay < 0.0)
    throw ConfigError("invalid optimizer settings");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    m_.push_back(Tensor::zeros_like(*p));
    v_.push_back(Tensor::zeros_like(*p));
  }
}

void AdamOptimizer::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size())
    throw ContractError("gradient list does not match the parameter list");
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = *params_[i];
    const Tensor& g = grads[i];
    if (!g.same_shape(w))
      throw ContractError("gradient " + std::to_string(i) + " has shape " +
                          shape_string(g.shape()) + ", parameter has " +
                          shape_string(w.shape()));
    for (std::size_t k = 0; k < w.size(); ++k) {
      double gk = g[k];
      if (!std::isfinite(gk))
        throw TrainingError("non-finite gradient in parameter tensor " +
                            std::to_string(i) + " at entry " + std::to_string(k));
      if (!config_.decoupled) gk += config_.weight_decay * w[k];
      m_[i][k] = config_.beta1 * m_[i][k] + (1.0 - config_.beta1) * gk;
      v_[i][k] = config_.beta2 * v_[i][k] + (1.0 - config_.beta2) * gk * gk;
      w[k] -= config_.lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + config_.eps);
      if (config_.decoupled) w[k] -= config_.lr * config_.weight_decay * w[k];
    }
  }
}

// -- metrics -------------------------------------------------------------

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw ContractError("auc: " + std::to_string(scores.size()) + " scores vs " +
                        std::to_string(labels.size()) + " labels");
  unsigned long long pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw MetricError("auc: non-finite score");
    if (labels[i]) ++pos;
  }
  const unsigned long long neg = scores.size() - pos;
  if (pos == 0 || neg == 0)
    throw MetricError("auc undefined: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Doubled ranks keep tie averaging in integer arithmetic: a tie group over
  // positions i+1..j (1-based) gets rank2 = (i+1)+j for each member.
  unsigned long long rank2_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const unsigned long long rank2 = i + 1 + j;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank2_pos += rank2;
    i = j;
  }
  return static_cast<double>(rank2_pos - pos * (pos + 1)) /
         static_cast<double>(2 * pos * neg);
}

MetricsReport evaluate(const AnyParams& params,
                       std::span<const EncodedSample> samples,
                       std::string split_name) {
  std::vector<double> probs = std::visit(
      [&](const auto& p) -> std::vector<double> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DcapParams>)
          return dcap_forward(p, samples);
        else if constexpr (std::is_same_v<T, LrParams>)
          return lr_forward(p, samples);
        else
          return fm_forward(p, samples);
      },
      params);
  std::vector<std::uint8_t> labels(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].label;
  MetricsReport report;
  report.split = std::move(split_name);
  report.samples = samples.size();
  report.auc = auc(probs, labels);
  report.logloss = logloss(probs, labels);
  return report;
}

// -- batch gradients -----------------------------------------------------

namespace {

constexpr std::size_t kGradChunk = 128;

Tensor dropout_mask(std::size_t width, double rate, Rng& rng) {
  Tensor mask({1, width});
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < width; ++i)
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

struct DcapEngine {
  const DcapParams& p;
  using Vars = DcapVars;
  Vars leaves(Tape& tape) const { return dcap_leaves(tape, p); }
  Var sample_loss(Tape& tape, const Vars& vars, const EncodedSample& sample,
                  std::uint32_t index, const GradContext& ctx) const {
    Var prob;
    if (ctx.training && p.config.dropout > 0.0) {
      Rng rng(derive_seed(ctx.seed, {fnv1a64("dropout"), ctx.epoch, index}));
      Tensor m1 = dropout_mask(p.config.hidden1, p.config.dropout, rng);
      Tensor m2 = dropout_mask(p.config.hidden2, p.config.dropout, rng);
      prob = dcap_sample_forward(tape, vars, p.config, sample, &m1, &m2);
    } else {
      prob = dcap_sample_forward(tape, vars, p.config, sample);
    }
    return tape.bce(prob, sample.label);
  }
};

struct LrEngine {
  const LrParams& p;
  using Vars = LrVars;
  Vars leaves(Tape& tape) const { return lr_leaves(tape, p); }
  Var sample_loss(Tape& tape, const Vars& vars, const EncodedSample& sample,
                  std::uint32_t, const GradContext&) const {
    return tape.bce(lr_sample_forward(tape, vars, sample), sample.label);
  }
};

struct FmEngine {
  const FmParams& p;
  using Vars = FmVars;
  Vars leaves(Tape& tape) const { return fm_leaves(tape, p); }
  Var sample_loss(Tape& tape, const Vars& vars, const EncodedSample& sample,
                  std::uint32_t, const GradContext&) const {
    return tape.bce(fm_sample_forward(tape, vars, sample), sample.label);
  }
};

// Sum (not mean) of per-sample losses and gradients over one chunk.
template <class Engine>
BatchGrad chunk_gradient(const Engine& engine,
                         std::span<const EncodedSample> samples,
                         const std::uint32_t* batch, std::size_t count,
                         const GradContext& ctx) {
  Tape tape;
  typename Engine::Vars vars = engine.leaves(tape);
  const std::vector<Var> flat = flat_vars(vars);
  Var total;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t at = batch[i];
    if (at >= samples.size())
      throw ContractError("minibatch index " + std::to_string(at) +
                          " outside a batch of " + std::to_string(samples.size()));
    Var loss = engine.sample_loss(tape, vars, samples[at], at, ctx);
    total = i == 0 ? loss : tape.elementwise(total, loss, Elementwise::add);
  }
  tape.backward(total);
  BatchGrad out;
  out.loss = tape.value(total)[0];
  out.grads.reserve(flat.size());
  for (Var v : flat) out.grads.push_back(tape.grad(v));
  return out;
}

void divide_by(BatchGrad& bg, double n) {
  bg.loss /= n;
  for (Tensor& g : bg.grads)
    for (std::size_t k = 0; k < g.size(); ++k) g[k] /= n;
}

template <class Engine>
BatchGrad engine_gradient(const Engine& engine,
                          std::span<const EncodedSample> samples,
                          std::span<const std::uint32_t> batch,
                          const GradContext& ctx, int threads) {
  if (batch.empty()) throw ContractError("batch_gradient needs at least one sample");
  const std::size_t chunks = (batch.size() + kGradChunk - 1) / kGradChunk;
  std::vector<BatchGrad> partial(chunks);
  std::exception_ptr failure;
#ifdef _OPENMP
  const int workers =
      std::max(1, threads > 0 ? threads : omp_get_max_threads());
#pragma omp parallel for schedule(static) num_threads(workers)
#else
  (void)threads;
#endif
  for (std::size_t c = 0; c < chunks; ++c) {
    try {
      const std::size_t lo = c * kGradChunk;
      partial[c] = chunk_gradient(engine, samples, batch.data() + lo,
                                  std::min(kGradChunk, batch.size() - lo), ctx);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical(dcap_grad_failure)
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Chunk-ordered reduction: the same additions in the same order no matter
  // how many workers produced the partials.
  BatchGrad out = std::move(partial[0]);
  for (std::size_t c = 1; c < chunks; ++c) {
    out.loss += partial[c].loss;
    for (std::size_t t = 0; t < out.grads.size(); ++t)
      add_in_place(out.grads[t], partial[c].grads[t]);
  }
  divide_by(out, static_cast<double>(batch.size()));
  return out;
}

template <class Engine>
BatchGrad engine_gradient_serial(const Engine& engine,
                                 std::span<const EncodedSample> samples,
                                 std::span<const std::uint32_t> batch,
                                 const GradContext& ctx) {
  if (batch.empty()) throw ContractError("batch_gradient needs at least one sample");
  BatchGrad out = chunk_gradient(engine, samples, batch.data(), batch.size(), ctx);
  divide_by(out, static_cast<double>(batch.size()));
  return out;
}

template <class Fn>
BatchGrad with_engine(const AnyParams& params, Fn&& fn) {
  if (const auto* dcap = std::get_if<DcapParams>(&params))
    return fn(DcapEngine{*dcap});
  if (const auto* lr = std::get_if<LrParams>(&params)) return fn(LrEngine{*lr});
  return fn(FmEngine{std::get<FmParams>(params)});
}

}  // namespace

BatchGrad batch_gradient(const AnyParams& params,
                         std::span<const EncodedSample> samples,
                         std::span<const std::uint32_t> batch,
                         const GradContext& ctx, int threads) {
  return with_engine(params, [&](const auto& engine) {
    return engine_gradient(engine, samples, batch, ctx, threads);
  });
}

BatchGrad batch_gradient_serial(const AnyParams& params,
                                std::span<const EncodedSample> samples,
                                std::span<const std::uint32_t> batch,
                                const GradContext& ctx) {
  return with_engine(params, [&](const auto& engine) {
    return engine_gradient_serial(engine, samples, batch, ctx);
  });
}

// -- training loop -------------------------------------------------------

namespace {

AnyParams init_params(const TrainConfig& config,
                      const std::vector<FieldSchema>& schemas) {
  std::vector<std::size_t> vocab(schemas.size());
  for (std::size_t i = 0; i < schemas.size(); ++i) vocab[i] = schemas[i].size();
  Rng rng(derive_seed(config.seed, {fnv1a64("init")}));
  switch (config.kind) {
    case ModelKind::lr:
      return init_lr(vocab);
    case ModelKind::fm:
      return init_fm(vocab, config.fm_factors, rng);
    case ModelKind::dcap: {
      DcapConfig c = config.dcap;
      c.n = schemas.size();
      c.seed = config.seed;
      c.validate();
      return init_dcap(c, vocab, rng);
    }
  }
  throw ConfigError("unknown model kind");
}

}  // namespace

TrainResult train(const TrainConfig& config, const DatasetSplit& split,
                  const std::vector<FieldSchema>& schemas, std::ostream* log) {
  if (split.train.empty() || split.validation.empty())
    throw DataError("training needs non-empty train and validation parts");
  if (schemas.empty()) throw DataError("training needs at least one field schema");
  for (const EncodedSample& s : split.train)
    if (s.feature_ids.size() != schemas.size())
      throw DataError("sample arity does not match the schema list");

  TrainResult result{init_params(config, schemas), {}};
  TrainState& state = result.state;
  AnyParams& params = result.params;
  AnyParams best = params;      // falls back to the initial state
  AnyParams last_good = params;
  bool improved_once = false;

  AdamOptimizer optimizer(param_tensors(params), config.adam);
  double best_auc = -1.0;
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    try {
      const auto batches =
          minibatches(split.train.size(), config.batch_size, config.seed, epoch);
      for (const std::vector<std::uint32_t>& batch : batches) {
        GradContext ctx{config.seed, epoch, true};
        BatchGrad bg =
            batch_gradient(params, split.train, batch, ctx, config.threads);
        if (!std::isfinite(bg.loss))
          throw TrainingError("non-finite minibatch loss at epoch " +
                              std::to_string(epoch));
        loss_sum += bg.loss * static_cast<double>(batch.size());
        optimizer.step(bg.grads);
      }
    } catch (const TrainingError& e) {
      state.diverged = true;
      state.diagnostic = e.what();
      break;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(split.train.size());
    MetricsReport val = evaluate(params, split.validation, "validation");
    record.val_auc = val.auc;
    record.val_logloss = val.logloss;
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    state.history.push_back(record);
    state.epochs_run = epoch;
    if (log) {
      char line[160];
      std::snprintf(line, sizeof line, "%zu\t%.6f\t%.6f\t%.6f\t%.3f\n", epoch,
                    record.train_loss, record.val_auc, record.val_logloss,
                    record.seconds);
      *log << line << std::flush;
    }

    last_good = params;
    if (val.auc > best_auc) {
      best_auc = val.auc;
      best = params;
      improved_once = true;
      state.best_epoch = epoch;
      state.best_val_auc = val.auc;
      since_improvement = 0;
    } else if (++since_improvement >= config.patience) {
      break;
    }
  }

  params = improved_once ? std::move(best) : std::move(last_good);
  return result;
}

// -- trial protocol ------------------------------------------------------

RunSummary run_trials(const TrainConfig& config, const DatasetSplit& split,
                      const std::vector<FieldSchema>& schemas,
                      std::size_t trials, std::ostream* log) {
  if (trials < 1) throw ContractError("need at least one trial");
  RunSummary summary;
  summary.config_hash = config_hash(config);
  for (std::size_t t = 0; t < trials; ++t) {
    TrainConfig trial_config = config;
    trial_config.seed = derive_seed(config.seed, {fnv1a64("trial"), t});
    TrainResult result = train(trial_config, split, schemas, log);
    MetricsReport test = evaluate(result.params, split.test, "test");
    summary.trials.push_back({trial_config.seed, result.state.epochs_run,
                              result.state.best_epoch, test.auc, test.logloss});
  }
  finalize_summary(summary);
  return summary;
}

void finalize_summary(RunSummary& summary) {
  if (summary.trials.empty()) throw ContractError("summary has no trials");
  const double n = static_cast<double>(summary.trials.size());
  summary.auc_mean = summary.logloss_mean = 0.0;
  summary.auc_std = summary.logloss_std = 0.0;
  for (const TrialResult& t : summary.trials) {
    summary.auc_mean += t.test_auc / n;
    summary.logloss_mean += t.test_logloss / n;
  }
  for (const TrialResult& t : summary.trials) {
    const double da = t.test_auc - summary.auc_mean;
    const double dl = t.test_logloss - summary.logloss_mean;
    summary.auc_std += da * da / n;
    summary.logloss_std += dl * dl / n;
  }
  summary.auc_std = std::sqrt(summary.auc_std);
  summary.logloss_std = std::sqrt(summary.logloss_std);
}

std::string format_mean_std(double mean, double std_dev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f+/-%.4f", mean, std_dev);
  return buf;
}

std::string config_hash(const TrainConfig& c) {
  char buf[512];
  std::snprintf(
      buf, sizeof buf,
      "kind=%d d=%zu layers=%zu heads=%zu product=%d hidden1=%zu hidden2=%zu "
      "dropout=%.17g residual=%d fm_factors=%zu lr=%.17g beta1=%.17g "
      "beta2=%.17g eps=%.17g weight_decay=%.17g decoupled=%d batch=%zu "
      "patience=%zu max_epochs=%zu seed=%llu",
      static_cast<int>(c.kind), c.dcap.d, c.dcap.layers, c.dcap.heads,
      static_cast<int>(c.dcap.kind), c.dcap.hidden1, c.dcap.hidden2,
      c.dcap.dropout, c.dcap.residual ? 1 : 0, c.fm_factors, c.adam.lr,
      c.adam.beta1, c.adam.beta2, c.adam.eps, c.adam.weight_decay,
      c.adam.decoupled ? 1 : 0, c.batch_size, c.patience, c.max_epochs,
      static_cast<unsigned long long>(c.seed));
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a64(buf)));
  return hex;
}

void save_run_summary(const std::string& path, const RunSummary& summary) {
  nlohmann::json j;
  j["config_hash"] = summary.config_hash;
  j["trials"] = nlohmann::json::array();
  for (const TrialResult& t : summary.trials)
    j["trials"].push_back({{"seed", t.seed},
                           {"epochs", t.epochs},
                           {"best_epoch", t.best_epoch},
                           {"auc", t.test_auc},
                           {"logloss", t.test_logloss}});
  j["auc"] = {{"mean", summary.auc_mean},
              {"std", summary.auc_std},
              {"cell", format_mean_std(summary.auc_mean, summary.auc_std)}};
  j["logloss"] = {
      {"mean", summary.logloss_mean},
      {"std", summary.logloss_std},
      {"cell", format_mean_std(summary.logloss_mean, summary.logloss_std)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace dcap
