#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dcap/featurestore.hpp"
#include "dcap/model.hpp"

namespace dcap {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  // Coupled decay (decay*w folded into the gradient) is the default; the
  // decoupled form subtracts lr*decay*w after the moment update instead.
  bool decoupled = false;
};

// Bias-corrected Adam over a fixed set of parameter tensors.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor*> params, AdamConfig config);

  // grads must align with the parameter list; non-finite entries abort.
  void step(const std::vector<Tensor>& grads);
  std::size_t steps() const { return steps_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig config_;
  std::size_t steps_ = 0;
};

// Rank-based (Mann-Whitney) AUC with ties credited one half.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MetricsReport {
  std::string split;
  std::size_t samples = 0;
  double auc = 0.0;
  double logloss = 0.0;
};

MetricsReport evaluate(const AnyParams& params,
                       std::span<const EncodedSample> samples,
                       std::string split_name);

// Keys the per-sample dropout streams: mask bits depend only on the run seed,
// the epoch, and the sample's position in the training part.
struct GradContext {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  bool training = true;
};

struct BatchGrad {
  double loss = 0.0;          // mean per-sample logloss, no regularization term
  std::vector<Tensor> grads;  // aligned with param_tensors order
};

// Gradient of the mean minibatch loss. Samples are split into fixed chunks,
// chunk gradients run in parallel, and the reduction always walks chunks in
// order, so the result is identical for any worker count.
BatchGrad batch_gradient(const AnyParams& params,
                         std::span<const EncodedSample> samples,
                         std::span<const std::uint32_t> batch,
                         const GradContext& ctx, int threads = 0);

// Whole-batch single-tape reference for the chunked engine; kept for tests and
// the benchmark.
BatchGrad batch_gradient_serial(const AnyParams& params,
                                std::span<const EncodedSample> samples,
                                std::span<const std::uint32_t> batch,
                                const GradContext& ctx);

struct TrainConfig {
  ModelKind kind = ModelKind::dcap;
  DcapConfig dcap;        // n is taken from the dataset schemas
  std::size_t fm_factors = 16;
  AdamConfig adam;
  std::size_t batch_size = 4096;
  std::size_t patience = 3;
  std::size_t max_epochs = 50;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = all available workers
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double val_logloss = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  bool diverged = false;
  std::string diagnostic;
  std::vector<EpochRecord> history;
};

struct TrainResult {
  AnyParams params;  // best-validation checkpoint; last good one on divergence
  TrainState state;
};

// Minibatch Adam with early stopping on validation AUC. When `log` is given,
// one tab-separated line per epoch is written:
//   epoch  train_loss  val_auc  val_logloss  seconds
TrainResult train(const TrainConfig& config, const DatasetSplit& split,
                  const std::vector<FieldSchema>& schemas,
                  std::ostream* log = nullptr);

struct TrialResult {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double test_auc = 0.0;
  double test_logloss = 0.0;
};

struct RunSummary {
  std::string config_hash;
  std::vector<TrialResult> trials;
  double auc_mean = 0.0;
  double auc_std = 0.0;
  double logloss_mean = 0.0;
  double logloss_std = 0.0;
};

// Repeats train+test with per-trial seeds derived from the master seed.
RunSummary run_trials(const TrainConfig& config, const DatasetSplit& split,
                      const std::vector<FieldSchema>& schemas,
                      std::size_t trials, std::ostream* log = nullptr);

// Fills the mean and population-std fields from the recorded trials.
void finalize_summary(RunSummary& summary);

// Table-cell formatting, e.g. "0.8066+/-0.0012".
std::string format_mean_std(double mean, double std_dev);

// Hash of every result-affecting config field (worker count excluded).
std::string config_hash(const TrainConfig& config);

void save_run_summary(const std::string& path, const RunSummary& summary);

}  // namespace dcap
