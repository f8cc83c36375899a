#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "dcap/crossnet.hpp"
#include "dcap/embedding.hpp"

namespace dcap {

enum class ModelKind { dcap, lr, fm };

struct DcapConfig {
  std::size_t n = 0;         // field count
  std::size_t d = 16;        // embedding width
  std::size_t layers = 2;    // cross layers
  std::size_t heads = 4;
  ProductKind kind = ProductKind::inner;
  std::size_t hidden1 = 100;
  std::size_t hidden2 = 100;
  double dropout = 0.5;
  bool residual = false;
  std::uint64_t seed = 1;  // initialization stream; recorded in checkpoints

  std::size_t cross_features() const { return n * (n - 1) / 2; }
  /// Dense head input width: n*d + layers * n(n-1)/2.
  std::size_t head_input() const { return n * d + layers * cross_features(); }
  void validate() const;
};

struct DenseLayer {
  Tensor w;  // in x out
  Tensor b;  // 1 x out
};

struct DcapParams {
  DcapConfig config;
  EmbeddingTable embedding;
  std::vector<MultiHeadParams> attention;
  DenseLayer head1, head2, head_out;
};

struct LrParams {
  std::vector<Tensor> weights;  // per field, |vocab_i| x 1
  Tensor bias;                  // scalar
};

struct FmParams {
  std::vector<Tensor> weights;  // per field, |vocab_i| x 1
  std::vector<Tensor> factors;  // per field, |vocab_i| x k
  Tensor bias;                  // scalar
};

DcapParams init_dcap(const DcapConfig& config,
                     const std::vector<std::size_t>& vocab_sizes, Rng& rng);
LrParams init_lr(const std::vector<std::size_t>& vocab_sizes);
FmParams init_fm(const std::vector<std::size_t>& vocab_sizes, std::size_t k,
                 Rng& rng);

/// Every parameter tensor in its fixed serialization order: embedding fields,
/// then per layer wq/wk/wv per head plus wo, then the three head layers as
/// w, b pairs. LR: field weights then bias. FM: field weights, factors, bias.
std::vector<Tensor*> param_tensors(DcapParams& p);
std::vector<Tensor*> param_tensors(LrParams& p);
std::vector<Tensor*> param_tensors(FmParams& p);
std::vector<const Tensor*> param_tensors(const DcapParams& p);
std::vector<const Tensor*> param_tensors(const LrParams& p);
std::vector<const Tensor*> param_tensors(const FmParams& p);

// -- tape-side forward --------------------------------------------------

struct DcapVars {
  std::vector<Var> embedding;
  std::vector<MultiHeadVars> attention;
  Var w1, b1, w2, b2, w3, b3;
};

DcapVars dcap_leaves(Tape& tape, const DcapParams& p);
DcapVars dcap_constants(Tape& tape, const DcapParams& p);

/// Probability of one sample. Dropout masks (entries 0 or 1/keep) apply to
/// the two hidden activations; null masks mean eval mode.
Var dcap_sample_forward(Tape& tape, const DcapVars& vars, const DcapConfig& config,
                        const EncodedSample& sample,
                        const Tensor* mask1 = nullptr, const Tensor* mask2 = nullptr,
                        std::vector<LayerTrace>* traces = nullptr);

struct LrVars {
  std::vector<Var> weights;
  Var bias;
};
LrVars lr_leaves(Tape& tape, const LrParams& p);
LrVars lr_constants(Tape& tape, const LrParams& p);
Var lr_sample_forward(Tape& tape, const LrVars& vars, const EncodedSample& sample);

struct FmVars {
  std::vector<Var> weights;
  std::vector<Var> factors;
  Var bias;
};
FmVars fm_leaves(Tape& tape, const FmParams& p);
FmVars fm_constants(Tape& tape, const FmParams& p);
Var fm_sample_forward(Tape& tape, const FmVars& vars, const EncodedSample& sample);

/// Tape handles flattened in param_tensors order, so gradients collected per
/// handle line up with the tensor list.
std::vector<Var> flat_vars(const DcapVars& vars);
std::vector<Var> flat_vars(const LrVars& vars);
std::vector<Var> flat_vars(const FmVars& vars);

// -- batch evaluation ---------------------------------------------------

struct ForwardTrace {
  std::vector<std::vector<Tensor>> alpha;  // [layer][head], n x n
};

/// Deterministic eval-mode probabilities.
std::vector<double> dcap_forward(const DcapParams& params,
                                 std::span<const EncodedSample> batch,
                                 std::vector<ForwardTrace>* traces = nullptr);
std::vector<double> lr_forward(const LrParams& params,
                               std::span<const EncodedSample> batch);
std::vector<double> fm_forward(const FmParams& params,
                               std::span<const EncodedSample> batch);

// -- loss ---------------------------------------------------------------

inline constexpr double kProbEps = 1e-7;

/// Mean negative log likelihood with probabilities clamped to
/// [kProbEps, 1-kProbEps].
double logloss(std::span<const double> probabilities, std::span<const std::uint8_t> labels);

/// loss + lambda * sum of squared parameter entries.
double objective(double loss, const std::vector<const Tensor*>& params,
                 double lambda);

// -- checkpoints --------------------------------------------------------

using AnyParams = std::variant<DcapParams, LrParams, FmParams>;

ModelKind params_kind(const AnyParams& p);

std::vector<Tensor*> param_tensors(AnyParams& p);
std::vector<const Tensor*> param_tensors(const AnyParams& p);

/// Format: magic DCAPCK1, version byte, model kind byte, config block,
/// then each parameter tensor as rank + dims + float64 entries, all
/// little-endian, in param_tensors order.
void save_checkpoint(const std::string& path, const AnyParams& params);
AnyParams load_checkpoint(const std::string& path);

}  // namespace dcap
