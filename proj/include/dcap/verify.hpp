#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcap/crossnet.hpp"
#include "dcap/model.hpp"

namespace dcap {

using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

/// Central differences per coordinate; toy sizes only (at most 5000
/// coordinates across all tensors).
std::vector<Tensor> finite_diff_grad(const ScalarFn& fn,
                                     const std::vector<Tensor>& params,
                                     double eps);

/// Evaluates the layer stack on t*x while reusing the attention coefficients
/// captured from the unscaled x; returns each layer's cross-feature sums.
/// With coefficients frozen, layer l's output is homogeneous of degree l+1.
std::vector<Tensor> frozen_forward(const Tensor& x,
                                   const std::vector<MultiHeadParams>& params,
                                   ProductKind kind, double t);

struct NaiveLayerOut {
  Tensor z;
  Tensor p;
  Tensor y;
  Tensor x_next;
  unsigned long long mult_adds = 0;  // multiply-accumulate tally
};

/// Scalar-loop re-derivation of one cross attentional product layer, sharing
/// no code with the production layer; serves as its numerical oracle.
NaiveLayerOut naive_reference_layer(const Tensor& x_l, const Tensor& x0,
                                    const MultiHeadParams& params,
                                    ProductKind kind);

/// Closed-form multiply-accumulate estimate 3*n^2*d*l + 4*n*d^2*l.
unsigned long long count_mult_adds(const DcapConfig& config);

struct MultAddReport {
  unsigned long long closed_form = 0;
  unsigned long long measured = 0;  // instrumented tally from the reference layers
};

MultAddReport measure_mult_adds(const DcapConfig& config, std::uint64_t seed);

struct HomogeneityRow {
  ProductKind kind = ProductKind::inner;
  std::size_t layer = 0;  // depth, 1-based
  double scale = 1.0;
  double observed_ratio = 0.0;  // ||Y(tX)|| / ||Y(X)||
  double expected = 0.0;        // t^(layer+1)
  double deviation = 0.0;       // ||Y(tX) - t^(layer+1) Y(X)|| / ||Y(X)||
};

struct HomogeneityReport {
  std::vector<HomogeneityRow> rows;
};

std::string homogeneity_tsv(const HomogeneityReport& report);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  HomogeneityReport homogeneity;

  bool all_passed() const;
};

/// Full verification suite: gradients per parameter group, frozen-coefficient
/// degree growth, reference-layer equivalence, structure and cost bookkeeping.
VerificationReport run_verification(std::uint64_t seed = 1);

}  // namespace dcap
