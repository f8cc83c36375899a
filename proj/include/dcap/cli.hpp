#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcap/trainer.hpp"

namespace dcap {

/// Flat run settings mirroring the command-line flags. `layers` and `heads`
/// stay textual because they accept sweep syntax ("1..5" or "1,2,4,8,16").
struct RunConfig {
  std::string data;
  std::string out = "runs";
  std::string model = "dcap";
  std::string product = "inner";
  std::size_t embedding_dim = 16;
  std::string layers = "2";
  std::string heads = "4";
  std::size_t hidden1 = 100;
  std::size_t hidden2 = 100;
  double dropout = 0.5;
  bool residual = false;
  std::size_t fm_factors = 16;
  double lr = 0.001;
  double weight_decay = 1e-6;
  bool decoupled = false;
  std::size_t batch_size = 4096;
  std::size_t patience = 3;
  std::size_t max_epochs = 50;
  std::size_t trials = 1;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;
  int threads = 0;
};

/// "4" -> {4}; "1..5" -> {1,2,3,4,5}; "1,2,4,8,16" -> the listed values.
std::vector<std::size_t> parse_sweep(const std::string& text);

TrainConfig to_train_config(const RunConfig& run, std::size_t layers,
                            std::size_t heads);

/// key=value dump of one concrete run; reusable via --config.
void write_run_config(const std::string& path, const RunConfig& run);

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace dcap
