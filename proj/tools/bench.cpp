// Times one full-batch gradient: the single-tape serial path against the
// chunked path at several worker counts, and checks they agree.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcap/featurestore.hpp"
#include "dcap/model.hpp"
#include "dcap/rng.hpp"
#include "dcap/trainer.hpp"

namespace {

std::vector<dcap::EncodedSample> synthetic_batch(std::size_t count,
                                                 std::size_t fields,
                                                 std::size_t vocab,
                                                 std::uint64_t seed) {
  dcap::Rng rng(seed);
  std::vector<dcap::EncodedSample> samples(count);
  for (auto& sample : samples) {
    sample.feature_ids.resize(fields);
    for (auto& id : sample.feature_ids)
      id = static_cast<std::uint32_t>(rng.uniform() * vocab);
    sample.label = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  return samples;
}

double max_grad_diff(const std::vector<dcap::Tensor>& a,
                     const std::vector<dcap::Tensor>& b) {
  double worst = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i)
      worst = std::max(worst, std::fabs(a[t][i] - b[t][i]));
  return worst;
}

template <class Fn>
double best_seconds(std::size_t reps, const Fn& fn) {
  double best = 1e300;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const std::chrono::duration<double> span =
        std::chrono::steady_clock::now() - start;
    best = std::min(best, span.count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t batch_size = 512;
  std::size_t reps = 3;
  std::vector<int> thread_counts = {1, 2, 4, 0};

  CLI::App app{"gradient kernel benchmark: serial tape vs chunked workers"};
  app.add_option("--batch-size", batch_size, "samples per gradient");
  app.add_option("--reps", reps, "repetitions; best time is kept");
  app.add_option("--threads", thread_counts,
                 "worker counts to try (0 = all cores)");
  CLI11_PARSE(app, argc, argv);

  dcap::DcapConfig config;
  config.n = 6;
  config.d = 16;
  config.layers = 2;
  config.heads = 2;
  config.hidden1 = 64;
  config.hidden2 = 64;
  config.dropout = 0.0;
  config.validate();

  const std::vector<std::size_t> vocabs(config.n, 50);
  dcap::Rng rng(7);
  dcap::AnyParams params = dcap::init_dcap(config, vocabs, rng);

  const auto samples = synthetic_batch(batch_size, config.n, 49, 11);
  std::vector<std::uint32_t> batch(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i)
    batch[i] = static_cast<std::uint32_t>(i);
  const dcap::GradContext ctx{1, 0, true};

  const auto span = std::span<const dcap::EncodedSample>(samples);
  dcap::BatchGrad serial = dcap::batch_gradient_serial(params, span, batch, ctx);
  const double serial_time = best_seconds(
      reps, [&] { dcap::batch_gradient_serial(params, span, batch, ctx); });

  std::printf("batch=%zu fields=%zu d=%zu layers=%zu heads=%zu reps=%zu\n",
              batch_size, config.n, config.d, config.layers, config.heads, reps);
  std::printf("%-16s %10s %9s %13s %12s\n", "kernel", "seconds", "speedup",
              "loss_diff", "grad_diff");
  std::printf("%-16s %10.4f %9s %13s %12s\n", "serial", serial_time, "1.00x",
              "-", "-");

  for (int threads : thread_counts) {
    dcap::BatchGrad chunked =
        dcap::batch_gradient(params, span, batch, ctx, threads);
    const double secs = best_seconds(reps, [&] {
      dcap::batch_gradient(params, span, batch, ctx, threads);
    });
    const std::string label =
        threads == 0 ? "chunked(all)" : "chunked(" + std::to_string(threads) + ")";
    std::printf("%-16s %10.4f %8.2fx %13.3e %12.3e\n", label.c_str(), secs,
                serial_time / secs, std::fabs(chunked.loss - serial.loss),
                max_grad_diff(chunked.grads, serial.grads));
  }
  return 0;
}
