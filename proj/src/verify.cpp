#include "dcap/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dcap/rng.hpp"

namespace dcap {

std::vector<Tensor> finite_diff_grad(const ScalarFn& fn,
                                     const std::vector<Tensor>& params,
                                     double eps) {
  if (eps <= 0.0) throw ContractError("finite differences need a positive step");
  std::size_t coords = 0;
  for (const Tensor& t : params) coords += t.size();
  if (coords > 5000)
    throw ContractError("finite differences limited to 5000 coordinates, got " +
                        std::to_string(coords));

  std::vector<Tensor> work = params;
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Tensor& t : params) grads.push_back(Tensor::zeros_like(t));

  for (std::size_t t = 0; t < work.size(); ++t) {
    for (std::size_t k = 0; k < work[t].size(); ++k) {
      const double saved = work[t][k];
      work[t][k] = saved + eps;
      const double up = fn(work);
      work[t][k] = saved - eps;
      const double down = fn(work);
      work[t][k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw VerifyError("objective is not finite near the evaluation point");
      grads[t][k] = (up - down) / (2.0 * eps);
    }
  }
  return grads;
}

namespace {

std::vector<MultiHeadVars> register_constants(
    Tape& tape, const std::vector<MultiHeadParams>& params) {
  std::vector<MultiHeadVars> vars;
  vars.reserve(params.size());
  for (const MultiHeadParams& p : params) vars.push_back(attention_constants(tape, p));
  return vars;
}

}  // namespace

std::vector<Tensor> frozen_forward(const Tensor& x,
                                   const std::vector<MultiHeadParams>& params,
                                   ProductKind kind, double t) {
  if (params.empty()) throw ConfigError("frozen_forward needs at least one layer");

  // pass 1: capture the attention coefficients from the unscaled input
  std::vector<std::vector<Tensor>> alpha;
  {
    Tape tape;
    Var x0 = tape.constant(x);
    auto traces = stack_layers(tape, x0, register_constants(tape, params), kind);
    for (const LayerTrace& trace : traces) {
      std::vector<Tensor> per_head;
      for (Var a : trace.alpha) per_head.push_back(tape.value(a));
      alpha.push_back(std::move(per_head));
    }
  }

  // pass 2: scaled input, frozen coefficients
  Tape tape;
  Var x0 = tape.constant(scale(x, t));
  auto traces = stack_layers(tape, x0, register_constants(tape, params), kind,
                             false, &alpha);
  std::vector<Tensor> ys;
  ys.reserve(traces.size());
  for (const LayerTrace& trace : traces) ys.push_back(tape.value(trace.y));
  return ys;
}

NaiveLayerOut naive_reference_layer(const Tensor& x_l, const Tensor& x0,
                                    const MultiHeadParams& params,
                                    ProductKind kind) {
  if (x_l.rank() != 2 || x0.rank() != 2 || !x_l.same_shape(x0))
    throw ShapeError("reference layer needs matching n x d inputs");
  const std::size_t n = x_l.dim(0);
  const std::size_t d = x_l.dim(1);
  if (n < 2) throw ContractError("reference layer needs at least two fields");
  if (params.model_dim() != d)
    throw ShapeError("weights are sized for width " +
                     std::to_string(params.model_dim()) + ", input has " +
                     std::to_string(d));
  const std::size_t h = params.heads();
  const std::size_t dv = d / h;
  unsigned long long ops = 0;

  NaiveLayerOut out{Tensor({n, d}), Tensor({n * (n - 1) / 2, d}),
                    Tensor({n * (n - 1) / 2}), Tensor({n, d}), 0};

  // attention, one head at a time, written into its slot of the concatenation
  std::vector<double> zcat(n * d, 0.0);
  for (std::size_t head = 0; head < h; ++head) {
    std::vector<double> q(n * dv), k(n * dv), v(n * dv);
    auto project = [&](const Tensor& w, std::vector<double>& dst) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dv; ++c) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e, ++ops) acc += x_l.at(i, e) * w.at(e, c);
          dst[i * dv + c] = acc;
        }
    };
    project(params.wq[head], q);
    project(params.wk[head], k);
    project(params.wv[head], v);

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dv));
    std::vector<double> alpha(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double score = 0.0;
        for (std::size_t c = 0; c < dv; ++c, ++ops) score += q[i * dv + c] * k[j * dv + c];
        score *= inv_sqrt;
        ++ops;
        alpha[i * n + j] = std::exp(score);
        denom += alpha[i * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) alpha[i * n + j] /= denom;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dv; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j, ++ops) acc += alpha[i * n + j] * v[j * dv + c];
        zcat[i * d + head * dv + c] = acc;
      }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t e = 0; e < d; ++e, ++ops) acc += zcat[i * d + e] * params.wo.at(e, c);
      out.z.at(i, c) = acc;
    }

  // pairwise products against the original embeddings, then row sums
  std::size_t row = 0;
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++row) {
      double right_sum = 0.0;
      if (kind == ProductKind::outer)
        for (std::size_t c = 0; c < d; ++c) right_sum += x0.at(j, c);
      double total = 0.0;
      for (std::size_t c = 0; c < d; ++c, ++ops) {
        const double rhs = kind == ProductKind::inner ? x0.at(j, c) : right_sum;
        out.p.at(row, c) = out.z.at(i, c) * rhs;
        total += out.p.at(row, c);
      }
      out.y[row] = total;
    }

  // adaptive average pooling back to n rows
  const std::size_t m = row;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i * m / n;
    const std::size_t hi = ((i + 1) * m + n - 1) / n;
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t r = lo; r < hi; ++r) acc += out.p.at(r, c);
      out.x_next.at(i, c) = acc * inv;
      ++ops;
    }
  }
  out.mult_adds = ops;
  return out;
}

unsigned long long count_mult_adds(const DcapConfig& config) {
  config.validate();
  const unsigned long long n = config.n;
  const unsigned long long d = config.d;
  const unsigned long long l = config.layers;
  return 3 * n * n * d * l + 4 * n * d * d * l;
}

MultAddReport measure_mult_adds(const DcapConfig& config, std::uint64_t seed) {
  MultAddReport report;
  report.closed_form = count_mult_adds(config);
  Rng rng(seed);
  std::vector<MultiHeadParams> params;
  for (std::size_t l = 0; l < config.layers; ++l)
    params.push_back(init_attention(config.d, config.heads, rng));
  Tensor x({config.n, config.d});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  Tensor state = x;
  for (std::size_t l = 0; l < config.layers; ++l) {
    NaiveLayerOut out = naive_reference_layer(state, x, params[l], config.kind);
    report.measured += out.mult_adds;
    state = out.x_next;
  }
  return report;
}

std::string homogeneity_tsv(const HomogeneityReport& report) {
  std::ostringstream out;
  out << "kind\tlayer\tscale\tobserved\texpected\tdeviation\n";
  for (const HomogeneityRow& row : report.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%s\t%zu\t%g\t%.12g\t%.12g\t%.3g\n",
                  row.kind == ProductKind::inner ? "inner" : "outer", row.layer,
                  row.scale, row.observed_ratio, row.expected, row.deviation);
    out << line;
  }
  return out.str();
}

bool VerificationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.passed; });
}

namespace {

double check_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

std::string format_detail(const char* fmt, double value) {
  char buf[96];
  std::snprintf(buf, sizeof buf, fmt, value);
  return buf;
}

// One name per parameter tensor, in param_tensors order.
std::vector<std::string> group_names(const DcapConfig& config) {
  std::vector<std::string> names;
  for (std::size_t f = 0; f < config.n; ++f)
    names.push_back("embedding[" + std::to_string(f) + "]");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string layer = "layer" + std::to_string(l) + ".";
    for (const char* mat : {"wq", "wk", "wv"})
      for (std::size_t head = 0; head < config.heads; ++head)
        names.push_back(layer + mat + "[" + std::to_string(head) + "]");
    names.push_back(layer + "wo");
  }
  for (const char* dense : {"head.w1", "head.b1", "head.w2", "head.b2",
                            "head.w3", "head.b3"})
    names.push_back(dense);
  return names;
}

void gradient_checks(VerificationReport& report, std::uint64_t seed) {
  DcapConfig config;
  config.n = 4;
  config.d = 8;
  config.layers = 2;
  config.heads = 2;
  config.hidden1 = 5;
  config.hidden2 = 5;
  config.dropout = 0.0;
  const std::vector<std::size_t> vocab = {3, 4, 3, 2};
  Rng rng(derive_seed(seed, {fnv1a64("grad")}));
  DcapParams params = init_dcap(config, vocab, rng);
  // Zero biases can leave whole hidden layers exactly on the relu kink (a
  // dead first layer makes every second-layer pre-activation equal its
  // bias), where the loss is not differentiable and finite differences see
  // a half-slope. Nudge the biases so the probe point is generic.
  for (Tensor* b : {&params.head1.b, &params.head2.b, &params.head_out.b})
    for (std::size_t i = 0; i < b->size(); ++i)
      (*b)[i] = rng.uniform(-0.5, 0.5);
  const EncodedSample sample{{1, 2, 0, 1}, 1};
  const std::vector<std::uint8_t> labels = {sample.label};

  Tape tape;
  DcapVars vars = dcap_leaves(tape, params);
  Var loss = tape.bce(dcap_sample_forward(tape, vars, config, sample), sample.label);
  tape.backward(loss);
  const std::vector<Var> flat = flat_vars(vars);

  std::vector<Tensor> values;
  for (const Tensor* t : param_tensors(std::as_const(params))) values.push_back(*t);
  ScalarFn fn = [&](const std::vector<Tensor>& at) {
    DcapParams probe = params;
    auto ptrs = param_tensors(probe);
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = at[i];
    const std::vector<EncodedSample> batch = {sample};
    return logloss(dcap_forward(probe, batch), labels);
  };
  const std::vector<Tensor> fd = finite_diff_grad(fn, values, 1e-5);

  const std::vector<std::string> names = group_names(config);
  for (std::size_t t = 0; t < flat.size(); ++t) {
    const Tensor got = tape.grad(flat[t]);
    double worst = 0.0;
    for (std::size_t k = 0; k < got.size(); ++k)
      worst = std::max(worst, check_rel_err(got[k], fd[t][k]));
    report.checks.push_back({"gradient " + names[t], worst < 1e-5,
                             format_detail("max rel err %.3g", worst)});
  }
}

void homogeneity_checks(VerificationReport& report, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {fnv1a64("homogeneity")}));
  const std::size_t n = 4, d = 6, heads = 2, layers = 3;
  Tensor x({n, d});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);

  for (ProductKind kind : {ProductKind::inner, ProductKind::outer}) {
    const char* kind_name = kind == ProductKind::inner ? "inner" : "outer";
    std::vector<MultiHeadParams> params;
    for (std::size_t l = 0; l < layers; ++l)
      params.push_back(init_attention(d, heads, rng));
    const std::vector<Tensor> base = frozen_forward(x, params, kind, 1.0);

    for (double t : {0.5, 2.0, 3.0}) {
      const std::vector<Tensor> scaled = frozen_forward(x, params, kind, t);
      for (std::size_t l = 0; l < layers; ++l) {
        const double factor = std::pow(t, static_cast<double>(l + 2));
        const double base_norm = l2_norm(base[l]);
        const Tensor residual = elementwise(scaled[l], scale(base[l], factor),
                                            Elementwise::sub);
        HomogeneityRow row;
        row.kind = kind;
        row.layer = l + 1;
        row.scale = t;
        row.observed_ratio = l2_norm(scaled[l]) / base_norm;
        row.expected = factor;
        row.deviation = l2_norm(residual) / base_norm;
        report.homogeneity.rows.push_back(row);
        char name[64];
        std::snprintf(name, sizeof name, "homogeneity %s l=%zu t=%g", kind_name,
                      row.layer, t);
        report.checks.push_back({name, row.deviation <= 1e-8,
                                 format_detail("deviation %.3g", row.deviation)});
      }
    }

    // log-log degree fit over t in {1, 2, 4, 8}
    const std::vector<double> ts = {1.0, 2.0, 4.0, 8.0};
    std::vector<std::vector<double>> norms(layers);
    for (double t : ts) {
      const std::vector<Tensor> ys = frozen_forward(x, params, kind, t);
      for (std::size_t l = 0; l < layers; ++l) norms[l].push_back(l2_norm(ys[l]));
    }
    for (std::size_t l = 0; l < layers; ++l) {
      double mean_lt = 0.0, mean_ln = 0.0;
      for (std::size_t i = 0; i < ts.size(); ++i) {
        mean_lt += std::log(ts[i]) / static_cast<double>(ts.size());
        mean_ln += std::log(norms[l][i]) / static_cast<double>(ts.size());
      }
      double cov = 0.0, var = 0.0;
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const double dt = std::log(ts[i]) - mean_lt;
        cov += dt * (std::log(norms[l][i]) - mean_ln);
        var += dt * dt;
      }
      const double slope = cov / var;
      const double err = std::abs(slope - static_cast<double>(l + 2));
      char name[64];
      std::snprintf(name, sizeof name, "degree fit %s l=%zu", kind_name, l + 1);
      report.checks.push_back(
          {name, err < 1e-6, format_detail("slope deviation %.3g", err)});
    }
  }
}

void reference_checks(VerificationReport& report, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {fnv1a64("reference")}));
  for (ProductKind kind : {ProductKind::inner, ProductKind::outer}) {
    double worst = 0.0;
    for (int instance = 0; instance < 100; ++instance) {
      const std::size_t n = 3 + rng.index(3);          // 3..5
      const std::size_t d = 2 * (1 + rng.index(2));    // 2 or 4
      const std::size_t h = 1 + rng.index(2);          // 1 or 2
      MultiHeadParams params = init_attention(d, h, rng);
      Tensor x_l({n, d}), x0({n, d});
      for (std::size_t i = 0; i < x_l.size(); ++i) {
        x_l[i] = rng.uniform(-1.0, 1.0);
        x0[i] = rng.uniform(-1.0, 1.0);
      }
      const NaiveLayerOut naive = naive_reference_layer(x_l, x0, params, kind);

      Tape tape;
      LayerTrace trace = layer_forward(tape, tape.constant(x_l), tape.constant(x0),
                                       attention_constants(tape, params), kind);
      auto compare = [&](const Tensor& a, Var b) {
        const Tensor& got = tape.value(b);
        for (std::size_t i = 0; i < a.size(); ++i)
          worst = std::max(worst, std::abs(a[i] - got[i]));
      };
      compare(naive.z, trace.z);
      compare(naive.p, trace.p);
      compare(naive.y, trace.y);
      compare(naive.x_next, trace.x_next);
    }
    report.checks.push_back(
        {std::string("reference layer ") +
             (kind == ProductKind::inner ? "inner" : "outer") + " (100 instances)",
         worst < 1e-10, format_detail("max abs deviation %.3g", worst)});
  }
}

void bookkeeping_checks(VerificationReport& report, std::uint64_t seed) {
  DcapConfig config;
  config.n = 5;
  config.d = 16;
  config.layers = 2;

  const unsigned long long closed = count_mult_adds(config);
  report.checks.push_back({"mult-adds closed form", closed == 12640,
                           "3*25*16*2 + 4*5*256*2 = " + std::to_string(closed)});
  DcapConfig doubled = config;
  doubled.layers = 4;
  report.checks.push_back({"mult-adds linear in depth",
                           count_mult_adds(doubled) == 2 * closed,
                           std::to_string(count_mult_adds(doubled))});
  const MultAddReport measured = measure_mult_adds(config, seed);
  const double ratio = static_cast<double>(measured.measured) /
                       static_cast<double>(measured.closed_form);
  report.checks.push_back({"mult-adds tally within 2x of closed form",
                           ratio > 0.5 && ratio < 2.0,
                           format_detail("measured/closed = %.3f", ratio)});

  // structural bookkeeping on the default-shaped network
  report.checks.push_back({"head input width", config.head_input() == 100,
                           std::to_string(config.head_input())});
  report.checks.push_back({"cross features per layer",
                           config.cross_features() == 10,
                           std::to_string(config.cross_features())});
  Rng rng(derive_seed(seed, {fnv1a64("structure")}));
  std::vector<MultiHeadParams> params;
  for (std::size_t l = 0; l < config.layers; ++l)
    params.push_back(init_attention(config.d, config.heads, rng));
  Tensor x({config.n, config.d});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  Tape tape;
  auto traces = stack_layers(tape, tape.constant(x), register_constants(tape, params),
                             config.kind);
  bool rows_ok = true, shapes_ok = true;
  double worst_row = 0.0;
  for (const LayerTrace& trace : traces) {
    shapes_ok = shapes_ok && tape.value(trace.y).dim(0) == config.cross_features();
    shapes_ok = shapes_ok && tape.value(trace.x_next).dim(0) == config.n;
    for (Var a : trace.alpha) {
      const Tensor& alpha = tape.value(a);
      for (std::size_t i = 0; i < alpha.dim(0); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < alpha.dim(1); ++j) row += alpha.at(i, j);
        worst_row = std::max(worst_row, std::abs(row - 1.0));
      }
    }
  }
  rows_ok = worst_row <= 1e-9;
  report.checks.push_back({"attention rows sum to one", rows_ok,
                           format_detail("max |row sum - 1| = %.3g", worst_row)});
  report.checks.push_back(
      {"pooling restores n rows and y has n(n-1)/2 entries", shapes_ok, ""});
}

}  // namespace

VerificationReport run_verification(std::uint64_t seed) {
  VerificationReport report;
  gradient_checks(report, seed);
  homogeneity_checks(report, seed);
  reference_checks(report, seed);
  bookkeeping_checks(report, seed);
  return report;
}

}  // namespace dcap
