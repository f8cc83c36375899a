#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dcap/model.hpp"
#include "test_util.hpp"

using namespace dcap;

namespace {

DcapConfig toy_config() {
  DcapConfig c;
  c.n = 3;
  c.d = 4;
  c.layers = 2;
  c.heads = 2;
  c.hidden1 = 3;
  c.hidden2 = 3;
  c.dropout = 0.0;
  return c;
}

const std::vector<std::size_t> kToyVocabs = {2, 3, 2};

void zero_params(DcapParams& p) {
  for (Tensor* t : param_tensors(p))
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config validation") {
  DcapConfig c = toy_config();
  CHECK_NOTHROW(c.validate());
  c.n = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.hidden2 = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("head input width") {
  DcapConfig movielens;
  movielens.n = 5;
  movielens.d = 16;
  movielens.layers = 2;
  CHECK(movielens.head_input() == 100);
  CHECK(movielens.cross_features() == 10);
  CHECK(toy_config().head_input() == 18);
  // defaults follow the published protocol
  DcapConfig defaults;
  CHECK(defaults.d == 16);
  CHECK(defaults.layers == 2);
  CHECK(defaults.dropout == 0.5);
}

TEST_CASE("init produces aligned shapes") {
  Rng rng(101);
  DcapParams p = init_dcap(toy_config(), kToyVocabs, rng);
  CHECK(p.embedding.fields.size() == 3);
  CHECK(p.attention.size() == 2);
  CHECK(p.head1.w.shape() == std::vector<std::size_t>{18, 3});
  CHECK(p.head1.b.shape() == std::vector<std::size_t>{1, 3});
  CHECK(p.head_out.w.shape() == std::vector<std::size_t>{3, 1});
  CHECK(param_tensors(p).size() == 3 + 2 * 7 + 6);
  CHECK_THROWS_AS(init_dcap(toy_config(), {2, 3}, rng), ConfigError);
}

TEST_CASE("zero parameters predict one half") {
  Rng rng(103);
  DcapParams p = init_dcap(toy_config(), kToyVocabs, rng);
  zero_params(p);
  std::vector<EncodedSample> batch = {{{0, 0, 0}, 1}, {{1, 2, 1}, 0}};
  for (double prob : dcap_forward(p, batch)) CHECK(prob == 0.5);
}

TEST_CASE("forward probabilities are strictly inside (0,1) and deterministic") {
  Rng rng(107);
  DcapParams p = init_dcap(toy_config(), kToyVocabs, rng);
  std::vector<EncodedSample> batch;
  for (std::uint32_t i = 0; i < 12; ++i)
    batch.push_back({{i % 2, i % 3, (i + 1) % 2}, static_cast<std::uint8_t>(i % 2)});
  auto probs = dcap_forward(p, batch);
  REQUIRE(probs.size() == batch.size());
  for (double prob : probs) {
    CHECK(prob > 0.0);
    CHECK(prob < 1.0);
  }
  CHECK(dcap_forward(p, batch) == probs);  // eval mode is bit-deterministic
}

TEST_CASE("traces expose row-stochastic attention per layer and head") {
  Rng rng(109);
  DcapParams p = init_dcap(toy_config(), kToyVocabs, rng);
  std::vector<EncodedSample> batch = {{{0, 1, 0}, 1}};
  std::vector<ForwardTrace> traces;
  dcap_forward(p, batch, &traces);
  REQUIRE(traces.size() == 1);
  REQUIRE(traces[0].alpha.size() == 2);
  for (const auto& layer : traces[0].alpha) {
    REQUIRE(layer.size() == 2);
    for (const Tensor& alpha : layer) {
      REQUIRE(alpha.shape() == std::vector<std::size_t>{3, 3});
      for (std::size_t i = 0; i < 3; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 3; ++j) row += alpha.at(i, j);
        CHECK(std::abs(row - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("dropout masks rescale the hidden activations") {
  Rng rng(113);
  DcapParams p = init_dcap(toy_config(), kToyVocabs, rng);
  EncodedSample sample{{0, 1, 1}, 1};

  Tape eval_tape;
  DcapVars eval_vars = dcap_leaves(eval_tape, p);
  double eval_prob =
      eval_tape.value(dcap_sample_forward(eval_tape, eval_vars, p.config, sample))[0];

  Tensor keep_all({1, 3}, {1, 1, 1});
  Tape keep_tape;
  DcapVars keep_vars = dcap_leaves(keep_tape, p);
  double keep_prob = keep_tape.value(dcap_sample_forward(
      keep_tape, keep_vars, p.config, sample, &keep_all, &keep_all))[0];
  CHECK(keep_prob == eval_prob);

  Tensor drop_all({1, 3});
  Tape drop_tape;
  DcapVars drop_vars = dcap_leaves(drop_tape, p);
  double drop_prob = drop_tape.value(dcap_sample_forward(
      drop_tape, drop_vars, p.config, sample, &drop_all, &drop_all))[0];
  // with both hidden layers zeroed only the output bias remains
  CHECK(drop_prob == 1.0 / (1.0 + std::exp(-p.head_out.b[0])));
}

TEST_CASE("logloss hand values") {
  std::vector<std::uint8_t> one = {1};
  CHECK(std::abs(logloss(std::vector<double>{0.5}, one) - std::log(2.0)) < 1e-12);
  std::vector<double> confident = {1.0};
  CHECK(logloss(confident, one) < 1e-6);
  std::vector<double> p = {0.9, 0.1};
  std::vector<std::uint8_t> y = {1, 0};
  CHECK(logloss(p, y) == doctest::Approx(0.105360516).epsilon(1e-8));
  CHECK_THROWS_AS(logloss(std::vector<double>{}, std::vector<std::uint8_t>{}),
                  ContractError);
  CHECK_THROWS_AS(logloss(p, one), ContractError);
  // clamp keeps the loss finite at the boundaries
  std::vector<double> extreme = {0.0, 1.0};
  CHECK(std::isfinite(logloss(extreme, y)));
}

TEST_CASE("objective adds the squared norm") {
  Tensor w({1}, {2.0});
  std::vector<const Tensor*> params = {&w};
  CHECK(objective(0.0, params, 0.5) == 2.0);
  CHECK(objective(0.7, params, 0.0) == 0.7);
  CHECK(objective(0.0, params, 1e-6) == doctest::Approx(4e-6).epsilon(1e-12));
  CHECK_THROWS_AS(objective(0.0, params, -1.0), ContractError);
}

TEST_CASE("lr forward") {
  LrParams p = init_lr({3, 2});
  std::vector<EncodedSample> batch = {{{0, 0}, 1}, {{2, 1}, 0}};
  for (double prob : lr_forward(p, batch)) CHECK(prob == 0.5);

  p.weights[0].at(1, 0) = 1.0;
  auto probs = lr_forward(p, std::vector<EncodedSample>{{{1, 0}, 1}, {{0, 0}, 0}});
  CHECK(probs[0] == doctest::Approx(0.731058578).epsilon(1e-8));
  CHECK(probs[1] == 0.5);

  p.bias[0] = -1.0;
  probs = lr_forward(p, std::vector<EncodedSample>{{{1, 0}, 1}});
  CHECK(probs[0] == 0.5);  // weight and bias cancel

  CHECK_THROWS_AS(lr_forward(p, std::vector<EncodedSample>{{{3, 0}, 1}}), DataError);
}

TEST_CASE("fm reduces to lr with zero factors") {
  Rng rng(127);
  FmParams fm = init_fm({3, 2}, 4, rng);
  for (auto& v : fm.factors)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.0;
  fm.weights[0].at(1, 0) = 0.8;
  fm.bias[0] = -0.3;
  LrParams lr = init_lr({3, 2});
  lr.weights[0].at(1, 0) = 0.8;
  lr.bias[0] = -0.3;
  std::vector<EncodedSample> batch = {{{1, 1}, 1}, {{0, 0}, 0}, {{2, 1}, 1}};
  auto fm_probs = fm_forward(fm, batch);
  auto lr_probs = lr_forward(lr, batch);
  for (std::size_t i = 0; i < batch.size(); ++i)
    CHECK(fm_probs[i] == doctest::Approx(lr_probs[i]).epsilon(1e-12));
}

TEST_CASE("fm pairwise hand value") {
  Rng rng(131);
  FmParams fm = init_fm({2, 2}, 2, rng);
  for (Tensor* t : param_tensors(fm))
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
  // v for the two active features both [1, 0] -> interaction 1
  fm.factors[0].at(0, 0) = 1.0;
  fm.factors[1].at(0, 0) = 1.0;
  auto probs = fm_forward(fm, std::vector<EncodedSample>{{{0, 0}, 1}});
  CHECK(probs[0] == doctest::Approx(0.731058578).epsilon(1e-8));
}

TEST_CASE("fm identity matches brute force pairwise sums") {
  Rng rng(137);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.index(4);  // 2..5 fields
    const std::size_t k = 1 + rng.index(4);
    std::vector<std::size_t> vocabs(n);
    for (auto& v : vocabs) v = 1 + rng.index(3);
    FmParams fm = init_fm(vocabs, k, rng);
    for (auto& w : fm.weights)
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
    fm.bias[0] = rng.uniform(-1, 1);
    EncodedSample sample;
    for (std::size_t f = 0; f < n; ++f)
      sample.feature_ids.push_back(static_cast<std::uint32_t>(rng.index(vocabs[f])));

    double logit = fm.bias[0];
    for (std::size_t f = 0; f < n; ++f)
      logit += fm.weights[f].at(sample.feature_ids[f], 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (std::size_t c = 0; c < k; ++c)
          logit += fm.factors[i].at(sample.feature_ids[i], c) *
                   fm.factors[j].at(sample.feature_ids[j], c);
    const double expected = 1.0 / (1.0 + std::exp(-logit));
    auto probs = fm_forward(fm, std::vector<EncodedSample>{sample});
    CHECK(std::abs(probs[0] - expected) < 1e-10);
  }
}

TEST_CASE("full model gradients match finite differences") {
  Rng rng(139);
  DcapConfig config = toy_config();
  DcapParams p = init_dcap(config, kToyVocabs, rng);
  EncodedSample sample{{1, 2, 0}, 1};

  std::vector<Tensor> inputs;
  for (const Tensor* t : param_tensors(std::as_const(p))) inputs.push_back(*t);
  auto build = [&](Tape& tape, const std::vector<Var>& in) {
    DcapVars vars;
    std::size_t at = 0;
    for (std::size_t f = 0; f < 3; ++f) vars.embedding.push_back(in[at++]);
    for (std::size_t l = 0; l < 2; ++l) {
      MultiHeadVars mv;
      for (std::size_t i = 0; i < 2; ++i) mv.wq.push_back(in[at++]);
      for (std::size_t i = 0; i < 2; ++i) mv.wk.push_back(in[at++]);
      for (std::size_t i = 0; i < 2; ++i) mv.wv.push_back(in[at++]);
      mv.wo = in[at++];
      vars.attention.push_back(std::move(mv));
    }
    vars.w1 = in[at++];
    vars.b1 = in[at++];
    vars.w2 = in[at++];
    vars.b2 = in[at++];
    vars.w3 = in[at++];
    vars.b3 = in[at++];
    Var prob = dcap_sample_forward(tape, vars, config, sample);
    return tape.bce(prob, 1.0);
  };
  CHECK(test::max_grad_rel_err(build, inputs) < 1e-5);
}

TEST_CASE("checkpoint round trip for every model kind") {
  Rng rng(149);
  const std::string path = "/tmp/dcap_test_ckpt.bin";

  DcapConfig config = toy_config();
  config.kind = ProductKind::outer;
  config.residual = true;
  config.seed = 77;
  DcapParams dcap = init_dcap(config, kToyVocabs, rng);
  save_checkpoint(path, dcap);
  AnyParams loaded = load_checkpoint(path);
  REQUIRE(params_kind(loaded) == ModelKind::dcap);
  {
    const auto& got = std::get<DcapParams>(loaded);
    CHECK(got.config.n == config.n);
    CHECK(got.config.d == config.d);
    CHECK(got.config.layers == config.layers);
    CHECK(got.config.heads == config.heads);
    CHECK(got.config.kind == ProductKind::outer);
    CHECK(got.config.residual == true);
    CHECK(got.config.seed == 77);
    CHECK(got.config.dropout == config.dropout);
    auto a = param_tensors(std::as_const(dcap));
    auto b = param_tensors(std::as_const(got));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  }

  LrParams lr = init_lr({4, 2});
  lr.weights[0].at(2, 0) = -1.5;
  lr.bias[0] = 0.25;
  save_checkpoint(path, lr);
  loaded = load_checkpoint(path);
  REQUIRE(params_kind(loaded) == ModelKind::lr);
  CHECK(std::get<LrParams>(loaded).weights[0].at(2, 0) == -1.5);
  CHECK(std::get<LrParams>(loaded).bias[0] == 0.25);

  FmParams fm = init_fm({4, 2, 3}, 5, rng);
  save_checkpoint(path, fm);
  loaded = load_checkpoint(path);
  REQUIRE(params_kind(loaded) == ModelKind::fm);
  {
    auto a = param_tensors(std::as_const(fm));
    auto b = param_tensors(std::as_const(std::get<FmParams>(loaded)));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects corruption") {
  const std::string path = "/tmp/dcap_test_ckpt_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT and then some bytes";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  Rng rng(151);
  DcapParams p = init_dcap(toy_config(), kToyVocabs, rng);
  save_checkpoint(path, p);
  // truncate the tail: parameters cannot be fully restored
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
  std::remove(path.c_str());
}

TEST_SUITE_END();
