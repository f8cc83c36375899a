#include <doctest.h>

#include <cmath>

#include "dcap/attention.hpp"
#include "test_util.hpp"

using namespace dcap;

namespace {

Tensor identity(std::size_t n) {
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("init validates the head split") {
  Rng rng(2);
  CHECK_THROWS_AS(init_attention(16, 3, rng), ConfigError);
  CHECK_THROWS_AS(init_attention(16, 0, rng), ConfigError);
  MultiHeadParams p = init_attention(16, 4, rng);
  CHECK(p.heads() == 4);
  CHECK(p.model_dim() == 16);
  CHECK(p.head_dim() == 4);
  CHECK(p.wo.shape() == std::vector<std::size_t>{16, 16});
}

TEST_CASE("single row attends to itself") {
  Tape tape;
  Var q = tape.leaf(Tensor({1, 2}, {0.3, -0.7}));
  Var k = tape.leaf(Tensor({1, 2}, {1.5, 0.2}));
  Var v = tape.leaf(Tensor({1, 2}, {4.0, 9.0}));
  ScaledAttentionOut out = scaled_attention(tape, q, k, v);
  CHECK(tape.value(out.alpha) == Tensor({1, 1}, {1.0}));
  CHECK(tape.value(out.z) == Tensor({1, 2}, {4.0, 9.0}));
}

TEST_CASE("identical keys give uniform weights") {
  Tape tape;
  Var q = tape.leaf(Tensor({3, 2}, {1, 2, -1, 0, 3, 3}));
  Var k = tape.leaf(Tensor({3, 2}, {5, 5, 5, 5, 5, 5}));
  Var v = tape.leaf(Tensor({3, 2}, {3, 0, 0, 3, 3, 3}));
  ScaledAttentionOut out = scaled_attention(tape, q, k, v);
  const Tensor& alpha = tape.value(out.alpha);
  for (std::size_t i = 0; i < alpha.size(); ++i)
    CHECK(alpha[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  const Tensor& z = tape.value(out.z);
  for (std::size_t i = 0; i < 3; ++i) CHECK(z.at(i, 0) == doctest::Approx(2.0));
}

TEST_CASE("two-row hand evaluation") {
  Tape tape;
  Var q = tape.leaf(Tensor({2, 1}, {1, 0}));
  Var k = tape.leaf(Tensor({2, 1}, {1, 0}));
  Var v = tape.leaf(Tensor({2, 1}, {10, 20}));
  ScaledAttentionOut out = scaled_attention(tape, q, k, v);
  const Tensor& alpha = tape.value(out.alpha);
  const double e = std::exp(1.0);
  CHECK(alpha.at(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(alpha.at(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
  CHECK(alpha.at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  const Tensor& z = tape.value(out.z);
  CHECK(z.at(0, 0) == doctest::Approx(12.689414).epsilon(1e-6));
  CHECK(z.at(1, 0) == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("scaled_attention validates rows") {
  Tape tape;
  Var q = tape.leaf(Tensor({2, 1}, {1, 0}));
  Var k = tape.leaf(Tensor({3, 1}, {1, 0, 2}));
  CHECK_THROWS_AS(scaled_attention(tape, q, k, q), ShapeError);
}

TEST_CASE("zero logits average the values through identity projections") {
  Rng rng(3);
  MultiHeadParams p;
  p.wq = {Tensor({3, 3})};
  p.wk = {Tensor({3, 3})};
  p.wv = {identity(3)};
  p.wo = identity(3);
  Tape tape;
  Var x = tape.leaf(test::random_tensor(rng, {4, 3}));
  MultiHeadVars vars = attention_leaves(tape, p);
  MultiHeadOut out = multi_head(tape, x, vars);
  const Tensor& xv = tape.value(x);
  const Tensor& z = tape.value(out.z);
  for (std::size_t col = 0; col < 3; ++col) {
    double mean = 0;
    for (std::size_t row = 0; row < 4; ++row) mean += xv.at(row, col);
    mean /= 4;
    for (std::size_t row = 0; row < 4; ++row)
      CHECK(z.at(row, col) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("multi_head output shape and row-stochastic weights") {
  Rng rng(7);
  for (std::size_t h : {1u, 2u, 4u}) {
    MultiHeadParams p = init_attention(8, h, rng);
    Tape tape;
    Var x = tape.leaf(test::random_tensor(rng, {5, 8}, -3.0, 3.0));
    MultiHeadOut out = multi_head(tape, x, attention_leaves(tape, p));
    CHECK(tape.value(out.z).shape() == std::vector<std::size_t>{5, 8});
    REQUIRE(out.alpha.size() == h);
    for (Var a : out.alpha) {
      const Tensor& alpha = tape.value(a);
      REQUIRE(alpha.shape() == std::vector<std::size_t>{5, 5});
      for (std::size_t i = 0; i < 5; ++i) {
        double row_sum = 0;
        for (std::size_t j = 0; j < 5; ++j) {
          CHECK(alpha.at(i, j) >= 0.0);
          CHECK(alpha.at(i, j) <= 1.0);
          row_sum += alpha.at(i, j);
        }
        CHECK(std::abs(row_sum - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("multi_head validates input width") {
  Rng rng(9);
  MultiHeadParams p = init_attention(4, 2, rng);
  Tape tape;
  Var x = tape.leaf(test::random_tensor(rng, {3, 5}));
  CHECK_THROWS_AS(multi_head(tape, x, attention_leaves(tape, p)), ShapeError);
}

TEST_CASE("permutation equivariance") {
  Rng rng(11);
  MultiHeadParams p = init_attention(6, 2, rng);
  Tensor x = test::random_tensor(rng, {4, 6});
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor permuted({4, 6});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) permuted.at(i, j) = x.at(perm[i], j);

  Tape t1, t2;
  Tensor z1 = t1.value(multi_head(t1, t1.leaf(x), attention_leaves(t1, p)).z);
  Tensor z2 = t2.value(multi_head(t2, t2.leaf(permuted), attention_leaves(t2, p)).z);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(std::abs(z2.at(i, j) - z1.at(perm[i], j)) < 1e-12);
}

TEST_CASE("frozen coefficients bypass the softmax") {
  Rng rng(13);
  MultiHeadParams p = init_attention(4, 2, rng);
  Tensor x = test::random_tensor(rng, {3, 4});

  Tape live;
  MultiHeadOut live_out = multi_head(live, live.leaf(x), attention_leaves(live, p));
  std::vector<Tensor> alphas;
  for (Var a : live_out.alpha) alphas.push_back(live.value(a));

  Tape frozen;
  MultiHeadOut frozen_out =
      multi_head(frozen, frozen.leaf(x), attention_leaves(frozen, p), false, &alphas);
  CHECK(frozen.value(frozen_out.z) == live.value(live_out.z));

  // with frozen coefficients the block is linear in X
  Tape scaled;
  MultiHeadOut scaled_out = multi_head(scaled, scaled.leaf(dcap::scale(x, 3.0)),
                                       attention_leaves(scaled, p), false, &alphas);
  CHECK(test::max_abs_diff(scaled.value(scaled_out.z),
                           dcap::scale(live.value(live_out.z), 3.0)) < 1e-12);
}

TEST_CASE("residual adds the input back") {
  Rng rng(17);
  MultiHeadParams p = init_attention(4, 1, rng);
  Tensor x = test::random_tensor(rng, {3, 4});
  Tape plain, res;
  Tensor z_plain = plain.value(multi_head(plain, plain.leaf(x), attention_leaves(plain, p)).z);
  Tensor z_res = res.value(multi_head(res, res.leaf(x), attention_leaves(res, p), true).z);
  CHECK(test::max_abs_diff(z_res, elementwise(z_plain, x, Elementwise::add)) == 0.0);
}

TEST_CASE("multi_head gradients match finite differences") {
  Rng rng(19);
  Tensor x = test::random_tensor(rng, {3, 4}, -1.0, 1.0);
  Tensor wq0 = test::random_tensor(rng, {4, 2}, -0.5, 0.5);
  Tensor wk0 = test::random_tensor(rng, {4, 2}, -0.5, 0.5);
  Tensor wv0 = test::random_tensor(rng, {4, 2}, -0.5, 0.5);
  Tensor wq1 = test::random_tensor(rng, {4, 2}, -0.5, 0.5);
  Tensor wk1 = test::random_tensor(rng, {4, 2}, -0.5, 0.5);
  Tensor wv1 = test::random_tensor(rng, {4, 2}, -0.5, 0.5);
  Tensor wo = test::random_tensor(rng, {4, 4}, -0.5, 0.5);
  Tensor weights = test::random_tensor(rng, {3, 4});
  auto build = [&](Tape& t, const std::vector<Var>& in) {
    MultiHeadVars vars;
    vars.wq = {in[1], in[4]};
    vars.wk = {in[2], in[5]};
    vars.wv = {in[3], in[6]};
    vars.wo = in[7];
    return test::weighted_sum(t, multi_head(t, in[0], vars).z, weights);
  };
  CHECK(test::max_grad_rel_err(build, {x, wq0, wk0, wv0, wq1, wk1, wv1, wo}) < 1e-6);
}

TEST_SUITE_END();
