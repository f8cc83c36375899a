#include <doctest.h>

#include "dcap/embedding.hpp"
#include "test_util.hpp"

using namespace dcap;

TEST_SUITE_BEGIN("embedding");

TEST_CASE("init shapes and bound") {
  Rng rng(1);
  EmbeddingTable table = init_embedding({4, 7, 2}, 16, rng);
  REQUIRE(table.fields.size() == 3);
  CHECK(table.dim == 16);
  CHECK(table.fields[0].shape() == std::vector<std::size_t>{4, 16});
  CHECK(table.fields[1].shape() == std::vector<std::size_t>{7, 16});
  const double bound = 0.25;  // 1/sqrt(16)
  for (const auto& field : table.fields)
    for (std::size_t i = 0; i < field.size(); ++i) {
      CHECK(field[i] <= bound);
      CHECK(field[i] >= -bound);
    }
}

TEST_CASE("embed stacks one row per field") {
  Tape tape;
  std::vector<Var> fields = {
      tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6})),
      tape.leaf(Tensor({3, 3}, {7, 8, 9, 10, 11, 12, 13, 14, 15})),
  };
  EncodedSample sample{{1, 2}, 1};
  Var x = embed(tape, sample, fields);
  CHECK(tape.value(x) == Tensor({2, 3}, {4, 5, 6, 13, 14, 15}));
}

TEST_CASE("zero tables give a zero matrix") {
  Tape tape;
  std::vector<Var> fields = {tape.leaf(Tensor({3, 4})), tape.leaf(Tensor({2, 4}))};
  Var x = embed(tape, {{1, 0}, 0}, fields);
  CHECK(tape.value(x) == Tensor({2, 4}));
}

TEST_CASE("gradient lands exactly on the selected rows") {
  Tape tape;
  std::vector<Var> fields = {
      tape.leaf(Tensor({3, 2}, {1, 1, 2, 2, 3, 3})),
      tape.leaf(Tensor({2, 2}, {4, 4, 5, 5})),
  };
  Var x = embed(tape, {{2, 0}, 0}, fields);
  Var total = tape.reduce(tape.reduce(x, 1, Reduce::sum), 0, Reduce::sum);
  tape.backward(total);
  CHECK(tape.grad(fields[0]) == Tensor({3, 2}, {0, 0, 0, 0, 1, 1}));
  CHECK(tape.grad(fields[1]) == Tensor({2, 2}, {1, 1, 0, 0}));
}

TEST_CASE("embed validates ids and arity") {
  Tape tape;
  std::vector<Var> fields = {tape.leaf(Tensor({2, 2}))};
  CHECK_THROWS_AS(embed(tape, {{2}, 0}, fields), DataError);
  CHECK_THROWS_WITH_AS(embed(tape, {{2}, 0}, fields),
                       "field 0: id 2 outside table with 2 rows", DataError);
  CHECK_THROWS_AS(embed(tape, {{0, 0}, 0}, fields), ShapeError);
}

TEST_CASE("embed is linear in the tables") {
  Rng rng(5);
  Tensor t0 = test::random_tensor(rng, {4, 3});
  Tensor t1 = test::random_tensor(rng, {5, 3});
  EncodedSample sample{{3, 1}, 0};
  Tape tape;
  std::vector<Var> fields = {tape.leaf(t0), tape.leaf(t1)};
  Tensor base = tape.value(embed(tape, sample, fields));
  Tape scaled_tape;
  std::vector<Var> scaled_fields = {scaled_tape.leaf(scale(t0, 2.5)),
                                    scaled_tape.leaf(scale(t1, 2.5))};
  Tensor scaled = scaled_tape.value(embed(scaled_tape, sample, scaled_fields));
  CHECK(test::max_abs_diff(scaled, dcap::scale(base, 2.5)) < 1e-12);
}

TEST_CASE("multivalent sums the selected rows") {
  Tape tape;
  Var table = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(tape.value(embed_multivalent(tape, {1}, table)) == Tensor({2}, {0, 1}));
  CHECK(tape.value(embed_multivalent(tape, {1, 1}, table)) == Tensor({2}, {0, 2}));
  CHECK(tape.value(embed_multivalent(tape, {0, 1}, table)) == Tensor({2}, {1, 1}));
  CHECK_THROWS_AS(embed_multivalent(tape, {}, table), ContractError);
}

TEST_SUITE_END();
