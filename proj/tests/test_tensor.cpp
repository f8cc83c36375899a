#include <doctest.h>

#include <cmath>
#include <vector>

#include "dcap/tensor.hpp"
#include "test_util.hpp"

using namespace dcap;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("matmul identity") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, a) == a);
}

TEST_CASE("matmul hand value") {
  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == std::vector<std::size_t>{1, 1});
  CHECK(c[0] == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul transposed variants agree with explicit products") {
  Rng rng(7);
  Tensor a = test::random_tensor(rng, {3, 4});
  Tensor b = test::random_tensor(rng, {5, 4});
  Tensor c = matmul_nt(a, b);  // 3x5
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(j, k);
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  Tensor d = test::random_tensor(rng, {4, 3});
  Tensor e = test::random_tensor(rng, {4, 5});
  Tensor f = matmul_tn(d, e);  // 3x5
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += d.at(k, i) * e.at(k, j);
      CHECK(f.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("matmul associativity on random conforming triples") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = test::random_tensor(rng, {1 + rng.index(4), 1 + rng.index(4)});
    Tensor b = test::random_tensor(rng, {a.dim(1), 1 + rng.index(4)});
    Tensor c = test::random_tensor(rng, {b.dim(1), 1 + rng.index(4)});
    Tensor lhs = matmul(matmul(a, b), c);
    Tensor rhs = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      CHECK(test::rel_err(lhs[i], rhs[i]) < 1e-9);
    }
  }
}

TEST_CASE("softmax symmetry") {
  Tensor s = softmax_rows(Tensor({1, 2}, {0, 0}));
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax survives large magnitudes") {
  Tensor s = softmax_rows(Tensor({1, 2}, {1000, 1000}));
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.all_finite());
}

TEST_CASE("softmax hand value") {
  Tensor s = softmax_rows(Tensor({1, 2}, {0.0, std::log(3.0)}));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one on random inputs") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = test::random_tensor(rng, {1 + rng.index(6), 1 + rng.index(6)}, -40.0, 40.0);
    Tensor s = softmax_rows(a);
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < s.dim(1); ++j) {
        sum += s.at(i, j);
        CHECK(s.at(i, j) >= 0.0);
        CHECK(s.at(i, j) <= 1.0);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("elementwise hand values") {
  Tensor a({3}, {1, 2, 3});
  Tensor b({3}, {4, 5, 6});
  CHECK(elementwise(a, b, Elementwise::mul) == Tensor({3}, {4, 10, 18}));
  CHECK(elementwise(a, Tensor({3}), Elementwise::add) == a);
  Tensor diff = elementwise(a, a, Elementwise::sub);
  CHECK(diff == Tensor({3}));
  CHECK_THROWS_AS(elementwise(a, Tensor({4}), Elementwise::add), ShapeError);
}

TEST_CASE("reduce hand values") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(reduce(a, 1, Reduce::sum) == Tensor({2}, {3, 7}));
  CHECK(reduce(Tensor({2, 2}, {2, 2, 2, 2}), 0, Reduce::mean) == Tensor({2}, {2, 2}));
  CHECK(reduce(Tensor({3, 4}), 0, Reduce::sum) == Tensor({4}));
  CHECK_THROWS_AS(reduce(a, 2, Reduce::sum), ShapeError);
}

TEST_CASE("reduce on rank-3") {
  Tensor a({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(reduce(a, 0, Reduce::sum) == Tensor({2, 2}, {6, 8, 10, 12}));
  CHECK(reduce(a, 2, Reduce::sum) == Tensor({2, 2}, {3, 7, 11, 15}));
}

TEST_CASE("concat joins along an axis") {
  Tensor a({2, 1}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  std::vector<Tensor> parts{a, b};
  CHECK(concat(parts, 1) == Tensor({2, 2}, {1, 3, 2, 4}));
  std::vector<Tensor> one{a};
  CHECK(concat(one, 0) == a);
  std::vector<Tensor> ragged{a, Tensor({3, 2})};
  CHECK_THROWS_AS(concat(ragged, 0), ShapeError);
}

TEST_CASE("concat widths add up for the dense head input") {
  // n=5 fields, d=16, two layers of n(n-1)/2 = 10 pair outputs
  std::vector<Tensor> parts{Tensor({80}), Tensor({10}), Tensor({10})};
  CHECK(concat(parts, 0).size() == 100);
}

TEST_CASE("concat then split along the same axis is the identity") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng.index(4);
    std::vector<Tensor> parts;
    std::vector<std::size_t> widths;
    const std::size_t k = 1 + rng.index(3);
    for (std::size_t i = 0; i < k; ++i) {
      widths.push_back(1 + rng.index(3));
      parts.push_back(test::random_tensor(rng, {rows, widths.back()}));
    }
    Tensor joined = concat(parts, 1);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < widths[p]; ++j) {
          CHECK(joined.at(i, offset + j) == parts[p].at(i, j));
        }
      }
      offset += widths[p];
    }
  }
}

TEST_SUITE_END();
