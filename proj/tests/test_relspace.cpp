#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "relens/error.hpp"
#include "relens/relspace.hpp"

using namespace relens;

namespace {

RelativeMatrix raw_matrix(std::size_t rows, std::size_t anchors, std::vector<float> values) {
  RelativeMatrix m;
  m.rows = rows;
  m.anchors = anchors;
  m.values = std::move(values);
  m.anchor_ids.resize(anchors);
  m.flagged.assign(rows, 0);
  return m;
}

}  // namespace

TEST_CASE("self-anchor cosine is one and orthogonal rows give zero") {
  const EmbeddingTable e(3, 2, {1.0f, 0.0f, 0.0f, 2.0f, 3.0f, 3.0f});
  const std::vector<TokenId> anchors = {0, 1};
  const auto m = build_relative_matrix(e, anchors);
  CHECK(m.at(0, 0) == doctest::Approx(1.0));
  CHECK(m.at(1, 1) == doctest::Approx(1.0));
  CHECK(m.at(0, 1) == 0.0f);
  CHECK(m.at(1, 0) == 0.0f);
  CHECK(m.at(2, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
  const std::vector<TokenId> bad = {3};
  CHECK_THROWS_AS(build_relative_matrix(e, bad), ArgumentError);
}

TEST_CASE("relative matrix matches a brute-force cosine loop on a random 8x4 table") {
  std::mt19937_64 rng(11);
  const auto e = oracle::random_embeddings(8, 4, rng);
  const std::vector<TokenId> anchors = {1, 4, 6};
  const auto m = build_relative_matrix(e, anchors);
  REQUIRE(m.rows == 8);
  REQUIRE(m.anchors == 3);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double expected = oracle::naive_cosine(oracle::row_of(e, i), oracle::row_of(e, anchors[k]));
      CHECK(std::abs(m.at(i, k) - expected) < 1e-6);
    }
  }
}

TEST_CASE("zero-norm embeddings are flagged and normalize to uniform") {
  const EmbeddingTable e(3, 2, {1.0f, 0.0f, 0.0f, 0.0f, 0.0f, 1.0f});
  CHECK(e.flagged(1));
  CHECK(e.flagged_count() == 1);
  const std::vector<TokenId> anchors = {0, 2};
  const auto raw = build_relative_matrix(e, anchors);
  CHECK(raw.flagged[1] == 1);
  CHECK(raw.at(1, 0) == 0.0f);
  const auto norm = normalize_rows(raw);
  CHECK(norm.at(1, 0) == 0.5f);
  CHECK(norm.at(1, 1) == 0.5f);
}

TEST_CASE("non-finite embeddings are rejected") {
  CHECK_THROWS_AS(EmbeddingTable(1, 2, {1.0f, std::nanf("")}), ArgumentError);
}

TEST_CASE("softmax row normalization") {
  const auto m = raw_matrix(3, 2, {1.0f, 0.0f, 0.0f, 0.0f, 0.7f, 0.7f});
  const auto n = normalize_rows(m);
  CHECK(n.normalized);
  const auto expected = oracle::softmax({1.0, 0.0});
  CHECK(n.at(0, 0) == doctest::Approx(expected[0]).epsilon(1e-6));
  CHECK(n.at(0, 1) == doctest::Approx(expected[1]).epsilon(1e-6));
  CHECK(n.at(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(n.at(1, 0) == 0.5f);
  CHECK(n.at(2, 1) == 0.5f);
  CHECK_THROWS_AS(normalize_rows(n), ArgumentError);

  const auto four = normalize_rows(raw_matrix(1, 4, {0.0f, 0.0f, 0.0f, 0.0f}));
  for (std::size_t k = 0; k < 4; ++k) CHECK(four.at(0, k) == 0.25f);
}

TEST_CASE("normalized rows are strictly positive simplex vectors") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> v(10 * 7);
    for (float& x : v) x = u(rng);
    const auto n = normalize_rows(raw_matrix(10, 7, v));
    for (std::size_t i = 0; i < 10; ++i) {
      double s = 0.0;
      for (float x : n.row(i)) {
        CHECK(x > 0.0f);
        s += x;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("relative matrix file round trip") {
  std::mt19937_64 rng(3);
  const auto e = oracle::random_embeddings(6, 3, rng);
  const std::vector<TokenId> anchors = {0, 5};
  const auto m = normalize_rows(build_relative_matrix(e, anchors));
  const auto path = std::filesystem::temp_directory_path() / "relens_test.dpr";
  write_relative_matrix(m, path);
  const auto back = read_relative_matrix(path);
  CHECK(back.rows == m.rows);
  CHECK(back.anchors == m.anchors);
  CHECK(back.normalized);
  CHECK(back.values == m.values);
  CHECK(back.anchor_ids == m.anchor_ids);
  std::filesystem::remove(path);

  const auto epath = std::filesystem::temp_directory_path() / "relens_test.dpe";
  write_embeddings(e, epath);
  CHECK(read_embeddings(epath).values() == e.values());
  std::filesystem::remove(epath);
}

TEST_CASE("consistency of a matrix with itself is one") {
  std::mt19937_64 rng(9);
  const auto e = oracle::random_embeddings(10, 4, rng);
  const std::vector<TokenId> anchors = {2, 3, 7};
  const auto m = normalize_rows(build_relative_matrix(e, anchors));
  std::vector<std::pair<TokenId, TokenId>> pairs;
  for (TokenId i = 0; i < 10; ++i) pairs.emplace_back(i, i);
  const auto report = consistency(m, m, pairs);
  CHECK(report.mean == doctest::Approx(1.0));
  for (double c : report.cosines) CHECK(c == doctest::Approx(1.0));

  const auto u1 = raw_matrix(1, 3, {0.2f, 0.2f, 0.2f});
  const auto u2 = raw_matrix(1, 3, {0.5f, 0.5f, 0.5f});
  const std::vector<std::pair<TokenId, TokenId>> one = {{0, 0}};
  CHECK(consistency(u1, u2, one).mean == doctest::Approx(1.0));

  const auto narrow = raw_matrix(1, 2, {0.5f, 0.5f});
  CHECK_THROWS_AS(consistency(u1, narrow, one), ArgumentError);
}

TEST_CASE("nearest-neighbour similarity: duplicates and orthogonal rows") {
  const std::vector<double> edges = {-1.0, 0.0, 0.5, 1.0};
  const EmbeddingTable dup(2, 2, {1.0f, 2.0f, 1.0f, 2.0f});
  const auto h = nn_distance_histogram(dup, edges);
  CHECK(h.nearest[0] == doctest::Approx(1.0));
  CHECK(h.nearest[1] == doctest::Approx(1.0));
  CHECK(h.counts[2] == 2);

  const EmbeddingTable ortho(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto o = nn_distance_histogram(ortho, edges);
  for (double s : o.nearest) CHECK(s == 0.0);
  CHECK(o.counts[1] == 3);

  const EmbeddingTable lone(2, 2, {1.0f, 0.0f, 0.0f, 0.0f});
  CHECK_THROWS_AS(nn_distance_histogram(lone, edges), ArgumentError);
}

TEST_CASE("nearest-neighbour histogram matches a quadratic scan on a random 50x8 table") {
  std::mt19937_64 rng(21);
  const auto e = oracle::random_embeddings(50, 8, rng);
  std::vector<double> edges;
  for (int k = 0; k <= 10; ++k) edges.push_back(-1.0 + 0.2 * k);
  const auto h = nn_distance_histogram(e, edges);
  std::vector<std::size_t> counts(10, 0);
  for (std::size_t i = 0; i < 50; ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < 50; ++j) {
      if (j != i) best = std::max(best, oracle::naive_cosine(oracle::row_of(e, i), oracle::row_of(e, j)));
    }
    CHECK(std::abs(h.nearest[i] - best) < 1e-9);
    std::size_t bin = 9;
    for (std::size_t k = 0; k < 10; ++k) {
      if (best >= edges[k] && best < edges[k + 1]) {
        bin = k;
        break;
      }
    }
    ++counts[bin];
  }
  CHECK(h.counts == counts);
  CHECK(h.below == 0);
  CHECK(h.above == 0);
}
