#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "relens/error.hpp"
#include "relens/fusion.hpp"

using namespace relens;

namespace {

RelativeMatrix random_normalized(std::size_t rows, std::size_t anchors, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  RelativeMatrix m;
  m.rows = rows;
  m.anchors = anchors;
  m.values.resize(rows * anchors);
  for (float& x : m.values) x = u(rng);
  m.anchor_ids.resize(anchors);
  m.flagged.assign(rows, 0);
  return normalize_rows(m);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("to_relative: one-hot picks a row, uniform rows give uniform") {
  std::mt19937_64 rng(1);
  const auto m = random_normalized(5, 3, rng);
  std::vector<double> p(5, 0.0);
  p[2] = 1.0;
  const auto r = to_relative(p, m);
  for (std::size_t k = 0; k < 3; ++k) CHECK(r[k] == doctest::Approx(m.at(2, k)));

  RelativeMatrix flat;
  flat.rows = 4;
  flat.anchors = 2;
  flat.normalized = true;
  flat.values.assign(8, 0.5f);
  const std::vector<double> u(4, 0.25);
  for (double x : to_relative(u, flat)) CHECK(x == doctest::Approx(0.5));

  const std::vector<double> short_p(3, 1.0 / 3);
  CHECK_THROWS_AS(to_relative(short_p, m), ArgumentError);
}

TEST_CASE("to_relative rejects raw matrices unless asked") {
  RelativeMatrix raw;
  raw.rows = 2;
  raw.anchors = 1;
  raw.values = {0.1f, 0.2f};
  const std::vector<double> p = {0.5, 0.5};
  CHECK_THROWS_AS(to_relative(p, raw), ArgumentError);
  CHECK(to_relative(p, raw, MatrixForm::any)[0] == doctest::Approx(0.15));
}

TEST_CASE("to_relative matches a scalar matvec oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_normalized(6, 3, rng);
    const auto p = oracle::random_simplex(6, rng);
    CHECK(max_abs_diff(to_relative(p, m), oracle::matvec(p, m)) <= 1e-7);
  }
}

TEST_CASE("to_relative is linear and closed on the simplex") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> alpha(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_normalized(9, 4, rng);
    const auto p = oracle::random_simplex(9, rng), q = oracle::random_simplex(9, rng);
    const double a = alpha(rng);
    std::vector<double> mix(9);
    for (std::size_t i = 0; i < 9; ++i) mix[i] = a * p[i] + (1 - a) * q[i];
    const auto rp = to_relative(p, m), rq = to_relative(q, m), rm = to_relative(mix, m);
    std::vector<double> expected(4);
    for (std::size_t k = 0; k < 4; ++k) expected[k] = a * rp[k] + (1 - a) * rq[k];
    CHECK(max_abs_diff(rm, expected) <= 1e-6);
    double s = 0.0;
    for (double x : rm) {
      CHECK(x > 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("aggregate") {
  const RelativeRepresentation r = {0.2, 0.3, 0.5};
  const std::vector<RelativeRepresentation> same = {r, r};
  const std::vector<double> half = {0.5, 0.5};
  CHECK(max_abs_diff(aggregate(same, half), r) < 1e-15);

  const std::vector<RelativeRepresentation> two = {{0.99, 0.01}, {0.01, 0.99}};
  const std::vector<double> first = {1.0, 0.0};
  CHECK(aggregate(two, first) == two[0]);

  std::mt19937_64 rng(4);
  std::vector<RelativeRepresentation> three;
  for (int i = 0; i < 3; ++i) three.push_back(oracle::random_simplex(5, rng));
  const std::vector<double> third(3, 1.0 / 3);
  std::vector<double> mean(5, 0.0);
  for (std::size_t k = 0; k < 5; ++k) mean[k] = (three[0][k] + three[1][k] + three[2][k]) / 3.0;
  CHECK(max_abs_diff(aggregate(three, third), mean) <= 1e-9);

  CHECK_THROWS_AS(aggregate(three, half), ArgumentError);
}

TEST_CASE("kl_loss closed forms") {
  const std::vector<double> r = {0.1, 0.2, 0.7};
  CHECK(kl_loss(r, r) == 0.0);
  const std::vector<double> one = {1.0, 0.0}, half = {0.5, 0.5}, skew = {0.75, 0.25};
  CHECK(kl_loss(one, half) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(kl_loss(half, skew) == doctest::Approx(0.143841).epsilon(1e-5));
  CHECK(kl_loss(half, skew) == doctest::Approx(oracle::kl(half, skew)));
  CHECK_THROWS_AS(kl_loss(r, half), ArgumentError);
  // A zero candidate is floored instead of producing infinity.
  const std::vector<double> zero = {0.0, 1.0};
  CHECK(std::isfinite(kl_loss(half, zero)));
}

TEST_CASE("kl_gradient matches central differences") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_normalized(8, 4, rng);
    const auto target = oracle::random_simplex(4, rng);
    const auto p = oracle::random_simplex(8, rng);
    const auto g = kl_gradient(target, p, m);
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& x) { return oracle::kl(target, oracle::matvec(x, m)); }, p, 1e-5);
    for (std::size_t i = 0; i < 8; ++i) {
      if (std::abs(fd[i]) > 1e-6) CHECK(std::abs(g[i] - fd[i]) / std::abs(fd[i]) <= 1e-4);
    }
  }
}

TEST_CASE("kl_gradient with identical rows at the target is a constant direction") {
  RelativeMatrix m;
  m.rows = 3;
  m.anchors = 2;
  m.normalized = true;
  m.values = {0.3f, 0.7f, 0.3f, 0.7f, 0.3f, 0.7f};
  const std::vector<double> p = {0.2, 0.5, 0.3};
  const auto target = to_relative(p, m);
  const auto g = kl_gradient(target, p, m);
  CHECK(g[0] == doctest::Approx(g[1]));
  CHECK(g[1] == doctest::Approx(g[2]));
  for (double x : g) CHECK(std::isfinite(x));
}

TEST_CASE("inverse_transform with eta zero returns the initial distribution") {
  std::mt19937_64 rng(7);
  const auto m = random_normalized(6, 3, rng);
  const auto target = oracle::random_simplex(3, rng);
  AbsoluteDistribution init{oracle::random_simplex(6, rng), 0};
  EnsembleConfig cfg;
  cfg.eta = 0.0;
  cfg.steps = 5;
  const auto out = inverse_transform(target, init, m, cfg);
  CHECK(out.p.values == init.values);
  REQUIRE(out.losses.size() == 6);
  for (double l : out.losses) CHECK(l == out.losses.front());
}

TEST_CASE("inverse_transform stops at a fixed point") {
  std::mt19937_64 rng(8);
  const auto m = random_normalized(6, 3, rng);
  AbsoluteDistribution init{oracle::random_simplex(6, rng), 0};
  const auto target = to_relative(init, m);
  EnsembleConfig cfg;
  cfg.eta = 0.3;
  const auto out = inverse_transform(target, init, m, cfg);
  CHECK(out.p.values == init.values);
  CHECK(out.losses.front() < 1e-9);
}

TEST_CASE("inverse_transform approaches the grid-search optimum") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = random_normalized(4, 3, rng);
    const auto target = oracle::random_simplex(3, rng);
    AbsoluteDistribution init{std::vector<double>(4, 0.25), 0};
    EnsembleConfig cfg;
    cfg.eta = 0.05;
    cfg.steps = 500;
    const auto out = inverse_transform(target, init, m, cfg);
    const auto best = oracle::simplex_grid_min4(
        [&](const std::vector<double>& p) { return oracle::kl(target, oracle::matvec(p, m)); });
    CHECK(out.losses.back() <= best.loss + 5e-2);
    check_distribution(out.p.values);
  }
}

TEST_CASE("inverse_transform reports the failing step on NaN") {
  RelativeMatrix m;
  m.rows = 2;
  m.anchors = 2;
  m.normalized = true;
  m.values = {0.5f, 0.5f, 0.5f, 0.5f};
  AbsoluteDistribution init{{0.5, 0.5}, 0};
  const std::vector<double> target = {0.5, 0.5};
  EnsembleConfig cfg;
  cfg.eta = std::numeric_limits<double>::infinity();
  cfg.early_stop_loss = -1.0;
  try {
    inverse_transform(target, init, m, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.step() == 0);
  } catch (const ConfigError&) {
    // An infinite step size may already be rejected by validation.
  }
}

TEST_CASE("config validation lists every bad field") {
  EnsembleConfig cfg;
  cfg.eta = -1.0;
  cfg.steps = -2;
  cfg.weights = {1.0};
  try {
    cfg.validate(2);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("eta") != std::string::npos);
    CHECK(what.find("steps") != std::string::npos);
    CHECK(what.find("weights") != std::string::npos);
  }
  EnsembleConfig ok;
  CHECK_NOTHROW(ok.validate(3));
  CHECK(ok.resolved_weights(4) == std::vector<double>(4, 0.25));
}
