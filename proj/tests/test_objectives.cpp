#include <doctest.h>

#include <random>

#include "distillrank/error.hpp"
#include "distillrank/objectives.hpp"

using namespace distillrank;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, Eigen::Index n, double scale = 3.0) {
  std::normal_distribution<double> g(0.0, scale);
  return Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); });
}

// Direct formulas, no log-sum-exp shift.
double naive_kl(const Eigen::VectorXd& t, const Eigen::VectorXd& s) {
  const Eigen::VectorXd p = t.array().exp() / t.array().exp().sum();
  const Eigen::VectorXd q = s.array().exp() / s.array().exp().sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) kl += p(i) * std::log(p(i) / q(i));
  return kl;
}

template <typename F>
Eigen::VectorXd numeric_grad(const Eigen::VectorXd& x, F&& f, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("infonce on two equal scores is ln 2") {
  const auto r = infonce(vec({0.0, 0.0}), 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(r.grad(0) == doctest::Approx(-0.5));
  CHECK(r.grad(1) == doctest::Approx(0.5));
}

TEST_CASE("infonce saturates without overflow") {
  const auto good = infonce(vec({1000.0, 0.0, -5.0}), 0);
  CHECK(good.loss >= 0.0);
  CHECK(good.loss < 1e-300);
  const auto bad = infonce(vec({0.0, 1000.0}), 0);
  CHECK(bad.loss == doctest::Approx(1000.0));
  CHECK(std::isfinite(bad.grad.sum()));
}

TEST_CASE("infonce matches the naive softmax") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_vec(rng, 2 + trial % 9);
    const Eigen::Index pos = trial % s.size();
    const double expected = -std::log(std::exp(s(pos)) / s.array().exp().sum());
    const auto r = infonce(s, pos);
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-10));
    CHECK((r.grad - numeric_grad(s, [&](const Eigen::VectorXd& x) { return infonce(x, pos).loss; })).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(r.grad.sum()) < 1e-12);
  }
  CHECK_THROWS_AS(infonce(Eigen::VectorXd(), 0), ValidationError);
  CHECK_THROWS_AS(infonce(vec({1.0}), 1), ValidationError);
}

TEST_CASE("pointwise KD vanishes when student equals teacher") {
  const auto s = vec({0.3, -1.2, 2.0, 0.0});
  const auto r = pointwise_kd(s, s, 1.0);
  CHECK(r.loss >= 0.0);
  CHECK(r.loss < 1e-12);
  CHECK(r.grad.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("pointwise KD at high temperature targets the uniform distribution") {
  const auto t = vec({5.0, -3.0, 1.0});
  const auto s = vec({0.7, 0.1, -0.4});
  const auto r = pointwise_kd(s, t, 1e12);
  const Eigen::VectorXd q = s.array().exp() / s.array().exp().sum();
  // KL(uniform || q) = -ln 3 - mean(ln q)
  const double expected = -std::log(3.0) - q.array().log().mean();
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("pointwise KD matches the naive formula and its gradient") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 2 + trial % 7;
    const auto t = random_vec(rng, n), s = random_vec(rng, n);
    const double tau = 0.5 + (trial % 4);
    const auto r = pointwise_kd(s, t, tau);
    CHECK(r.loss == doctest::Approx(naive_kl(t / tau, s)).epsilon(1e-9));
    const auto fd = numeric_grad(s, [&](const Eigen::VectorXd& x) { return pointwise_kd(x, t, tau).loss; });
    CHECK((r.grad - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(pointwise_kd(vec({1.0, 2.0}), vec({1.0, 2.0}), 0.0), ValidationError);
  CHECK_THROWS_AS(pointwise_kd(vec({1.0, 2.0}), vec({1.0}), 1.0), ValidationError);
  CHECK_THROWS_AS(pointwise_kd(vec({1.0}), vec({1.0}), 1.0), ValidationError);
}

TEST_CASE("KL is non-negative and zero on equal inputs over random pairs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::Index n = 2 + trial % 20;
    const double scale = 0.1 + (trial % 50);
    const auto t = random_vec(rng, n, scale), s = random_vec(rng, n, scale);
    const auto r = pointwise_kd(s, t, 1.0);
    REQUIRE(r.loss >= 0.0);
    REQUIRE(pointwise_kd(t, t, 1.0).loss < 1e-12);
    const double p = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double m = std::normal_distribution<double>(0.0, scale)(rng);
    REQUIRE(binary_kl(p, m) >= 0.0);
    REQUIRE(binary_kl(logistic(m), m) < 1e-12);
  }
}

TEST_CASE("binary KL examples and endpoints") {
  CHECK(binary_kl(0.5, 0.0) == doctest::Approx(0.0));
  // Teacher certain: loss is -ln sigma(m).
  CHECK(binary_kl(1.0, 2.0) == doctest::Approx(-std::log(logistic(2.0))).epsilon(1e-14));
  CHECK(binary_kl(0.0, 2.0) == doctest::Approx(-std::log(1.0 - logistic(2.0))).epsilon(1e-14));
  CHECK(std::isfinite(binary_kl(1.0, -800.0)));
  CHECK(binary_kl(1.0, -800.0) == doctest::Approx(800.0));
  const PairTarget single[] = {{0, 1, 0.9}};
  const double ps = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(pairwise_kd(vec({1.0, 0.0}), std::span<const PairTarget>(single)).loss ==
        doctest::Approx(0.9 * std::log(0.9 / ps) + 0.1 * std::log(0.1 / (1 - ps))).epsilon(1e-13));
  const double p = 0.8, m = 0.3;
  const double q = logistic(m);
  CHECK(binary_kl(p, m) == doctest::Approx(p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q))).epsilon(1e-12));
  CHECK_THROWS_AS(binary_kl(1.5, 0.0), ValidationError);
  CHECK_THROWS_AS(binary_kl(std::nan(""), 0.0), ValidationError);
}

TEST_CASE("pairwise gradient pushes the student toward the teacher") {
  const auto s = vec({0.0, 0.0});
  const PairTarget prefer_first[] = {{0, 1, 0.9}};
  const auto r = pairwise_kd(s, std::span<const PairTarget>(prefer_first));
  CHECK(r.grad(0) < 0.0);
  CHECK(r.grad(1) > 0.0);
  CHECK(r.grad(0) == doctest::Approx(0.5 - 0.9));
  CHECK(r.grad.sum() == doctest::Approx(0.0));
}

TEST_CASE("pairwise loss is translation invariant") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    // Dyadic values keep the shift exact, so equality is bitwise.
    Eigen::VectorXd s(6);
    for (Eigen::Index i = 0; i < 6; ++i) s(i) = static_cast<double>(static_cast<int>(rng() % 257) - 128) / 16.0;
    const double shift = static_cast<double>(static_cast<int>(rng() % 1025) - 512) / 8.0;
    const Eigen::VectorXd shifted = s.array() + shift;
    std::vector<PairTarget> pairs;
    for (int k = 0; k < 5; ++k) {
      const auto i = static_cast<Eigen::Index>(rng() % 6);
      const auto j = (i + 1 + static_cast<Eigen::Index>(rng() % 5)) % 6;
      pairs.push_back({i, j, std::uniform_real_distribution<double>(0, 1)(rng)});
    }
    for (const auto& pr : pairs)
      REQUIRE(pair_preference(s(pr.i), s(pr.j)) == pair_preference(shifted(pr.i), shifted(pr.j)));
    const auto a = pairwise_kd(s, std::span<const PairTarget>(pairs));
    const auto b = pairwise_kd(shifted, std::span<const PairTarget>(pairs));
    REQUIRE(a.loss == b.loss);
    REQUIRE(a.grad == b.grad);
  }
}

TEST_CASE("pairwise loss reductions and gradients") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_vec(rng, 8);
    std::vector<PairTarget> pairs;
    for (Eigen::Index i = 0; i + 1 < 8; ++i) pairs.push_back({i, i + 1, std::uniform_real_distribution<double>(0, 1)(rng)});
    const std::span<const PairTarget> sp(pairs);
    const auto sum = pairwise_kd(s, sp, PairReduction::sum);
    const auto mean = pairwise_kd(s, sp, PairReduction::mean);
    CHECK(mean.loss == doctest::Approx(sum.loss / 7.0).epsilon(1e-12));
    const auto fd = numeric_grad(s, [&](const Eigen::VectorXd& x) { return pairwise_kd(x, sp, PairReduction::sum).loss; });
    CHECK((sum.grad - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
  const auto s = vec({1.0, 2.0});
  const PairTarget same[] = {{0, 0, 0.5}};
  CHECK_THROWS_AS(pairwise_kd(s, std::span<const PairTarget>(same)), ValidationError);
  const PairTarget outside[] = {{0, 2, 0.5}};
  CHECK_THROWS_AS(pairwise_kd(s, std::span<const PairTarget>(outside)), ValidationError);
  CHECK(pairwise_kd(s, std::span<const PairTarget>()).loss == 0.0);
}

TEST_CASE("log_sum_exp is stable") {
  CHECK(log_sum_exp(vec({1000.0, 1000.0})) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_sum_exp(vec({-1000.0, -1000.0})) == doctest::Approx(-1000.0 + std::log(2.0)));
  CHECK(softmax(vec({1.0, 2.0, 3.0})).sum() == doctest::Approx(1.0));
  CHECK(softplus(1000.0) == 1000.0);
  CHECK(softplus(-1000.0) == doctest::Approx(0.0));
}
