#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bsplat/budget.hpp"
#include "bsplat/error.hpp"
#include "test_util.hpp"

using namespace bsplat;

TEST(Gate, TableAtUnitTemperature) {
  EXPECT_EQ(gate(0.5, 1.0), 0.5);
  EXPECT_EQ(gate(0.0, 1.0), 0.0);
  EXPECT_EQ(gate(1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(gate(0.75, 1.0), 0.75);
}

TEST(Gate, TableAtLowTemperature) {
  EXPECT_EQ(gate(0.5, 0.01), 0.5);
  EXPECT_EQ(gate(0.6, 0.01), 1.0);
  EXPECT_EQ(gate(0.49, 0.01), 0.0);
  EXPECT_NEAR(gate(0.502, 0.01), 0.7, 1e-12);
}

TEST(Gate, MonotoneBoundedAndDerivativeMatches) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> um(-0.5, 1.5), ut(0.005, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const double m = um(rng), tau = ut(rng);
    const double c = gate(m, tau);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
    EXPECT_LE(gate(m - 1e-3, tau), c);
    const double raw = (m - 0.5) / tau + 0.5;
    const double h = 1e-7;
    if (raw > 1e-4 && raw < 1.0 - 1e-4 && std::abs(raw - 0.5) > 1e-9) {
      const double fd = (gate(m + h * tau * 1e-2, tau) - gate(m - h * tau * 1e-2, tau)) / (2 * h * tau * 1e-2);
      EXPECT_NEAR(gate_derivative(m, tau), fd, 1e-4 / tau);
      EXPECT_DOUBLE_EQ(gate_derivative(m, tau), 1.0 / tau);
    } else if (raw < -1e-9 || raw > 1.0 + 1e-9) {
      EXPECT_EQ(gate_derivative(m, tau), 0.0);
    }
  }
}

TEST(Budget, ProxyAndLoss) {
  std::vector<double> c(1000, 0.2);
  EXPECT_NEAR(proxy_count(c), 200.0, 1e-9);
  const auto b = budget_loss(proxy_count(c), 100.0);
  EXPECT_NEAR(b.loss, 10000.0, 1e-6);
  EXPECT_NEAR(b.dloss_dnp, 200.0, 1e-9);
  EXPECT_EQ(budget_loss(50.0, 50.0).loss, 0.0);

  auto set = fixtures::random_set(100, 2);
  double sum = 0.0;
  for (const auto& core : set.cores()) sum += core.gate_activation;
  EXPECT_NEAR(proxy_count(set), sum, 1e-9);
}

TEST(Budget, AnnealEndpointsAndMonotone) {
  BudgetConfig cfg;
  cfg.n_target = 10;
  cfg.tau_init = 1.0;
  cfg.tau_end = 0.01;
  cfg.k_start = 100;
  cfg.k_end = 1100;
  EXPECT_NEAR(anneal_temperature(100, cfg), 1.0, 1e-12);
  EXPECT_NEAR(anneal_temperature(1100, cfg), 0.01, 1e-12);
  EXPECT_EQ(anneal_temperature(0, cfg), 1.0);
  EXPECT_EQ(anneal_temperature(5000, cfg), 0.01);
  // geometric midpoint
  EXPECT_NEAR(anneal_temperature(600, cfg), 0.1, 1e-12);
  for (long k = 100; k < 1100; ++k) EXPECT_LT(anneal_temperature(k + 1, cfg), anneal_temperature(k, cfg));
}

TEST(Budget, ConfigValidation) {
  BudgetConfig cfg;
  cfg.k_start = 0;
  cfg.k_end = 10;
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.tau_end = 2.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.k_end = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.n_target = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Budget, BinarizeKeepsThresholdAndAbove) {
  GaussianSet set;
  const float acts[] = {0.0f, 0.49f, 0.5f, 0.51f, 1.0f};
  for (float a : acts) {
    GaussianCore c;
    c.gate_activation = a;
    set.add_static(c);
  }
  const auto r = binarize(set);
  ASSERT_EQ(r.survivors, (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_EQ(r.set.size(), 3u);
  for (const auto& c : r.set.cores()) EXPECT_EQ(c.gate_activation, 1.0f);
}

TEST(Budget, ListedExamples) {
  EXPECT_EQ(gate(0.2, 0.01), 0.0);
  EXPECT_DOUBLE_EQ(proxy_count(std::vector<double>{1.0, 0.5, 0.0, 0.25}), 1.75);
  EXPECT_EQ(proxy_count(std::vector<double>{}), 0.0);
  EXPECT_EQ(proxy_count(std::vector<double>(77, 1.0)), 77.0);
  const auto b = budget_loss(110000.0, 100000.0);
  EXPECT_DOUBLE_EQ(b.loss, 1e8);
  EXPECT_DOUBLE_EQ(b.dloss_dnp, 2e4);
  const auto z = budget_loss(42.0, 42.0);
  EXPECT_EQ(z.loss, 0.0);
  EXPECT_EQ(z.dloss_dnp, 0.0);
  const double h = 1e-4;
  const double fd = (budget_loss(123.4 + h, 100.0).loss - budget_loss(123.4 - h, 100.0).loss) / (2 * h);
  EXPECT_NEAR(budget_loss(123.4, 100.0).dloss_dnp, fd, 1e-6 * std::abs(fd));
}

TEST(Budget, BinarizeMatchesDirectFilter) {
  GaussianSet three;
  for (float a : {0.9f, 0.1f, 0.5f}) {
    GaussianCore c;
    c.gate_activation = a;
    three.add_static(c);
  }
  EXPECT_EQ(binarize(three).survivors, (std::vector<std::size_t>{0, 2}));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto set = fixtures::random_set(300, seed);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (!(set.core(i).gate_activation < 0.5f)) expected.push_back(i);
    const auto r = binarize(set);
    EXPECT_EQ(r.survivors, expected);
    EXPECT_EQ(r.set.size(), expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
      EXPECT_EQ(r.set.core(k).position, set.core(expected[k]).position);
      EXPECT_EQ(r.set.kind(k), set.kind(expected[k]));
    }
  }
  auto ones = fixtures::random_set(50, 1);
  for (auto& c : ones.cores()) c.gate_activation = 1.0f;
  EXPECT_EQ(binarize(ones).set, ones);
}

TEST(Budget, AnnealingSharpensTowardStep) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> um(0.0, 1.0), ut(0.01, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double m = um(rng);
    if (m == 0.5) continue;
    double t1 = ut(rng), t2 = ut(rng);
    if (t2 > t1) std::swap(t1, t2);
    const double step = m > 0.5 ? 1.0 : 0.0;
    EXPECT_LE(std::abs(gate(m, t2) - step), std::abs(gate(m, t1) - step) + 1e-15);
  }
}

TEST(Budget, DescentOnBudgetAloneApproachesTarget) {
  // frozen importance distribution, gradient descent on lambda * L_budget w.r.t. M
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.3, 0.7);
    std::vector<double> m(2000);
    for (auto& v : m) v = u(rng);
    const double tau = 0.5, target = 600.0, lr = 1e-5;
    std::vector<double> c(m.size());
    auto np = [&] {
      for (std::size_t i = 0; i < m.size(); ++i) c[i] = gate(m[i], tau);
      return proxy_count(c);
    };
    double prev = np();
    for (int step = 0; step < 200; ++step) {
      const auto b = budget_loss(prev, target);
      for (auto& v : m) v -= lr * b.dloss_dnp * gate_derivative(v, tau);
      const double now = np();
      if (std::abs(prev - target) > 1.0) {
        EXPECT_LT(std::abs(now - target), std::abs(prev - target));
      }
      prev = now;
    }
    EXPECT_LT(std::abs(prev - target), 1.0);
  }
}
