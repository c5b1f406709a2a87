#include <gtest/gtest.h>

#include <cmath>

#include "bsplat/error.hpp"
#include "bsplat/optimizer.hpp"
#include "test_util.hpp"

using namespace bsplat;

TEST(Packing, RoundTripsEveryKind) {
  for (int sh : {0, 1}) {
    auto set = fixtures::random_set(40, 11 + sh, 4, sh);
    const GaussianSet original = set;
    std::vector<double> p;
    for (std::size_t i = 0; i < set.size(); ++i) {
      pack_parameters(set, i, p);
      ASSERT_EQ(p.size(), parameter_count(set, i));
      for (double& x : p) x += 0.25;
      unpack_parameters(set, i, p);
      for (double& x : p) x -= 0.25;
      unpack_parameters(set, i, p);
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
      std::vector<double> a, b;
      pack_parameters(set, i, a);
      pack_parameters(original, i, b);
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-6);
    }
  }
}

TEST(Packing, LayoutSizes) {
  auto set = fixtures::random_set(30, 5, 4, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::size_t core = 3 + 4 + 3 + 1 + 3 + 1;
    EXPECT_EQ(parameter_count(set, i), core + (set.is_dynamic(i) ? 7 * 4 + 2 : 3));
    std::vector<double> lr;
    pack_learning_rates(set, i, LearningRates{}, 2.0, lr);
    EXPECT_EQ(lr.size(), parameter_count(set, i));
    EXPECT_DOUBLE_EQ(lr[0], LearningRates{}.position * 2.0);
  }
  std::vector<double> p{1.0};
  EXPECT_THROW(unpack_parameters(set, 0, p), InvalidArgument);
}

TEST(Adam, FirstStepMovesByTheLearningRate) {
  // after one step the bias-corrected update is lr * g / |g| per parameter
  auto set = fixtures::random_set(6, 3);
  for (std::size_t i = 0; i < set.size(); ++i) set.core(i).rotation = {1, 0, 0, 0};
  GradientSet g;
  g.reset(set);
  for (std::size_t i = 0; i < set.size(); ++i) {
    g.g[i].opacity_logit = (i % 2 ? 1.0 : -1.0) * 1e-6 * (i + 1);
    g.g[i].log_scale = {0.3, 0.0, -2.0};
  }
  const GaussianSet before = set;
  Adam adam;
  LearningRates lr;
  adam.step(set, g, lr, 1.0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double want = before.core(i).opacity_logit - (i % 2 ? 1.0 : -1.0) * lr.opacity;
    EXPECT_NEAR(set.core(i).opacity_logit, want, 1e-6);
    EXPECT_NEAR(set.core(i).log_scale.x, before.core(i).log_scale.x - lr.log_scale, 1e-6);
    EXPECT_EQ(set.core(i).log_scale.y, before.core(i).log_scale.y);
    EXPECT_NEAR(set.core(i).log_scale.z, before.core(i).log_scale.z + lr.log_scale, 1e-6);
    EXPECT_EQ(set.core(i).position, before.core(i).position);
  }
}

TEST(Adam, MatchesScalarRecurrence) {
  GaussianSet set;
  GaussianCore c;
  c.opacity_logit = 0.3f;
  set.add_static(c);
  Adam adam;
  LearningRates lr;
  double x = 0.3, m = 0.0, v = 0.0;
  const double gs[] = {0.5, -0.2, 0.7, 0.1, -1.0};
  GradientSet g;
  g.reset(set);
  for (int t = 1; t <= 5; ++t) {
    g.g[0].opacity_logit = gs[t - 1];
    adam.step(set, g, lr, 1.0);
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    x -= lr.opacity * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-15);
    x = static_cast<float>(x);
    EXPECT_NEAR(set.core(0).opacity_logit, x, 1e-6);
  }
}

TEST(Adam, StateFollowsIdsThroughReordering) {
  auto a = fixtures::random_set(12, 8);
  std::vector<std::size_t> perm{11, 3, 0, 7, 1, 2, 4, 5, 6, 8, 9, 10};
  auto b = a.select(perm);
  Adam oa, ob;
  LearningRates lr;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int step = 0; step < 4; ++step) {
    GradientSet ga, gb;
    ga.reset(a);
    for (auto& g : ga.g) g.position = {n(rng), n(rng), n(rng)};
    gb.reset(b);
    for (std::size_t k = 0; k < perm.size(); ++k) gb.g[k].position = ga.g[perm[k]].position;
    oa.step(a, ga, lr, 1.0);
    ob.step(b, gb, lr, 1.0);
    if (step == 1) {
      b = b.select(std::vector<std::size_t>{1, 0, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
      std::swap(perm[0], perm[1]);
    }
  }
  for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(b.core(k).position, a.core(perm[k]).position);
}

TEST(Adam, RetagRestartsMoments) {
  GaussianSet set;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 3; ++i) set.add_static(fixtures::random_core(rng));
  Adam adam;
  GradientSet g;
  g.reset(set);
  g.g[0].opacity_logit = 1.0;
  adam.step(set, g, LearningRates{}, 1.0);
  DynamicExtras d;
  for (int k = 0; k < 4; ++k) {
    d.traj_position.push_back(set.core(0).position);
    d.traj_rotation.push_back({1, 0, 0, 0});
  }
  set.make_dynamic(0, d);
  g.reset(set);
  g.g[0].opacity_logit = -1e-3;
  const float before = set.core(0).opacity_logit;
  adam.step(set, g, LearningRates{}, 1.0);
  // fresh moments: a full step in the new gradient's direction
  EXPECT_NEAR(set.core(0).opacity_logit, before + LearningRates{}.opacity, 1e-6);
  adam.retain(set.select(std::vector<std::size_t>{1}));
  EXPECT_EQ(adam.tracked(), 1u);
}

TEST(Adam, KeepsQuaternionsUnit) {
  auto set = fixtures::random_set(20, 4);
  GradientSet g;
  g.reset(set);
  for (std::size_t i = 0; i < set.size(); ++i) {
    g.g[i].rotation = {0.3, -0.1, 0.2, 0.5};
    for (auto& q : g.g[i].traj_rotation) q = {0.1, 0.2, -0.3, 0.4};
  }
  Adam adam;
  LearningRates lr;
  lr.rotation = 0.2;
  adam.step(set, g, lr, 1.0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR(set.core(i).rotation.cast<double>().norm(), 1.0, 1e-6);
    if (set.is_dynamic(i))
      for (const auto& q : set.dynamic_extras(i).traj_rotation) EXPECT_NEAR(q.cast<double>().norm(), 1.0, 1e-6);
  }
}

TEST(LearningRates, RejectsNegative) {
  LearningRates lr;
  lr.color = -1.0;
  EXPECT_THROW(lr.validate(), InvalidArgument);
}
