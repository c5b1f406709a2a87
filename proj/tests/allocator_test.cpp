#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "bsplat/allocator.hpp"
#include "bsplat/error.hpp"
#include "bsplat/renderer.hpp"
#include "motion_samples.hpp"
#include "test_util.hpp"

using namespace bsplat;

namespace {

// Brute-force local maxima scan with plateau handling written out directly.
std::vector<int> peaks_oracle(const std::vector<double>& h) {
  std::vector<int> out;
  const int n = static_cast<int>(h.size());
  for (int i = 0; i < n; ++i) {
    if (h[i] <= 0.0) continue;
    if (i > 0 && h[i - 1] == h[i]) continue;  // not the start of a run
    int j = i;
    while (j + 1 < n && h[j + 1] == h[i]) ++j;
    const bool left_ok = i == 0 || h[i - 1] < h[i];
    const bool right_ok = j == n - 1 || h[j + 1] < h[i];
    if (left_ok && right_ok) out.push_back((i + j) / 2);
  }
  return out;
}

GaussianSet set_with_translations(const std::vector<double>& mags) {
  GaussianSet set;
  for (double m : mags) {
    GaussianCore c;
    c.position = {0, 0, 3};
    set.add_static(c, StaticExtras{{static_cast<float>(m), 0.0f, 0.0f}});
  }
  return set;
}

}  // namespace

TEST(Histogram, DirectBinning) {
  std::vector<double> m(50, 0.0);
  m.back() = 1.0;
  const auto h = build_histogram(m, 10);
  EXPECT_EQ(h.raw[0], 49.0);
  EXPECT_EQ(h.raw[9], 1.0);
  EXPECT_EQ(std::accumulate(h.raw.begin() + 1, h.raw.end() - 1, 0.0), 0.0);
  EXPECT_THROW(build_histogram(m, 4), InvalidArgument);
}

TEST(Histogram, SmoothingConservesMass) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> e(3.0);
    std::vector<double> m(1000);
    for (auto& v : m) v = e(rng);
    const auto h = build_histogram(m, 64);
    EXPECT_NEAR(std::accumulate(h.smoothed.begin(), h.smoothed.end(), 0.0),
                std::accumulate(h.raw.begin(), h.raw.end(), 0.0), 1e-9);
  }
}

TEST(Histogram, BimodalHasTwoPeaksFoundByBruteForce) {
  const auto s = fixtures::bimodal_magnitudes(2000, 1);
  const auto h = build_histogram(s.values);
  const auto peaks = find_peaks(h.smoothed);
  EXPECT_EQ(peaks, peaks_oracle(h.smoothed));
  EXPECT_GE(peaks.size(), 2u);
}

TEST(Peaks, PlateausEdgesAndZeros) {
  EXPECT_EQ(find_peaks(std::vector<double>{3, 1, 1, 2, 2, 2, 0, 0, 5}), (std::vector<int>{0, 4, 8}));
  EXPECT_TRUE(find_peaks(std::vector<double>{0, 0, 0}).empty());
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(0, 4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> h(16);
    for (auto& v : h) v = u(rng);
    EXPECT_EQ(find_peaks(h), peaks_oracle(h));
  }
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{4, 1, 3, 2};
  EXPECT_EQ(quantile(v, 0.0), 1.0);
  EXPECT_EQ(quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 2.5);
}

TEST(Threshold, SymmetricTwinPeaksPickCentralValley) {
  MotionHistogram h;
  h.smoothed = {1, 5, 9, 5, 3, 1, 3, 5, 9, 5, 1};
  h.raw = h.smoothed;
  h.lo = 0.0;
  h.hi = 11.0;
  std::vector<double> mags;
  for (int b = 0; b < 11; ++b)
    for (int k = 0; k < static_cast<int>(h.raw[b]); ++k) mags.push_back(b + 0.5);
  const auto r = find_threshold(h, mags);
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(r.p_s, 2);
  EXPECT_EQ(r.p_d, 8);
  EXPECT_EQ(r.valley, 5);
}

TEST(Threshold, BimodalSampleSeparatesModes) {
  const auto s = fixtures::bimodal_magnitudes(2000, 7);
  const auto h = build_histogram(s.values);
  const auto r = find_threshold(h, s.values);
  EXPECT_FALSE(r.fallback);
  EXPECT_GT(r.tau, 0.1);
  EXPECT_LT(r.tau, 0.4);
  std::size_t below = 0;
  for (double v : s.values)
    if (v < r.tau) ++below;
  EXPECT_NEAR(static_cast<double>(below) / s.values.size(), 0.8, 0.02);
  EXPECT_LT(r.p_s, r.valley);
  EXPECT_LT(r.valley, r.p_d);
}

TEST(Threshold, UnimodalAndUniformFallBack) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.02, 0.005);
  std::vector<double> m(1000);
  for (auto& v : m) v = std::abs(n(rng));
  auto set = set_with_translations(m);
  const auto report = allocate(set);
  if (report.threshold.fallback) {
    EXPECT_NEAR(static_cast<double>(report.n_dynamic) / m.size(), 0.1, 0.01);
  }
  std::vector<double> same(100, 0.3);
  const auto h = build_histogram(same);
  EXPECT_TRUE(h.all_uniform);
  const auto r = find_threshold(h, same);
  EXPECT_TRUE(r.fallback);
  auto flat = set_with_translations(same);
  EXPECT_EQ(allocate(flat).n_dynamic, 0u);
}

TEST(Threshold, StableUnderDuplicationAndScaling) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = fixtures::bimodal_magnitudes(1000, seed);
    const auto h = build_histogram(s.values);
    const double tau = find_threshold(h, s.values).tau;
    auto doubled = s.values;
    doubled.insert(doubled.end(), s.values.begin(), s.values.end());
    EXPECT_LT(std::abs(find_threshold(build_histogram(doubled), doubled).tau - tau), h.bin_width());
    auto scaled = s.values;
    for (auto& v : scaled) v *= 3.5;
    EXPECT_LT(std::abs(find_threshold(build_histogram(scaled), scaled).tau - 3.5 * tau), 3.5 * h.bin_width());
  }
}

TEST(Partition, ExtremesAndBruteForce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(200);
  for (auto& v : m) v = u(rng);
  {
    auto set = set_with_translations(m);
    apply_partition(set, 2.0);
    EXPECT_EQ(set.n_dynamic(), 0u);
  }
  {
    auto set = set_with_translations(m);
    apply_partition(set, -1e-9);
    EXPECT_EQ(set.n_static(), 0u);
  }
  auto set = set_with_translations(m);
  AllocationReport report;
  apply_partition(set, 0.37, &report);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(set.is_dynamic(i), static_cast<float>(m[i]) > 0.37f) << i;
  EXPECT_EQ(report.n_dynamic + report.n_static, m.size());
  // partitioning again with the same threshold changes nothing
  const auto before = set;
  apply_partition(set, 0.37);
  EXPECT_EQ(set, before);
}

TEST(Partition, RetagPreservesMotion) {
  // static -> dynamic keeps the linear path; dynamic -> static inverts it
  GaussianSet set;
  GaussianCore c;
  c.position = {0.1f, -0.2f, 3.0f};
  set.add_static(c, StaticExtras{{0.4f, 0.0f, 0.2f}});
  apply_partition(set, 0.1);
  ASSERT_TRUE(set.is_dynamic(0));
  for (double t : {0.0, 0.3, 1.0}) {
    const Vec3d p = evaluate_dynamic_state(set.dynamic_extras(0), t).position;
    EXPECT_NEAR(p.x, 0.1 + (t - 0.5) * 0.4, 1e-6);
    EXPECT_NEAR(p.z, 3.0 + (t - 0.5) * 0.2, 1e-6);
  }
  apply_partition(set, 10.0);
  ASSERT_FALSE(set.is_dynamic(0));
  EXPECT_NEAR(set.core(0).position.x, 0.1f, 1e-6);
  EXPECT_NEAR(set.static_extras(0).translation.x, 0.4f, 1e-6);
}

TEST(Partition, CollapsingMotionlessDynamicIsLossless) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    GaussianSet set;
    auto core = fixtures::random_core(rng);
    core.gate_activation = 1.0f;
    DynamicExtras d;
    d.traj_position.assign(4, core.position);
    d.traj_rotation.assign(4, core.rotation);
    d.window_start = kInitialWindowStart;
    d.window_end = kInitialWindowEnd;
    set.add_dynamic(core, d);
    const auto cam = fixtures::forward_camera(32, 32, 30);
    const auto before = render(set, cam, 0.5, false).image;
    apply_partition(set, 1.0);
    ASSERT_FALSE(set.is_dynamic(0));
    const auto after = render(set, cam, 0.5, false).image;
    for (std::size_t k = 0; k < before.data.size(); ++k) EXPECT_NEAR(before.data[k], after.data[k], 1e-6);
  }
}

TEST(Report, SerializesToJson) {
  const auto s = fixtures::bimodal_magnitudes(500, 3);
  auto set = set_with_translations(s.values);
  const auto report = allocate(set);
  const auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j["histogram"].size(), 64u);
  EXPECT_EQ(j["n_static"].get<std::size_t>() + j["n_dynamic"].get<std::size_t>(), 500u);
  EXPECT_FALSE(j["fallback"].get<bool>());
}

TEST(Peaks, ProminenceRanksTiesAndEdges) {
  const std::vector<double> twin = {0, 4, 10, 7, 10, 3, 0};
  EXPECT_DOUBLE_EQ(peak_prominence(twin, 2), 10.0);  // leftmost of the tied maxima
  EXPECT_DOUBLE_EQ(peak_prominence(twin, 4), 3.0);
  const std::vector<double> edge = {9, 8, 12, 2, 1};
  EXPECT_DOUBLE_EQ(peak_prominence(edge, 0), 1.0);
  EXPECT_DOUBLE_EQ(peak_prominence(edge, 2), 11.0);
  const std::vector<double> plateau = {1, 6, 6, 6, 2};
  EXPECT_DOUBLE_EQ(peak_prominence(plateau, 2), 5.0);
}

TEST(Peaks, RipplesInsideOneModeAreNotSignificant) {
  std::vector<double> h(40, 0.0);
  for (int b = 0; b < 40; ++b) {
    h[b] = 400.0 * std::exp(-0.5 * std::pow((b - 20) / 12.0, 2.0));
    if (h[b] > 200.0 && b % 2) h[b] += 20.0;
  }
  ASSERT_GT(find_peaks(h).size(), 2u);
  EXPECT_EQ(significant_peaks(h).size(), 1u);
}
