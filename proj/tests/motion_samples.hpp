#pragma once

#include <cmath>
#include <random>
#include <vector>

namespace bsplat::fixtures {

struct LabeledMagnitudes {
  std::vector<double> values;
  std::vector<bool> dynamic;  ///< generating label
};

/// 80% N(0.05, 0.01) static mode and 20% N(0.5, 0.05) dynamic mode, folded
/// to non-negative magnitudes.
inline LabeledMagnitudes bimodal_magnitudes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> slow(0.05, 0.01), fast(0.5, 0.05);
  LabeledMagnitudes out;
  const std::size_t n_fast = n / 5;
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_fast = i < n_fast;
    out.values.push_back(std::abs(is_fast ? fast(rng) : slow(rng)));
    out.dynamic.push_back(is_fast);
  }
  return out;
}

}  // namespace bsplat::fixtures
