#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bsplat/scene_model.hpp"

namespace bsplat {

struct ScheduleConfig {
  std::size_t n_init = 1;
  std::size_t n_target = 1;
  int total_steps = 1;  ///< densify events J
  /// Gaussians whose largest scale exceeds this fraction of the scene extent
  /// are split rather than cloned.
  double split_threshold = 0.01;
  int densify_interval = 500;

  void validate() const;
};

/// Quadratic sub-target N_j = n_init + (n_target - n_init) (j / J)^2, rounded
/// to nearest; exact at both ends.
std::size_t step_target(int j, const ScheduleConfig& cfg);

inline constexpr double kSplitScaleDivisor = 1.6;
inline constexpr double kPruneOpacityFloor = 0.005;
inline constexpr double kPruneGateFloor = 0.01;

struct DensifyResult {
  GaussianSet set;
  std::size_t n_split = 0;
  std::size_t n_clone = 0;
  bool with_replacement = false;  ///< room exceeded the population
};

/// Adds exactly `room` Gaussians. Parents are drawn without replacement with
/// probability proportional to `importance`; large parents are split in two
/// along their principal axis, the rest cloned with a small offset against
/// their position gradient (`position_grads` may be empty). Children inherit
/// kind, extras and the parent's importance. When room exceeds the
/// population, sampling proceeds in successive rounds over the grown set.
DensifyResult densify(const GaussianSet& set, std::span<const double> importance, std::size_t room,
                      std::uint64_t seed, double scene_extent, double split_threshold,
                      std::span<const Vec3d> position_grads = {});

struct PruneResult {
  GaussianSet set;
  std::vector<std::size_t> kept;  ///< indices into the input set, ascending
  std::size_t n_culled = 0;       ///< removed by the opacity / gate floors
  std::size_t n_sampled = 0;      ///< removed by importance sampling
};

/// Removes every Gaussian with opacity < 0.005 or gate < 0.01, then samples
/// `excess` further removals without replacement with probability
/// proportional to 1 - importance, restricted to the lowest-importance half
/// of the survivors (widened to the lowest `excess` when that is larger).
PruneResult prune(const GaussianSet& set, std::span<const double> importance, std::size_t excess,
                  std::uint64_t seed);

/// Weighted sampling of k distinct indices (exponential-key method).
std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                             std::uint64_t seed);

struct GrowthEvent {
  long iteration = 0;
  std::size_t n_static = 0;
  std::size_t n_dynamic = 0;
  std::size_t total = 0;
  std::size_t sub_target = 0;
};

void write_growth_csv(const std::string& path, std::span<const GrowthEvent> events);

}  // namespace bsplat
