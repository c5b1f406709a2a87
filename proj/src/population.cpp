#include "bsplat/population.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "bsplat/error.hpp"

namespace bsplat {

void ScheduleConfig::validate() const {
  if (total_steps < 1) throw InvalidArgument("schedule needs at least one densify event");
  if (!(split_threshold > 0.0)) throw InvalidArgument("split threshold must be positive");
  if (densify_interval < 1) throw InvalidArgument("densify interval must be positive");
  if (n_target < 1) throw InvalidArgument("n_target must be at least 1");
}

std::size_t step_target(int j, const ScheduleConfig& cfg) {
  cfg.validate();
  if (j <= 0) return cfg.n_init;
  if (j >= cfg.total_steps) return cfg.n_target;
  const double f = static_cast<double>(j) / cfg.total_steps;
  const double n = static_cast<double>(cfg.n_init) +
                   (static_cast<double>(cfg.n_target) - static_cast<double>(cfg.n_init)) * f * f;
  return static_cast<std::size_t>(std::llround(n));
}

std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                             std::uint64_t seed) {
  if (k > weights.size()) throw InvalidArgument("cannot sample more items than available");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> key(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double r = std::max(u(rng), std::numeric_limits<double>::min());
    key[i] = weights[i] > 0.0 ? std::log(r) / weights[i] : -std::numeric_limits<double>::infinity();
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return key[a] != key[b] ? key[a] > key[b] : a < b; });
  order.resize(k);
  return order;
}

namespace {

constexpr double kWeightFloor = 1e-9;

Quatd mid_rotation(const GaussianSet& set, std::size_t i) {
  if (set.is_dynamic(i)) return evaluate_dynamic_state(set.dynamic_extras(i), 0.5).rotation;
  return set.core(i).rotation.cast<double>().normalized();
}

/// Principal axis scaled by the largest standard deviation.
Vec3d principal_axis(const GaussianSet& set, std::size_t i) {
  const auto& c = set.core(i);
  std::size_t k = 0;
  for (std::size_t a = 1; a < 3; ++a)
    if (c.log_scale[a] > c.log_scale[k]) k = a;
  const Mat3d r = rotation_matrix(mid_rotation(set, i));
  return Vec3d{r(0, k), r(1, k), r(2, k)} * std::exp(static_cast<double>(c.log_scale[k]));
}

void shift(GaussianSet& set, std::size_t i, const Vec3d& d) {
  const Vec3f df = d.cast<float>();
  set.core(i).position += df;
  if (set.is_dynamic(i))
    for (auto& p : set.dynamic_extras(i).traj_position) p += df;
}

struct Round {
  GaussianSet set;
  std::vector<double> importance;
  std::vector<Vec3d> grads;
};

/// One densify round adding `room` <= |set| Gaussians.
Round densify_round(const Round& in, std::size_t room, std::uint64_t seed, double scene_extent,
                    double split_threshold, DensifyResult& stats) {
  const std::size_t n = in.set.size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::max(in.importance[i], 0.0) + kWeightFloor;
  const auto parents = weighted_sample_without_replacement(w, room, seed);

  std::vector<bool> split(n, false);
  for (std::size_t p : parents) {
    const auto& c = in.set.core(p);
    const double max_scale = std::exp(static_cast<double>(std::max({c.log_scale.x, c.log_scale.y, c.log_scale.z})));
    split[p] = max_scale > split_threshold * scene_extent;
  }
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < n; ++i)
    if (!split[i]) survivors.push_back(i);

  Round out;
  out.set = in.set.select(survivors);
  for (std::size_t i : survivors) {
    out.importance.push_back(in.importance[i]);
    out.grads.push_back(in.grads[i]);
  }
  const float shrink = static_cast<float>(std::log(kSplitScaleDivisor));
  for (std::size_t p : parents) {
    const Vec3d axis = principal_axis(in.set, p);
    if (split[p]) {
      for (double sign : {1.0, -1.0}) {
        const std::size_t c = out.set.append_from(in.set, p);
        auto& core = out.set.core(c);
        core.log_scale = {core.log_scale.x - shrink, core.log_scale.y - shrink, core.log_scale.z - shrink};
        shift(out.set, c, axis * (0.5 * sign));
        out.importance.push_back(in.importance[p]);
        out.grads.push_back(in.grads[p]);
      }
      ++stats.n_split;
    } else {
      const std::size_t c = out.set.append_from(in.set, p);
      const Vec3d g = in.grads[p];
      const double len = norm(axis);
      const double gl = norm(g);
      // half a standard deviation against the loss gradient, or along the
      // principal axis when there is no gradient
      const Vec3d step = gl > 0.0 ? g * (-0.5 * len / gl) : axis * 0.5;
      shift(out.set, c, step);
      out.importance.push_back(in.importance[p]);
      out.grads.push_back(in.grads[p]);
      ++stats.n_clone;
    }
  }
  return out;
}

}  // namespace

DensifyResult densify(const GaussianSet& set, std::span<const double> importance, std::size_t room,
                      std::uint64_t seed, double scene_extent, double split_threshold,
                      std::span<const Vec3d> position_grads) {
  if (importance.size() != set.size()) throw InvalidArgument("one importance score per Gaussian is required");
  if (!position_grads.empty() && position_grads.size() != set.size())
    throw InvalidArgument("one position gradient per Gaussian is required");
  DensifyResult result;
  Round cur{set, std::vector<double>(importance.begin(), importance.end()),
            position_grads.empty() ? std::vector<Vec3d>(set.size())
                                   : std::vector<Vec3d>(position_grads.begin(), position_grads.end())};
  if (room > 0 && set.empty()) throw InvalidArgument("cannot densify an empty set");
  std::size_t remaining = room;
  std::uint64_t round = 0;
  while (remaining > 0) {
    const std::size_t take = std::min(remaining, cur.set.size());
    if (take < remaining && !result.with_replacement) {
      result.with_replacement = true;
      spdlog::info("densify: room {} exceeds population {}, sampling in rounds", room, set.size());
    }
    cur = densify_round(cur, take, seed + 0x9e3779b97f4a7c15ULL * round, scene_extent, split_threshold, result);
    remaining -= take;
    ++round;
  }
  result.set = std::move(cur.set);
  return result;
}

PruneResult prune(const GaussianSet& set, std::span<const double> importance, std::size_t excess,
                  std::uint64_t seed) {
  if (importance.size() != set.size()) throw InvalidArgument("one importance score per Gaussian is required");
  const std::size_t n = set.size();
  PruneResult r;
  std::vector<bool> keep(n, true);
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = set.core(i);
    if (c.opacity() < kPruneOpacityFloor || c.gate_activation < kPruneGateFloor) {
      keep[i] = false;
      ++r.n_culled;
    } else {
      survivors.push_back(i);
    }
  }
  if (excess > survivors.size()) throw InvalidArgument("prune excess exceeds the surviving population");
  if (excess > 0) {
    std::vector<std::size_t> pool = survivors;
    std::stable_sort(pool.begin(), pool.end(),
                     [&](std::size_t a, std::size_t b) { return importance[a] < importance[b]; });
    pool.resize(std::max((pool.size() + 1) / 2, excess));
    std::vector<double> w(pool.size());
    for (std::size_t k = 0; k < pool.size(); ++k) w[k] = std::max(1.0 - importance[pool[k]], 0.0) + kWeightFloor;
    for (std::size_t k : weighted_sample_without_replacement(w, excess, seed)) keep[pool[k]] = false;
    r.n_sampled = excess;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) r.kept.push_back(i);
  r.set = set.select(r.kept);
  return r;
}

void write_growth_csv(const std::string& path, std::span<const GrowthEvent> events) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "iteration,static,dynamic,total,sub_target\n";
  for (const auto& e : events)
    f << e.iteration << ',' << e.n_static << ',' << e.n_dynamic << ',' << e.total << ',' << e.sub_target << '\n';
}

}  // namespace bsplat
