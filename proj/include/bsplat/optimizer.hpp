#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "bsplat/renderer.hpp"
#include "bsplat/scene_model.hpp"

namespace bsplat {

/// Per-step learning rates of each parameter group. Position-like groups
/// are multiplied by the scene extent.
struct LearningRates {
  double position = 5e-4;
  double rotation = 1e-3;
  double log_scale = 5e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
  double importance = 1e-2;
  double translation = 5e-4;
  double window = 1e-3;

  void validate() const;
};

/// Flat view of one Gaussian's learnable parameters. Layout:
/// position(3) rotation(4) log_scale(3) opacity(1) color(3|12) importance(1),
/// then translation(3) for static or traj_position(3K) traj_rotation(4K)
/// window(2) for dynamic Gaussians.
std::size_t parameter_count(const GaussianSet& set, std::size_t i);
void pack_parameters(const GaussianSet& set, std::size_t i, std::vector<double>& out);
void unpack_parameters(GaussianSet& set, std::size_t i, std::span<const double> p);
void pack_gradient(const GaussianSet& set, std::size_t i, const GaussianGrad& g, std::vector<double>& out);
void pack_learning_rates(const GaussianSet& set, std::size_t i, const LearningRates& lr, double extent,
                         std::vector<double>& out);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

/// Adam with moments keyed by Gaussian id, so state follows a Gaussian
/// through densify/prune reordering. A Gaussian whose kind changed starts
/// over with zero moments.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one step to every Gaussian of `set`; groups with a zero rate
  /// are left untouched. Quaternions are renormalized afterwards.
  void step(GaussianSet& set, const GradientSet& grad, const LearningRates& lr, double extent);

  /// Drops state of ids no longer present.
  void retain(const GaussianSet& set);
  std::size_t tracked() const { return state_.size(); }

 private:
  struct State {
    Kind kind = Kind::Static;
    long t = 0;
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::unordered_map<std::uint64_t, State> state_;
  std::vector<double> p_, g_, lr_;
};

}  // namespace bsplat
