#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bsplat/scene_model.hpp"

namespace bsplat {

struct BudgetConfig {
  std::size_t n_target = 1;
  double tau_init = 1.0;
  double tau_end = 0.01;
  long k_start = 0;
  long k_end = 1;
  double lambda_b = 1e-7;

  /// Throws InvalidArgument unless tau_init > tau_end > 0, k_start < k_end, n_target >= 1.
  void validate() const;
};

/// Hard-sigmoid counting gate c = clamp((M - 0.5) / tau + 0.5, 0, 1).
double gate(double importance, double tau);
/// dc/dM: 1/tau strictly inside the unclamped band, 0 outside.
double gate_derivative(double importance, double tau);

/// Differentiable population estimate N_p = sum of gate activations.
double proxy_count(std::span<const double> activations);
double proxy_count(const GaussianSet& set);

struct BudgetLoss {
  double loss = 0.0;
  double dloss_dnp = 0.0;
};

/// (N_p - n_target)^2 and its derivative.
BudgetLoss budget_loss(double n_p, double n_target);

/// Exponential decay from tau_init at k_start to tau_end at k_end; clamped outside.
double anneal_temperature(long k, const BudgetConfig& cfg);

struct BinarizeResult {
  GaussianSet set;
  std::vector<std::size_t> survivors;  ///< indices into the input set
};

/// Drops Gaussians with gate activation below `threshold`; survivors get c = 1.
BinarizeResult binarize(const GaussianSet& set, double threshold = 0.5);

}  // namespace bsplat
