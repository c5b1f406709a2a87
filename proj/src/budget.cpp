#include "bsplat/budget.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bsplat/error.hpp"

namespace bsplat {

void BudgetConfig::validate() const {
  if (!(tau_init > tau_end && tau_end > 0.0)) throw InvalidArgument("need tau_init > tau_end > 0");
  if (!(k_start < k_end)) throw InvalidArgument("need k_start < k_end");
  if (n_target < 1) throw InvalidArgument("n_target must be at least 1");
  if (lambda_b < 0.0) throw InvalidArgument("lambda_b must be non-negative");
}

double gate(double importance, double tau) {
  return std::clamp((importance - 0.5) / tau + 0.5, 0.0, 1.0);
}

double gate_derivative(double importance, double tau) {
  const double raw = (importance - 0.5) / tau + 0.5;
  return (raw > 0.0 && raw < 1.0) ? 1.0 / tau : 0.0;
}

double proxy_count(std::span<const double> activations) {
  return std::accumulate(activations.begin(), activations.end(), 0.0);
}

double proxy_count(const GaussianSet& set) {
  double sum = 0.0;
  for (const auto& c : set.cores()) sum += c.gate_activation;
  return sum;
}

BudgetLoss budget_loss(double n_p, double n_target) {
  const double d = n_p - n_target;
  return {d * d, 2.0 * d};
}

double anneal_temperature(long k, const BudgetConfig& cfg) {
  if (k <= cfg.k_start) return cfg.tau_init;
  if (k >= cfg.k_end) return cfg.tau_end;
  const double progress =
      static_cast<double>(k - cfg.k_start) / static_cast<double>(cfg.k_end - cfg.k_start);
  return cfg.tau_init * std::pow(cfg.tau_end / cfg.tau_init, progress);
}

BinarizeResult binarize(const GaussianSet& set, double threshold) {
  BinarizeResult r;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.core(i).gate_activation >= threshold) r.survivors.push_back(i);
  r.set = set.select(r.survivors);
  for (auto& c : r.set.cores()) c.gate_activation = 1.0f;
  return r;
}

}  // namespace bsplat
