#include "bsplat/optimizer.hpp"

#include <cmath>

#include "bsplat/error.hpp"

namespace bsplat {

void LearningRates::validate() const {
  for (double r : {position, rotation, log_scale, opacity, color, importance, translation, window})
    if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidArgument("learning rates must be finite and non-negative");
}

namespace {

std::size_t core_count(const GaussianSet& set) { return 3 + 4 + 3 + 1 + color_coeff_count(set.sh_degree()) + 1; }

}  // namespace

std::size_t parameter_count(const GaussianSet& set, std::size_t i) {
  const std::size_t K = static_cast<std::size_t>(set.keyframes());
  return core_count(set) + (set.is_dynamic(i) ? 7 * K + 2 : 3);
}

void pack_parameters(const GaussianSet& set, std::size_t i, std::vector<double>& out) {
  out.clear();
  const auto& c = set.core(i);
  for (int k = 0; k < 3; ++k) out.push_back(c.position[k]);
  for (int k = 0; k < 4; ++k) out.push_back(c.rotation[k]);
  for (int k = 0; k < 3; ++k) out.push_back(c.log_scale[k]);
  out.push_back(c.opacity_logit);
  for (std::size_t k = 0; k < color_coeff_count(set.sh_degree()); ++k) out.push_back(c.color[k]);
  out.push_back(c.importance_raw);
  if (set.is_dynamic(i)) {
    const auto& d = set.dynamic_extras(i);
    for (const auto& p : d.traj_position)
      for (int k = 0; k < 3; ++k) out.push_back(p[k]);
    for (const auto& q : d.traj_rotation)
      for (int k = 0; k < 4; ++k) out.push_back(q[k]);
    out.push_back(d.window_start);
    out.push_back(d.window_end);
  } else {
    for (int k = 0; k < 3; ++k) out.push_back(set.static_extras(i).translation[k]);
  }
}

void unpack_parameters(GaussianSet& set, std::size_t i, std::span<const double> p) {
  if (p.size() != parameter_count(set, i)) throw InvalidArgument("parameter vector has the wrong length");
  std::size_t n = 0;
  auto next = [&] { return static_cast<float>(p[n++]); };
  auto& c = set.core(i);
  for (int k = 0; k < 3; ++k) c.position[k] = next();
  for (int k = 0; k < 4; ++k) c.rotation[k] = next();
  for (int k = 0; k < 3; ++k) c.log_scale[k] = next();
  c.opacity_logit = next();
  for (std::size_t k = 0; k < color_coeff_count(set.sh_degree()); ++k) c.color[k] = next();
  c.importance_raw = next();
  if (set.is_dynamic(i)) {
    auto& d = set.dynamic_extras(i);
    for (auto& q : d.traj_position)
      for (int k = 0; k < 3; ++k) q[k] = next();
    for (auto& q : d.traj_rotation)
      for (int k = 0; k < 4; ++k) q[k] = next();
    d.window_start = next();
    d.window_end = next();
  } else {
    for (int k = 0; k < 3; ++k) set.static_extras(i).translation[k] = next();
  }
}

void pack_gradient(const GaussianSet& set, std::size_t i, const GaussianGrad& g, std::vector<double>& out) {
  out.clear();
  for (int k = 0; k < 3; ++k) out.push_back(g.position[k]);
  for (int k = 0; k < 4; ++k) out.push_back(g.rotation[static_cast<std::size_t>(k)]);
  for (int k = 0; k < 3; ++k) out.push_back(g.log_scale[k]);
  out.push_back(g.opacity_logit);
  for (std::size_t k = 0; k < color_coeff_count(set.sh_degree()); ++k) out.push_back(g.color[k]);
  out.push_back(g.importance);
  if (set.is_dynamic(i)) {
    const std::size_t K = static_cast<std::size_t>(set.keyframes());
    for (std::size_t j = 0; j < K; ++j)
      for (int k = 0; k < 3; ++k) out.push_back(j < g.traj_position.size() ? g.traj_position[j][k] : 0.0);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t k = 0; k < 4; ++k) out.push_back(j < g.traj_rotation.size() ? g.traj_rotation[j][k] : 0.0);
    out.push_back(g.window_start);
    out.push_back(g.window_end);
  } else {
    for (int k = 0; k < 3; ++k) out.push_back(g.translation[k]);
  }
}

void pack_learning_rates(const GaussianSet& set, std::size_t i, const LearningRates& lr, double extent,
                         std::vector<double>& out) {
  out.clear();
  auto put = [&](double r, std::size_t n) { out.insert(out.end(), n, r); };
  put(lr.position * extent, 3);
  put(lr.rotation, 4);
  put(lr.log_scale, 3);
  put(lr.opacity, 1);
  put(lr.color, color_coeff_count(set.sh_degree()));
  put(lr.importance, 1);
  if (set.is_dynamic(i)) {
    const std::size_t K = static_cast<std::size_t>(set.keyframes());
    put(lr.position * extent, 3 * K);
    put(lr.rotation, 4 * K);
    put(lr.window, 2);
  } else {
    put(lr.translation * extent, 3);
  }
}

void Adam::step(GaussianSet& set, const GradientSet& grad, const LearningRates& lr, double extent) {
  if (grad.size() != set.size()) throw InvalidArgument("gradient does not match the Gaussian set");
  for (std::size_t i = 0; i < set.size(); ++i) {
    pack_parameters(set, i, p_);
    pack_gradient(set, i, grad.g[i], g_);
    pack_learning_rates(set, i, lr, extent, lr_);
    auto& s = state_[set.id(i)];
    if (s.m.size() != p_.size() || s.kind != set.kind(i)) {
      s = State{set.kind(i), 0, std::vector<double>(p_.size(), 0.0), std::vector<double>(p_.size(), 0.0)};
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t k = 0; k < p_.size(); ++k) {
      if (lr_[k] == 0.0) continue;
      const double g = g_[k];
      s.m[k] = cfg_.beta1 * s.m[k] + (1.0 - cfg_.beta1) * g;
      s.v[k] = cfg_.beta2 * s.v[k] + (1.0 - cfg_.beta2) * g * g;
      p_[k] -= lr_[k] * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + cfg_.epsilon);
    }
    unpack_parameters(set, i, p_);
    auto& c = set.core(i);
    c.rotation = c.rotation.normalized();
    if (set.is_dynamic(i))
      for (auto& q : set.dynamic_extras(i).traj_rotation) q = q.normalized();
  }
}

void Adam::retain(const GaussianSet& set) {
  std::unordered_map<std::uint64_t, State> kept;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto it = state_.find(set.id(i));
    if (it != state_.end()) kept.emplace(it->first, std::move(it->second));
  }
  state_ = std::move(kept);
}

}  // namespace bsplat
