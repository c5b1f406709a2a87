#include "bsplat/importance.hpp"

#include <algorithm>
#include <cmath>

#include "bsplat/error.hpp"

namespace bsplat {

void ScorerConfig::validate() const {
  for (double w : w1)
    if (!(w >= 0.0)) throw InvalidArgument("scorer weights must be non-negative");
  for (double w : w2)
    if (!(w >= 0.0)) throw InvalidArgument("scorer weights must be non-negative");
  if (!(lambda_gm > 0.0)) throw InvalidArgument("lambda_gm must be positive");
  if (sample_views < 1) throw InvalidArgument("sample_views must be at least 1");
}

double covariance_max_eigenvalue(const GaussianCore& core) {
  const double m = std::max({core.log_scale.x, core.log_scale.y, core.log_scale.z});
  return std::exp(2.0 * m);
}

double motion_cue(const GaussianSet& set, std::size_t i) {
  if (!set.is_dynamic(i)) return norm(set.static_extras(i).translation.cast<double>());
  const auto& d = set.dynamic_extras(i);
  const Vec3d mean = trajectory_mean(d);
  double qm[4] = {0, 0, 0, 0};
  for (const auto& q : d.traj_rotation) {
    qm[0] += q.w, qm[1] += q.x, qm[2] += q.y, qm[3] += q.z;
  }
  const double k = static_cast<double>(d.traj_rotation.size());
  for (double& v : qm) v /= k;
  double pos = 0.0, rot = 0.0;
  for (const auto& p : d.traj_position) {
    const Vec3d e = p.cast<double>() - mean;
    pos += dot(e, e);
  }
  for (const auto& q : d.traj_rotation) {
    const double e[4] = {q.w - qm[0], q.x - qm[1], q.y - qm[2], q.z - qm[3]};
    for (double v : e) rot += v * v;
  }
  return std::sqrt(pos) + std::sqrt(rot);
}

CueAccumulator::CueAccumulator(const GaussianSet& set)
    : grad_(set.size()),
      alpha_max_(set.size(), 0.0),
      inv_depth_sum_(set.size(), 0.0),
      visible_views_(set.size(), 0.0),
      residual_(set.size(), 0.0),
      area_(set.size(), 0.0) {}

void CueAccumulator::add_view(const GaussianSet& set, double t, const RenderOutput& render,
                              const GradientSet* grad) {
  const std::size_t n = set.size();
  if (render.projected.size() != n) throw InvalidArgument("cue accumulation needs a training-mode render");
  for (std::size_t i = 0; i < n; ++i) {
    if (render.projected[i]) {
      double a = set.core(i).opacity();
      if (set.is_dynamic(i)) a *= evaluate_dynamic_state(set.dynamic_extras(i), t).window_weight;
      alpha_max_[i] = std::max(alpha_max_[i], a);
      inv_depth_sum_[i] += 1.0 / render.mean_depth[i];
      visible_views_[i] += 1.0;
    }
    residual_[i] += render.weighted_contribution[i];
    area_[i] += render.pixel_area[i];
  }
  contributions_.push_back(render.contribution);
  if (grad) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& g = grad->g[i];
      if (set.is_dynamic(i))
        for (const auto& p : g.traj_position) grad_[i] += p;
      else
        grad_[i] += g.position;
    }
  }
  ++views_;
}

void CueAccumulator::add_residual(std::span<const double> residual) {
  for (std::size_t i = 0; i < residual_.size(); ++i) residual_[i] += residual[i];
}

void CueAccumulator::set_position_gradients(std::span<const Vec3d> grads) {
  grad_.assign(grads.begin(), grads.end());
}

std::vector<CueVector> CueAccumulator::finish(const GaussianSet& set) const {
  std::vector<CueVector> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& c = out[i];
    c.geom[3] = covariance_max_eigenvalue(set.core(i));
    if (visible_views_[i] == 0.0) continue;
    c.geom[0] = norm(grad_[i]);
    c.geom[1] = alpha_max_[i];
    c.geom[2] = inv_depth_sum_[i] / visible_views_[i];
    c.geom[4] = motion_cue(set, i);
    c.perceptual[0] = residual_[i];
    c.perceptual[1] = area_[i];
    if (views_ >= 2) {
      double mean = 0.0;
      for (const auto& v : contributions_) mean += v[i];
      mean /= static_cast<double>(views_);
      double var = 0.0;
      for (const auto& v : contributions_) var += (v[i] - mean) * (v[i] - mean);
      var /= static_cast<double>(views_);
      c.perceptual[2] = 1.0 / (var + kVarianceEpsilon);
    }
  }
  return out;
}

std::vector<float> residual_map(const ImageBuffer& pred, const ImageBuffer& gt) {
  if (!pred.same_shape(gt)) throw InvalidArgument("prediction and ground truth shapes differ");
  std::vector<float> r(pred.pixel_count());
  for (std::size_t p = 0; p < r.size(); ++p) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c)
      s += std::abs(std::max(0.0f, pred.data[p * 3 + c]) - gt.data[p * 3 + c]);
    r[p] = static_cast<float>(s);
  }
  return r;
}

std::vector<double> leave_one_out_residual(const GaussianSet& set, const CameraView& view, double t,
                                           const RenderOptions& opts) {
  const auto full = render(set, view, t, false, opts).image;
  std::vector<double> out(set.size(), 0.0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    // a zero-gate Gaussian is never rasterized, so removing it changes nothing
    if (set.core(i).gate_activation == 0.0f) continue;
    std::vector<bool> keep(set.size(), true);
    keep[i] = false;
    const auto without = render(set.filter(keep), view, t, false, opts).image;
    double s = 0.0;
    for (std::size_t k = 0; k < full.data.size(); ++k)
      s += std::abs(static_cast<double>(full.data[k]) - without.data[k]);
    out[i] = s;
  }
  return out;
}

std::vector<CueVector> compute_cues(const GaussianSet& set, std::span<const CameraView> views,
                                    std::span<const ImageBuffer> gts, const ScorerConfig& cfg,
                                    const RenderOptions& opts, std::span<const Vec3d> position_grads) {
  cfg.validate();
  if (views.size() != gts.size()) throw InvalidArgument("one ground-truth image per view is required");
  CueAccumulator acc(set);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& view = views[v];
    // first pass for the residual map, second for residual-weighted contributions
    const auto plain = render(set, view, view.time, false, opts);
    const auto weights = residual_map(plain.image, gts[v]);
    const auto rendered = render(set, view, view.time, true, opts, cfg.exact_loo ? nullptr : &weights);
    if (position_grads.empty()) {
      ImageBuffer dimage;
      render_loss_grad(rendered.image, gts[v], cfg.lambda_ssim, dimage);
      const auto grad = backward(set, view, view.time, dimage, opts);
      acc.add_view(set, view.time, rendered, &grad);
    } else {
      acc.add_view(set, view.time, rendered, nullptr);
    }
    if (cfg.exact_loo) acc.add_residual(leave_one_out_residual(set, view, view.time, opts));
  }
  if (!position_grads.empty()) acc.set_position_gradients(position_grads);
  return acc.finish(set);
}

namespace {

void min_max_in_place(std::vector<double>& v) {
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  if (!(b > a)) {
    std::fill(v.begin(), v.end(), 0.5);
    return;
  }
  for (double& x : v) x = (x - a) / (b - a);
}

}  // namespace

std::vector<double> fuse(std::span<const CueVector> cues, const ScorerConfig& cfg) {
  cfg.validate();
  const std::size_t n = cues.size();
  std::vector<double> geom(n, 0.0), perc(n, 0.0), column(n);
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = cues[i].geom[k];
    min_max_in_place(column);
    for (std::size_t i = 0; i < n; ++i) geom[i] += cfg.w1[k] * column[i];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = cues[i].perceptual[k];
    min_max_in_place(column);
    for (std::size_t i = 0; i < n; ++i) perc[i] += cfg.w2[k] * column[i];
  }
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = cfg.lambda_gm * geom[i] + perc[i];
  min_max_in_place(m);
  return m;
}

}  // namespace bsplat
