#pragma once

// Central finite-difference check of the renderer's reverse pass. Shared by
// the renderer unit tests and the acceptance suite.

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "bsplat/loss.hpp"
#include "bsplat/renderer.hpp"
#include "test_util.hpp"

namespace bsplat::fixtures {

struct GradCheckScene {
  GaussianSet set;
  CameraView view;
  ImageBuffer gt;
  double t = 0.37;
  double lambda_ssim = 0.2;
  RenderOptions opts;
};

/// Smooth rendering options: no support truncation, no skipped weights and
/// no early termination, so the loss is differentiable everywhere the depth
/// order is fixed.
inline RenderOptions smooth_options() {
  RenderOptions o;
  o.cutoff_sigma = 10.0;
  o.min_alpha = 0.0;
  o.min_transmittance = 0.0;
  return o;
}

/// Three Gaussians (two static, one dynamic) around the origin seen by a
/// 16x16 camera from a random direction. Ground truth sits above any
/// attainable radiance so the L1 term never changes sign.
inline GradCheckScene make_gradcheck_scene(std::uint64_t seed, int sh_degree = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<float> uf(-1.0f, 1.0f);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  GradCheckScene s;
  s.set = GaussianSet(4, sh_degree);
  s.opts = smooth_options();
  s.opts.background = {0.1, 0.05, 0.2};

  Vec3d dir{u(rng), u(rng), u(rng)};
  while (norm(dir) < 0.2) dir = {u(rng), u(rng), u(rng)};
  dir = dir * (3.0 / norm(dir));
  s.view = look_at(dir, {0, 0, 0}, small_intrinsics(16, 16, 20.0));

  std::vector<double> depths;
  auto depth_ok = [&](const Vec3f& p) {
    const double d = (s.view.rotation * p.cast<double>() + s.view.translation).z;
    for (double o : depths)
      if (std::abs(o - d) < 0.08) return false;
    depths.push_back(d);
    return true;
  };
  auto make_core = [&] {
    GaussianCore c;
    do {
      c.position = {0.45f * uf(rng), 0.45f * uf(rng), 0.45f * uf(rng)};
    } while (!depth_ok(c.position));
    c.rotation = random_unit_quat(rng);
    c.log_scale = {-1.4f + 0.4f * uf(rng), -1.4f + 0.4f * uf(rng), -1.4f + 0.4f * uf(rng)};
    c.opacity_logit = 1.5f * uf(rng);
    for (std::size_t k = 0; k < 3; ++k) c.color[k] = 0.1f + 0.8f * u01(rng);
    if (sh_degree == 1)
      for (std::size_t k = 3; k < 12; ++k) c.color[k] = 0.15f * uf(rng);
    c.gate_activation = 0.2f + 0.8f * u01(rng);
    return c;
  };
  s.set.add_static(make_core(), StaticExtras{{0.2f * uf(rng), 0.2f * uf(rng), 0.2f * uf(rng)}});
  {
    const auto core = make_core();
    DynamicExtras d;
    for (int k = 0; k < 4; ++k) {
      d.traj_position.push_back(core.position + Vec3f{0.05f * uf(rng), 0.05f * uf(rng), 0.01f * uf(rng)});
      d.traj_rotation.push_back(random_unit_quat(rng));
    }
    d.window_start = 0.2f + 0.1f * uf(rng);
    d.window_end = 0.55f + 0.1f * uf(rng);
    s.set.add_dynamic(core, d);
  }
  s.set.add_static(make_core(), StaticExtras{{0.2f * uf(rng), 0.2f * uf(rng), 0.2f * uf(rng)}});

  s.gt = ImageBuffer(16, 16);
  std::uniform_real_distribution<float> ug(1.4f, 1.6f);
  for (auto& v : s.gt.data) v = ug(rng);
  return s;
}

inline double scene_loss(const GradCheckScene& s) {
  return render_loss(render(s.set, s.view, s.t, false, s.opts).image, s.gt, s.lambda_ssim).render_loss;
}

/// Visits every learnable float of Gaussian i with its analytic gradient.
inline void for_each_parameter(GaussianSet& set, const GaussianGrad& g, std::size_t i,
                               const std::function<void(float&, double, const std::string&)>& fn) {
  auto& c = set.core(i);
  const std::string tag = "g" + std::to_string(i) + ".";
  fn(c.log_scale.x, g.log_scale.x, tag + "log_scale.x");
  fn(c.log_scale.y, g.log_scale.y, tag + "log_scale.y");
  fn(c.log_scale.z, g.log_scale.z, tag + "log_scale.z");
  fn(c.opacity_logit, g.opacity_logit, tag + "opacity_logit");
  fn(c.gate_activation, g.gate, tag + "gate");
  for (std::size_t k = 0; k < color_coeff_count(set.sh_degree()); ++k)
    fn(c.color[k], g.color[k], tag + "color" + std::to_string(k));
  if (set.is_dynamic(i)) {
    auto& d = set.dynamic_extras(i);
    for (std::size_t k = 0; k < d.traj_position.size(); ++k) {
      const std::string kt = tag + "key" + std::to_string(k) + ".";
      fn(d.traj_position[k].x, g.traj_position[k].x, kt + "x");
      fn(d.traj_position[k].y, g.traj_position[k].y, kt + "y");
      fn(d.traj_position[k].z, g.traj_position[k].z, kt + "z");
      fn(d.traj_rotation[k].w, g.traj_rotation[k][0], kt + "qw");
      fn(d.traj_rotation[k].x, g.traj_rotation[k][1], kt + "qx");
      fn(d.traj_rotation[k].y, g.traj_rotation[k][2], kt + "qy");
      fn(d.traj_rotation[k].z, g.traj_rotation[k][3], kt + "qz");
    }
    fn(d.window_start, g.window_start, tag + "window_start");
    fn(d.window_end, g.window_end, tag + "window_end");
  } else {
    auto& e = set.static_extras(i);
    fn(c.position.x, g.position.x, tag + "x");
    fn(c.position.y, g.position.y, tag + "y");
    fn(c.position.z, g.position.z, tag + "z");
    fn(c.rotation.w, g.rotation[0], tag + "qw");
    fn(c.rotation.x, g.rotation[1], tag + "qx");
    fn(c.rotation.y, g.rotation[2], tag + "qy");
    fn(c.rotation.z, g.rotation[3], tag + "qz");
    fn(e.translation.x, g.translation.x, tag + "tx");
    fn(e.translation.y, g.translation.y, tag + "ty");
    fn(e.translation.z, g.translation.z, tag + "tz");
  }
}

struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  std::string first_failure;
};

/// Compares every analytic gradient against a central difference with step
/// h = 1e-3; a parameter passes when |analytic - fd| <= max(abs_tol, 2% |fd|).
inline GradCheckResult gradient_check(GradCheckScene s, double abs_tol = 1e-3) {
  const auto lg = render_and_backward(s.set, s.view, s.t, s.gt, s.lambda_ssim, s.opts);
  GradCheckResult r;
  for (std::size_t i = 0; i < s.set.size(); ++i) {
    for_each_parameter(s.set, lg.grad.g[i], i, [&](float& value, double analytic, const std::string& name) {
      const float orig = value;
      value = orig + 1e-3f;
      const float hi = value;
      const double up = scene_loss(s);
      value = orig - 1e-3f;
      const float lo = value;
      const double down = scene_loss(s);
      value = orig;
      const double fd = (up - down) / (static_cast<double>(hi) - lo);
      ++r.checked;
      if (std::abs(analytic - fd) > std::max(abs_tol, 0.02 * std::abs(fd))) {
        if (r.failed++ == 0) {
          std::ostringstream os;
          os << name << ": analytic " << analytic << " vs fd " << fd;
          r.first_failure = os.str();
        }
      }
    });
  }
  return r;
}

}  // namespace bsplat::fixtures
