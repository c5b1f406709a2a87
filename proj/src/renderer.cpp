#include "bsplat/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bsplat/error.hpp"
#include "bsplat/parallel.hpp"

namespace bsplat {

namespace {

/// Everything the forward pass derives for one Gaussian in one view; the
/// backward pass recomputes it rather than caching it.
struct Projected {
  bool valid = false;
  double depth = 0.0;
  double u = 0.0, v = 0.0;
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;
  double alpha = 0.0;  // c * sigmoid(opacity) * window
  std::array<double, 3> color{};
  int tx0 = 0, tx1 = -1, ty0 = 0, ty1 = -1;

  Vec3d world;
  Vec3d cam;
  Quatd q_raw;
  Quatd q;
  Mat3d rot;
  Vec3d scale;
  Mat3d rs;   // rot * diag(scale)
  Mat3d cov;  // rs * rs^T
  double t2[2][3]{};
  double cov2_00 = 0.0, cov2_01 = 0.0, cov2_11 = 0.0;
  double sig = 0.0;
  double window = 1.0;
  double gate = 1.0;
  Vec3d dir;
  double dist = 1.0;
  DynamicState dyn;
};

bool finite3(const Vec3f& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

void check_finite(const GaussianSet& set, std::size_t i) {
  const auto& c = set.core(i);
  bool ok = finite3(c.position) && finite3(c.log_scale) && std::isfinite(c.opacity_logit) &&
            std::isfinite(c.gate_activation) && std::isfinite(c.rotation.w) &&
            std::isfinite(c.rotation.x) && std::isfinite(c.rotation.y) && std::isfinite(c.rotation.z);
  for (float f : c.color) ok = ok && std::isfinite(f);
  if (set.is_dynamic(i)) {
    const auto& d = set.dynamic_extras(i);
    for (const auto& p : d.traj_position) ok = ok && finite3(p);
    for (const auto& q : d.traj_rotation)
      ok = ok && std::isfinite(q.w) && std::isfinite(q.x) && std::isfinite(q.y) && std::isfinite(q.z);
    ok = ok && std::isfinite(d.window_start) && std::isfinite(d.window_end) &&
         std::isfinite(d.window_sharpness);
  } else {
    ok = ok && finite3(set.static_extras(i).translation);
  }
  if (!ok) throw NumericError("non-finite parameter in gaussian " + std::to_string(i));
}

Projected project(const GaussianSet& set, std::size_t i, const CameraView& view, double t,
                  const RenderOptions& opts) {
  check_finite(set, i);
  Projected p;
  const auto& core = set.core(i);
  const auto& K = view.intrinsics;

  if (set.is_dynamic(i)) {
    p.dyn = evaluate_dynamic_state(set.dynamic_extras(i), t);
    p.world = p.dyn.position;
    p.q_raw = p.dyn.rotation_raw;
    p.window = p.dyn.window_weight;
  } else {
    p.world = core.position.cast<double>() + set.static_extras(i).translation.cast<double>() * (t - 0.5);
    p.q_raw = core.rotation.cast<double>();
  }
  p.sig = sigmoid(core.opacity_logit);
  p.gate = core.gate_activation;
  p.alpha = p.gate * p.sig * p.window;

  p.cam = view.rotation * p.world + view.translation;
  const double x = p.cam.x, y = p.cam.y, z = p.cam.z;
  p.depth = z;
  if (z < opts.near_plane) return p;
  const double lim_x = opts.frustum_margin * (0.5 * K.width / K.fx);
  const double lim_y = opts.frustum_margin * (0.5 * K.height / K.fy);
  if (std::abs(x / z) > lim_x + std::abs(K.cx - 0.5 * K.width) / K.fx ||
      std::abs(y / z) > lim_y + std::abs(K.cy - 0.5 * K.height) / K.fy)
    return p;

  p.q = p.q_raw.normalized();
  p.rot = rotation_matrix(p.q);
  p.scale = {std::exp(static_cast<double>(core.log_scale.x)), std::exp(static_cast<double>(core.log_scale.y)),
             std::exp(static_cast<double>(core.log_scale.z))};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rs(r, c) = p.rot(r, c) * p.scale[c];
  p.cov = p.rs * p.rs.transposed();

  const double j00 = K.fx / z, j02 = -K.fx * x / (z * z);
  const double j11 = K.fy / z, j12 = -K.fy * y / (z * z);
  for (int c = 0; c < 3; ++c) {
    p.t2[0][c] = j00 * view.rotation(0, c) + j02 * view.rotation(2, c);
    p.t2[1][c] = j11 * view.rotation(1, c) + j12 * view.rotation(2, c);
  }
  double tc[2][3];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += p.t2[r][k] * p.cov(k, c);
      tc[r][c] = s;
    }
  auto cov2 = [&](int r, int c) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += tc[r][k] * p.t2[c][k];
    return s;
  };
  p.cov2_00 = cov2(0, 0) + opts.dilation;
  p.cov2_01 = cov2(0, 1);
  p.cov2_11 = cov2(1, 1) + opts.dilation;
  const double det = p.cov2_00 * p.cov2_11 - p.cov2_01 * p.cov2_01;
  if (!(det > 0.0)) return p;
  p.conic_a = p.cov2_11 / det;
  p.conic_b = -p.cov2_01 / det;
  p.conic_c = p.cov2_00 / det;

  p.u = K.fx * x / z + K.cx;
  p.v = K.fy * y / z + K.cy;

  const double mid = 0.5 * (p.cov2_00 + p.cov2_11);
  const double lambda = mid + std::sqrt(std::max(0.1, mid * mid - det));
  const double radius = std::ceil(opts.cutoff_sigma * std::sqrt(lambda));
  const int ntx = (K.width + kTileSize - 1) / kTileSize;
  const int nty = (K.height + kTileSize - 1) / kTileSize;
  const double x0 = p.u - radius, x1 = p.u + radius, y0 = p.v - radius, y1 = p.v + radius;
  if (x1 < 0.0 || y1 < 0.0 || x0 > K.width || y0 > K.height) return p;
  p.tx0 = std::clamp(static_cast<int>(std::floor(x0 / kTileSize)), 0, ntx - 1);
  p.tx1 = std::clamp(static_cast<int>(std::floor(x1 / kTileSize)), 0, ntx - 1);
  p.ty0 = std::clamp(static_cast<int>(std::floor(y0 / kTileSize)), 0, nty - 1);
  p.ty1 = std::clamp(static_cast<int>(std::floor(y1 / kTileSize)), 0, nty - 1);

  p.color = {core.color[0], core.color[1], core.color[2]};
  if (set.sh_degree() == 1) {
    const Vec3d d = p.world - view.center();
    p.dist = norm(d);
    p.dir = d * (1.0 / p.dist);
    for (int ch = 0; ch < 3; ++ch) {
      const float* f = &core.color[static_cast<std::size_t>(3 + 3 * ch)];
      p.color[ch] += kShC1 * (-p.dir.y * f[0] + p.dir.z * f[1] - p.dir.x * f[2]);
    }
  }
  p.valid = true;
  return p;
}

/// Screen-space layout shared by forward and backward passes.
struct Raster {
  std::vector<Projected> proj;
  std::vector<std::vector<std::uint32_t>> tiles;  // gaussian ids, front to back
  int ntx = 0, nty = 0;
};

Raster rasterize_setup(const GaussianSet& set, const CameraView& view, double t, const RenderOptions& opts) {
  Raster r;
  const std::size_t n = set.size();
  r.proj.resize(n);
  parallel_for(n, [&](std::size_t i) { r.proj[i] = project(set, i, view, t, opts); });

  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (r.proj[i].valid && r.proj[i].alpha > 0.0) order.push_back(static_cast<std::uint32_t>(i));
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (r.proj[a].depth != r.proj[b].depth) return r.proj[a].depth < r.proj[b].depth;
    return a < b;
  });

  r.ntx = (view.intrinsics.width + kTileSize - 1) / kTileSize;
  r.nty = (view.intrinsics.height + kTileSize - 1) / kTileSize;
  r.tiles.resize(static_cast<std::size_t>(r.ntx) * r.nty);
  for (std::uint32_t i : order) {
    const auto& p = r.proj[i];
    for (int ty = p.ty0; ty <= p.ty1; ++ty)
      for (int tx = p.tx0; tx <= p.tx1; ++tx) r.tiles[static_cast<std::size_t>(ty) * r.ntx + tx].push_back(i);
  }
  return r;
}

/// Blending weight alpha' of splat p at pixel center (px, py); 0 if skipped.
inline double splat_alpha(const Projected& p, double px, double py, const RenderOptions& opts,
                          double& dx, double& dy) {
  dx = px - p.u;
  dy = py - p.v;
  const double power = -0.5 * (p.conic_a * dx * dx + p.conic_c * dy * dy) - p.conic_b * dx * dy;
  if (power > 0.0 || -2.0 * power > opts.cutoff_sigma * opts.cutoff_sigma) return 0.0;
  const double a = std::min(1.0, p.alpha * std::exp(power));
  return a < opts.min_alpha ? 0.0 : a;
}

struct TileAux {
  std::vector<double> contribution, area, weighted;
};

}  // namespace

void GradientSet::reset(const GaussianSet& set) {
  g.assign(set.size(), GaussianGrad{});
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.is_dynamic(i)) {
      g[i].traj_position.assign(static_cast<std::size_t>(set.keyframes()), Vec3d{});
      g[i].traj_rotation.assign(static_cast<std::size_t>(set.keyframes()), std::array<double, 4>{});
    }
}

GradientSet& GradientSet::operator+=(const GradientSet& o) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& a = g[i];
    const auto& b = o.g[i];
    a.position += b.position;
    for (int k = 0; k < 4; ++k) a.rotation[k] += b.rotation[k];
    a.log_scale += b.log_scale;
    a.opacity_logit += b.opacity_logit;
    for (std::size_t k = 0; k < 12; ++k) a.color[k] += b.color[k];
    a.gate += b.gate;
    a.importance += b.importance;
    a.translation += b.translation;
    for (std::size_t k = 0; k < a.traj_position.size(); ++k) {
      a.traj_position[k] += b.traj_position[k];
      for (int c = 0; c < 4; ++c) a.traj_rotation[k][c] += b.traj_rotation[k][c];
    }
    a.window_start += b.window_start;
    a.window_end += b.window_end;
  }
  return *this;
}

RenderOutput render(const GaussianSet& set, const CameraView& view, double t, bool training_mode,
                    const RenderOptions& opts, const std::vector<float>* pixel_weight) {
  const int W = view.intrinsics.width, H = view.intrinsics.height;
  const std::size_t n = set.size();
  Raster r = rasterize_setup(set, view, t, opts);

  RenderOutput out;
  out.image = ImageBuffer(W, H);
  std::vector<TileAux> aux(training_mode ? r.tiles.size() : 0);

  parallel_for(r.tiles.size(), [&](std::size_t tile) {
    const auto& list = r.tiles[tile];
    TileAux* ta = training_mode ? &aux[tile] : nullptr;
    if (ta) {
      ta->contribution.assign(list.size(), 0.0);
      ta->area.assign(list.size(), 0.0);
      ta->weighted.assign(list.size(), 0.0);
    }
    const int tx = static_cast<int>(tile % static_cast<std::size_t>(r.ntx));
    const int ty = static_cast<int>(tile / static_cast<std::size_t>(r.ntx));
    for (int py = ty * kTileSize; py < std::min(H, (ty + 1) * kTileSize); ++py)
      for (int px = tx * kTileSize; px < std::min(W, (tx + 1) * kTileSize); ++px) {
        const double cx = px + 0.5, cy = py + 0.5;
        const double pw = pixel_weight ? (*pixel_weight)[static_cast<std::size_t>(py) * W + px] : 0.0;
        double T = 1.0;
        double rgb[3] = {0.0, 0.0, 0.0};
        for (std::size_t k = 0; k < list.size(); ++k) {
          const auto& p = r.proj[list[k]];
          double dx, dy;
          const double a = splat_alpha(p, cx, cy, opts, dx, dy);
          if (a == 0.0) continue;
          const double w = a * T;
          for (int c = 0; c < 3; ++c) rgb[c] += p.color[c] * w;
          if (ta) {
            ta->contribution[k] += w;
            if (w > 1e-4) ta->area[k] += 1.0;
            ta->weighted[k] += w * pw;
          }
          T *= (1.0 - a);
          if (T < opts.min_transmittance) break;
        }
        for (int c = 0; c < 3; ++c)
          out.image.at(px, py, c) = static_cast<float>(rgb[c] + T * opts.background[static_cast<std::size_t>(c)]);
      }
  });

  if (training_mode) {
    out.contribution.assign(n, 0.0);
    out.pixel_area.assign(n, 0.0);
    out.weighted_contribution.assign(n, 0.0);
    for (std::size_t tile = 0; tile < r.tiles.size(); ++tile)
      for (std::size_t k = 0; k < r.tiles[tile].size(); ++k) {
        const auto i = r.tiles[tile][k];
        out.contribution[i] += aux[tile].contribution[k];
        out.pixel_area[i] += aux[tile].area[k];
        out.weighted_contribution[i] += aux[tile].weighted[k];
      }
    out.mean_depth.assign(n, 0.0);
    out.effective_opacity.assign(n, 0.0);
    out.projected.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      out.effective_opacity[i] = r.proj[i].alpha;
      out.projected[i] = r.proj[i].valid;
      if (r.proj[i].valid) out.mean_depth[i] = r.proj[i].depth;
    }
  }
  return out;
}

namespace {

/// Screen-space gradient accumulators for one splat.
struct Grad2D {
  double u = 0, v = 0, ca = 0, cb = 0, cc = 0, alpha = 0;
  double color[3] = {0, 0, 0};

  void add(const Grad2D& o) {
    u += o.u, v += o.v, ca += o.ca, cb += o.cb, cc += o.cc, alpha += o.alpha;
    for (int c = 0; c < 3; ++c) color[c] += o.color[c];
  }
};

struct Hit {
  std::size_t k;
  double a, T, dx, dy;
};

void backward_gaussian(const GaussianSet& set, std::size_t i, const Projected& p, const Grad2D& g2,
                       const CameraView& view, double t, GaussianGrad& out) {
  const auto& K = view.intrinsics;
  const auto& W = view.rotation;
  const double x = p.cam.x, y = p.cam.y, z = p.cam.z;

  // conic -> 2D covariance: dL/dCov2 = -Q G Q with Q the conic matrix
  const double q00 = p.conic_a, q01 = p.conic_b, q11 = p.conic_c;
  const double g00 = g2.ca, g01 = 0.5 * g2.cb, g11 = g2.cc;
  // (Q G) then (Q G) Q
  const double m00 = q00 * g00 + q01 * g01, m01 = q00 * g01 + q01 * g11;
  const double m10 = q01 * g00 + q11 * g01, m11 = q01 * g01 + q11 * g11;
  const double gc00 = -(m00 * q00 + m01 * q01);
  const double gc01 = -(m00 * q01 + m01 * q11);
  const double gc10 = -(m10 * q00 + m11 * q01);
  const double gc11 = -(m10 * q01 + m11 * q11);
  const double gcov2[2][2] = {{gc00, 0.5 * (gc01 + gc10)}, {0.5 * (gc01 + gc10), gc11}};

  // dL/dCov3 = T2^T G T2
  Mat3d gcov;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double s = 0.0;
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) s += p.t2[r][a] * gcov2[r][c] * p.t2[c][b];
      gcov(a, b) = s;
    }

  // dL/dT2 = 2 G T2 Cov3
  double gt2[2][3];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 3; ++m) s += gcov2[r][k] * p.t2[k][m] * p.cov(m, c);
      gt2[r][c] = 2.0 * s;
    }
  // T2 = J W -> dL/dJ = dL/dT2 W^T
  double gj[2][3];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += gt2[r][k] * W(c, k);
      gj[r][c] = s;
    }

  Vec3d gcam;
  const double z2 = z * z, z3 = z2 * z;
  gcam.x += gj[0][2] * (-K.fx / z2);
  gcam.y += gj[1][2] * (-K.fy / z2);
  gcam.z += gj[0][0] * (-K.fx / z2) + gj[0][2] * (2.0 * K.fx * x / z3) + gj[1][1] * (-K.fy / z2) +
            gj[1][2] * (2.0 * K.fy * y / z3);
  gcam.x += g2.u * K.fx / z;
  gcam.z += g2.u * (-K.fx * x / z2);
  gcam.y += g2.v * K.fy / z;
  gcam.z += g2.v * (-K.fy * y / z2);

  Vec3d gworld = W.transposed() * gcam;

  const auto& core = set.core(i);
  out.color[0] += g2.color[0];
  out.color[1] += g2.color[1];
  out.color[2] += g2.color[2];
  if (set.sh_degree() == 1) {
    Vec3d gdir;
    for (int ch = 0; ch < 3; ++ch) {
      const float* f = &core.color[static_cast<std::size_t>(3 + 3 * ch)];
      const double gc = g2.color[ch];
      out.color[static_cast<std::size_t>(3 + 3 * ch + 0)] += gc * kShC1 * (-p.dir.y);
      out.color[static_cast<std::size_t>(3 + 3 * ch + 1)] += gc * kShC1 * p.dir.z;
      out.color[static_cast<std::size_t>(3 + 3 * ch + 2)] += gc * kShC1 * (-p.dir.x);
      gdir.x += gc * kShC1 * (-f[2]);
      gdir.y += gc * kShC1 * (-f[0]);
      gdir.z += gc * kShC1 * f[1];
    }
    gworld += (gdir - p.dir * dot(p.dir, gdir)) * (1.0 / p.dist);
  }

  // Cov3 = M M^T with M = R S
  Mat3d gm;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += (gcov(r, k) + gcov(k, r)) * p.rs(k, c);
      gm(r, c) = s;
    }
  Mat3d grot;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) grot(r, c) = gm(r, c) * p.scale[c];
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int r = 0; r < 3; ++r) s += gm(r, c) * p.rot(r, c);
    out.log_scale[c] += s * p.scale[c];
  }
  const Quatd gq = rotation_matrix_vjp(p.q, grot);
  const double qn = p.q_raw.norm();
  const double proj = gq.w * p.q.w + gq.x * p.q.x + gq.y * p.q.y + gq.z * p.q.z;
  const std::array<double, 4> gq_raw = {(gq.w - p.q.w * proj) / qn, (gq.x - p.q.x * proj) / qn,
                                        (gq.y - p.q.y * proj) / qn, (gq.z - p.q.z * proj) / qn};

  // alpha = c * sigmoid(o) * window
  out.gate += g2.alpha * p.sig * p.window;
  out.opacity_logit += g2.alpha * p.gate * p.window * p.sig * (1.0 - p.sig);
  const double gwindow = g2.alpha * p.gate * p.sig;

  if (set.is_dynamic(i)) {
    const auto& d = set.dynamic_extras(i);
    const std::size_t s = p.dyn.segment;
    const double f = p.dyn.fraction;
    out.traj_position[s] += gworld * (1.0 - f);
    out.traj_position[s + 1] += gworld * f;
    for (int c = 0; c < 4; ++c) {
      out.traj_rotation[s][static_cast<std::size_t>(c)] += gq_raw[static_cast<std::size_t>(c)] * (1.0 - f);
      out.traj_rotation[s + 1][static_cast<std::size_t>(c)] += gq_raw[static_cast<std::size_t>(c)] * f;
    }
    const double kappa = d.window_sharpness;
    const double s1 = sigmoid((t - d.window_start) * kappa);
    const double s2 = sigmoid((d.window_end - t) * kappa);
    out.window_start += gwindow * s2 * s1 * (1.0 - s1) * (-kappa);
    out.window_end += gwindow * s1 * s2 * (1.0 - s2) * kappa;
  } else {
    out.position += gworld;
    out.translation += gworld * (t - 0.5);
    for (int c = 0; c < 4; ++c) out.rotation[static_cast<std::size_t>(c)] += gq_raw[static_cast<std::size_t>(c)];
  }
}

}  // namespace

GradientSet backward(const GaussianSet& set, const CameraView& view, double t,
                     const ImageBuffer& dloss_dimage, const RenderOptions& opts) {
  const int W = view.intrinsics.width, H = view.intrinsics.height;
  if (dloss_dimage.width != W || dloss_dimage.height != H)
    throw InvalidArgument("gradient image does not match the view resolution");
  Raster r = rasterize_setup(set, view, t, opts);

  std::vector<std::vector<Grad2D>> tile_grads(r.tiles.size());
  parallel_for(r.tiles.size(), [&](std::size_t tile) {
    const auto& list = r.tiles[tile];
    auto& tg = tile_grads[tile];
    tg.assign(list.size(), Grad2D{});
    std::vector<Hit> hits;
    const int tx = static_cast<int>(tile % static_cast<std::size_t>(r.ntx));
    const int ty = static_cast<int>(tile / static_cast<std::size_t>(r.ntx));
    for (int py = ty * kTileSize; py < std::min(H, (ty + 1) * kTileSize); ++py)
      for (int px = tx * kTileSize; px < std::min(W, (tx + 1) * kTileSize); ++px) {
        const double cx = px + 0.5, cy = py + 0.5;
        hits.clear();
        double T = 1.0;
        for (std::size_t k = 0; k < list.size(); ++k) {
          double dx, dy;
          const double a = splat_alpha(r.proj[list[k]], cx, cy, opts, dx, dy);
          if (a == 0.0) continue;
          hits.push_back({k, a, T, dx, dy});
          T *= (1.0 - a);
          if (T < opts.min_transmittance) break;
        }
        const double g[3] = {dloss_dimage.at(px, py, 0), dloss_dimage.at(px, py, 1), dloss_dimage.at(px, py, 2)};
        // colour of everything behind the current splat, background included
        double behind[3] = {opts.background.x, opts.background.y, opts.background.z};
        for (auto h = hits.rbegin(); h != hits.rend(); ++h) {
          const auto& p = r.proj[list[h->k]];
          auto& acc = tg[h->k];
          double dalpha = 0.0;
          for (int c = 0; c < 3; ++c) {
            acc.color[c] += g[c] * h->a * h->T;
            dalpha += g[c] * h->T * (p.color[c] - behind[c]);
            behind[c] = h->a * p.color[c] + (1.0 - h->a) * behind[c];
          }
          // alpha' = alpha * exp(power); the min(1, .) clamp is inactive since alpha <= 1
          const double gauss = h->a / p.alpha;
          acc.alpha += dalpha * gauss;
          const double dpower = dalpha * h->a;
          acc.u += dpower * (p.conic_a * h->dx + p.conic_b * h->dy);
          acc.v += dpower * (p.conic_c * h->dy + p.conic_b * h->dx);
          acc.ca += dpower * (-0.5 * h->dx * h->dx);
          acc.cc += dpower * (-0.5 * h->dy * h->dy);
          acc.cb += dpower * (-h->dx * h->dy);
        }
      }
  });

  std::vector<Grad2D> per_gaussian(set.size());
  for (std::size_t tile = 0; tile < r.tiles.size(); ++tile)
    for (std::size_t k = 0; k < r.tiles[tile].size(); ++k) per_gaussian[r.tiles[tile][k]].add(tile_grads[tile][k]);

  GradientSet grads;
  grads.reset(set);
  parallel_for(set.size(), [&](std::size_t i) {
    if (r.proj[i].valid && r.proj[i].alpha > 0.0)
      backward_gaussian(set, i, r.proj[i], per_gaussian[i], view, t, grads.g[i]);
  });
  return grads;
}

LossAndGrad render_and_backward(const GaussianSet& set, const CameraView& view, double t,
                                const ImageBuffer& gt, double lambda_ssim, const RenderOptions& opts) {
  LossAndGrad out;
  out.render = render(set, view, t, true, opts);
  ImageBuffer dimage;
  out.loss = render_loss_grad(out.render.image, gt, lambda_ssim, dimage);
  out.grad = backward(set, view, t, dimage, opts);
  return out;
}

}  // namespace bsplat
