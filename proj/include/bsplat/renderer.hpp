#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bsplat/image.hpp"
#include "bsplat/loss.hpp"
#include "bsplat/math.hpp"
#include "bsplat/scene_model.hpp"

namespace bsplat {

inline constexpr int kTileSize = 16;
inline constexpr double kShC1 = 0.4886025119029199;

struct RenderOptions {
  Vec3d background{0.0, 0.0, 0.0};
  /// Splat support is truncated at this Mahalanobis radius.
  double cutoff_sigma = 3.0;
  /// Per-pixel blending weights below this are skipped.
  double min_alpha = 1.0 / 255.0;
  /// Compositing stops once transmittance falls below this.
  double min_transmittance = 1e-4;
  /// Added to the diagonal of every projected 2D covariance (pixels^2).
  double dilation = 0.3;
  double near_plane = 0.05;
  /// Gaussians projecting further off-axis than this multiple of the
  /// half field of view are culled.
  double frustum_margin = 1.3;
};

/// Forward output. Auxiliary per-Gaussian vectors are filled only when
/// rendering in training mode.
struct RenderOutput {
  ImageBuffer image;
  std::vector<double> contribution;           ///< sum over pixels of alpha' * T
  std::vector<double> pixel_area;             ///< pixels with alpha' * T > 1e-4
  std::vector<double> mean_depth;             ///< camera-space depth, 0 if culled
  std::vector<double> weighted_contribution;  ///< sum of alpha' * T * pixel_weight
  std::vector<double> effective_opacity;      ///< c * alpha * window at this time
  std::vector<bool> projected;                ///< survived culling
};

/// Per-Gaussian gradients, indexed like the GaussianSet. Entries that do not
/// apply to a Gaussian's kind stay zero / empty.
struct GaussianGrad {
  Vec3d position;
  std::array<double, 4> rotation{};  ///< w, x, y, z of the stored quaternion
  Vec3d log_scale;
  double opacity_logit = 0.0;
  std::array<double, 12> color{};
  double gate = 0.0;        ///< dL/dc
  double importance = 0.0;  ///< dL/dM, filled by the gate chain rule
  Vec3d translation;        ///< static only
  std::vector<Vec3d> traj_position;                ///< dynamic only
  std::vector<std::array<double, 4>> traj_rotation;  ///< dynamic only
  double window_start = 0.0;
  double window_end = 0.0;
};

struct GradientSet {
  std::vector<GaussianGrad> g;

  void reset(const GaussianSet& set);
  GradientSet& operator+=(const GradientSet& o);
  std::size_t size() const { return g.size(); }
};

/// Splats `set` into `view` at normalized time t. Throws NumericError naming
/// the Gaussian index when a parameter is not finite.
RenderOutput render(const GaussianSet& set, const CameraView& view, double t, bool training_mode,
                    const RenderOptions& opts = {},
                    const std::vector<float>* pixel_weight = nullptr);

/// Reverse mode: given dLoss/dImage for the render of (set, view, t),
/// returns dLoss/dparameters. dL/dc equals dL/d(alpha_hat) * alpha (times the
/// window weight for dynamic Gaussians).
GradientSet backward(const GaussianSet& set, const CameraView& view, double t,
                     const ImageBuffer& dloss_dimage, const RenderOptions& opts = {});

/// Convenience: render, evaluate the render loss against gt and back-propagate.
struct LossAndGrad {
  RenderOutput render;
  LossBreakdown loss;
  GradientSet grad;
};
LossAndGrad render_and_backward(const GaussianSet& set, const CameraView& view, double t,
                                const ImageBuffer& gt, double lambda_ssim,
                                const RenderOptions& opts = {});

}  // namespace bsplat
