#pragma once

#include <array>
#include <span>
#include <vector>

#include "bsplat/renderer.hpp"
#include "bsplat/scene_model.hpp"

namespace bsplat {

/// Raw (un-normalized) cues for one Gaussian.
///
/// geom = [position-gradient norm, max opacity, mean inverse depth,
///         largest covariance eigenvalue, motion magnitude]
/// perceptual = [photometric residual, pixel area, inverse contribution variance]
struct CueVector {
  std::array<double, 5> geom{};
  std::array<double, 3> perceptual{};
};

struct ScorerConfig {
  std::array<double, 5> w1{1, 1, 1, 1, 1};
  std::array<double, 3> w2{1, 1, 1};
  double lambda_gm = 2.0;
  int sample_views = 4;
  /// Exact leave-one-out residual (one extra render per Gaussian and view)
  /// instead of the contribution-weighted residual.
  bool exact_loo = false;
  double lambda_ssim = 0.2;

  void validate() const;
};

inline constexpr double kVarianceEpsilon = 1e-6;

/// Largest eigenvalue of R S S^T R^T: the square of the largest scale.
double covariance_max_eigenvalue(const GaussianCore& core);

/// ||T|| for static Gaussians; for dynamic ones the Frobenius norms of the
/// control-point position and rotation deviations from their means, summed.
double motion_cue(const GaussianSet& set, std::size_t i);

/// Collects cues view by view.
class CueAccumulator {
 public:
  explicit CueAccumulator(const GaussianSet& set);

  /// `render` must come from a training-mode render of `set` at time t. Its
  /// weighted_contribution (contribution times per-pixel residual) feeds the
  /// residual cue; `grad`, when given, feeds the position-gradient cue.
  void add_view(const GaussianSet& set, double t, const RenderOutput& render, const GradientSet* grad);

  /// Adds a per-Gaussian residual term for one view (exact leave-one-out).
  void add_residual(std::span<const double> residual);

  /// Replaces the position-gradient accumulator, e.g. with gradients summed
  /// over training iterations.
  void set_position_gradients(std::span<const Vec3d> grads);

  std::vector<CueVector> finish(const GaussianSet& set) const;

 private:
  std::size_t views_ = 0;
  std::vector<Vec3d> grad_;
  std::vector<double> alpha_max_, inv_depth_sum_, visible_views_, residual_, area_;
  std::vector<std::vector<double>> contributions_;  // per view
};

/// Per-pixel L1 residual summed over channels, laid out row-major.
std::vector<float> residual_map(const ImageBuffer& pred, const ImageBuffer& gt);

/// Sum over views of ||render(all) - render(all without i)||_1 for every i.
std::vector<double> leave_one_out_residual(const GaussianSet& set, const CameraView& view, double t,
                                           const RenderOptions& opts = {});

/// Renders every view, accumulates all cues and returns them. When
/// `position_grads` is null, position gradients are taken from a backward
/// pass on the same views.
std::vector<CueVector> compute_cues(const GaussianSet& set, std::span<const CameraView> views,
                                    std::span<const ImageBuffer> gts, const ScorerConfig& cfg,
                                    const RenderOptions& opts = {},
                                    std::span<const Vec3d> position_grads = {});

/// Two-level min-max fusion into scores in [0, 1]. A column (or the fused
/// sum) that is constant over the population normalizes to 0.5.
std::vector<double> fuse(std::span<const CueVector> cues, const ScorerConfig& cfg);

}  // namespace bsplat
