#pragma once

#include "bsplat/image.hpp"

namespace bsplat {

struct LossBreakdown {
  double l1 = 0.0;
  double ssim_loss = 0.0;  ///< 1 - mean SSIM
  double render_loss = 0.0;
};

/// SSIM constants: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1. Borders are zero padded, and the map is averaged over
/// every pixel and channel.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

double ssim(const ImageBuffer& a, const ImageBuffer& b);

/// (1 - lambda) * mean|pred - gt| + lambda * (1 - SSIM). Negative predicted
/// radiance is clamped to zero first. Throws InvalidArgument on shape mismatch.
LossBreakdown render_loss(const ImageBuffer& pred, const ImageBuffer& gt, double lambda_ssim);

/// As render_loss, also writing dLoss/dpred into `grad` (resized to pred's shape).
LossBreakdown render_loss_grad(const ImageBuffer& pred, const ImageBuffer& gt, double lambda_ssim,
                               ImageBuffer& grad);

}  // namespace bsplat
