#include "bsplat/loss.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "bsplat/error.hpp"

namespace bsplat {

namespace {

constexpr int kRadius = kSsimWindow / 2;

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kRadius;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Separable zero-padded correlation of a single-channel plane.
class Blur {
 public:
  Blur(int w, int h) : w_(w), h_(h), tmp_(static_cast<std::size_t>(w) * h) {}

  void apply(const std::vector<double>& in, std::vector<double>& out) {
    static const auto taps = gaussian_taps();
    out.assign(in.size(), 0.0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const int xx = x + k;
          if (xx >= 0 && xx < w_) s += taps[static_cast<std::size_t>(k + kRadius)] * in[idx(xx, y)];
        }
        tmp_[idx(x, y)] = s;
      }
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const int yy = y + k;
          if (yy >= 0 && yy < h_) s += taps[static_cast<std::size_t>(k + kRadius)] * tmp_[idx(x, yy)];
        }
        out[idx(x, y)] = s;
      }
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int w_, h_;
  std::vector<double> tmp_;
};

/// Mean SSIM over all channels; when `grad` is non-null, accumulates
/// d(mean SSIM)/d(a) into it (one entry per interleaved sample).
double ssim_impl(const ImageBuffer& a, const ImageBuffer& b, std::vector<double>* grad) {
  const int w = a.width, h = a.height;
  const std::size_t n = a.pixel_count();
  Blur blur(w, h);
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  std::vector<double> mx, my, sxx, syy, sxy;
  std::vector<double> g_mu(n), g_xx(n), g_xy(n), bg_mu, bg_xx, bg_xy;
  const double inv_count = 1.0 / static_cast<double>(n * 3);
  double total = 0.0;

  for (int c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = std::max(0.0f, a.data[p * 3 + c]);
      y[p] = b.data[p * 3 + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    blur.apply(x, mx);
    blur.apply(y, my);
    blur.apply(xx, sxx);
    blur.apply(yy, syy);
    blur.apply(xy, sxy);
    for (std::size_t p = 0; p < n; ++p) {
      const double mu1 = mx[p], mu2 = my[p];
      const double s11 = sxx[p] - mu1 * mu1;
      const double s22 = syy[p] - mu2 * mu2;
      const double s12 = sxy[p] - mu1 * mu2;
      const double a1 = 2 * mu1 * mu2 + kSsimC1, a2 = 2 * s12 + kSsimC2;
      const double b1 = mu1 * mu1 + mu2 * mu2 + kSsimC1, b2 = s11 + s22 + kSsimC2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad) {
        const double ds_dmu1 = 2 * mu2 * a2 / (b1 * b2) - s * 2 * mu1 / b1;
        const double ds_ds11 = -s / b2;
        const double ds_ds12 = 2 * a1 / (b1 * b2);
        // s11 = E[x^2] - mu1^2, s12 = E[xy] - mu1 mu2
        g_mu[p] = (ds_dmu1 - 2 * mu1 * ds_ds11 - mu2 * ds_ds12) * inv_count;
        g_xx[p] = ds_ds11 * inv_count;
        g_xy[p] = ds_ds12 * inv_count;
      }
    }
    if (grad) {
      // the window is symmetric, so the adjoint of the blur is the blur
      blur.apply(g_mu, bg_mu);
      blur.apply(g_xx, bg_xx);
      blur.apply(g_xy, bg_xy);
      for (std::size_t p = 0; p < n; ++p) {
        const double d = a.data[p * 3 + c] > 0.0f ? bg_mu[p] + 2 * x[p] * bg_xx[p] + y[p] * bg_xy[p] : 0.0;
        (*grad)[p * 3 + c] += d;
      }
    }
  }
  return total * inv_count;
}

void check_shapes(const ImageBuffer& pred, const ImageBuffer& gt) {
  if (!pred.same_shape(gt)) throw InvalidArgument("prediction and ground truth shapes differ");
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_shapes(a, b);
  return ssim_impl(a, b, nullptr);
}

LossBreakdown render_loss(const ImageBuffer& pred, const ImageBuffer& gt, double lambda_ssim) {
  check_shapes(pred, gt);
  LossBreakdown out;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    sum += std::abs(std::max(0.0, static_cast<double>(pred.data[i])) - gt.data[i]);
  out.l1 = pred.data.empty() ? 0.0 : sum / static_cast<double>(pred.data.size());
  out.ssim_loss = pred.data.empty() ? 0.0 : 1.0 - ssim_impl(pred, gt, nullptr);
  out.render_loss = (1.0 - lambda_ssim) * out.l1 + lambda_ssim * out.ssim_loss;
  return out;
}

LossBreakdown render_loss_grad(const ImageBuffer& pred, const ImageBuffer& gt, double lambda_ssim,
                               ImageBuffer& grad) {
  check_shapes(pred, gt);
  LossBreakdown out;
  const std::size_t count = pred.data.size();
  grad = ImageBuffer(pred.width, pred.height);
  if (count == 0) return out;

  std::vector<double> dssim(count, 0.0);
  const double s = ssim_impl(pred, gt, &dssim);
  double sum = 0.0;
  const double l1_scale = (1.0 - lambda_ssim) / static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double p = pred.data[i];
    const double d = std::max(0.0, p) - gt.data[i];
    sum += std::abs(d);
    double g = 0.0;
    if (p > 0.0) g = l1_scale * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
    g -= lambda_ssim * dssim[i];
    grad.data[i] = static_cast<float>(g);
  }
  out.l1 = sum / static_cast<double>(count);
  out.ssim_loss = 1.0 - s;
  out.render_loss = (1.0 - lambda_ssim) * out.l1 + lambda_ssim * out.ssim_loss;
  return out;
}

}  // namespace bsplat
