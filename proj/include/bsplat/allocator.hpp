#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bsplat/scene_model.hpp"

namespace bsplat {

inline constexpr int kMotionBins = 64;
inline constexpr int kSmoothingWidth = 5;
inline constexpr double kFallbackAlpha = 0.9;

struct MotionHistogram {
  std::vector<double> raw;
  std::vector<double> smoothed;
  double lo = 0.0;
  double hi = 0.0;
  /// All magnitudes equal: no histogram can be built.
  bool all_uniform = false;

  double bin_width() const { return raw.empty() ? 0.0 : (hi - lo) / static_cast<double>(raw.size()); }
};

/// Uniform bins over [min, max] (the maximum lands in the last bin), then a
/// width-5 moving average that spreads each bin's count evenly over its
/// neighbourhood, folding the part that falls off either end back onto the
/// edge bin so the total count is preserved exactly.
MotionHistogram build_histogram(std::span<const double> magnitudes, int bins = kMotionBins);

/// Strict local maxima of h. A missing neighbour past either end counts as
/// -infinity; a plateau of equal bins that beats both sides yields its middle
/// bin. Zero bins are never peaks.
std::vector<int> find_peaks(std::span<const double> h);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::span<const double> values, double alpha);

/// Topographic prominence: on each side, the lowest bin passed before a
/// taller bin is reached (an equal bin further left counts as taller). Sides
/// that never reach a taller bin do not bound the peak; the tallest peak is
/// measured from the histogram minimum.
double peak_prominence(std::span<const double> h, int p);

/// Peaks whose prominence is at least kPeakNoiseZ * sqrt(height), a few
/// times the counting noise of the bin, and at least kMinRelativeProminence
/// of their own height. Ripples inside one mode and stray samples in sparse
/// tails are not treated as separate modes.
inline constexpr double kPeakNoiseZ = 2.0;
inline constexpr double kMinRelativeProminence = 0.5;
std::vector<int> significant_peaks(std::span<const double> h);

struct ThresholdResult {
  bool fallback = false;
  std::vector<int> peaks;
  int p_s = -1;  ///< lower-motion peak of the chosen pair
  int p_d = -1;
  int valley = -1;
  double alpha = 0.0;
  double tau = 0.0;
};

/// Picks the two highest significant peaks, the lowest bin strictly between them (first
/// minimal run, middle bin), the fraction of magnitudes below that bin's
/// lower edge, and the matching quantile. With fewer than two peaks, or when
/// every magnitude is equal, falls back to the 0.9 quantile.
ThresholdResult find_threshold(const MotionHistogram& hist, std::span<const double> magnitudes);

/// Per-Gaussian motion magnitude: ||T|| for static, ||last - first control
/// point|| for dynamic.
std::vector<double> motion_magnitudes(const GaussianSet& set);

struct AllocationReport {
  MotionHistogram histogram;
  ThresholdResult threshold;
  std::size_t n_static = 0;
  std::size_t n_dynamic = 0;
  std::size_t n_to_dynamic = 0;
  std::size_t n_to_static = 0;

  std::string to_json() const;
};

/// Re-tags every Gaussian by the single comparison magnitude > tau.
/// Static -> dynamic: control points follow position + (k/(K-1) - 1/2) T and
/// the activation window starts wide open. Dynamic -> static: the trajectory
/// collapses to its mean with T = last - first.
void apply_partition(GaussianSet& set, double tau, AllocationReport* report = nullptr);

/// Histogram analysis followed by apply_partition.
AllocationReport allocate(GaussianSet& set, int bins = kMotionBins);

/// Window given to freshly re-tagged dynamic Gaussians; it extends past the
/// sequence ends so the sigmoid edges do not dim the first and last frames.
inline constexpr float kInitialWindowStart = -0.25f;
inline constexpr float kInitialWindowEnd = 1.25f;

}  // namespace bsplat
