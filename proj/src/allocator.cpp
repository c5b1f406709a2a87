#include "bsplat/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "bsplat/error.hpp"

namespace bsplat {

MotionHistogram build_histogram(std::span<const double> magnitudes, int bins) {
  if (bins < 8) throw InvalidArgument("histogram needs at least 8 bins");
  MotionHistogram h;
  h.raw.assign(static_cast<std::size_t>(bins), 0.0);
  h.smoothed.assign(static_cast<std::size_t>(bins), 0.0);
  if (magnitudes.empty()) {
    h.all_uniform = true;
    return h;
  }
  for (double m : magnitudes)
    if (!std::isfinite(m)) throw NumericError("non-finite motion magnitude");
  const auto [lo, hi] = std::minmax_element(magnitudes.begin(), magnitudes.end());
  h.lo = *lo;
  h.hi = *hi;
  if (!(h.hi > h.lo)) {
    h.all_uniform = true;
    h.raw[0] = static_cast<double>(magnitudes.size());
    h.smoothed[0] = h.raw[0];
    return h;
  }
  const double width = (h.hi - h.lo) / bins;
  for (double m : magnitudes) {
    const int b = std::min(bins - 1, static_cast<int>((m - h.lo) / width));
    h.raw[static_cast<std::size_t>(b)] += 1.0;
  }
  const int r = kSmoothingWidth / 2;
  for (int b = 0; b < bins; ++b) {
    const double share = h.raw[static_cast<std::size_t>(b)] / kSmoothingWidth;
    for (int k = -r; k <= r; ++k) h.smoothed[static_cast<std::size_t>(std::clamp(b + k, 0, bins - 1))] += share;
  }
  return h;
}

std::vector<int> find_peaks(std::span<const double> h) {
  std::vector<int> peaks;
  const int n = static_cast<int>(h.size());
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  int a = 0;
  while (a < n) {
    int b = a;
    while (b + 1 < n && h[static_cast<std::size_t>(b + 1)] == h[static_cast<std::size_t>(a)]) ++b;
    const double v = h[static_cast<std::size_t>(a)];
    const double left = a > 0 ? h[static_cast<std::size_t>(a - 1)] : kNone;
    const double right = b + 1 < n ? h[static_cast<std::size_t>(b + 1)] : kNone;
    if (v > 0.0 && v > left && v > right) peaks.push_back((a + b) / 2);
    a = b + 1;
  }
  return peaks;
}

double quantile(std::span<const double> values, double alpha) {
  if (values.empty()) throw InvalidArgument("quantile of an empty sample");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double pos = std::clamp(alpha, 0.0, 1.0) * static_cast<double>(s.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  if (k + 1 >= s.size()) return s.back();
  return s[k] + (pos - static_cast<double>(k)) * (s[k + 1] - s[k]);
}

double peak_prominence(std::span<const double> h, int p) {
  const int n = static_cast<int>(h.size());
  const double v = h[static_cast<std::size_t>(p)];
  struct Side {
    bool bounded = false;  // a taller bin was reached
    double lowest = std::numeric_limits<double>::infinity();
  };
  auto walk = [&](int step) {
    Side s;
    bool off_plateau = false;
    for (int b = p + step; b >= 0 && b < n; b += step) {
      const double x = h[static_cast<std::size_t>(b)];
      off_plateau = off_plateau || x < v;
      // equal heights are ranked by position, the lower bin first
      if (x > v || (x == v && step < 0 && off_plateau)) {
        s.bounded = true;
        break;
      }
      s.lowest = std::min(s.lowest, x);
    }
    return s;
  };
  const Side l = walk(-1), r = walk(1);
  if (l.bounded && r.bounded) return v - std::max(l.lowest, r.lowest);
  if (l.bounded) return v - l.lowest;
  if (r.bounded) return v - r.lowest;
  const double lowest = std::min({l.lowest, r.lowest, v});
  return v - lowest;
}

std::vector<int> significant_peaks(std::span<const double> h) {
  std::vector<int> out;
  for (int p : find_peaks(h)) {
    const double v = h[static_cast<std::size_t>(p)];
    const double prom = peak_prominence(h, p);
    if (prom >= kPeakNoiseZ * std::sqrt(v) && prom >= kMinRelativeProminence * v) out.push_back(p);
  }
  return out;
}

ThresholdResult find_threshold(const MotionHistogram& hist, std::span<const double> magnitudes) {
  ThresholdResult r;
  if (magnitudes.empty()) throw InvalidArgument("no motion magnitudes");
  if (!hist.all_uniform) r.peaks = significant_peaks(hist.smoothed);
  if (hist.all_uniform || r.peaks.size() < 2) {
    r.fallback = true;
    r.alpha = kFallbackAlpha;
    r.tau = quantile(magnitudes, kFallbackAlpha);
    return r;
  }
  // the highest pair maximizes the summed height; ties go to the lower bin
  std::vector<int> ranked = r.peaks;
  std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
    return hist.smoothed[static_cast<std::size_t>(a)] > hist.smoothed[static_cast<std::size_t>(b)];
  });
  r.p_s = std::min(ranked[0], ranked[1]);
  r.p_d = std::max(ranked[0], ranked[1]);

  double best = std::numeric_limits<double>::infinity();
  int run_start = -1, run_end = -1;
  for (int b = r.p_s + 1; b < r.p_d; ++b) {
    const double v = hist.smoothed[static_cast<std::size_t>(b)];
    if (v < best) {
      best = v;
      run_start = run_end = b;
    } else if (v == best && run_end == b - 1) {
      run_end = b;
    }
  }
  r.valley = (run_start + run_end) / 2;
  const double edge = hist.lo + r.valley * hist.bin_width();
  std::size_t below = 0;
  for (double m : magnitudes)
    if (m < edge) ++below;
  r.alpha = static_cast<double>(below) / static_cast<double>(magnitudes.size());
  r.tau = quantile(magnitudes, r.alpha);
  return r;
}

std::vector<double> motion_magnitudes(const GaussianSet& set) {
  std::vector<double> m(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    m[i] = set.is_dynamic(i) ? norm(equivalent_translation(set.dynamic_extras(i)))
                             : norm(set.static_extras(i).translation.cast<double>());
  return m;
}

void apply_partition(GaussianSet& set, double tau, AllocationReport* report) {
  const auto mags = motion_magnitudes(set);
  const int K = set.keyframes();
  std::size_t to_dynamic = 0, to_static = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool dynamic = mags[i] > tau;
    if (dynamic && !set.is_dynamic(i)) {
      const auto& core = set.core(i);
      const Vec3f tr = set.static_extras(i).translation;
      DynamicExtras d;
      for (int k = 0; k < K; ++k) {
        const float f = static_cast<float>(k) / static_cast<float>(K - 1) - 0.5f;
        d.traj_position.push_back(core.position + tr * f);
        d.traj_rotation.push_back(core.rotation);
      }
      d.window_start = kInitialWindowStart;
      d.window_end = kInitialWindowEnd;
      set.make_dynamic(i, d);
      ++to_dynamic;
    } else if (!dynamic && set.is_dynamic(i)) {
      const auto& d = set.dynamic_extras(i);
      const Vec3d mean = trajectory_mean(d);
      const Vec3d tr = equivalent_translation(d);
      const Quatd q = evaluate_dynamic_state(d, 0.5).rotation;
      auto& core = set.core(i);
      core.position = mean.cast<float>();
      core.rotation = q.cast<float>();
      set.make_static(i, StaticExtras{tr.cast<float>()});
      ++to_static;
    }
  }
  if (report) {
    report->n_static = set.n_static();
    report->n_dynamic = set.n_dynamic();
    report->n_to_dynamic = to_dynamic;
    report->n_to_static = to_static;
  }
}

AllocationReport allocate(GaussianSet& set, int bins) {
  AllocationReport report;
  if (set.empty()) return report;
  const auto mags = motion_magnitudes(set);
  report.histogram = build_histogram(mags, bins);
  report.threshold = find_threshold(report.histogram, mags);
  apply_partition(set, report.threshold.tau, &report);
  return report;
}

std::string AllocationReport::to_json() const {
  nlohmann::json j;
  j["histogram"] = histogram.raw;
  j["smoothed"] = histogram.smoothed;
  j["range"] = {histogram.lo, histogram.hi};
  j["all_uniform"] = histogram.all_uniform;
  j["peaks"] = threshold.peaks;
  j["chosen_pair"] = {threshold.p_s, threshold.p_d};
  j["valley_bin"] = threshold.valley;
  j["alpha"] = threshold.alpha;
  j["tau_motion"] = threshold.tau;
  j["fallback"] = threshold.fallback;
  j["n_static"] = n_static;
  j["n_dynamic"] = n_dynamic;
  j["n_to_dynamic"] = n_to_dynamic;
  j["n_to_static"] = n_to_static;
  return j.dump();
}

}  // namespace bsplat
