#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bsplat/allocator.hpp"
#include "bsplat/budget.hpp"
#include "bsplat/error.hpp"
#include "bsplat/importance.hpp"
#include "bsplat/loss.hpp"
#include "bsplat/optimizer.hpp"
#include "bsplat/population.hpp"
#include "bsplat/renderer.hpp"

namespace bsplat {

enum class Phase : int { WarmUp = 1, Budget = 2, FineTune = 3 };

struct TrainConfig {
  /// Iterations of warm-up, budget enforcement and fine-tuning.
  std::array<long, 3> phase_iters{100, 2000, 500};
  double lambda_ssim = 0.2;
  double lambda_b = 1e-7;
  double lambda_r = 1e-4;
  LearningRates lr;
  long densify_interval = 100;
  std::uint64_t seed = 0;
  std::size_t n_target = 1024;
  /// 0 picks min(n_target / 2, 4 n_target^0.9).
  std::size_t n_init = 0;
  double tau_init = 1.0;
  double tau_end = 0.01;
  int keyframes = 4;
  int sh_degree = 0;
  double split_threshold = 0.01;
  ScorerConfig scorer;
  Vec3d background{0.0, 0.0, 0.0};

  /// Throws InvalidArgument when a lambda is negative, a phase is empty, etc.
  void validate() const;
  long total_iters() const { return phase_iters[0] + phase_iters[1] + phase_iters[2]; }
  std::size_t initial_count() const;
  /// Densify events in Phase II (at least one).
  int densify_events() const;
  BudgetConfig budget() const;
  ScheduleConfig schedule() const;

  static TrainConfig from_json(const std::string& text);
  std::string to_json() const;
  static TrainConfig load(const std::filesystem::path& path);
};

Phase phase_at(long iteration, const TrainConfig& cfg);

/// Shrinkage term: mean |x| over dynamic control-point offsets from their
/// trajectory mean, every log-scale and every color coefficient.
double regularizer(const GaussianSet& set);
/// Adds d(regularizer)/dparams * weight into grad.
void regularizer_grad(const GaussianSet& set, double weight, GradientSet& grad);

struct TotalLoss {
  double render = 0.0;
  double budget = 0.0;  ///< L_budget, before lambda_b
  double reg = 0.0;     ///< L_reg, before lambda_r
  double total = 0.0;
};

/// Phase-gated objective: I renders only, II adds lambda_b L_budget and
/// lambda_r L_reg, III adds lambda_r L_reg.
TotalLoss total_loss(const LossBreakdown& render, double n_p, const TrainConfig& cfg, const GaussianSet& set,
                     Phase phase);

/// Training views of a dataset with their images held in memory.
struct TrainingFrames {
  std::vector<CameraView> views;
  std::vector<ImageBuffer> images;
  Vec3d scene_min;
  Vec3d scene_max;

  double extent() const;
  /// Loads every frame of every non-held-out view.
  static TrainingFrames from_dataset(const Dataset& ds);
};

struct MetricRow {
  long iteration = 0;
  double l1 = 0.0;
  double ssim = 0.0;
  double budget = 0.0;
  double reg = 0.0;
  double n_p = 0.0;
  std::size_t n_static = 0;
  std::size_t n_dynamic = 0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct TrainResult {
  GaussianSet set;
  std::vector<MetricRow> history;
  std::vector<GrowthEvent> growth;
  std::vector<AllocationReport> allocations;
};

/// Raised when the loss stops being finite; carries the last finite state.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, GaussianSet last_good, long iteration)
      : NumericError(what), last_good(std::move(last_good)), iteration(iteration) {}
  GaussianSet last_good;
  long iteration;
};

/// Seeds n_init static Gaussians uniformly in the scene box.
GaussianSet initial_population(const TrainingFrames& data, const TrainConfig& cfg);

/// Runs the three phases. When `out_dir` is given, writes metrics.csv,
/// growth.csv, alloc_XXXXX.json per allocation event and final.ckpt there
/// (last_good.ckpt on divergence).
TrainResult train(const TrainingFrames& data, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// As train, starting from a given population instead of initial_population.
TrainResult train_from(GaussianSet set, const TrainingFrames& data, const TrainConfig& cfg,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace bsplat
