#include "bsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

namespace bsplat {

using nlohmann::json;

void TrainConfig::validate() const {
  for (long n : phase_iters)
    if (n < 1) throw InvalidArgument("every phase needs at least one iteration");
  for (double l : {lambda_ssim, lambda_b, lambda_r})
    if (!(l >= 0.0) || !std::isfinite(l)) throw InvalidArgument("loss weights must be finite and non-negative");
  if (lambda_ssim > 1.0) throw InvalidArgument("lambda_ssim must not exceed 1");
  if (densify_interval < 1) throw InvalidArgument("densify interval must be positive");
  if (n_target < 1) throw InvalidArgument("n_target must be at least 1");
  if (n_init > n_target) throw InvalidArgument("n_init must not exceed n_target");
  if (keyframes < 2) throw InvalidArgument("at least two keyframes are required");
  if (sh_degree != 0 && sh_degree != 1) throw InvalidArgument("sh_degree must be 0 or 1");
  lr.validate();
  scorer.validate();
  budget().validate();
}

std::size_t TrainConfig::initial_count() const {
  if (n_init > 0) return n_init;
  const double a = static_cast<double>(n_target / 2);
  const double b = 4.0 * std::pow(static_cast<double>(n_target), 0.9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::min(a, b)));
}

int TrainConfig::densify_events() const {
  return static_cast<int>(std::max<long>(1, phase_iters[1] / densify_interval));
}

BudgetConfig TrainConfig::budget() const {
  BudgetConfig b;
  b.n_target = n_target;
  b.tau_init = tau_init;
  b.tau_end = tau_end;
  b.k_start = phase_iters[0];
  b.k_end = phase_iters[0] + phase_iters[1];
  b.lambda_b = lambda_b;
  return b;
}

ScheduleConfig TrainConfig::schedule() const {
  ScheduleConfig s;
  s.n_init = initial_count();
  s.n_target = n_target;
  s.total_steps = densify_events();
  s.split_threshold = split_threshold;
  s.densify_interval = static_cast<int>(densify_interval);
  return s;
}

namespace {

json lr_json(const LearningRates& lr) {
  return {{"position", lr.position},   {"rotation", lr.rotation},     {"log_scale", lr.log_scale},
          {"opacity", lr.opacity},     {"color", lr.color},           {"importance", lr.importance},
          {"translation", lr.translation}, {"window", lr.window}};
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw InvalidArgument("unknown " + where + " key '" + k + "'");
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  check_keys(j,
             {"phase_iters", "lambda_ssim", "lambda_b", "lambda_r", "lr", "densify_interval", "seed", "n_target",
              "n_init", "tau_init", "tau_end", "keyframes", "sh_degree", "split_threshold", "scorer", "background"},
             "config");
  TrainConfig c;
  try {
    take(j, "phase_iters", c.phase_iters);
    take(j, "lambda_ssim", c.lambda_ssim);
    take(j, "lambda_b", c.lambda_b);
    take(j, "lambda_r", c.lambda_r);
    take(j, "densify_interval", c.densify_interval);
    take(j, "seed", c.seed);
    take(j, "n_target", c.n_target);
    take(j, "n_init", c.n_init);
    take(j, "tau_init", c.tau_init);
    take(j, "tau_end", c.tau_end);
    take(j, "keyframes", c.keyframes);
    take(j, "sh_degree", c.sh_degree);
    take(j, "split_threshold", c.split_threshold);
    if (j.contains("background")) {
      const auto b = j.at("background").get<std::array<double, 3>>();
      c.background = {b[0], b[1], b[2]};
    }
    if (j.contains("lr")) {
      const auto& l = j.at("lr");
      check_keys(l, {"position", "rotation", "log_scale", "opacity", "color", "importance", "translation", "window"},
                 "lr");
      take(l, "position", c.lr.position);
      take(l, "rotation", c.lr.rotation);
      take(l, "log_scale", c.lr.log_scale);
      take(l, "opacity", c.lr.opacity);
      take(l, "color", c.lr.color);
      take(l, "importance", c.lr.importance);
      take(l, "translation", c.lr.translation);
      take(l, "window", c.lr.window);
    }
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      check_keys(s, {"w1", "w2", "lambda_gm", "sample_views", "exact_loo"}, "scorer");
      take(s, "w1", c.scorer.w1);
      take(s, "w2", c.scorer.w2);
      take(s, "lambda_gm", c.scorer.lambda_gm);
      take(s, "sample_views", c.scorer.sample_views);
      take(s, "exact_loo", c.scorer.exact_loo);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.scorer.lambda_ssim = c.lambda_ssim;
  c.validate();
  return c;
}

std::string TrainConfig::to_json() const {
  json j;
  j["phase_iters"] = phase_iters;
  j["lambda_ssim"] = lambda_ssim;
  j["lambda_b"] = lambda_b;
  j["lambda_r"] = lambda_r;
  j["lr"] = lr_json(lr);
  j["densify_interval"] = densify_interval;
  j["seed"] = seed;
  j["n_target"] = n_target;
  j["n_init"] = n_init;
  j["tau_init"] = tau_init;
  j["tau_end"] = tau_end;
  j["keyframes"] = keyframes;
  j["sh_degree"] = sh_degree;
  j["split_threshold"] = split_threshold;
  j["scorer"] = {{"w1", scorer.w1},
                 {"w2", scorer.w2},
                 {"lambda_gm", scorer.lambda_gm},
                 {"sample_views", scorer.sample_views},
                 {"exact_loo", scorer.exact_loo}};
  j["background"] = {background.x, background.y, background.z};
  return j.dump(2);
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Phase phase_at(long iteration, const TrainConfig& cfg) {
  if (iteration < cfg.phase_iters[0]) return Phase::WarmUp;
  if (iteration < cfg.phase_iters[0] + cfg.phase_iters[1]) return Phase::Budget;
  return Phase::FineTune;
}

namespace {

std::size_t regularizer_terms(const GaussianSet& set) {
  const std::size_t per = 3 + color_coeff_count(set.sh_degree());
  return set.size() * per + set.n_dynamic() * 3 * static_cast<std::size_t>(set.keyframes());
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double regularizer(const GaussianSet& set) {
  const std::size_t terms = regularizer_terms(set);
  if (terms == 0) return 0.0;
  double s = 0.0;
  const std::size_t nc = color_coeff_count(set.sh_degree());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& c = set.core(i);
    for (int k = 0; k < 3; ++k) s += std::abs(static_cast<double>(c.log_scale[k]));
    for (std::size_t k = 0; k < nc; ++k) s += std::abs(static_cast<double>(c.color[k]));
    if (set.is_dynamic(i)) {
      const auto& d = set.dynamic_extras(i);
      const Vec3d mean = trajectory_mean(d);
      for (const auto& p : d.traj_position)
        for (int k = 0; k < 3; ++k) s += std::abs(static_cast<double>(p[k]) - mean[k]);
    }
  }
  return s / static_cast<double>(terms);
}

void regularizer_grad(const GaussianSet& set, double weight, GradientSet& grad) {
  const std::size_t terms = regularizer_terms(set);
  if (terms == 0 || weight == 0.0) return;
  const double w = weight / static_cast<double>(terms);
  const std::size_t nc = color_coeff_count(set.sh_degree());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& c = set.core(i);
    auto& g = grad.g[i];
    for (int k = 0; k < 3; ++k) g.log_scale[k] += w * sign(c.log_scale[k]);
    for (std::size_t k = 0; k < nc; ++k) g.color[k] += w * sign(c.color[k]);
    if (set.is_dynamic(i)) {
      const auto& d = set.dynamic_extras(i);
      const Vec3d mean = trajectory_mean(d);
      const double K = static_cast<double>(d.traj_position.size());
      for (int k = 0; k < 3; ++k) {
        double mean_sign = 0.0;
        for (const auto& p : d.traj_position) mean_sign += sign(p[k] - mean[k]);
        mean_sign /= K;
        for (std::size_t j = 0; j < d.traj_position.size(); ++j)
          g.traj_position[j][k] += w * (sign(d.traj_position[j][k] - mean[k]) - mean_sign);
      }
    }
  }
}

TotalLoss total_loss(const LossBreakdown& render, double n_p, const TrainConfig& cfg, const GaussianSet& set,
                     Phase phase) {
  TotalLoss t;
  t.render = render.render_loss;
  t.budget = budget_loss(n_p, static_cast<double>(cfg.n_target)).loss;
  t.reg = regularizer(set);
  t.total = t.render;
  if (phase == Phase::Budget) t.total += cfg.lambda_b * t.budget;
  if (phase != Phase::WarmUp) t.total += cfg.lambda_r * t.reg;
  return t;
}

double TrainingFrames::extent() const {
  const Vec3d d = scene_max - scene_min;
  return 0.5 * norm(d);
}

TrainingFrames TrainingFrames::from_dataset(const Dataset& ds) {
  TrainingFrames tf;
  tf.scene_min = ds.scene_min;
  tf.scene_max = ds.scene_max;
  for (int v : ds.training_views())
    for (int f = 0; f < ds.frame_count; ++f) {
      const auto path = ds.frame_path(v, f);
      if (!std::filesystem::exists(path)) throw IoError("missing frame " + path.string());
      tf.views.push_back(ds.view(v, f));
      tf.images.push_back(read_png(path.string()));
      const auto& in = tf.views.back().intrinsics;
      if (tf.images.back().width != in.width || tf.images.back().height != in.height)
        throw FormatError(path.string() + " does not match the camera resolution");
    }
  if (tf.views.empty()) throw InvalidArgument("dataset has no training views");
  return tf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  std::fprintf(f, "iteration,l1,ssim,budget,reg,N_p,n_static,n_dynamic\n");
  for (const auto& r : rows)
    std::fprintf(f, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%zu,%zu\n", r.iteration, r.l1, r.ssim, r.budget, r.reg, r.n_p,
                 r.n_static, r.n_dynamic);
  std::fclose(f);
}

GaussianSet initial_population(const TrainingFrames& data, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.initial_count();
  GaussianSet set(cfg.keyframes, cfg.sh_degree);
  std::mt19937_64 rng(cfg.seed);
  const Vec3d lo = data.scene_min, hi = data.scene_max;
  const Vec3d size = hi - lo;
  const double volume = std::max(1e-12, size.x * size.y * size.z);
  const double spacing = std::cbrt(volume / static_cast<double>(n));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    GaussianCore c;
    c.position = Vec3d{lo.x + u(rng) * size.x, lo.y + u(rng) * size.y, lo.z + u(rng) * size.z}.cast<float>();
    const float s = static_cast<float>(std::log(0.5 * spacing));
    c.log_scale = {s, s, s};
    c.opacity_logit = 0.0f;
    for (int k = 0; k < 3; ++k) c.color[static_cast<std::size_t>(k)] = 0.5f;
    c.importance_raw = 0.5f;
    c.gate_activation = 1.0f;
    set.add_static(c);
  }
  return set;
}

namespace {

constexpr std::uint64_t kEventSeedStride = 0x9e3779b97f4a7c15ULL;

/// M = 1/2 + S/2: a freshly scored population starts fully admitted by the
/// gate, ordered by its fused score.
float importance_from_score(double s) { return static_cast<float>(0.5 + 0.5 * std::clamp(s, 0.0, 1.0)); }

void refresh_gates(GaussianSet& set, double tau) {
  for (auto& c : set.cores()) c.gate_activation = static_cast<float>(gate(c.importance_raw, tau));
}

void add_position_grads(const GaussianSet& set, const GradientSet& grad, std::vector<Vec3d>& acc) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.is_dynamic(i))
      for (const auto& p : grad.g[i].traj_position) acc[i] += p;
    else
      acc[i] += grad.g[i].position;
  }
}

class Run {
 public:
  Run(GaussianSet set, const TrainingFrames& data, const TrainConfig& cfg,
      const std::optional<std::filesystem::path>& out)
      : data_(data), cfg_(cfg), out_(out), rng_(cfg.seed ^ 0xa5a5a5a5ULL), set_(std::move(set)) {
    opts_.background = cfg.background;
    extent_ = data.extent();
    schedule_ = cfg.schedule();
    schedule_.n_init = std::min(set_.size(), cfg.n_target);
    budget_ = cfg.budget();
  }

  TrainResult run() {
    if (out_) std::filesystem::create_directories(*out_);
    const long p0 = cfg_.phase_iters[0], p1 = cfg_.phase_iters[1];
    pos_acc_.assign(set_.size(), Vec3d{});
    for (long k = 0; k < cfg_.total_iters(); ++k) {
      const Phase phase = phase_at(k, cfg_);
      if (k == p0) enter_budget_phase(k);
      if (k == p0 + p1) enter_fine_tune(k);
      iterate(k, phase);
      if (phase == Phase::Budget) {
        const long m = k - p0 + 1;
        const int j = static_cast<int>(m / cfg_.densify_interval);
        if (m % cfg_.densify_interval == 0 && j <= schedule_.total_steps) densify_event(k, j);
      }
    }
    TrainResult r;
    r.set = std::move(set_);
    r.history = std::move(history_);
    r.growth = std::move(growth_);
    r.allocations = std::move(allocations_);
    if (out_) {
      write_metrics_csv(*out_ / "metrics.csv", r.history);
      write_growth_csv((*out_ / "growth.csv").string(), r.growth);
      save_checkpoint(r.set, (*out_ / "final.ckpt").string());
    }
    return r;
  }

 private:
  void diverge(long k, const std::string& why) {
    if (out_) {
      save_checkpoint(last_good_, (*out_ / "last_good.ckpt").string());
      write_metrics_csv(*out_ / "metrics.csv", history_);
    }
    throw TrainingDiverged("training diverged at iteration " + std::to_string(k) + ": " + why, last_good_, k);
  }

  std::vector<double> score(long k) {
    std::uniform_int_distribution<std::size_t> pick(0, data_.views.size() - 1);
    std::vector<CameraView> views;
    std::vector<ImageBuffer> gts;
    for (int s = 0; s < cfg_.scorer.sample_views; ++s) {
      const std::size_t f = pick(rng_);
      views.push_back(data_.views[f]);
      gts.push_back(data_.images[f]);
    }
    ScorerConfig sc = cfg_.scorer;
    sc.lambda_ssim = cfg_.lambda_ssim;
    try {
      return fuse(compute_cues(set_, views, gts, sc, opts_, pos_acc_), sc);
    } catch (const NumericError& e) {
      diverge(k, e.what());
    }
    return {};
  }

  void enter_budget_phase(long k) {
    const auto s = score(k);
    for (std::size_t i = 0; i < set_.size(); ++i) set_.core(i).importance_raw = importance_from_score(s[i]);
    refresh_gates(set_, anneal_temperature(k, budget_));
    growth_.push_back({k, set_.n_static(), set_.n_dynamic(), set_.size(), step_target(0, schedule_)});
  }

  void densify_event(long k, int j) {
    const auto s = score(k);
    for (std::size_t i = 0; i < set_.size(); ++i) set_.core(i).importance_raw = importance_from_score(s[i]);

    AllocationReport report = allocate(set_);
    if (out_) {
      char name[32];
      std::snprintf(name, sizeof(name), "alloc_%05ld.json", k);
      std::ofstream f(*out_ / name);
      f << report.to_json() << '\n';
    }
    allocations_.push_back(std::move(report));

    const std::size_t n_j = step_target(j, schedule_);
    std::size_t survivors = 0;
    for (const auto& c : set_.cores())
      survivors += c.opacity() >= kPruneOpacityFloor && c.gate_activation >= kPruneGateFloor;
    const std::uint64_t seed = cfg_.seed + kEventSeedStride * static_cast<std::uint64_t>(j + 1);
    const std::size_t excess = survivors > n_j ? survivors - n_j : 0;
    PruneResult pr = prune(set_, s, excess, seed);
    if (pr.set.size() < n_j) {
      std::vector<double> kept_s;
      std::vector<Vec3d> kept_g;
      for (std::size_t i : pr.kept) {
        kept_s.push_back(s[i]);
        kept_g.push_back(pos_acc_[i]);
      }
      if (pr.set.empty()) diverge(k, "every Gaussian was culled");
      DensifyResult dr =
          densify(pr.set, kept_s, n_j - pr.set.size(), seed ^ 0xd1b54a32d192ed03ULL, extent_, cfg_.split_threshold, kept_g);
      set_ = std::move(dr.set);
    } else {
      set_ = std::move(pr.set);
    }
    adam_.retain(set_);
    pos_acc_.assign(set_.size(), Vec3d{});
    growth_.push_back({k, set_.n_static(), set_.n_dynamic(), set_.size(), n_j});
    spdlog::debug("event {} at {}: {} Gaussians ({} dynamic), target {}", j, k, set_.size(), set_.n_dynamic(), n_j);
  }

  void enter_fine_tune(long k) {
    refresh_gates(set_, cfg_.tau_end);
    auto b = binarize(set_, 0.5);
    auto pr = prune(b.set, std::vector<double>(b.set.size(), 1.0), 0, cfg_.seed);
    set_ = std::move(pr.set);
    for (auto& c : set_.cores()) c.gate_activation = 1.0f;
    adam_.retain(set_);
    growth_.push_back({k, set_.n_static(), set_.n_dynamic(), set_.size(), cfg_.n_target});
  }

  void iterate(long k, Phase phase) {
    if (phase == Phase::Budget) refresh_gates(set_, anneal_temperature(k, budget_));
    std::uniform_int_distribution<std::size_t> pick(0, data_.views.size() - 1);
    const std::size_t f = pick(rng_);
    const auto& view = data_.views[f];
    LossAndGrad lg;
    try {
      lg = render_and_backward(set_, view, view.time, data_.images[f], cfg_.lambda_ssim, opts_);
    } catch (const NumericError& e) {
      diverge(k, e.what());
    }
    if (!std::isfinite(lg.loss.render_loss)) diverge(k, "non-finite render loss");
    last_good_ = set_;

    const double n_p = proxy_count(set_);
    const TotalLoss tl = total_loss(lg.loss, n_p, cfg_, set_, phase);
    if (!std::isfinite(tl.total)) diverge(k, "non-finite total loss");

    GradientSet& grad = lg.grad;
    if (phase != Phase::WarmUp) regularizer_grad(set_, cfg_.lambda_r, grad);
    LearningRates lr = cfg_.lr;
    if (phase == Phase::Budget) {
      const double tau = anneal_temperature(k, budget_);
      const double db = cfg_.lambda_b * budget_loss(n_p, static_cast<double>(cfg_.n_target)).dloss_dnp;
      for (std::size_t i = 0; i < set_.size(); ++i)
        grad.g[i].importance = (grad.g[i].gate + db) * gate_derivative(set_.core(i).importance_raw, tau);
    } else {
      lr.importance = 0.0;
    }
    if (phase != Phase::FineTune) add_position_grads(set_, grad, pos_acc_);
    adam_.step(set_, grad, lr, extent_);
    for (auto& c : set_.cores()) c.importance_raw = std::clamp(c.importance_raw, 0.0f, 1.0f);

    MetricRow row;
    row.iteration = k;
    row.l1 = lg.loss.l1;
    row.ssim = 1.0 - lg.loss.ssim_loss;
    row.budget = phase == Phase::Budget ? tl.budget : 0.0;
    row.reg = tl.reg;
    row.n_p = n_p;
    row.n_static = set_.n_static();
    row.n_dynamic = set_.n_dynamic();
    history_.push_back(row);
  }

  const TrainingFrames& data_;
  const TrainConfig& cfg_;
  std::optional<std::filesystem::path> out_;
  std::mt19937_64 rng_;
  RenderOptions opts_;
  double extent_ = 1.0;
  ScheduleConfig schedule_;
  BudgetConfig budget_;
  GaussianSet set_;
  GaussianSet last_good_;
  Adam adam_;
  std::vector<Vec3d> pos_acc_;
  std::vector<MetricRow> history_;
  std::vector<GrowthEvent> growth_;
  std::vector<AllocationReport> allocations_;
};

}  // namespace

TrainResult train_from(GaussianSet set, const TrainingFrames& data, const TrainConfig& cfg,
                       const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (data.views.empty() || data.views.size() != data.images.size())
    throw InvalidArgument("training needs one image per training view");
  if (set.empty()) throw InvalidArgument("training needs a non-empty initial population");
  if (set.keyframes() != cfg.keyframes || set.sh_degree() != cfg.sh_degree)
    throw InvalidArgument("initial population does not match keyframes / sh_degree");
  if (cfg.n_target < 64) spdlog::warn("n_target {} is below 64; expect a degenerate scene", cfg.n_target);
  Run run(std::move(set), data, cfg, out_dir);
  return run.run();
}

TrainResult train(const TrainingFrames& data, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir) {
  return train_from(initial_population(data, cfg), data, cfg, out_dir);
}

}  // namespace bsplat
