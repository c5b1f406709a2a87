#include "bsplat/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "bsplat/bytes.hpp"
#include "bsplat/error.hpp"
#include "bsplat/loss.hpp"
#include "bsplat/renderer.hpp"

namespace bsplat {

using json = nlohmann::json;

HeldOutFrames HeldOutFrames::from_dataset(const Dataset& ds) {
  HeldOutFrames h;
  for (int f = 0; f < ds.frame_count; ++f) {
    const auto path = ds.frame_path(ds.held_out_view, f);
    if (!std::filesystem::exists(path)) throw IoError("missing held-out frame " + path.string());
    h.views.push_back(ds.view(ds.held_out_view, f));
    h.images.push_back(read_png(path.string()));
    const auto& in = h.views.back().intrinsics;
    if (h.images.back().width != in.width || h.images.back().height != in.height)
      throw FormatError(path.string() + " does not match the camera resolution");
  }
  return h;
}

HeldOutFrames HeldOutFrames::from_scene(const SyntheticScene& scene) {
  HeldOutFrames h;
  const auto& ds = scene.dataset;
  for (int f = 0; f < ds.frame_count; ++f) {
    h.views.push_back(ds.view(ds.held_out_view, f));
    h.images.push_back(scene.images[static_cast<std::size_t>(ds.held_out_view)][static_cast<std::size_t>(f)]);
  }
  return h;
}

ImageBuffer render_display(const GaussianSet& set, const CameraView& view, const Vec3d& background) {
  RenderOptions opts;
  opts.background = background;
  auto img = render(set, view, view.time, false, opts).image;
  for (float& x : img.data) x = std::clamp(x, 0.0f, 1.0f);
  return img;
}

EvalReport evaluate(const GaussianSet& set, const HeldOutFrames& frames, const EvalOptions& options) {
  if (frames.views.empty()) throw InvalidArgument("evaluation needs at least one held-out frame");
  if (frames.views.size() != frames.images.size()) throw InvalidArgument("held-out views and images differ in count");
  EvalReport r;
  for (std::size_t k = 0; k < frames.views.size(); ++k) {
    const auto pred = render_display(set, frames.views[k], options.background);
    FrameScore s;
    s.frame = frames.views[k].frame;
    s.psnr = psnr(pred, frames.images[k]);
    s.ssim = ssim(pred, frames.images[k]);
    r.mean_psnr += s.psnr;
    r.mean_ssim += s.ssim;
    r.frames.push_back(s);
  }
  r.mean_psnr /= static_cast<double>(r.frames.size());
  r.mean_ssim /= static_cast<double>(r.frames.size());
  r.checkpoint_bytes = options.checkpoint_bytes ? *options.checkpoint_bytes : serialize_checkpoint(set).size();
  r.compressed_bytes = options.compressed_bytes ? *options.compressed_bytes : compress(set).size();
  r.count = set.size();
  r.n_static = set.n_static();
  r.n_dynamic = set.n_dynamic();
  r.target = options.target;
  if (r.target > 0)
    r.count_error = std::abs(static_cast<double>(r.count) - static_cast<double>(r.target)) / static_cast<double>(r.target);
  return r;
}

std::string EvalReport::to_json() const {
  json j;
  j["mean_psnr"] = mean_psnr;
  j["mean_ssim"] = mean_ssim;
  j["checkpoint_bytes"] = checkpoint_bytes;
  j["compressed_bytes"] = compressed_bytes;
  j["count"] = count;
  j["n_static"] = n_static;
  j["n_dynamic"] = n_dynamic;
  j["target"] = target;
  j["count_error"] = count_error;
  j["frames"] = json::array();
  for (const auto& f : frames) j["frames"].push_back({{"frame", f.frame}, {"psnr", f.psnr}, {"ssim", f.ssim}});
  return j.dump(2);
}

LoadedModel load_model(const std::string& path, const CodecOptions& codec) {
  const auto bytes = read_file(path);
  LoadedModel m;
  m.file_bytes = bytes.size();
  m.compressed = bytes.size() >= 4 && std::memcmp(bytes.data(), "CDGC", 4) == 0;
  m.set = m.compressed ? decompress(bytes, codec) : deserialize_checkpoint(bytes);
  return m;
}

void write_rd_csv(const std::filesystem::path& path, const std::vector<RdRow>& rows) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  std::fprintf(f, "target,count,bytes,psnr,ssim\n");
  for (const auto& r : rows) std::fprintf(f, "%zu,%zu,%zu,%.6f,%.6f\n", r.target, r.count, r.bytes, r.psnr, r.ssim);
  std::fclose(f);
}

void write_rd_plot_data(const std::filesystem::path& path, const std::vector<RdRow>& rows) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  std::fprintf(f, "# target count bytes psnr ssim\n");
  for (const auto& r : rows) std::fprintf(f, "%zu %zu %zu %.6f %.6f\n", r.target, r.count, r.bytes, r.psnr, r.ssim);
  std::fclose(f);
}

std::vector<RdRow> rd_sweep(const TrainingFrames& train_frames, const HeldOutFrames& held_out,
                            const TrainConfig& base, const std::vector<std::size_t>& targets,
                            const std::filesystem::path& out_dir, const CodecOptions& codec) {
  if (targets.size() < 2) throw InvalidArgument("a rate-distortion sweep needs at least two targets");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<RdRow> rows;
  for (std::size_t target : targets) {
    TrainConfig cfg = base;
    cfg.n_target = target;
    const auto leg = out_dir / ("n" + std::to_string(target));
    std::filesystem::create_directories(leg, ec);
    spdlog::info("rd-sweep: training target {}", target);
    const auto start = std::chrono::steady_clock::now();
    const auto trained = train(train_frames, cfg, leg);
    const auto stream = compress(trained.set, codec);
    write_file((leg / "model.cdgc").string(), stream);
    const auto decoded = decompress(stream, codec);
    EvalOptions eo;
    eo.target = target;
    eo.compressed_bytes = stream.size();
    eo.background = cfg.background;
    const auto report = evaluate(decoded, held_out, eo);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    rows.push_back({target, decoded.size(), stream.size(), report.mean_psnr, report.mean_ssim, elapsed.count()});
    write_rd_csv(out_dir / "rd.csv", rows);
    write_rd_plot_data(out_dir / "rd.dat", rows);
    spdlog::info("rd-sweep: target {} count {} bytes {} psnr {:.3f}", target, decoded.size(), stream.size(),
                 report.mean_psnr);
  }
  return rows;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw InvalidArgument("unknown key '" + k + "' in " + where);
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  check_keys(j, {"scene", "train", "codec"}, "config");
  PipelineConfig c;
  try {
    if (j.contains("scene")) {
      const auto& s = j.at("scene");
      check_keys(s,
                 {"room_extent", "boxes", "spheres", "movers", "mover_amplitude", "mover_period", "cameras",
                  "camera_radius", "camera_height", "width", "height", "frames", "noise", "seed"},
                 "scene");
      take(s, "room_extent", c.scene.room_extent);
      take(s, "boxes", c.scene.boxes);
      take(s, "spheres", c.scene.spheres);
      take(s, "movers", c.scene.movers);
      take(s, "mover_amplitude", c.scene.mover_amplitude);
      take(s, "mover_period", c.scene.mover_period);
      take(s, "cameras", c.scene.cameras);
      take(s, "camera_radius", c.scene.camera_radius);
      take(s, "camera_height", c.scene.camera_height);
      take(s, "width", c.scene.width);
      take(s, "height", c.scene.height);
      take(s, "frames", c.scene.frames);
      take(s, "noise", c.scene.noise);
      take(s, "seed", c.scene.seed);
    }
    if (j.contains("codec")) {
      const auto& k = j.at("codec");
      check_keys(k, {"dynamic_outlier_fraction"}, "codec");
      take(k, "dynamic_outlier_fraction", c.dynamic_outlier_fraction);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train").dump());
  c.scene.validate();
  if (!(c.dynamic_outlier_fraction >= 0.0 && c.dynamic_outlier_fraction < 1.0))
    throw InvalidArgument("codec.dynamic_outlier_fraction must be in [0, 1)");
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace bsplat
