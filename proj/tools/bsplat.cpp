// Command-line front end: dataset generation, training, compression,
// evaluation and the diagnostic dumps.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "bsplat/allocator.hpp"
#include "bsplat/bytes.hpp"
#include "bsplat/codec.hpp"
#include "bsplat/error.hpp"
#include "bsplat/harness.hpp"
#include "bsplat/importance.hpp"
#include "bsplat/renderer.hpp"
#include "bsplat/synthetic.hpp"
#include "bsplat/trainer.hpp"

namespace fs = std::filesystem;
using namespace bsplat;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

PipelineConfig load_config(const std::string& path) {
  return path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
}

CodecOptions codec_options(const PipelineConfig& cfg, const std::string& enc, const std::string& dec) {
  CodecOptions o;
  o.dynamic_outlier_fraction = cfg.dynamic_outlier_fraction;
  if (!enc.empty() || !dec.empty()) o.external = ExternalVideoCodec{enc, dec};
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-constrained dynamic Gaussian splatting"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config with scene/train/codec sections")->check(CLI::ExistingFile);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Render a synthetic multi-view video dataset");
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<int> gen_cameras, gen_frames, gen_width, gen_height, gen_movers;
  std::optional<double> gen_noise, gen_amplitude;
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--seed", gen_seed);
  gen->add_option("--cameras", gen_cameras);
  gen->add_option("--frames", gen_frames);
  gen->add_option("--width", gen_width);
  gen->add_option("--height", gen_height);
  gen->add_option("--movers", gen_movers);
  gen->add_option("--amplitude", gen_amplitude);
  gen->add_option("--noise", gen_noise);

  // train
  auto* tr = app.add_subcommand("train", "Train a model under a Gaussian budget");
  std::string tr_data, tr_out;
  std::optional<std::size_t> tr_target;
  std::optional<double> tr_tau_init, tr_tau_end;
  std::optional<std::uint64_t> tr_seed;
  std::vector<long> tr_iters;
  tr->add_option("--data", tr_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--n-target", tr_target, "Gaussian budget");
  tr->add_option("--tau-init", tr_tau_init);
  tr->add_option("--tau-end", tr_tau_end);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--iters", tr_iters, "Iterations of the three phases")->expected(3)->delimiter(',');

  // render
  auto* rd = app.add_subcommand("render", "Render one frame of a model");
  std::string rd_model, rd_data, rd_out;
  std::optional<int> rd_view;
  int rd_frame = 0;
  rd->add_option("--model", rd_model, "Checkpoint or compressed stream")->required()->check(CLI::ExistingFile);
  rd->add_option("--data", rd_data, "Dataset directory (for cameras)")->required()->check(CLI::ExistingDirectory);
  rd->add_option("--view", rd_view, "Camera index (default: the held-out view)");
  rd->add_option("--frame", rd_frame);
  rd->add_option("--out", rd_out, "Output .png or .npy")->required();

  // compress / decompress
  auto* cp = app.add_subcommand("compress", "Compress a checkpoint");
  std::string cp_in, cp_out, cp_enc;
  cp->add_option("--checkpoint", cp_in)->required()->check(CLI::ExistingFile);
  cp->add_option("--out", cp_out)->required();
  cp->add_option("--external-video-encoder", cp_enc, "Command template for attribute planes");
  auto* dc = app.add_subcommand("decompress", "Decompress a stream into a checkpoint");
  std::string dc_in, dc_out, dc_dec;
  dc->add_option("--in", dc_in)->required()->check(CLI::ExistingFile);
  dc->add_option("--out", dc_out)->required();
  dc->add_option("--external-video-decoder", dc_dec, "Command template for attribute planes");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a model on the held-out view");
  std::string ev_model, ev_data, ev_json, ev_dec;
  std::size_t ev_target = 0;
  ev->add_option("--model", ev_model, "Checkpoint or compressed stream")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--target", ev_target, "Budget for the count-error ratio");
  ev->add_option("--json", ev_json, "Write the report here");
  ev->add_option("--external-video-decoder", ev_dec);

  // rd-sweep
  auto* sw = app.add_subcommand("rd-sweep", "Rate-distortion sweep over budgets");
  std::string sw_data, sw_out;
  std::vector<std::size_t> sw_targets;
  sw->add_option("--data", sw_data)->required()->check(CLI::ExistingDirectory);
  sw->add_option("--targets", sw_targets, "Comma-separated budgets")->required()->delimiter(',');
  sw->add_option("--out", sw_out)->required();

  // score-dump
  auto* sd = app.add_subcommand("score-dump", "Write per-Gaussian importance cues and scores");
  std::string sd_model, sd_data, sd_out;
  sd->add_option("--model", sd_model)->required()->check(CLI::ExistingFile);
  sd->add_option("--data", sd_data)->required()->check(CLI::ExistingDirectory);
  sd->add_option("--out", sd_out, "CSV path")->required();

  // alloc-plot
  auto* ap = app.add_subcommand("alloc-plot", "Write the motion histogram and threshold of a model");
  std::string ap_model, ap_out;
  ap->add_option("--model", ap_model)->required()->check(CLI::ExistingFile);
  ap->add_option("--out", ap_out, "Output prefix (.dat and .json are appended)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("bsplat"));
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  PipelineConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  }

  try {
    if (*gen) {
      auto spec = cfg.scene;
      if (gen_seed) spec.seed = *gen_seed;
      if (gen_cameras) spec.cameras = *gen_cameras;
      if (gen_frames) spec.frames = *gen_frames;
      if (gen_width) spec.width = *gen_width;
      if (gen_height) spec.height = *gen_height;
      if (gen_movers) spec.movers = *gen_movers;
      if (gen_amplitude) spec.mover_amplitude = *gen_amplitude;
      if (gen_noise) spec.noise = *gen_noise;
      write_scene(generate_scene(spec), gen_out);
      spdlog::info("wrote {} views x {} frames to {}", spec.cameras, spec.frames, gen_out);
    } else if (*tr) {
      auto tc = cfg.train;
      if (tr_target) tc.n_target = *tr_target;
      if (tr_tau_init) tc.tau_init = *tr_tau_init;
      if (tr_tau_end) tc.tau_end = *tr_tau_end;
      if (tr_seed) tc.seed = *tr_seed;
      if (!tr_iters.empty()) tc.phase_iters = {tr_iters[0], tr_iters[1], tr_iters[2]};
      tc.validate();
      const auto frames = TrainingFrames::from_dataset(Dataset::load(tr_data));
      fs::create_directories(tr_out);
      write_text(fs::path(tr_out) / "config.json", tc.to_json());
      const auto start = std::chrono::steady_clock::now();
      const auto result = train(frames, tc, fs::path(tr_out));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      spdlog::info("trained {} Gaussians ({} static, {} dynamic) for target {} in {:.1f} s", result.set.size(),
                   result.set.n_static(), result.set.n_dynamic(), tc.n_target, secs);
    } else if (*rd) {
      const auto model = load_model(rd_model);
      const auto ds = Dataset::load(rd_data);
      const int view = rd_view.value_or(ds.held_out_view);
      if (view < 0 || view >= static_cast<int>(ds.view_count()) || rd_frame < 0 || rd_frame >= ds.frame_count)
        throw InvalidArgument("view or frame out of range");
      const auto img = render_display(model.set, ds.view(view, rd_frame), cfg.train.background);
      if (fs::path(rd_out).extension() == ".npy")
        write_npy(rd_out, img);
      else
        write_png(rd_out, img);
    } else if (*cp) {
      const auto set = load_checkpoint(cp_in);
      const auto stream = compress(set, codec_options(cfg, cp_enc, ""));
      write_file(cp_out, stream);
      const auto raw = fs::file_size(cp_in);
      spdlog::info("{} -> {} bytes ({:.1f}% of the checkpoint)", raw, stream.size(),
                   100.0 * static_cast<double>(stream.size()) / static_cast<double>(raw));
    } else if (*dc) {
      save_checkpoint(decompress(read_file(dc_in), codec_options(cfg, "", dc_dec)), dc_out);
    } else if (*ev) {
      const auto model = load_model(ev_model, codec_options(cfg, "", ev_dec));
      const auto held = HeldOutFrames::from_dataset(Dataset::load(ev_data));
      EvalOptions eo;
      eo.target = ev_target;
      eo.background = cfg.train.background;
      if (model.compressed) eo.compressed_bytes = model.file_bytes;
      else eo.checkpoint_bytes = model.file_bytes;
      const auto report = evaluate(model.set, held, eo);
      std::printf("psnr %.4f ssim %.4f count %zu (static %zu, dynamic %zu) checkpoint %zu B compressed %zu B",
                  report.mean_psnr, report.mean_ssim, report.count, report.n_static, report.n_dynamic,
                  report.checkpoint_bytes, report.compressed_bytes);
      if (report.target > 0) std::printf(" count-error %.4f", report.count_error);
      std::printf("\n");
      if (!ev_json.empty()) write_text(ev_json, report.to_json());
    } else if (*sw) {
      const auto ds = Dataset::load(sw_data);
      const auto rows = rd_sweep(TrainingFrames::from_dataset(ds), HeldOutFrames::from_dataset(ds), cfg.train,
                                 sw_targets, sw_out, codec_options(cfg, "", ""));
      for (const auto& r : rows)
        std::printf("target %zu count %zu bytes %zu psnr %.4f ssim %.4f\n", r.target, r.count, r.bytes, r.psnr, r.ssim);
    } else if (*sd) {
      const auto model = load_model(sd_model);
      const auto frames = TrainingFrames::from_dataset(Dataset::load(sd_data));
      auto scorer = cfg.train.scorer;
      scorer.lambda_ssim = cfg.train.lambda_ssim;
      RenderOptions ro;
      ro.background = cfg.train.background;
      const auto cues = compute_cues(model.set, frames.views, frames.images, scorer, ro);
      const auto scores = fuse(cues, scorer);
      std::FILE* f = std::fopen(sd_out.c_str(), "wb");
      if (!f) throw IoError("cannot write " + sd_out);
      std::fprintf(f, "index,kind,grad,alpha_max,inv_depth,max_eig,motion,residual,area,inv_var,score\n");
      for (std::size_t i = 0; i < cues.size(); ++i) {
        const auto& c = cues[i];
        std::fprintf(f, "%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", i,
                     model.set.is_dynamic(i) ? "dynamic" : "static", c.geom[0], c.geom[1], c.geom[2], c.geom[3],
                     c.geom[4], c.perceptual[0], c.perceptual[1], c.perceptual[2], scores[i]);
      }
      std::fclose(f);
    } else if (*ap) {
      auto set = load_model(ap_model).set;
      const auto report = allocate(set);
      const auto& h = report.histogram;
      std::FILE* f = std::fopen((ap_out + ".dat").c_str(), "wb");
      if (!f) throw IoError("cannot write " + ap_out + ".dat");
      std::fprintf(f, "# bin_center raw smoothed\n");
      for (std::size_t b = 0; b < h.raw.size(); ++b)
        std::fprintf(f, "%.9g %.9g %.9g\n", h.lo + (static_cast<double>(b) + 0.5) * h.bin_width(), h.raw[b],
                     h.smoothed[b]);
      std::fclose(f);
      write_text(ap_out + ".json", report.to_json());
      spdlog::info("tau {:.6g}{}: {} static, {} dynamic", report.threshold.tau,
                   report.threshold.fallback ? " (fallback quantile)" : "", report.n_static, report.n_dynamic);
    }
  } catch (const InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return 0;
}
