#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bsplat/codec.hpp"
#include "bsplat/image.hpp"
#include "bsplat/scene_model.hpp"
#include "bsplat/synthetic.hpp"
#include "bsplat/trainer.hpp"

namespace bsplat {

/// Every frame of a dataset's held-out view.
struct HeldOutFrames {
  std::vector<CameraView> views;
  std::vector<ImageBuffer> images;

  /// Throws IoError when a frame is missing.
  static HeldOutFrames from_dataset(const Dataset& ds);
  static HeldOutFrames from_scene(const SyntheticScene& scene);
};

/// Inference render with radiance clamped to [0, 1], as a display would.
ImageBuffer render_display(const GaussianSet& set, const CameraView& view, const Vec3d& background = {});

struct FrameScore {
  int frame = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<FrameScore> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::size_t checkpoint_bytes = 0;
  std::size_t compressed_bytes = 0;
  std::size_t count = 0;
  std::size_t n_static = 0;
  std::size_t n_dynamic = 0;
  std::size_t target = 0;
  double count_error = 0.0;  ///< |count - target| / target, 0 without a target

  std::string to_json() const;
};

struct EvalOptions {
  std::size_t target = 0;
  /// Sizes of the artifacts under evaluation; measured from the set when unset.
  std::optional<std::size_t> checkpoint_bytes;
  std::optional<std::size_t> compressed_bytes;
  Vec3d background;
};

/// Scores a model on the held-out view. Throws InvalidArgument when there
/// are no frames.
EvalReport evaluate(const GaussianSet& set, const HeldOutFrames& frames, const EvalOptions& options = {});

/// A checkpoint or a compressed stream, told apart by its magic.
struct LoadedModel {
  GaussianSet set;
  std::size_t file_bytes = 0;
  bool compressed = false;
};
LoadedModel load_model(const std::string& path, const CodecOptions& codec = {});

struct RdRow {
  std::size_t target = 0;
  std::size_t count = 0;
  std::size_t bytes = 0;  ///< compressed stream size
  double psnr = 0.0;      ///< of the decompressed model
  double ssim = 0.0;
  double seconds = 0.0;  ///< wall time of the leg, not written to the CSV
};

void write_rd_csv(const std::filesystem::path& path, const std::vector<RdRow>& rows);
/// Whitespace-separated columns with a commented header, for gnuplot.
void write_rd_plot_data(const std::filesystem::path& path, const std::vector<RdRow>& rows);

/// Trains, compresses, decompresses and evaluates one leg per target, in
/// order. rd.csv and rd.dat under `out_dir` are rewritten after every leg,
/// so a failing leg leaves the finished rows behind. Each leg's training
/// artifacts go to out_dir/n<target>.
std::vector<RdRow> rd_sweep(const TrainingFrames& train_frames, const HeldOutFrames& held_out,
                            const TrainConfig& base, const std::vector<std::size_t>& targets,
                            const std::filesystem::path& out_dir, const CodecOptions& codec = {});

/// One JSON file with optional "scene", "train" and "codec" sections.
struct PipelineConfig {
  SyntheticSceneSpec scene;
  TrainConfig train;
  double dynamic_outlier_fraction = 0.05;

  /// Throws InvalidArgument on unknown keys or bad values.
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
};

}  // namespace bsplat
