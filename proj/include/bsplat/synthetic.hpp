#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bsplat/image.hpp"
#include "bsplat/scene_model.hpp"
#include "bsplat/trainer.hpp"

namespace bsplat {

/// Analytic test scene: a checkered floor, static boxes and spheres, and
/// spheres moving sinusoidally, seen by a ring of cameras.
struct SyntheticSceneSpec {
  double room_extent = 2.0;  ///< floor half-size
  int boxes = 3;
  int spheres = 3;
  int movers = 1;
  double mover_amplitude = 0.8;
  /// Normalized time units; the default sweeps half a cycle, one way across.
  double mover_period = 2.0;
  int cameras = 16;
  double camera_radius = 4.5;
  double camera_height = 2.5;
  int width = 64;
  int height = 48;
  int frames = 6;
  double noise = 0.0;  ///< std of additive pixel noise
  std::uint64_t seed = 1;

  /// Throws InvalidArgument unless cameras >= 3, frames >= 2 and sizes are sane.
  void validate() const;
};

struct SyntheticScene {
  Dataset dataset;  ///< root left empty until written
  /// images[v][f]
  std::vector<std::vector<ImageBuffer>> images;
};

SyntheticScene generate_scene(const SyntheticSceneSpec& spec);

/// Training views of an in-memory scene (held-out view excluded).
TrainingFrames training_frames(const SyntheticScene& scene);

/// Writes cameras.json and frames/vVV_tTTTT.png under `root`.
Dataset write_scene(const SyntheticScene& scene, const std::filesystem::path& root);

}  // namespace bsplat
