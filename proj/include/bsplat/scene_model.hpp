#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bsplat/math.hpp"

namespace bsplat {

enum class Kind : std::uint8_t { Static = 0, Dynamic = 1 };

/// Number of color coefficients per Gaussian for a given SH degree.
constexpr std::size_t color_coeff_count(int sh_degree) { return sh_degree == 0 ? 3 : 12; }

/// Parameters shared by every Gaussian.
///
/// Scales are stored as logs and opacity as a logit so that unconstrained
/// gradient steps keep them in range. `color[0..3)` is the base (DC) color;
/// when the owning set has sh_degree 1, `color[3 + 3*channel + k]` holds the
/// three first-order coefficients of each channel.
struct GaussianCore {
  Vec3f position;
  Quatf rotation;
  Vec3f log_scale;
  float opacity_logit = 0.0f;
  std::array<float, 12> color{};
  float importance_raw = 0.5f;
  float gate_activation = 1.0f;

  double opacity() const { return sigmoid(opacity_logit); }

  friend bool operator==(const GaussianCore&, const GaussianCore&) = default;
};

/// A static Gaussian drifts linearly over the normalized sequence:
/// position(t) = position + (t - 1/2) * translation. ||translation|| is the
/// motion magnitude used by the static/dynamic allocator.
struct StaticExtras {
  Vec3f translation;

  friend bool operator==(const StaticExtras&, const StaticExtras&) = default;
};

/// Keyframed trajectory with a temporal activation window.
///
/// Control point k sits at normalized time k / (K - 1); states between
/// keyframes are linear interpolations (quaternions renormalized).
struct DynamicExtras {
  std::vector<Vec3f> traj_position;
  std::vector<Quatf> traj_rotation;
  float window_start = 0.0f;
  float window_end = 1.0f;
  float window_sharpness = 20.0f;

  friend bool operator==(const DynamicExtras&, const DynamicExtras&) = default;
};

/// Instantaneous state of a dynamic Gaussian at normalized time t.
struct DynamicState {
  Vec3d position;
  Quatd rotation;       ///< unit norm
  Quatd rotation_raw;   ///< interpolated, before renormalization
  double window_weight = 1.0;
  std::size_t segment = 0;  ///< interpolation interval [segment, segment + 1]
  double fraction = 0.0;    ///< position inside the interval, in [0, 1]
};

DynamicState evaluate_dynamic_state(const DynamicExtras& g, double t);

/// Mean of the trajectory control points.
Vec3d trajectory_mean(const DynamicExtras& g);

/// Net displacement over the sequence; a static Gaussian's `translation`
/// plays the same role.
Vec3d equivalent_translation(const DynamicExtras& g);

/// Heterogeneous population of static and dynamic Gaussians.
///
/// Cores live in one sequence; the extras of each kind live in a side table
/// addressed through a per-Gaussian slot. Every Gaussian also carries a
/// process-local id that survives structural edits (used to carry optimizer
/// state across densify/prune); ids are not part of the value and are not
/// serialized.
class GaussianSet {
 public:
  explicit GaussianSet(int keyframes = 4, int sh_degree = 0);

  std::size_t size() const { return cores_.size(); }
  bool empty() const { return cores_.empty(); }
  std::size_t n_static() const { return static_.size(); }
  std::size_t n_dynamic() const { return dynamic_.size(); }
  int keyframes() const { return keyframes_; }
  int sh_degree() const { return sh_degree_; }

  Kind kind(std::size_t i) const { return kinds_[i]; }
  bool is_dynamic(std::size_t i) const { return kinds_[i] == Kind::Dynamic; }
  std::uint64_t id(std::size_t i) const { return ids_[i]; }

  GaussianCore& core(std::size_t i) { return cores_[i]; }
  const GaussianCore& core(std::size_t i) const { return cores_[i]; }
  std::span<GaussianCore> cores() { return cores_; }
  std::span<const GaussianCore> cores() const { return cores_; }

  StaticExtras& static_extras(std::size_t i);
  const StaticExtras& static_extras(std::size_t i) const;
  DynamicExtras& dynamic_extras(std::size_t i);
  const DynamicExtras& dynamic_extras(std::size_t i) const;

  std::size_t add_static(const GaussianCore& core, const StaticExtras& extras = {});
  std::size_t add_dynamic(const GaussianCore& core, const DynamicExtras& extras);

  /// Re-tags Gaussian i, replacing its extras.
  void make_static(std::size_t i, const StaticExtras& extras);
  void make_dynamic(std::size_t i, const DynamicExtras& extras);

  /// New set holding the listed Gaussians in the listed order (ids kept).
  GaussianSet select(std::span<const std::size_t> indices) const;
  /// Keeps Gaussians whose mask entry is true, preserving order.
  GaussianSet filter(const std::vector<bool>& keep) const;
  /// Appends Gaussian i of `other`, giving it a fresh id.
  std::size_t append_from(const GaussianSet& other, std::size_t i);

  /// Indices of all Gaussians of the given kind, ascending.
  std::vector<std::size_t> indices_of(Kind kind) const;

  /// Throws InvalidArgument if a type invariant is violated.
  void validate() const;

  /// Field-for-field equality (ids excluded).
  friend bool operator==(const GaussianSet& a, const GaussianSet& b);

 private:
  std::uint64_t fresh_id() { return next_id_++; }
  std::size_t push(const GaussianCore& core, Kind kind, std::uint64_t id);

  int keyframes_;
  int sh_degree_;
  std::vector<GaussianCore> cores_;
  std::vector<Kind> kinds_;
  std::vector<std::uint32_t> slots_;
  std::vector<std::uint64_t> ids_;
  std::vector<StaticExtras> static_;
  std::vector<std::uint32_t> static_owner_;
  std::vector<DynamicExtras> dynamic_;
  std::vector<std::uint32_t> dynamic_owner_;
  std::uint64_t next_id_ = 0;
};

/// Unit-norm quaternion of Gaussian i at time t (dynamic: interpolated).
Quatd rotation_at(const GaussianSet& set, std::size_t i, double t);
/// World position of Gaussian i at time t.
Vec3d position_at(const GaussianSet& set, std::size_t i, double t);

// ---------------------------------------------------------------------------
// Cameras and datasets
// ---------------------------------------------------------------------------

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
};

/// Pinhole camera at one time instant. Camera space: x right, y down, z
/// forward; p_cam = rotation * p_world + translation.
struct CameraView {
  Intrinsics intrinsics;
  Mat3d rotation = Mat3d::identity();
  Vec3d translation;
  double time = 0.0;  ///< normalized to [0, 1]
  int view_id = 0;
  int frame = 0;

  Vec3d center() const;
  /// Throws InvalidArgument if resolution < 8 or rotation is not orthonormal.
  void validate() const;
};

/// Camera placed at `eye` looking at `target` with world +z as up.
CameraView look_at(const Vec3d& eye, const Vec3d& target, const Intrinsics& intr);

/// Multi-view video on disk: cameras.json plus frames/vVV_tTTTT.png.
struct Dataset {
  std::filesystem::path root;
  std::vector<CameraView> cameras;  ///< one per view id, time unset
  int frame_count = 0;
  int held_out_view = 0;
  Vec3d scene_min;  ///< initialization bounding box
  Vec3d scene_max;

  std::size_t view_count() const { return cameras.size(); }
  double frame_time(int frame) const;
  CameraView view(int v, int frame) const;
  std::filesystem::path frame_path(int v, int frame) const;
  std::vector<int> training_views() const;

  /// Loads root/cameras.json; throws IoError when a referenced frame is missing.
  static Dataset load(const std::filesystem::path& root);
  void save_cameras() const;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const GaussianSet& set);
GaussianSet deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const GaussianSet& set, const std::string& path);
GaussianSet load_checkpoint(const std::string& path);

}  // namespace bsplat
