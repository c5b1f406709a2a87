#include "bsplat/scene_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "bsplat/bytes.hpp"
#include "bsplat/error.hpp"

namespace bsplat {

namespace {

std::string index_message(const char* what, std::size_t i) {
  return std::string(what) + " (gaussian " + std::to_string(i) + ")";
}

}  // namespace

// ---------------------------------------------------------------------------
// Dynamic state
// ---------------------------------------------------------------------------

DynamicState evaluate_dynamic_state(const DynamicExtras& g, double t) {
  const std::size_t k = g.traj_position.size();
  DynamicState s;
  const double u = std::clamp(t, 0.0, 1.0) * static_cast<double>(k - 1);
  s.segment = std::min(static_cast<std::size_t>(u), k - 2);
  s.fraction = u - static_cast<double>(s.segment);
  const double a = 1.0 - s.fraction, b = s.fraction;

  const Vec3d p0 = g.traj_position[s.segment].cast<double>();
  const Vec3d p1 = g.traj_position[s.segment + 1].cast<double>();
  s.position = p0 * a + p1 * b;

  const Quatd q0 = g.traj_rotation[s.segment].cast<double>();
  const Quatd q1 = g.traj_rotation[s.segment + 1].cast<double>();
  s.rotation_raw = {q0.w * a + q1.w * b, q0.x * a + q1.x * b, q0.y * a + q1.y * b,
                    q0.z * a + q1.z * b};
  s.rotation = s.rotation_raw.normalized();

  const double kappa = g.window_sharpness;
  s.window_weight = sigmoid((t - g.window_start) * kappa) * sigmoid((g.window_end - t) * kappa);
  return s;
}

Vec3d trajectory_mean(const DynamicExtras& g) {
  Vec3d sum;
  for (const auto& p : g.traj_position) sum += p.cast<double>();
  return sum * (1.0 / static_cast<double>(g.traj_position.size()));
}

Vec3d equivalent_translation(const DynamicExtras& g) {
  return g.traj_position.back().cast<double>() - g.traj_position.front().cast<double>();
}

Quatd rotation_at(const GaussianSet& set, std::size_t i, double t) {
  if (set.is_dynamic(i)) return evaluate_dynamic_state(set.dynamic_extras(i), t).rotation;
  return set.core(i).rotation.cast<double>().normalized();
}

Vec3d position_at(const GaussianSet& set, std::size_t i, double t) {
  if (set.is_dynamic(i)) return evaluate_dynamic_state(set.dynamic_extras(i), t).position;
  return set.core(i).position.cast<double>() +
         set.static_extras(i).translation.cast<double>() * (t - 0.5);
}

// ---------------------------------------------------------------------------
// GaussianSet
// ---------------------------------------------------------------------------

GaussianSet::GaussianSet(int keyframes, int sh_degree)
    : keyframes_(keyframes), sh_degree_(sh_degree) {
  if (keyframes < 2) throw InvalidArgument("trajectories need at least 2 keyframes");
  if (sh_degree != 0 && sh_degree != 1) throw InvalidArgument("sh_degree must be 0 or 1");
}

StaticExtras& GaussianSet::static_extras(std::size_t i) {
  if (kinds_[i] != Kind::Static) throw InvalidArgument(index_message("not a static gaussian", i));
  return static_[slots_[i]];
}

const StaticExtras& GaussianSet::static_extras(std::size_t i) const {
  if (kinds_[i] != Kind::Static) throw InvalidArgument(index_message("not a static gaussian", i));
  return static_[slots_[i]];
}

DynamicExtras& GaussianSet::dynamic_extras(std::size_t i) {
  if (kinds_[i] != Kind::Dynamic) throw InvalidArgument(index_message("not a dynamic gaussian", i));
  return dynamic_[slots_[i]];
}

const DynamicExtras& GaussianSet::dynamic_extras(std::size_t i) const {
  if (kinds_[i] != Kind::Dynamic) throw InvalidArgument(index_message("not a dynamic gaussian", i));
  return dynamic_[slots_[i]];
}

std::size_t GaussianSet::push(const GaussianCore& core, Kind kind, std::uint64_t id) {
  const std::size_t i = cores_.size();
  cores_.push_back(core);
  kinds_.push_back(kind);
  ids_.push_back(id);
  if (kind == Kind::Static) {
    slots_.push_back(static_cast<std::uint32_t>(static_.size()));
    static_owner_.push_back(static_cast<std::uint32_t>(i));
    static_.emplace_back();
  } else {
    slots_.push_back(static_cast<std::uint32_t>(dynamic_.size()));
    dynamic_owner_.push_back(static_cast<std::uint32_t>(i));
    dynamic_.emplace_back();
  }
  return i;
}

std::size_t GaussianSet::add_static(const GaussianCore& core, const StaticExtras& extras) {
  const std::size_t i = push(core, Kind::Static, fresh_id());
  static_[slots_[i]] = extras;
  return i;
}

std::size_t GaussianSet::add_dynamic(const GaussianCore& core, const DynamicExtras& extras) {
  if (extras.traj_position.size() != static_cast<std::size_t>(keyframes_) ||
      extras.traj_rotation.size() != static_cast<std::size_t>(keyframes_))
    throw InvalidArgument("trajectory keyframe count does not match the set");
  const std::size_t i = push(core, Kind::Dynamic, fresh_id());
  dynamic_[slots_[i]] = extras;
  return i;
}

void GaussianSet::make_static(std::size_t i, const StaticExtras& extras) {
  if (kinds_[i] == Kind::Static) {
    static_[slots_[i]] = extras;
    return;
  }
  // swap-remove from the dynamic table
  const std::uint32_t slot = slots_[i];
  const std::uint32_t last = static_cast<std::uint32_t>(dynamic_.size() - 1);
  if (slot != last) {
    dynamic_[slot] = std::move(dynamic_[last]);
    dynamic_owner_[slot] = dynamic_owner_[last];
    slots_[dynamic_owner_[slot]] = slot;
  }
  dynamic_.pop_back();
  dynamic_owner_.pop_back();

  kinds_[i] = Kind::Static;
  slots_[i] = static_cast<std::uint32_t>(static_.size());
  static_.push_back(extras);
  static_owner_.push_back(static_cast<std::uint32_t>(i));
}

void GaussianSet::make_dynamic(std::size_t i, const DynamicExtras& extras) {
  if (extras.traj_position.size() != static_cast<std::size_t>(keyframes_) ||
      extras.traj_rotation.size() != static_cast<std::size_t>(keyframes_))
    throw InvalidArgument("trajectory keyframe count does not match the set");
  if (kinds_[i] == Kind::Dynamic) {
    dynamic_[slots_[i]] = extras;
    return;
  }
  const std::uint32_t slot = slots_[i];
  const std::uint32_t last = static_cast<std::uint32_t>(static_.size() - 1);
  if (slot != last) {
    static_[slot] = static_[last];
    static_owner_[slot] = static_owner_[last];
    slots_[static_owner_[slot]] = slot;
  }
  static_.pop_back();
  static_owner_.pop_back();

  kinds_[i] = Kind::Dynamic;
  slots_[i] = static_cast<std::uint32_t>(dynamic_.size());
  dynamic_.push_back(extras);
  dynamic_owner_.push_back(static_cast<std::uint32_t>(i));
}

GaussianSet GaussianSet::select(std::span<const std::size_t> indices) const {
  GaussianSet out(keyframes_, sh_degree_);
  out.next_id_ = next_id_;
  for (std::size_t i : indices) {
    const std::size_t j = out.push(cores_[i], kinds_[i], ids_[i]);
    if (kinds_[i] == Kind::Static)
      out.static_[out.slots_[j]] = static_[slots_[i]];
    else
      out.dynamic_[out.slots_[j]] = dynamic_[slots_[i]];
  }
  return out;
}

GaussianSet GaussianSet::filter(const std::vector<bool>& keep) const {
  std::vector<std::size_t> idx;
  idx.reserve(size());
  for (std::size_t i = 0; i < size(); ++i)
    if (keep[i]) idx.push_back(i);
  return select(idx);
}

std::size_t GaussianSet::append_from(const GaussianSet& other, std::size_t i) {
  if (other.kind(i) == Kind::Static) return add_static(other.core(i), other.static_extras(i));
  return add_dynamic(other.core(i), other.dynamic_extras(i));
}

std::vector<std::size_t> GaussianSet::indices_of(Kind kind) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (kinds_[i] == kind) out.push_back(i);
  return out;
}

void GaussianSet::validate() const {
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& c = cores_[i];
    if (std::abs(c.rotation.cast<double>().norm() - 1.0) > 1e-5)
      throw InvalidArgument(index_message("rotation is not unit norm", i));
    for (int a = 0; a < 3; ++a)
      if (!(std::exp(static_cast<double>(c.log_scale[a])) > 0.0))
        throw InvalidArgument(index_message("scale is not positive", i));
    if (!(c.gate_activation >= 0.0f && c.gate_activation <= 1.0f))
      throw InvalidArgument(index_message("gate activation outside [0,1]", i));
    if (kinds_[i] == Kind::Dynamic) {
      const auto& d = dynamic_[slots_[i]];
      if (!(d.window_start <= d.window_end))
        throw InvalidArgument(index_message("activation window is inverted", i));
    } else {
      const auto& s = static_[slots_[i]];
      for (int a = 0; a < 3; ++a)
        if (!std::isfinite(s.translation[a]))
          throw InvalidArgument(index_message("translation is not finite", i));
    }
  }
  if (static_.size() + dynamic_.size() != cores_.size())
    throw InvalidArgument("side tables do not cover the population");
}

bool operator==(const GaussianSet& a, const GaussianSet& b) {
  if (a.keyframes_ != b.keyframes_ || a.sh_degree_ != b.sh_degree_ || a.size() != b.size())
    return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.kinds_[i] != b.kinds_[i] || !(a.cores_[i] == b.cores_[i])) return false;
    if (a.kinds_[i] == Kind::Static) {
      if (!(a.static_extras(i) == b.static_extras(i))) return false;
    } else if (!(a.dynamic_extras(i) == b.dynamic_extras(i))) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

Vec3d CameraView::center() const { return -(rotation.transposed() * translation); }

void CameraView::validate() const {
  if (intrinsics.width < 8 || intrinsics.height < 8)
    throw InvalidArgument("camera resolution must be at least 8x8");
  const Mat3d should_be_identity = rotation * rotation.transposed();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (std::abs(should_be_identity(r, c) - (r == c ? 1.0 : 0.0)) > 1e-6)
        throw InvalidArgument("camera rotation is not orthonormal");
}

CameraView look_at(const Vec3d& eye, const Vec3d& target, const Intrinsics& intr) {
  Vec3d forward = target - eye;
  forward *= 1.0 / norm(forward);
  Vec3d up{0, 0, 1};
  if (std::abs(dot(forward, up)) > 0.999) up = {0, 1, 0};
  Vec3d right = cross(forward, up);
  right *= 1.0 / norm(right);
  const Vec3d down = cross(forward, right);

  CameraView cam;
  cam.intrinsics = intr;
  for (int c = 0; c < 3; ++c) {
    cam.rotation(0, c) = right[c];
    cam.rotation(1, c) = down[c];
    cam.rotation(2, c) = forward[c];
  }
  cam.translation = -(cam.rotation * eye);
  return cam;
}

double Dataset::frame_time(int frame) const {
  return frame_count <= 1 ? 0.0 : static_cast<double>(frame) / (frame_count - 1);
}

CameraView Dataset::view(int v, int frame) const {
  CameraView cam = cameras.at(static_cast<std::size_t>(v));
  cam.view_id = v;
  cam.frame = frame;
  cam.time = frame_time(frame);
  return cam;
}

std::filesystem::path Dataset::frame_path(int v, int frame) const {
  char name[32];
  std::snprintf(name, sizeof(name), "v%02d_t%04d.png", v, frame);
  return root / "frames" / name;
}

std::vector<int> Dataset::training_views() const {
  std::vector<int> out;
  for (int v = 0; v < static_cast<int>(cameras.size()); ++v)
    if (v != held_out_view) out.push_back(v);
  return out;
}

Dataset Dataset::load(const std::filesystem::path& root) {
  const auto path = root / "cameras.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  Dataset ds;
  ds.root = root;
  ds.frame_count = j.at("frame_count").get<int>();
  ds.held_out_view = j.at("held_out_view").get<int>();
  const auto mn = j.at("scene_min").get<std::array<double, 3>>();
  const auto mx = j.at("scene_max").get<std::array<double, 3>>();
  ds.scene_min = {mn[0], mn[1], mn[2]};
  ds.scene_max = {mx[0], mx[1], mx[2]};
  for (const auto& jv : j.at("views")) {
    CameraView cam;
    cam.view_id = jv.at("id").get<int>();
    cam.intrinsics.fx = jv.at("fx").get<double>();
    cam.intrinsics.fy = jv.at("fy").get<double>();
    cam.intrinsics.cx = jv.at("cx").get<double>();
    cam.intrinsics.cy = jv.at("cy").get<double>();
    cam.intrinsics.width = jv.at("width").get<int>();
    cam.intrinsics.height = jv.at("height").get<int>();
    const auto r = jv.at("rotation").get<std::array<double, 9>>();
    std::copy(r.begin(), r.end(), cam.rotation.m.begin());
    const auto t = jv.at("translation").get<std::array<double, 3>>();
    cam.translation = {t[0], t[1], t[2]};
    cam.validate();
    ds.cameras.push_back(cam);
  }
  if (ds.held_out_view < 0 || ds.held_out_view >= static_cast<int>(ds.cameras.size()))
    throw FormatError("held_out_view does not name a camera");

  for (int v = 0; v < static_cast<int>(ds.cameras.size()); ++v)
    for (int f = 0; f < ds.frame_count; ++f)
      if (!std::filesystem::exists(ds.frame_path(v, f)))
        throw IoError("missing frame " + ds.frame_path(v, f).string());
  return ds;
}

void Dataset::save_cameras() const {
  nlohmann::json j;
  j["frame_count"] = frame_count;
  j["held_out_view"] = held_out_view;
  j["scene_min"] = {scene_min.x, scene_min.y, scene_min.z};
  j["scene_max"] = {scene_max.x, scene_max.y, scene_max.z};
  j["views"] = nlohmann::json::array();
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    const auto& cam = cameras[v];
    nlohmann::json jv;
    jv["id"] = static_cast<int>(v);
    jv["fx"] = cam.intrinsics.fx;
    jv["fy"] = cam.intrinsics.fy;
    jv["cx"] = cam.intrinsics.cx;
    jv["cy"] = cam.intrinsics.cy;
    jv["width"] = cam.intrinsics.width;
    jv["height"] = cam.intrinsics.height;
    jv["rotation"] = cam.rotation.m;
    jv["translation"] = {cam.translation.x, cam.translation.y, cam.translation.z};
    j["views"].push_back(jv);
  }
  std::filesystem::create_directories(root);
  std::ofstream out(root / "cameras.json");
  if (!out) throw IoError("cannot write " + (root / "cameras.json").string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoint: "CDGS" | u32 version | u64 n_total, n_static, n_dynamic |
// u32 keyframes | u32 sh_degree | u8 kinds[n] | f32 sequences (see docs/formats.md)
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const GaussianSet& set) {
  ByteWriter w;
  const std::size_t n = set.size();
  w.put_tag("CDGS");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(n);
  w.put<std::uint64_t>(set.n_static());
  w.put<std::uint64_t>(set.n_dynamic());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.keyframes()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.sh_degree()));
  for (std::size_t i = 0; i < n; ++i) w.put<std::uint8_t>(static_cast<std::uint8_t>(set.kind(i)));

  const std::size_t ncolor = color_coeff_count(set.sh_degree());
  for (const auto& c : set.cores()) w.put(c.position.x), w.put(c.position.y), w.put(c.position.z);
  for (const auto& c : set.cores())
    w.put(c.rotation.w), w.put(c.rotation.x), w.put(c.rotation.y), w.put(c.rotation.z);
  for (const auto& c : set.cores()) w.put(c.log_scale.x), w.put(c.log_scale.y), w.put(c.log_scale.z);
  for (const auto& c : set.cores()) w.put(c.opacity_logit);
  for (const auto& c : set.cores())
    for (std::size_t k = 0; k < ncolor; ++k) w.put(c.color[k]);
  for (const auto& c : set.cores()) w.put(c.importance_raw);
  for (const auto& c : set.cores()) w.put(c.gate_activation);

  const auto statics = set.indices_of(Kind::Static);
  const auto dynamics = set.indices_of(Kind::Dynamic);
  for (std::size_t i : statics) {
    const auto& t = set.static_extras(i).translation;
    w.put(t.x), w.put(t.y), w.put(t.z);
  }
  for (std::size_t i : dynamics)
    for (const auto& p : set.dynamic_extras(i).traj_position) w.put(p.x), w.put(p.y), w.put(p.z);
  for (std::size_t i : dynamics)
    for (const auto& q : set.dynamic_extras(i).traj_rotation)
      w.put(q.w), w.put(q.x), w.put(q.y), w.put(q.z);
  for (std::size_t i : dynamics) w.put(set.dynamic_extras(i).window_start);
  for (std::size_t i : dynamics) w.put(set.dynamic_extras(i).window_end);
  for (std::size_t i : dynamics) w.put(set.dynamic_extras(i).window_sharpness);
  return w.take();
}

GaussianSet deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("CDGS");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>();
  const auto ns = r.get<std::uint64_t>();
  const auto nd = r.get<std::uint64_t>();
  const auto keyframes = r.get<std::uint32_t>();
  const auto sh_degree = r.get<std::uint32_t>();
  if (ns + nd != n) throw FormatError("checkpoint counts are inconsistent");
  if (n > bytes.size()) throw FormatError("checkpoint count exceeds file size");
  if (keyframes < 2 || keyframes > 64 || sh_degree > 1)
    throw FormatError("checkpoint header out of range");

  std::vector<Kind> kinds(n);
  std::uint64_t seen_static = 0;
  for (auto& k : kinds) {
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw FormatError("invalid kind tag");
    k = static_cast<Kind>(tag);
    seen_static += (k == Kind::Static);
  }
  if (seen_static != ns) throw FormatError("kind tags disagree with static count");

  std::vector<GaussianCore> cores(n);
  const std::size_t ncolor = color_coeff_count(static_cast<int>(sh_degree));
  for (auto& c : cores) c.position = {r.get<float>(), r.get<float>(), r.get<float>()};
  for (auto& c : cores)
    c.rotation = {r.get<float>(), r.get<float>(), r.get<float>(), r.get<float>()};
  for (auto& c : cores) c.log_scale = {r.get<float>(), r.get<float>(), r.get<float>()};
  for (auto& c : cores) c.opacity_logit = r.get<float>();
  for (auto& c : cores)
    for (std::size_t k = 0; k < ncolor; ++k) c.color[k] = r.get<float>();
  for (auto& c : cores) c.importance_raw = r.get<float>();
  for (auto& c : cores) c.gate_activation = r.get<float>();

  std::vector<StaticExtras> statics(ns);
  for (auto& s : statics) s.translation = {r.get<float>(), r.get<float>(), r.get<float>()};
  std::vector<DynamicExtras> dynamics(nd);
  for (auto& d : dynamics) {
    d.traj_position.resize(keyframes);
    for (auto& p : d.traj_position) p = {r.get<float>(), r.get<float>(), r.get<float>()};
  }
  for (auto& d : dynamics) {
    d.traj_rotation.resize(keyframes);
    for (auto& q : d.traj_rotation) q = {r.get<float>(), r.get<float>(), r.get<float>(), r.get<float>()};
  }
  for (auto& d : dynamics) d.window_start = r.get<float>();
  for (auto& d : dynamics) d.window_end = r.get<float>();
  for (auto& d : dynamics) d.window_sharpness = r.get<float>();
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");

  GaussianSet set(static_cast<int>(keyframes), static_cast<int>(sh_degree));
  std::size_t si = 0, di = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (kinds[i] == Kind::Static)
      set.add_static(cores[i], statics[si++]);
    else
      set.add_dynamic(cores[i], dynamics[di++]);
  }
  return set;
}

void save_checkpoint(const GaussianSet& set, const std::string& path) {
  write_file(path, serialize_checkpoint(set));
}

GaussianSet load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace bsplat
