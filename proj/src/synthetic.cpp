#include "bsplat/synthetic.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "bsplat/error.hpp"
#include "bsplat/parallel.hpp"

namespace bsplat {

void SyntheticSceneSpec::validate() const {
  if (cameras < 3) throw InvalidArgument("a synthetic scene needs at least 3 cameras");
  if (frames < 2) throw InvalidArgument("a synthetic scene needs at least 2 frames");
  if (width < 8 || height < 8) throw InvalidArgument("image size must be at least 8x8");
  if (boxes < 0 || spheres < 0 || movers < 0) throw InvalidArgument("primitive counts must be non-negative");
  if (!(room_extent > 0.0) || !(camera_radius > room_extent)) throw InvalidArgument("cameras must sit outside the room");
  if (!(mover_period > 0.0)) throw InvalidArgument("mover period must be positive");
  if (!(noise >= 0.0)) throw InvalidArgument("noise must be non-negative");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kSupersample = 2;

struct Hit {
  double t = kInf;
  Vec3d normal;
  Vec3d albedo;
};

struct Box {
  Vec3d lo, hi, albedo;
};

struct Sphere {
  Vec3d center;
  double radius = 0.0;
  Vec3d albedo;
  Vec3d direction;  ///< motion axis, zero for static spheres
};

struct Layout {
  double extent = 0.0;
  std::vector<Box> boxes;
  std::vector<Sphere> spheres;
  std::vector<Sphere> movers;
  double amplitude = 0.0;
  double period = 1.0;
};

Vec3d random_albedo(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.25, 0.95);
  return {u(rng), u(rng), u(rng)};
}

Layout make_layout(const SyntheticSceneSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> size(0.2, 0.45);
  Layout l;
  l.extent = spec.room_extent;
  l.amplitude = spec.mover_amplitude;
  l.period = spec.mover_period;
  const double e = 0.7 * spec.room_extent;
  for (int b = 0; b < spec.boxes; ++b) {
    const Vec3d c{u(rng) * e, u(rng) * e, 0.0};
    const Vec3d h{size(rng), size(rng), 1.6 * size(rng)};
    l.boxes.push_back({Vec3d{c.x - h.x, c.y - h.y, 0.0}, Vec3d{c.x + h.x, c.y + h.y, 2.0 * h.z}, random_albedo(rng)});
  }
  for (int s = 0; s < spec.spheres; ++s) {
    const double r = size(rng);
    l.spheres.push_back({Vec3d{u(rng) * e, u(rng) * e, r}, r, random_albedo(rng), Vec3d{}});
  }
  for (int m = 0; m < spec.movers; ++m) {
    const double r = 0.3;
    const double a = std::numbers::pi * u(rng);
    l.movers.push_back({Vec3d{0.3 * u(rng) * e, 0.3 * u(rng) * e, r + 0.35}, r, random_albedo(rng),
                        Vec3d{std::cos(a), std::sin(a), 0.0}});
  }
  return l;
}

void hit_sphere(const Vec3d& o, const Vec3d& d, const Vec3d& c, double r, const Vec3d& albedo, Hit& h) {
  const Vec3d oc = o - c;
  const double b = dot(oc, d);
  const double disc = b * b - (dot(oc, oc) - r * r);
  if (disc < 0.0) return;
  const double t = -b - std::sqrt(disc);
  if (t <= 1e-6 || t >= h.t) return;
  h.t = t;
  h.normal = (o + d * t - c) * (1.0 / r);
  h.albedo = albedo;
}

void hit_box(const Vec3d& o, const Vec3d& d, const Box& b, Hit& h) {
  double t0 = -kInf, t1 = kInf;
  int axis = 0;
  double sign = 1.0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-12) {
      if (o[k] < b.lo[k] || o[k] > b.hi[k]) return;
      continue;
    }
    double a = (b.lo[k] - o[k]) / d[k];
    double c = (b.hi[k] - o[k]) / d[k];
    const double s = a < c ? -1.0 : 1.0;
    if (a > c) std::swap(a, c);
    if (a > t0) {
      t0 = a;
      axis = k;
      sign = s;
    }
    t1 = std::min(t1, c);
  }
  if (t0 > t1 || t0 <= 1e-6 || t0 >= h.t) return;
  h.t = t0;
  h.normal = Vec3d{};
  h.normal[static_cast<std::size_t>(axis)] = sign;
  h.albedo = b.albedo;
}

void hit_floor(const Vec3d& o, const Vec3d& d, double extent, Hit& h) {
  if (d.z >= 0.0) return;
  const double t = -o.z / d.z;
  if (t <= 1e-6 || t >= h.t) return;
  const Vec3d p = o + d * t;
  if (std::abs(p.x) > extent || std::abs(p.y) > extent) return;
  h.t = t;
  h.normal = {0, 0, 1};
  const int check = static_cast<int>(std::floor(p.x * 2.0)) + static_cast<int>(std::floor(p.y * 2.0));
  h.albedo = (check & 1) ? Vec3d{0.75, 0.72, 0.65} : Vec3d{0.35, 0.38, 0.45};
}

Vec3d shade(const Layout& l, const Vec3d& o, const Vec3d& d, double t) {
  Hit h;
  hit_floor(o, d, l.extent, h);
  for (const auto& b : l.boxes) hit_box(o, d, b, h);
  for (const auto& s : l.spheres) hit_sphere(o, d, s.center, s.radius, s.albedo, h);
  for (const auto& m : l.movers) {
    const double phase = 2.0 * std::numbers::pi * (t - 0.5) / l.period;
    hit_sphere(o, d, m.center + m.direction * (l.amplitude * std::sin(phase)), m.radius, m.albedo, h);
  }
  if (h.t == kInf) return {};
  Vec3d light{0.4, 0.3, 0.87};
  light *= 1.0 / norm(light);
  const double diffuse = std::max(0.0, dot(h.normal, light));
  return h.albedo * (0.35 + 0.65 * diffuse);
}

ImageBuffer ray_cast(const Layout& l, const CameraView& cam, double t) {
  const auto& in = cam.intrinsics;
  ImageBuffer img(in.width, in.height);
  const Mat3d rt = cam.rotation.transposed();
  const Vec3d o = cam.center();
  parallel_for(static_cast<std::size_t>(in.height), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < in.width; ++x) {
      Vec3d acc;
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) / kSupersample;
          const double py = y + (sy + 0.5) / kSupersample;
          Vec3d d = rt * Vec3d{(px - in.cx) / in.fx, (py - in.cy) / in.fy, 1.0};
          d *= 1.0 / norm(d);
          acc += shade(l, o, d, t);
        }
      acc *= 1.0 / (kSupersample * kSupersample);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(acc[c]);
    }
  });
  return img;
}

}  // namespace

SyntheticScene generate_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  const Layout layout = make_layout(spec);
  SyntheticScene scene;
  auto& ds = scene.dataset;
  ds.frame_count = spec.frames;
  ds.held_out_view = 0;
  ds.scene_min = {-spec.room_extent, -spec.room_extent, 0.0};
  ds.scene_max = {spec.room_extent, spec.room_extent, 1.5};
  Intrinsics in;
  in.width = spec.width;
  in.height = spec.height;
  in.fx = in.fy = 0.9 * spec.width;
  in.cx = 0.5 * spec.width;
  in.cy = 0.5 * spec.height;
  for (int v = 0; v < spec.cameras; ++v) {
    const double a = 2.0 * std::numbers::pi * (v + 0.5) / spec.cameras;
    const Vec3d eye{spec.camera_radius * std::cos(a), spec.camera_radius * std::sin(a), spec.camera_height};
    CameraView cam = look_at(eye, Vec3d{0.0, 0.0, 0.3}, in);
    cam.view_id = v;
    ds.cameras.push_back(cam);
  }
  std::mt19937_64 noise_rng(spec.seed ^ 0x5eedULL);
  std::normal_distribution<double> noise(0.0, spec.noise > 0.0 ? spec.noise : 1.0);
  scene.images.resize(static_cast<std::size_t>(spec.cameras));
  for (int v = 0; v < spec.cameras; ++v)
    for (int f = 0; f < spec.frames; ++f) {
      ImageBuffer img = ray_cast(layout, ds.view(v, f), ds.frame_time(f));
      if (spec.noise > 0.0)
        for (float& p : img.data) p = static_cast<float>(std::clamp(p + noise(noise_rng), 0.0, 1.0));
      scene.images[static_cast<std::size_t>(v)].push_back(std::move(img));
    }
  return scene;
}

TrainingFrames training_frames(const SyntheticScene& scene) {
  TrainingFrames tf;
  tf.scene_min = scene.dataset.scene_min;
  tf.scene_max = scene.dataset.scene_max;
  for (int v : scene.dataset.training_views())
    for (int f = 0; f < scene.dataset.frame_count; ++f) {
      tf.views.push_back(scene.dataset.view(v, f));
      tf.images.push_back(scene.images[static_cast<std::size_t>(v)][static_cast<std::size_t>(f)]);
    }
  return tf;
}

Dataset write_scene(const SyntheticScene& scene, const std::filesystem::path& root) {
  Dataset ds = scene.dataset;
  ds.root = root;
  std::error_code ec;
  std::filesystem::create_directories(root / "frames", ec);
  if (ec) throw IoError("cannot create " + (root / "frames").string() + ": " + ec.message());
  ds.save_cameras();
  for (std::size_t v = 0; v < scene.images.size(); ++v)
    for (std::size_t f = 0; f < scene.images[v].size(); ++f)
      write_png(ds.frame_path(static_cast<int>(v), static_cast<int>(f)).string(), scene.images[v][f]);
  return ds;
}

}  // namespace bsplat
