#include <gtest/gtest.h>

#include <filesystem>

#include "bsplat/bytes.hpp"
#include "bsplat/error.hpp"
#include "bsplat/scene_model.hpp"
#include "test_util.hpp"

using namespace bsplat;

namespace {

DynamicExtras line_trajectory(const Vec3f& a, const Vec3f& b) {
  DynamicExtras d;
  d.traj_position = {a, b};
  d.traj_rotation = {Quatf{}, Quatf{}};
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bsplat_" + name);
}

}  // namespace

TEST(DynamicState, LinearMidpoint) {
  const auto d = line_trajectory({0, 0, 0}, {2, 0, 0});
  const auto s = evaluate_dynamic_state(d, 0.5);
  EXPECT_DOUBLE_EQ(s.position.x, 1.0);
  EXPECT_DOUBLE_EQ(s.position.y, 0.0);
  EXPECT_DOUBLE_EQ(s.position.z, 0.0);
}

TEST(DynamicState, WideWindowSaturates) {
  auto d = line_trajectory({0, 0, 0}, {1, 0, 0});
  d.window_start = 0.0f;
  d.window_end = 1.0f;
  d.window_sharpness = 1e4f;
  EXPECT_GE(evaluate_dynamic_state(d, 0.5).window_weight, 0.999);
}

TEST(DynamicState, WindowAtStartEdge) {
  auto d = line_trajectory({0, 0, 0}, {1, 0, 0});
  d.window_start = 0.4f;
  d.window_end = 0.6f;
  d.window_sharpness = 20.0f;
  // sigma(0) * sigma(4) by hand: 0.5 * 1 / (1 + e^-4) = 0.5 * 0.982013790 = 0.491006895
  EXPECT_NEAR(evaluate_dynamic_state(d, 0.4).window_weight, 0.491006895, 1e-6);
}

TEST(DynamicState, EndpointsReturnFirstAndLastControlPoint) {
  std::mt19937_64 rng(7);
  const auto d = fixtures::random_dynamic(rng, {0, 0, 3}, 5);
  const auto s0 = evaluate_dynamic_state(d, 0.0);
  const auto s1 = evaluate_dynamic_state(d, 1.0);
  EXPECT_EQ(s0.position, d.traj_position.front().cast<double>());
  EXPECT_EQ(s1.position, d.traj_position.back().cast<double>());
  EXPECT_NEAR(s0.rotation.norm(), 1.0, 1e-12);
  EXPECT_NEAR(evaluate_dynamic_state(d, 0.37).rotation.norm(), 1.0, 1e-12);
}

TEST(GaussianSet, PartitionIsDisjointAndExhaustive) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto set = fixtures::random_set(50, seed);
    std::mt19937_64 rng(seed);
    // random retagging keeps the partition intact
    for (int step = 0; step < 30; ++step) {
      const std::size_t i = rng() % set.size();
      if (set.is_dynamic(i))
        set.make_static(i, StaticExtras{});
      else
        set.make_dynamic(i, fixtures::random_dynamic(rng, set.core(i).position, set.keyframes()));
    }
    const auto s = set.indices_of(Kind::Static);
    const auto d = set.indices_of(Kind::Dynamic);
    EXPECT_EQ(s.size(), set.n_static());
    EXPECT_EQ(d.size(), set.n_dynamic());
    EXPECT_EQ(s.size() + d.size(), set.size());
    std::vector<int> seen(set.size(), 0);
    for (auto i : s) ++seen[i];
    for (auto i : d) ++seen[i];
    for (int c : seen) EXPECT_EQ(c, 1);
    for (auto i : s) EXPECT_NO_THROW(set.static_extras(i));
    for (auto i : d) EXPECT_NO_THROW(set.dynamic_extras(i));
    EXPECT_THROW(set.static_extras(d.empty() ? s[0] : d[0]), InvalidArgument);
    set.validate();
  }
}

TEST(GaussianSet, RetagPreservesOtherExtras) {
  auto set = fixtures::random_set(30, 3);
  const auto before = set;
  const auto statics = set.indices_of(Kind::Static);
  ASSERT_GE(statics.size(), 2u);
  std::mt19937_64 rng(1);
  const std::size_t victim = statics[0];
  set.make_dynamic(victim, fixtures::random_dynamic(rng, set.core(victim).position, 4));
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i == victim) continue;
    if (set.is_dynamic(i))
      EXPECT_EQ(set.dynamic_extras(i), before.dynamic_extras(i));
    else
      EXPECT_EQ(set.static_extras(i), before.static_extras(i));
  }
}

TEST(Checkpoint, EmptySetRoundtrips) {
  GaussianSet empty;
  const auto bytes = serialize_checkpoint(empty);
  EXPECT_EQ(bytes.size(), 4u + 4 + 3 * 8 + 4 + 4);
  EXPECT_EQ(deserialize_checkpoint(bytes), empty);
}

TEST(Checkpoint, OneStaticOneDynamicRoundtrips) {
  std::mt19937_64 rng(11);
  GaussianSet set;
  set.add_static(fixtures::random_core(rng), StaticExtras{{0.1f, -0.2f, 0.3f}});
  const auto core = fixtures::random_core(rng);
  set.add_dynamic(core, fixtures::random_dynamic(rng, core.position, 4));
  const auto path = temp_path("one_each.ckpt").string();
  save_checkpoint(set, path);
  EXPECT_EQ(load_checkpoint(path), set);
}

TEST(Checkpoint, LargeRandomRoundtripIsByteStable) {
  const auto set = fixtures::random_set(10000, 1234, 4, 1);
  const auto a = serialize_checkpoint(set);
  const auto b = serialize_checkpoint(set);
  EXPECT_EQ(a, b);
  const auto loaded = deserialize_checkpoint(a);
  EXPECT_EQ(loaded, set);
  // importance and gate survive bit-exactly too
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(loaded.core(i).importance_raw, set.core(i).importance_raw);
    EXPECT_EQ(loaded.core(i).gate_activation, set.core(i).gate_activation);
  }
  EXPECT_EQ(serialize_checkpoint(loaded), a);
}

TEST(Checkpoint, RejectsVersionMismatchAndTruncation) {
  const auto set = fixtures::random_set(10, 5);
  auto bytes = serialize_checkpoint(set);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(deserialize_checkpoint(bad_version), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), FormatError);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}

TEST(Camera, LookAtIsOrthonormalAndProjectsTargetToCenter) {
  const auto cam = look_at({3, -2, 1}, {0, 0, 0.5}, fixtures::small_intrinsics(32, 24, 30));
  EXPECT_NO_THROW(cam.validate());
  const Vec3d pc = cam.rotation * Vec3d{0, 0, 0.5} + cam.translation;
  EXPECT_NEAR(pc.x, 0.0, 1e-12);
  EXPECT_NEAR(pc.y, 0.0, 1e-12);
  EXPECT_GT(pc.z, 0.0);
  const auto c = cam.center();
  EXPECT_NEAR(c.x, 3.0, 1e-12);
  EXPECT_NEAR(c.y, -2.0, 1e-12);
  EXPECT_NEAR(c.z, 1.0, 1e-12);

  CameraView tiny = cam;
  tiny.intrinsics.width = 4;
  EXPECT_THROW(tiny.validate(), InvalidArgument);
}
