#include "actionflow/error.hpp"
#include "actionflow/image_io.hpp"
#include "actionflow/ingest.hpp"
#include "actionflow/serialize.hpp"
#include "bundles.hpp"

#include <doctest.h>

#include <cstring>

using namespace testing_support;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

Image8 mask_png(const std::vector<std::uint8_t>& mask, int w, int h) {
  Image8 m{w, h, 1, {}};
  for (auto v : mask) m.pixels.push_back(v ? 255 : 0);
  return m;
}

}  // namespace

TEST_CASE("minimal bundle loads with a single object pixel") {
  TempDir dir("minimal");
  auto b = flat_bundle(2, 2);
  b.objects.push_back({rect_mask(2, 2, 1, 0, 2, 1), MaterialParams::defaults(MaterialClass::Rigid), {}});
  write_scene_bundle(dir.path, b);

  const auto loaded = load_scene_bundle(dir.path);
  REQUIRE(loaded.objects.size() == 1);
  int count = 0;
  for (auto v : loaded.objects[0].mask) count += v != 0;
  CHECK(count == 1);
  CHECK(loaded.objects[0].mask[1] == 1);
  CHECK(loaded.objects[0].material == MaterialParams::defaults(MaterialClass::Rigid));
  CHECK(loaded.depth == b.depth);
  CHECK(loaded.image.pixels == b.image.pixels);
}

TEST_CASE("missing bundle files raise NotFound") {
  TempDir dir("missing");
  CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::NotFound);
  auto b = flat_bundle(2, 2);
  write_scene_bundle(dir.path, b);
  std::filesystem::remove(dir.path / "depth.f32");
  CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::NotFound);
}

TEST_CASE("mask over zero depth raises InvalidDepth") {
  TempDir dir("zerodepth");
  auto b = flat_bundle(2, 2);
  b.objects.push_back({rect_mask(2, 2, 0, 0, 1, 1), MaterialParams::defaults(MaterialClass::Rigid), {}});
  write_scene_bundle(dir.path, b);
  auto depth = b.depth;
  depth[0] = 0.0f;
  write_f32(dir.path / "depth.f32", depth);
  CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::InvalidDepth);

  depth[0] = std::numeric_limits<float>::quiet_NaN();
  write_f32(dir.path / "depth.f32", depth);
  CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::InvalidDepth);

  // Zero depth outside every mask is fine.
  depth[0] = 2.0f;
  depth[3] = 0.0f;
  write_f32(dir.path / "depth.f32", depth);
  CHECK_NOTHROW(load_scene_bundle(dir.path));
}

TEST_CASE("overlapping masks raise MalformedBundle") {
  TempDir dir("overlap");
  auto b = flat_bundle(4, 4);
  const auto rigid = MaterialParams::defaults(MaterialClass::Rigid);
  b.objects.push_back({rect_mask(4, 4, 0, 0, 2, 2), rigid, {}});
  b.objects.push_back({rect_mask(4, 4, 2, 2, 4, 4), rigid, {}});
  write_scene_bundle(dir.path, b);
  write_png(dir.path / "mask_1.png", mask_png(rect_mask(4, 4, 1, 1, 3, 3), 4, 4));
  CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::MalformedBundle);
}

TEST_CASE("dimension mismatches raise MalformedBundle") {
  TempDir dir("dims");
  auto b = flat_bundle(4, 4);
  b.objects.push_back({rect_mask(4, 4, 0, 0, 2, 2), MaterialParams::defaults(MaterialClass::Rigid), {}});
  write_scene_bundle(dir.path, b);

  SUBCASE("depth") {
    write_f32(dir.path / "depth.f32", std::vector<float>(15, 2.0f));
    CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::MalformedBundle);
  }
  SUBCASE("image") {
    write_png(dir.path / "image.png", solid_image(3, 4, 1, 2, 3));
    CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::MalformedBundle);
  }
  SUBCASE("mask") {
    write_png(dir.path / "mask_0.png", mask_png(std::vector<std::uint8_t>(8, 1), 4, 2));
    CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::MalformedBundle);
  }
  SUBCASE("occluded file not a whole number of points") {
    write_f32(dir.path / "occluded_0.f32", std::vector<float>(7, 0.5f));
    CHECK(code_of([&] { load_scene_bundle(dir.path); }) == ErrorCode::MalformedBundle);
  }
}

TEST_CASE("unproject follows the pinhole model") {
  Camera k;
  k.width = 5;
  k.height = 5;
  k.fx = k.fy = 2.0;
  k.cx = 1.0;
  k.cy = 2.0;
  std::vector<float> depth(25, 1.0f);
  depth[2 * 5 + 1] = 2.0f;  // principal point
  const auto colors = solid_image(5, 5, 255, 0, 51);

  auto one = [&](int u, int v) {
    std::vector<std::uint8_t> mask(25, 0);
    mask[static_cast<std::size_t>(v) * 5 + u] = 1;
    return unproject(depth, k, mask, colors);
  };
  const auto center = one(1, 2);
  REQUIRE(center.size() == 1);
  CHECK(center.positions[0] == Vec3(0.0, 0.0, 2.0));
  CHECK(center.colors[0].isApprox(Vec3f(1.0f, 0.0f, 0.2f)));

  const auto right = one(3, 2);  // u = cx + fx at depth 1
  REQUIRE(right.size() == 1);
  CHECK(right.positions[0] == Vec3(1.0, 0.0, 1.0));

  std::vector<std::uint8_t> bad(25, 0);
  bad[0] = 1;
  depth[0] = std::numeric_limits<float>::infinity();
  CHECK(code_of([&] { unproject(depth, k, bad, colors); }) == ErrorCode::InvalidDepth);
}

TEST_CASE("full-frame unproject of a constant plane is coplanar") {
  Camera k;
  k.width = k.height = 4;
  k.fx = 3.0;
  k.fy = 5.0;
  k.cx = 1.5;
  k.cy = 1.25;
  const std::vector<float> depth(16, 0.75f);
  const auto pc = unproject(depth, k, std::vector<std::uint8_t>(16, 1), solid_image(4, 4, 0, 0, 0));
  REQUIRE(pc.size() == 16);
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u) {
      const auto& p = pc.positions[static_cast<std::size_t>(v) * 4 + u];
      CHECK(p.z() == 0.75);
      CHECK(p.x() == doctest::Approx((u - 1.5) * 0.75 / 3.0).epsilon(1e-15));
      CHECK(p.y() == doctest::Approx((v - 1.25) * 0.75 / 5.0).epsilon(1e-15));
    }
}

TEST_CASE("build_scene without masks is background only") {
  const auto scene = build_scene(flat_bundle(6, 5));
  CHECK(scene.objects.empty());
  CHECK(scene.background.size() == 30);
  for (const auto& p : scene.background.positions) CHECK(p.z() == doctest::Approx(2.5));
}

TEST_CASE("rigid object counts mask pixels plus occluded points") {
  auto b = flat_bundle(20, 20);
  const auto mask = rect_mask(20, 20, 3, 4, 13, 14);  // 10 x 10
  b.objects.push_back({mask, MaterialParams::defaults(MaterialClass::Rigid), random_cloud(50, {0, 0, 2.2}, 0.05, 7)});
  const auto scene = build_scene(b);
  REQUIRE(scene.objects.size() == 1);
  std::size_t popcount = 0;
  for (auto v : mask) popcount += v;
  const auto& obj = scene.objects[0];
  CHECK(obj.size() == popcount + 50);
  CHECK(obj.size() == 150);
  for (const auto& v : obj.velocities) CHECK(v == Vec3::Zero());
  const auto& rigid = std::get<RigidState>(obj.solver);
  CHECK(rigid.rest_positions == obj.positions);
  CHECK_NOTHROW(obj.validate());
}

TEST_CASE("granular particle mass is density times particle size cubed") {
  auto b = flat_bundle(8, 8);
  auto mat = MaterialParams::defaults(MaterialClass::Granular);
  mat.density = 1500.0;
  b.objects.push_back({rect_mask(8, 8, 2, 2, 6, 6), mat, {}});
  const auto scene = build_scene(b, {.particle_size = 1e-2});
  const auto& obj = scene.objects[0];
  for (double m : obj.masses) CHECK(m == doctest::Approx(1.5e-3).epsilon(1e-12));
  const auto& mpm = std::get<MpmState>(obj.solver);
  for (double v : mpm.volume) CHECK(v == doctest::Approx(1e-6).epsilon(1e-12));
  for (const auto& f : mpm.deformation) CHECK(f == Mat3::Identity());
}

TEST_CASE("volumetric objects below four particles are degenerate") {
  auto b = flat_bundle(4, 4);
  b.objects.push_back({rect_mask(4, 4, 0, 0, 3, 1), MaterialParams::defaults(MaterialClass::Elastic), {}});
  CHECK(code_of([&] { build_scene(b); }) == ErrorCode::DegenerateObject);
}

TEST_CASE("particle count bookkeeping and determinism across materials") {
  auto b = flat_bundle(24, 16, 1.5f);
  b.background_depth[5] = 0.0f;  // a hole in the background view is skipped
  const MaterialClass classes[] = {MaterialClass::Rigid, MaterialClass::Elastic, MaterialClass::Cloth,
                                   MaterialClass::Smoke, MaterialClass::Liquid, MaterialClass::Granular};
  std::size_t expected = 24 * 16 - 1;
  std::size_t occluded_total = 0;
  for (int i = 0; i < 6; ++i) {
    const int u0 = (i % 3) * 8, v0 = (i / 3) * 8;
    // Vary depth so that masks are not planar.
    for (int v = v0; v < v0 + 6; ++v)
      for (int u = u0; u < u0 + 6; ++u) b.depth[static_cast<std::size_t>(v) * 24 + u] = 1.5f + 0.01f * ((u * 7 + v * 3) % 5);
    const auto occ = i % 2 ? random_cloud(10 + i, {0, 0, 1.6}, 0.02, 100 + i) : PointCloud{};
    occluded_total += occ.size();
    b.objects.push_back({rect_mask(24, 16, u0, v0, u0 + 6, v0 + 6), MaterialParams::defaults(classes[i]), occ});
  }
  expected += 6 * 36 + occluded_total;

  const auto s1 = build_scene(b);
  const auto s2 = build_scene(b);
  std::size_t total = s1.background.size();
  for (const auto& o : s1.objects) {
    total += o.size();
    CHECK_NOTHROW(o.validate());
    for (const auto& v : o.velocities) CHECK(v == Vec3::Zero());
  }
  CHECK(total == expected);
  CHECK(serialize_scene(s1) == serialize_scene(s2));

  const auto& cloth = std::get<PbdState>(s1.objects[2].solver);
  // 6x6 sheet: 2*6*5 axis edges + 2*5*5 diagonals.
  CHECK(cloth.edges.size() == 110);
  CHECK(cloth.bends.size() == 2 * 6 * 4);
  const auto& smoke = std::get<PbdState>(s1.objects[3].solver);
  CHECK(smoke.kernel_radius > 0.0);
  CHECK(smoke.rest_density > 0.0);
  const auto& elastic = std::get<PbdState>(s1.objects[1].solver);
  CHECK(elastic.edges.size() >= s1.objects[1].size());
}

TEST_CASE("bundle write/load round trip preserves every field") {
  TempDir dir("roundtrip");
  auto b = flat_bundle(6, 4);
  b.camera.rotation = Eigen::AngleAxisd(0.3, Vec3::UnitY()).toRotationMatrix();
  b.camera.translation = Vec3(0.1, -0.2, 0.3);
  b.gravity = Vec3(0.0, -9.8, 0.0);
  auto mat = MaterialParams::defaults(MaterialClass::Liquid);
  mat.viscosity = 0.25;
  b.objects.push_back({rect_mask(6, 4, 1, 1, 4, 3), mat, random_cloud(5, {0, 0, 2}, 0.1, 3)});
  write_scene_bundle(dir.path, b);
  const auto l = load_scene_bundle(dir.path);
  CHECK(l.camera.rotation.isApprox(b.camera.rotation, 1e-15));
  CHECK(l.camera.translation == b.camera.translation);
  CHECK(l.gravity == b.gravity);
  REQUIRE(l.objects.size() == 1);
  CHECK(l.objects[0].material == mat);
  CHECK(l.objects[0].mask == b.objects[0].mask);
  REQUIRE(l.objects[0].occluded.size() == 5);
  for (int i = 0; i < 5; ++i)
    CHECK((l.objects[0].occluded.positions[i] - b.objects[0].occluded.positions[i]).norm() < 1e-6);
}
