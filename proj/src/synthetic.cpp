#include "actionflow/synthetic.hpp"

#include "actionflow/ingest.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace actionflow {

namespace {

constexpr double kGroundX = 1.2, kGroundY0 = -0.6, kGroundY1 = 2.0, kWallHeight = 1.5;

Vec3f ground_color(const Vec3& p) {
  const bool dark = (static_cast<int>(std::floor(p.x() / 0.1)) + static_cast<int>(std::floor(p.y() / 0.1))) % 2;
  return dark ? Vec3f(0.35f, 0.33f, 0.3f) : Vec3f(0.6f, 0.58f, 0.55f);
}

}  // namespace

Camera synthetic_camera(int width, int height) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.72 * width;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  const double tilt = 15.0 * std::numbers::pi / 180.0;
  const double s = std::sin(tilt), c = std::cos(tilt);
  cam.rotation << 1, 0, 0,  //
      0, -s, -c,            //
      0, c, -s;
  cam.translation = -cam.rotation * Vec3(0.0, -1.2, 0.5);
  return cam;
}

SceneState synthetic_scene(const SyntheticSpec& spec) {
  SceneState scene;
  scene.camera = synthetic_camera(spec.width, spec.height);
  scene.gravity = spec.gravity;
  std::mt19937_64 rng(spec.seed);

  const double ground_area = 2 * kGroundX * (kGroundY1 - kGroundY0), wall_area = 2 * kGroundX * kWallHeight;
  const auto n_ground =
      static_cast<std::size_t>(std::llround(spec.background_points * ground_area / (ground_area + wall_area)));
  std::uniform_real_distribution<double> ux(-kGroundX, kGroundX), uy(kGroundY0, kGroundY1), uz(0.0, kWallHeight);
  auto& bg = scene.background;
  bg.positions.reserve(spec.background_points);
  bg.colors.reserve(spec.background_points);
  for (std::size_t i = 0; i < spec.background_points; ++i) {
    Vec3 p;
    if (i < n_ground) {
      const double x = ux(rng), y = uy(rng);
      p = Vec3(x, y, 0.0);
      bg.colors.push_back(ground_color(p));
    } else {
      const double x = ux(rng), z = uz(rng);
      p = Vec3(x, kGroundY1, z);
      bg.colors.emplace_back(0.45f, 0.5f + 0.2f * static_cast<float>(z / kWallHeight), 0.6f);
    }
    bg.positions.push_back(p);
  }

  const double h = spec.particle_size;
  for (const auto& so : spec.objects) {
    DynamicObject obj;
    obj.material = MaterialParams::defaults(so.cls);
    std::vector<PixelCoord> grid;
    if (so.cls == MaterialClass::Cloth) {
      for (int j = 0; j < so.dims[1]; ++j)
        for (int i = 0; i < so.dims[0]; ++i) {
          obj.positions.push_back(so.min_corner + h * Vec3(i, 0.0, j));
          grid.push_back({i, so.dims[1] - 1 - j});
        }
    } else {
      for (int i = 0; i < so.dims[0]; ++i)
        for (int j = 0; j < so.dims[1]; ++j)
          for (int k = 0; k < so.dims[2]; ++k) obj.positions.push_back(so.min_corner + h * Vec3(i, j, k));
    }
    obj.velocities.assign(obj.size(), Vec3::Zero());
    obj.colors.assign(obj.size(), so.color);
    obj.masses = particle_masses(obj.material, obj.size(), h);
    switch (so.cls) {
      case MaterialClass::Rigid:
        init_rigid(obj);
        break;
      case MaterialClass::Elastic:
        init_elastic(obj);
        break;
      case MaterialClass::Cloth: {
        init_cloth(obj, grid);
        if (so.pin_top_corners) {
          auto& pbd = std::get<PbdState>(obj.solver);
          pbd.pinned.assign(obj.size(), 0);
          const std::size_t top = static_cast<std::size_t>(so.dims[1] - 1) * so.dims[0];
          pbd.pinned[top] = pbd.pinned[top + so.dims[0] - 1] = 1;
        }
        break;
      }
      case MaterialClass::Smoke:
        init_smoke(obj, h);
        break;
      case MaterialClass::Liquid:
      case MaterialClass::Granular:
        init_mpm(obj, h);
        break;
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

}  // namespace actionflow
