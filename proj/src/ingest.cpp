#include "actionflow/ingest.hpp"

#include "actionflow/error.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace actionflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedBundle, what); }

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) malformed(std::string(what) + " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Per-mask material block: "class" plus any MaterialParams field by name.
MaterialParams material_from(const json& j) {
  if (!j.is_object() || !j.contains("class")) malformed("material block needs a \"class\"");
  MaterialParams m;
  try {
    m = MaterialParams::defaults(material_class_from_string(j.at("class").get<std::string>()));
  } catch (const Error& e) {
    malformed(e.what());
  }
  const std::pair<const char*, double MaterialParams::*> fields[] = {
      {"mass", &MaterialParams::mass},
      {"density", &MaterialParams::density},
      {"friction_coefficient", &MaterialParams::friction_coefficient},
      {"youngs_modulus", &MaterialParams::youngs_modulus},
      {"poissons_ratio", &MaterialParams::poissons_ratio},
      {"friction_angle", &MaterialParams::friction_angle},
      {"stretch_compliance", &MaterialParams::stretch_compliance},
      {"bending_compliance", &MaterialParams::bending_compliance},
      {"volume_compliance", &MaterialParams::volume_compliance},
      {"stretch_relaxation", &MaterialParams::stretch_relaxation},
      {"bending_relaxation", &MaterialParams::bending_relaxation},
      {"volume_relaxation", &MaterialParams::volume_relaxation},
      {"viscosity", &MaterialParams::viscosity},
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "class") continue;
    bool known = false;
    for (const auto& [name, member] : fields)
      if (key == name) {
        if (!value.is_number()) malformed("material field " + key + " must be a number");
        m.*member = value.get<double>();
        known = true;
      }
    if (!known) malformed("unknown material field '" + key + "'");
  }
  try {
    m.validate();
  } catch (const Error& e) {
    malformed(e.what());
  }
  return m;
}

json material_to_json(const MaterialParams& m) {
  return {{"class", std::string(to_string(m.cls))},
          {"mass", m.mass},
          {"density", m.density},
          {"friction_coefficient", m.friction_coefficient},
          {"youngs_modulus", m.youngs_modulus},
          {"poissons_ratio", m.poissons_ratio},
          {"friction_angle", m.friction_angle},
          {"stretch_compliance", m.stretch_compliance},
          {"bending_compliance", m.bending_compliance},
          {"volume_compliance", m.volume_compliance},
          {"stretch_relaxation", m.stretch_relaxation},
          {"bending_relaxation", m.bending_relaxation},
          {"volume_relaxation", m.volume_relaxation},
          {"viscosity", m.viscosity}};
}

Image8 rgb_of_size(const fs::path& path, int w, int h) {
  Image8 img = read_png(path);
  if (img.width != w || img.height != h)
    malformed(path.filename().string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
              ", expected " + std::to_string(w) + "x" + std::to_string(h));
  if (img.channels == 1) {
    Image8 rgb{img.width, img.height, 3, std::vector<std::uint8_t>(img.pixels.size() * 3)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = img.pixels[i];
    return rgb;
  }
  return img;
}

std::vector<float> depth_of_size(const fs::path& path, int w, int h) {
  auto d = read_f32(path);
  if (d.size() != static_cast<std::size_t>(w) * h)
    malformed(path.filename().string() + " holds " + std::to_string(d.size()) + " values, expected " +
              std::to_string(static_cast<std::size_t>(w) * h));
  return d;
}

PointCloud read_occluded(const fs::path& path) {
  const auto raw = read_f32(path);
  if (raw.size() % 6 != 0) malformed(path.filename().string() + " is not a multiple of 6 floats");
  PointCloud pc;
  for (std::size_t i = 0; i < raw.size(); i += 6) {
    const Vec3 p(raw[i], raw[i + 1], raw[i + 2]);
    const Vec3f c(raw[i + 3], raw[i + 4], raw[i + 5]);
    if (!all_finite(p) || !c.allFinite()) malformed(path.filename().string() + " contains non-finite values");
    pc.positions.push_back(p);
    pc.colors.push_back(c);
  }
  return pc;
}

bool valid_depth(float d) { return std::isfinite(d) && d > 0.0f; }

}  // namespace

void SceneBundle::validate() const {
  const std::size_t n = static_cast<std::size_t>(width()) * height();
  if (width() <= 0 || height() <= 0) malformed("image size must be positive");
  try {
    camera.validate();
  } catch (const Error& e) {
    malformed(e.what());
  }
  auto check_image = [&](const Image8& img, const char* what) {
    if (img.width != width() || img.height != height() || img.channels != 3 || img.pixels.size() != n * 3)
      malformed(std::string(what) + " does not match the declared size");
  };
  check_image(image, "image");
  check_image(background_image, "background image");
  if (depth.size() != n) malformed("depth does not match the declared size");
  if (background_depth.size() != n) malformed("background depth does not match the declared size");

  std::vector<std::uint8_t> owner(n, 0);
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const auto& mask = objects[o].mask;
    if (mask.size() != n) malformed("mask " + std::to_string(o) + " does not match the declared size");
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      if (owner[i]) malformed("masks " + std::to_string(owner[i] - 1) + " and " + std::to_string(o) + " overlap");
      owner[i] = static_cast<std::uint8_t>(std::min<std::size_t>(o + 1, 255));
      if (!valid_depth(depth[i]))
        throw Error(ErrorCode::InvalidDepth, "mask " + std::to_string(o) + " covers pixel (" +
                                                 std::to_string(i % width()) + ", " + std::to_string(i / width()) +
                                                 ") with invalid depth");
    }
    for (const auto& p : objects[o].occluded.positions)
      if (!all_finite(p)) malformed("occluded points must be finite");
  }
}

SceneBundle load_scene_bundle(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::NotFound, "missing " + meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    malformed(std::string("meta.json: ") + e.what());
  }

  SceneBundle b;
  try {
    b.camera.width = meta.at("width").get<int>();
    b.camera.height = meta.at("height").get<int>();
    const auto& k = meta.at("intrinsics");
    b.camera.fx = k.at("fx").get<double>();
    b.camera.fy = k.at("fy").get<double>();
    b.camera.cx = k.at("cx").get<double>();
    b.camera.cy = k.at("cy").get<double>();
    if (meta.contains("camera_pose")) {
      const auto& pose = meta["camera_pose"];
      const auto r = pose.at("rotation").get<std::vector<double>>();
      if (r.size() != 9) malformed("camera_pose.rotation must hold 9 numbers (row-major)");
      for (int i = 0; i < 9; ++i) b.camera.rotation(i / 3, i % 3) = r[i];
      b.camera.translation = vec3_from(pose.at("translation"), "camera_pose.translation");
    }
    if (meta.contains("gravity")) b.gravity = vec3_from(meta["gravity"], "gravity");
    const json objects = meta.value("objects", json::array());
    if (!objects.is_array()) malformed("objects must be an array");
    for (std::size_t i = 0; i < objects.size(); ++i) {
      BundleObject obj;
      obj.material = material_from(objects[i]);
      b.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    malformed(std::string("meta.json: ") + e.what());
  }
  if (b.width() <= 0 || b.height() <= 0) malformed("image size must be positive");

  b.image = rgb_of_size(dir / "image.png", b.width(), b.height());
  b.depth = depth_of_size(dir / "depth.f32", b.width(), b.height());
  b.background_image = rgb_of_size(dir / "background.png", b.width(), b.height());
  b.background_depth = depth_of_size(dir / "background_depth.f32", b.width(), b.height());
  for (std::size_t i = 0; i < b.objects.size(); ++i) {
    const auto mask_path = dir / ("mask_" + std::to_string(i) + ".png");
    const Image8 m = read_png(mask_path);
    if (m.width != b.width() || m.height != b.height())
      malformed(mask_path.filename().string() + " does not match the image size");
    auto& mask = b.objects[i].mask;
    mask.resize(static_cast<std::size_t>(b.width()) * b.height());
    for (std::size_t p = 0; p < mask.size(); ++p) {
      bool inside = false;
      for (int c = 0; c < m.channels; ++c) inside = inside || m.pixels[p * m.channels + c] != 0;
      mask[p] = inside ? 1 : 0;
    }
    const auto occ = dir / ("occluded_" + std::to_string(i) + ".f32");
    if (fs::exists(occ)) b.objects[i].occluded = read_occluded(occ);
  }
  b.validate();
  return b;
}

void write_scene_bundle(const fs::path& dir, const SceneBundle& b) {
  b.validate();
  fs::create_directories(dir);
  json meta;
  meta["width"] = b.width();
  meta["height"] = b.height();
  meta["intrinsics"] = {{"fx", b.camera.fx}, {"fy", b.camera.fy}, {"cx", b.camera.cx}, {"cy", b.camera.cy}};
  std::vector<double> r(9);
  for (int i = 0; i < 9; ++i) r[i] = b.camera.rotation(i / 3, i % 3);
  meta["camera_pose"] = {{"rotation", r},
                         {"translation", {b.camera.translation.x(), b.camera.translation.y(), b.camera.translation.z()}}};
  if (b.gravity) meta["gravity"] = {b.gravity->x(), b.gravity->y(), b.gravity->z()};
  meta["objects"] = json::array();
  for (const auto& o : b.objects) meta["objects"].push_back(material_to_json(o.material));
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

  write_png(dir / "image.png", b.image);
  write_f32(dir / "depth.f32", b.depth);
  write_png(dir / "background.png", b.background_image);
  write_f32(dir / "background_depth.f32", b.background_depth);
  for (std::size_t i = 0; i < b.objects.size(); ++i) {
    Image8 m{b.width(), b.height(), 1, std::vector<std::uint8_t>(b.objects[i].mask.size())};
    for (std::size_t p = 0; p < m.pixels.size(); ++p) m.pixels[p] = b.objects[i].mask[p] ? 255 : 0;
    write_png(dir / ("mask_" + std::to_string(i) + ".png"), m);
    const auto& occ = b.objects[i].occluded;
    const auto occ_path = dir / ("occluded_" + std::to_string(i) + ".f32");
    if (occ.size() == 0) {
      fs::remove(occ_path);
      continue;
    }
    std::vector<float> raw;
    raw.reserve(occ.size() * 6);
    for (std::size_t k = 0; k < occ.size(); ++k) {
      for (int c = 0; c < 3; ++c) raw.push_back(static_cast<float>(occ.positions[k][c]));
      for (int c = 0; c < 3; ++c) raw.push_back(occ.colors[k][c]);
    }
    write_f32(occ_path, raw);
  }
}

PointCloud unproject(std::span<const float> depth, const Camera& k, std::span<const std::uint8_t> mask,
                     const Image8& colors, bool skip_invalid) {
  const int w = k.width, h = k.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (depth.size() != n || (!mask.empty() && mask.size() != n) ||
      colors.pixels.size() != n * static_cast<std::size_t>(colors.channels))
    throw Error(ErrorCode::ShapeError, "unproject inputs disagree with the camera size");
  PointCloud pc;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * w + u;
      if (!mask.empty() && !mask[i]) continue;
      const double d = depth[i];
      if (!valid_depth(depth[i])) {
        if (skip_invalid) continue;
        throw Error(ErrorCode::InvalidDepth, "invalid depth at (" + std::to_string(u) + ", " + std::to_string(v) + ")");
      }
      pc.positions.emplace_back((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d);
      const auto* px = &colors.pixels[i * colors.channels];
      const float r = px[0] / 255.0f;
      const float g = colors.channels >= 3 ? px[1] / 255.0f : r;
      const float bl = colors.channels >= 3 ? px[2] / 255.0f : r;
      pc.colors.emplace_back(r, g, bl);
    }
  return pc;
}

std::vector<double> particle_masses(const MaterialParams& m, std::size_t n, double h) {
  if (m.cls == MaterialClass::Rigid && m.mass > 0.0 && n > 0)
    return std::vector<double>(n, m.mass / static_cast<double>(n));
  return std::vector<double>(n, m.density * h * h * h);
}

SceneState build_scene(const SceneBundle& bundle, const BuildOptions& options) {
  bundle.validate();
  const double h = options.particle_size;
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "particle size must be positive");

  SceneState scene;
  scene.camera = bundle.camera;
  // Without an explicit gravity, "down" is the image's +v direction.
  scene.gravity = bundle.gravity ? *bundle.gravity : Vec3(bundle.camera.rotation.transpose() * Vec3(0.0, 9.8, 0.0));

  auto to_world = [&](PointCloud& pc) {
    for (auto& p : pc.positions) p = bundle.camera.to_world(p);
  };

  // The inpainted background view covers the whole frame, object regions included.
  scene.background = unproject(bundle.background_depth, bundle.camera, {}, bundle.background_image, true);
  to_world(scene.background);

  for (std::size_t o = 0; o < bundle.objects.size(); ++o) {
    const auto& src = bundle.objects[o];
    PointCloud pts = unproject(bundle.depth, bundle.camera, src.mask, bundle.image);
    to_world(pts);
    std::vector<PixelCoord> pixels;
    for (int v = 0; v < bundle.height(); ++v)
      for (int u = 0; u < bundle.width(); ++u)
        if (src.mask[static_cast<std::size_t>(v) * bundle.width() + u]) pixels.push_back({u, v});
    pts.positions.insert(pts.positions.end(), src.occluded.positions.begin(), src.occluded.positions.end());
    pts.colors.insert(pts.colors.end(), src.occluded.colors.begin(), src.occluded.colors.end());

    DynamicObject obj;
    obj.material = src.material;
    obj.positions = std::move(pts.positions);
    obj.colors = std::move(pts.colors);
    obj.velocities.assign(obj.size(), Vec3::Zero());
    obj.masses = particle_masses(obj.material, obj.size(), h);

    const bool volumetric = obj.material.cls != MaterialClass::Cloth;
    if ((volumetric && obj.size() < 4) || obj.size() < 2)
      throw Error(ErrorCode::DegenerateObject, "object " + std::to_string(o) + " has only " +
                                                   std::to_string(obj.size()) + " particles");
    switch (obj.material.cls) {
      case MaterialClass::Rigid:
        init_rigid(obj);
        break;
      case MaterialClass::Elastic:
        init_elastic(obj);
        break;
      case MaterialClass::Cloth:
        init_cloth(obj, pixels);
        break;
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
