#include "actionflow/serialize.hpp"

#include "actionflow/error.hpp"

namespace actionflow {

namespace {

constexpr std::uint32_t kSceneTag = 0x53434e45;  // "SCNE"

template <class T>
void put_vector(ByteWriter& w, const std::vector<T>& v) {
  w.put<std::uint64_t>(v.size());
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(T)});
}

template <class T>
std::vector<T> get_vector(ByteReader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining() / sizeof(T)) throw Error(ErrorCode::ProtocolError, "vector length exceeds payload");
  std::vector<T> v(n);
  auto bytes = r.get_bytes(n * sizeof(T));
  std::memcpy(static_cast<void*>(v.data()), bytes.data(), bytes.size());
  return v;
}

}  // namespace

void ByteWriter::put_string(const std::string& s) {
  put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  put_bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

void ByteWriter::put_mat3(const Mat3& m) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) put(m(r, c));
}

void ByteReader::require(std::size_t n) const {
  if (n > data_.size() - pos_) throw Error(ErrorCode::ProtocolError, "unexpected end of data");
}

std::string ByteReader::get_string() {
  const auto n = get<std::uint32_t>();
  auto bytes = get_bytes(n);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

Mat3 ByteReader::get_mat3() {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = get<double>();
  return m;
}

void write_camera(ByteWriter& w, const Camera& cam) {
  w.put(cam.fx), w.put(cam.fy), w.put(cam.cx), w.put(cam.cy);
  w.put<std::int32_t>(cam.width), w.put<std::int32_t>(cam.height);
  w.put_mat3(cam.rotation);
  w.put_vec3(cam.translation);
}

Camera read_camera(ByteReader& r) {
  Camera cam;
  cam.fx = r.get<double>(), cam.fy = r.get<double>(), cam.cx = r.get<double>(), cam.cy = r.get<double>();
  cam.width = r.get<std::int32_t>(), cam.height = r.get<std::int32_t>();
  cam.rotation = r.get_mat3();
  cam.translation = r.get_vec3();
  return cam;
}

void write_material(ByteWriter& w, const MaterialParams& m) {
  w.put(static_cast<std::uint8_t>(m.cls));
  for (double v : {m.mass, m.density, m.friction_coefficient, m.youngs_modulus, m.poissons_ratio, m.friction_angle,
                   m.stretch_compliance, m.bending_compliance, m.volume_compliance, m.stretch_relaxation,
                   m.bending_relaxation, m.volume_relaxation, m.viscosity})
    w.put(v);
}

MaterialParams read_material(ByteReader& r) {
  MaterialParams m;
  const auto cls = r.get<std::uint8_t>();
  if (cls > static_cast<std::uint8_t>(MaterialClass::Granular))
    throw Error(ErrorCode::ProtocolError, "bad material class");
  m.cls = static_cast<MaterialClass>(cls);
  for (double* v : {&m.mass, &m.density, &m.friction_coefficient, &m.youngs_modulus, &m.poissons_ratio,
                    &m.friction_angle, &m.stretch_compliance, &m.bending_compliance, &m.volume_compliance,
                    &m.stretch_relaxation, &m.bending_relaxation, &m.volume_relaxation, &m.viscosity})
    *v = r.get<double>();
  return m;
}

void write_scene(ByteWriter& w, const SceneState& scene) {
  w.put(kSceneTag);
  write_camera(w, scene.camera);
  w.put(scene.sim_time);
  w.put_vec3(scene.gravity);
  put_vector(w, scene.background.positions);
  put_vector(w, scene.background.colors);
  w.put<std::uint64_t>(scene.objects.size());
  for (const auto& obj : scene.objects) {
    write_material(w, obj.material);
    put_vector(w, obj.positions);
    put_vector(w, obj.velocities);
    put_vector(w, obj.colors);
    put_vector(w, obj.masses);
    w.put(static_cast<std::uint8_t>(obj.solver.index()));
    if (const auto* rigid = std::get_if<RigidState>(&obj.solver)) {
      put_vector(w, rigid->rest_positions);
      w.put_vec3(rigid->rest_center);
      for (double c : {rigid->orientation.w(), rigid->orientation.x(), rigid->orientation.y(), rigid->orientation.z()})
        w.put(c);
    } else if (const auto* pbd = std::get_if<PbdState>(&obj.solver)) {
      put_vector(w, pbd->edges);
      put_vector(w, pbd->bends);
      put_vector(w, pbd->tets);
      put_vector(w, pbd->pinned);
      w.put(pbd->rest_density);
      w.put(pbd->kernel_radius);
      w.put<std::uint8_t>(pbd->built);
      put_vector(w, pbd->edge_colors);
      put_vector(w, pbd->bend_colors);
      put_vector(w, pbd->tet_colors);
    } else if (const auto* mpm = std::get_if<MpmState>(&obj.solver)) {
      put_vector(w, mpm->deformation);
      put_vector(w, mpm->affine);
      put_vector(w, mpm->stress);
      put_vector(w, mpm->volume);
    }
  }
}

SceneState read_scene(ByteReader& r) {
  if (r.get<std::uint32_t>() != kSceneTag) throw Error(ErrorCode::ProtocolError, "not a scene record");
  SceneState scene;
  scene.camera = read_camera(r);
  scene.sim_time = r.get<double>();
  scene.gravity = r.get_vec3();
  scene.background.positions = get_vector<Vec3>(r);
  scene.background.colors = get_vector<Vec3f>(r);
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    DynamicObject obj;
    obj.material = read_material(r);
    obj.positions = get_vector<Vec3>(r);
    obj.velocities = get_vector<Vec3>(r);
    obj.colors = get_vector<Vec3f>(r);
    obj.masses = get_vector<double>(r);
    switch (r.get<std::uint8_t>()) {
      case 0: break;
      case 1: {
        RigidState rigid;
        rigid.rest_positions = get_vector<Vec3>(r);
        rigid.rest_center = r.get_vec3();
        const double qw = r.get<double>(), qx = r.get<double>(), qy = r.get<double>(), qz = r.get<double>();
        rigid.orientation = Quat(qw, qx, qy, qz);
        obj.solver = std::move(rigid);
        break;
      }
      case 2: {
        PbdState pbd;
        pbd.edges = get_vector<Edge>(r);
        pbd.bends = get_vector<Bend>(r);
        pbd.tets = get_vector<Tet>(r);
        pbd.pinned = get_vector<std::uint8_t>(r);
        pbd.rest_density = r.get<double>();
        pbd.kernel_radius = r.get<double>();
        pbd.built = r.get<std::uint8_t>() != 0;
        pbd.edge_colors = get_vector<std::uint32_t>(r);
        pbd.bend_colors = get_vector<std::uint32_t>(r);
        pbd.tet_colors = get_vector<std::uint32_t>(r);
        obj.solver = std::move(pbd);
        break;
      }
      case 3: {
        MpmState mpm;
        mpm.deformation = get_vector<Mat3>(r);
        mpm.affine = get_vector<Mat3>(r);
        mpm.stress = get_vector<Mat3>(r);
        mpm.volume = get_vector<double>(r);
        obj.solver = std::move(mpm);
        break;
      }
      default: throw Error(ErrorCode::ProtocolError, "bad solver tag");
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

std::vector<std::uint8_t> serialize_scene(const SceneState& scene) {
  ByteWriter w;
  write_scene(w, scene);
  return std::move(w.bytes());
}

SceneState deserialize_scene(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  return read_scene(r);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace actionflow
