#pragma once

#include "actionflow/scene.hpp"

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace actionflow {

//! Little-endian append-only byte sink. Host is assumed little-endian.
class ByteWriter {
 public:
  template <class T>
    requires std::is_trivially_copyable_v<T>
  void put(const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void put_string(const std::string& s);
  void put_vec3(const Vec3& v) { put(v.x()), put(v.y()), put(v.z()); }
  void put_mat3(const Mat3& m);

  std::vector<std::uint8_t>& bytes() { return bytes_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

//! Bounds-checked reader. Throws Error(ProtocolError) on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  template <class T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    require(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string get_string();
  Vec3 get_vec3() {
    const double x = get<double>(), y = get<double>(), z = get<double>();
    return {x, y, z};
  }
  Mat3 get_mat3();

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void require(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void write_camera(ByteWriter& w, const Camera& cam);
Camera read_camera(ByteReader& r);
void write_material(ByteWriter& w, const MaterialParams& m);
MaterialParams read_material(ByteReader& r);
void write_scene(ByteWriter& w, const SceneState& scene);
SceneState read_scene(ByteReader& r);

std::vector<std::uint8_t> serialize_scene(const SceneState& scene);
SceneState deserialize_scene(std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a over raw bytes; used for frame and trace hashes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ull);

template <class T>
std::uint64_t hash_values(const std::vector<T>& values, std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(values.data()), values.size() * sizeof(T)}, seed);
}

}  // namespace actionflow
