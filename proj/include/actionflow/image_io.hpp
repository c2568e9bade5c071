#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace actionflow {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit PNG. Palette, 16-bit and alpha inputs are expanded or
/// stripped so that the result has `channels` = 1 (gray) or 3 (RGB).
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

std::vector<float> read_f32(const std::filesystem::path& path);
void write_f32(const std::filesystem::path& path, const std::vector<float>& values);

}  // namespace actionflow
