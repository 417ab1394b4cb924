#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tseg {

// 8-bit interleaved image, row-major; channels is 1 (gray) or 3 (rgb).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

std::vector<std::uint8_t> png_encode(const ImageU8& image);
ImageU8 png_decode(const std::vector<std::uint8_t>& bytes);

void png_write_file(const std::filesystem::path& path, const ImageU8& image);
ImageU8 png_read_file(const std::filesystem::path& path);

}  // namespace tseg
