#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace strm {

using Rgb = std::array<std::uint8_t, 3>;

/// Row-major interleaved 8-bit RGB image, row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});

  Rgb at(int x, int y) const {
    const auto i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = index(x, y);
    data[i] = c[0];
    data[i + 1] = c[1];
    data[i + 2] = c[2];
  }
  std::size_t byte_size() const { return data.size(); }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
  }
};

/// Binary PPM (P6). Lossless, which is all the world export needs. A non-empty
/// `comment` goes into a single header comment line.
void write_ppm(const std::filesystem::path& path, const Image& img, const std::string& comment = {});
Image read_ppm(const std::filesystem::path& path);

}  // namespace strm
