#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace latentdirs {

struct ImageShape {
  int channels = 1;
  int height = 32;
  int width = 32;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// Planar CHW float image; pipeline values live in [0, 1].
struct Image {
  ImageShape shape;
  std::vector<float> pixels;

  Image() = default;
  explicit Image(ImageShape s, float fill = 0.0f) : shape(s), pixels(s.size(), fill) {}

  float& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
  [[nodiscard]] float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
};

// Mean over channels, one value per pixel (H*W, row-major).
std::vector<float> channel_mean(const Image& image);

// Bilinear resize so that the shorter side equals `short_side`.
Image resize_short_side(const Image& image, int short_side);

// Bilinear resize of a single H x W plane.
std::vector<float> resize_plane(std::span<const float> plane, int height, int width, int new_height,
                                int new_width);

// 8-bit PNG encoding (gray for 1 channel, RGB for 3). Values clamped to [0, 1].
std::vector<unsigned char> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Tiles equally sized images into a grid (row-major), with `pad` pixels of
// value `pad_value` between cells.
Image tile(std::span<const Image> cells, int rows, int cols, int pad = 1, float pad_value = 1.0f);

}  // namespace latentdirs
