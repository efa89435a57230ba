#include "latentdirs/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include <zlib.h>

#include "latentdirs/error.hpp"
#include "latentdirs/io.hpp"

namespace latentdirs {

std::vector<float> channel_mean(const Image& image) {
  const std::size_t plane = static_cast<std::size_t>(image.shape.height) * image.shape.width;
  std::vector<float> out(plane, 0.0f);
  for (int c = 0; c < image.shape.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += image.pixels[c * plane + i];
  }
  for (auto& v : out) v /= static_cast<float>(image.shape.channels);
  return out;
}

std::vector<float> resize_plane(std::span<const float> plane, int h, int w, int nh, int nw) {
  std::vector<float> out(static_cast<std::size_t>(nh) * nw);
  if (nh == h && nw == w) {
    std::copy(plane.begin(), plane.end(), out.begin());
    return out;
  }
  const double sy = static_cast<double>(h) / nh;
  const double sx = static_cast<double>(w) / nw;
  for (int y = 0; y < nh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < nw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = plane[y0 * w + x0] * (1 - tx) + plane[y0 * w + x1] * tx;
      const double bot = plane[y1 * w + x0] * (1 - tx) + plane[y1 * w + x1] * tx;
      out[static_cast<std::size_t>(y) * nw + x] = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

Image resize_short_side(const Image& image, int short_side) {
  const int h = image.shape.height;
  const int w = image.shape.width;
  int nh = short_side;
  int nw = short_side;
  if (h < w) {
    nw = static_cast<int>(std::lround(static_cast<double>(w) * short_side / h));
  } else if (w < h) {
    nh = static_cast<int>(std::lround(static_cast<double>(h) * short_side / w));
  }
  Image out(ImageShape{image.shape.channels, nh, nw});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < image.shape.channels; ++c) {
    auto r = resize_plane(std::span<const float>(image.pixels).subspan(c * plane, plane), h, w, nh, nw);
    std::copy(r.begin(), r.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(c * r.size()));
  }
  return out;
}

namespace {

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32_be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_chunk(std::vector<unsigned char>& out, const char* type, const std::vector<unsigned char>& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(data.size() + 4));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

constexpr std::array<unsigned char, 8> kPngSignature = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace

std::vector<unsigned char> encode_png(const Image& image) {
  const int c = image.shape.channels;
  if (c != 1 && c != 3) throw Error(ErrorKind::Unsupported, "PNG export supports 1 or 3 channels");
  const int h = image.shape.height;
  const int w = image.shape.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + w * c));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const float v = std::clamp(image.pixels[ch * plane + static_cast<std::size_t>(y) * w + x], 0.0f, 1.0f);
        raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
    }
  }
  uLongf zsize = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zsize);
  if (compress2(z.data(), &zsize, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error(ErrorKind::Io, "PNG deflate failed");
  }
  z.resize(zsize);

  std::vector<unsigned char> out(kPngSignature.begin(), kPngSignature.end());
  std::vector<unsigned char> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(w));
  put_u32_be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);
  ihdr.push_back(c == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  io::write_text(path, std::string(bytes.begin(), bytes.end()));
}

Image read_png(const std::filesystem::path& path) {
  const std::string data = io::read_text(path);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  if (data.size() < 8 || std::memcmp(p, kPngSignature.data(), 8) != 0) {
    throw Error(ErrorKind::Io, path.string() + " is not a PNG file");
  }
  std::size_t pos = 8;
  int w = 0;
  int h = 0;
  int channels = 0;
  std::vector<unsigned char> idat;
  while (pos + 8 <= data.size()) {
    const std::uint32_t len = get_u32_be(p + pos);
    const std::string type(data.data() + pos + 4, 4);
    if (pos + 12 + len > data.size()) throw Error(ErrorKind::Io, "truncated PNG chunk in " + path.string());
    const unsigned char* body = p + pos + 8;
    if (type == "IHDR") {
      w = static_cast<int>(get_u32_be(body));
      h = static_cast<int>(get_u32_be(body + 4));
      if (body[8] != 8 || body[12] != 0) throw Error(ErrorKind::Unsupported, "only 8-bit non-interlaced PNG is supported");
      if (body[9] == 0) {
        channels = 1;
      } else if (body[9] == 2) {
        channels = 3;
      } else {
        throw Error(ErrorKind::Unsupported, "only gray or RGB PNG is supported");
      }
    } else if (type == "IDAT") {
      idat.insert(idat.end(), body, body + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (channels == 0) throw Error(ErrorKind::Io, "PNG without IHDR: " + path.string());
  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (stride + 1));
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw Error(ErrorKind::Io, "PNG inflate failed for " + path.string());
  }
  std::vector<unsigned char> cur(stride);
  std::vector<unsigned char> prev(stride, 0);
  Image img(ImageShape{channels, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    const unsigned char filter = raw[y * (stride + 1)];
    const unsigned char* line = raw.data() + y * (stride + 1) + 1;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(channels) ? cur[i - channels] : 0;
      const int b = prev[i];
      const int cc = i >= static_cast<std::size_t>(channels) ? prev[i - channels] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: {
          const int pp = a + b - cc;
          const int pa = std::abs(pp - a);
          const int pb = std::abs(pp - b);
          const int pc = std::abs(pp - cc);
          pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
          break;
        }
        default: throw Error(ErrorKind::Io, "bad PNG filter type");
      }
      cur[i] = static_cast<unsigned char>(line[i] + pred);
    }
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < channels; ++ch) {
        img.pixels[ch * plane + static_cast<std::size_t>(y) * w + x] = cur[static_cast<std::size_t>(x) * channels + ch] / 255.0f;
      }
    }
    std::swap(cur, prev);
  }
  return img;
}

Image tile(std::span<const Image> cells, int rows, int cols, int pad, float pad_value) {
  if (cells.empty()) throw Error(ErrorKind::Validation, "cannot tile zero images");
  const ImageShape cs = cells.front().shape;
  Image out(ImageShape{cs.channels, rows * cs.height + (rows - 1) * pad, cols * cs.width + (cols - 1) * pad}, pad_value);
  for (int r = 0; r < rows; ++r) {
    for (int col = 0; col < cols; ++col) {
      const std::size_t idx = static_cast<std::size_t>(r) * cols + col;
      if (idx >= cells.size()) continue;
      const Image& cell = cells[idx];
      if (!(cell.shape == cs)) throw Error(ErrorKind::ShapeMismatch, "tile cells must share a shape");
      for (int ch = 0; ch < cs.channels; ++ch) {
        for (int y = 0; y < cs.height; ++y) {
          for (int x = 0; x < cs.width; ++x) {
            out.at(ch, r * (cs.height + pad) + y, col * (cs.width + pad) + x) = cell.at(ch, y, x);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace latentdirs
