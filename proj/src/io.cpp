#include "latentdirs/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "latentdirs/error.hpp"

namespace latentdirs {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::DegenerateColumn: return "degenerate_column";
    case ErrorKind::Index: return "index";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::InsufficientData: return "insufficient_data";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

namespace io {

void write_u32_le(std::ostream& out, std::uint32_t value) {
  unsigned char b[4] = {static_cast<unsigned char>(value), static_cast<unsigned char>(value >> 8),
                        static_cast<unsigned char>(value >> 16), static_cast<unsigned char>(value >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorKind::Io, "truncated u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32_le(std::ostream& out, std::span<const float> values) {
  for (float v : values) write_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

std::vector<float> read_f32_le(std::istream& in, std::size_t count) {
  std::vector<float> values(count);
  for (auto& v : values) v = std::bit_cast<float>(read_u32_le(in));
  return values;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::filesystem::path& path, const Json& value) {
  write_text(path, value.dump(2) + "\n");
}

Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Io, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

void save_params(const std::filesystem::path& path, std::span<const float> params, const Json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write("LDPF", 4);
  write_u32_le(out, static_cast<std::uint32_t>(params.size()));
  write_f32_le(out, params);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
  write_json(path.string() + ".json", meta);
}

std::vector<float> load_params(const std::filesystem::path& path, Json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "LDPF", 4) != 0) {
    throw Error(ErrorKind::Io, path.string() + " is not a parameter checkpoint");
  }
  const auto n = read_u32_le(in);
  auto params = read_f32_le(in, n);
  if (meta) *meta = read_json(path.string() + ".json");
  return params;
}

std::uint64_t checksum(std::span<const float> values) {
  std::uint64_t h = 1469598103934665603ull;
  for (float v : values) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace io
}  // namespace latentdirs
