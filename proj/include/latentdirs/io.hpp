#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace latentdirs::io {

using Json = nlohmann::json;

void write_u32_le(std::ostream& out, std::uint32_t value);
std::uint32_t read_u32_le(std::istream& in);
void write_f32_le(std::ostream& out, std::span<const float> values);
std::vector<float> read_f32_le(std::istream& in, std::size_t count);

// Whole-file helpers. Failures raise Error{Io}.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);
Json read_json(const std::filesystem::path& path);

// Flat float32 parameter checkpoint: "LDPF" magic, u32 count, floats.
// Metadata goes to `<path>.json`.
void save_params(const std::filesystem::path& path, std::span<const float> params, const Json& meta);
std::vector<float> load_params(const std::filesystem::path& path, Json* meta = nullptr);

// FNV-1a over the raw bytes of a float array; used as a parameter checksum.
std::uint64_t checksum(std::span<const float> values);

}  // namespace latentdirs::io
