#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace douap {

using Json = nlohmann::ordered_json;

/// Pretty JSON with every floating-point number printed using 17 significant
/// digits (round-trips f64 exactly).
std::string dump_json(const Json& value);

std::string format_double(double v);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);
std::string encode_f64_base64(std::span<const double> values);
std::vector<double> decode_f64_base64(std::string_view text);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes through a sibling temp file and renames, so readers never observe a
/// partially written artifact.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Little-endian serializer.
class ByteWriter {
 public:
  void bytes(std::string_view raw) { buf_.append(raw); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v);
  void f64(double v);

  const std::string& str() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n);
  std::string buf_;
};

/// Little-endian deserializer; every read names the section it belongs to so
/// truncation errors point at the offending part of the file.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

  std::string_view bytes(std::size_t n, std::string_view section);
  std::uint16_t u16(std::string_view section) { return static_cast<std::uint16_t>(get(2, section)); }
  std::uint32_t u32(std::string_view section) { return static_cast<std::uint32_t>(get(4, section)); }
  float f32(std::string_view section);
  double f64(std::string_view section);

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::uint64_t get(int n, std::string_view section);
  std::string_view data_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace douap
