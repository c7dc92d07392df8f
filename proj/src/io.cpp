#include "douap/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "douap/error.hpp"

namespace douap {

namespace {

constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

void dump_into(const Json& v, std::string& out, int depth) {
  const std::string pad(static_cast<std::size_t>(depth + 1) * 2, ' ');
  const std::string close_pad(static_cast<std::size_t>(depth) * 2, ' ');
  switch (v.type()) {
    case Json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        out += Json(it.key()).dump();
        out += ": ";
        dump_into(it.value(), out, depth + 1);
      }
      out += "\n" + close_pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",\n";
        out += pad;
        dump_into(v[i], out, depth + 1);
      }
      out += "\n" + close_pad + "]";
      return;
    }
    case Json::value_t::number_float:
      out += format_double(v.get<double>());
      return;
    default:
      out += v.dump();
      return;
  }
}

}  // namespace

std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  std::string s = fmt::format("{:.17g}", v);
  // keep a float marker so parsers read the value back as a double
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string dump_json(const Json& value) {
  std::string out;
  dump_into(value, out, 0);
  out += '\n';
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(n >> 18) & 63];
    out += kB64[(n >> 12) & 63];
    out += kB64[(n >> 6) & 63];
    out += kB64[n & 63];
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t n = bytes[i] << 16;
    if (rest == 2) n |= bytes[i + 1] << 8;
    out += kB64[(n >> 18) & 63];
    out += kB64[(n >> 12) & 63];
    out += rest == 2 ? kB64[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kFormat, "base64", "length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pads = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      std::uint32_t val = 0;
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw Error(ErrorCode::kFormat, "base64", "misplaced padding");
        ++pads;
      } else {
        if (pads) throw Error(ErrorCode::kFormat, "base64", "data after padding");
        const std::size_t pos = kB64.find(c);
        if (pos == std::string_view::npos) {
          throw Error(ErrorCode::kFormat, "base64", fmt::format("invalid character at {}", i + k));
        }
        val = static_cast<std::uint32_t>(pos);
      }
      n = (n << 6) | val;
    }
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    if (pads < 2) out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xFF));
    if (pads < 1) out.push_back(static_cast<std::uint8_t>(n & 0xFF));
  }
  return out;
}

std::string encode_f64_base64(std::span<const double> values) {
  ByteWriter w;
  for (double v : values) w.f64(v);
  const std::string& raw = w.str();
  return base64_encode({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
}

std::vector<double> decode_f64_base64(std::string_view text) {
  const std::vector<std::uint8_t> raw = base64_decode(text);
  if (raw.size() % 8 != 0) throw Error(ErrorCode::kFormat, "base64", "payload is not a whole number of f64");
  ByteReader r({reinterpret_cast<const char*>(raw.data()), raw.size()}, "base64 f64");
  std::vector<double> out(raw.size() / 8);
  for (double& v : out) v = r.f64("payload");
  return out;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, path.string(), "cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::kIo, path.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, path.string(), ec.message());
}

void ByteWriter::put(std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) buf_ += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void ByteWriter::f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
void ByteWriter::f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

std::string_view ByteReader::bytes(std::size_t n, std::string_view section) {
  if (remaining() < n) {
    throw Error(ErrorCode::kFormat, context_,
                fmt::format("truncated in section '{}' (need {} bytes at offset {}, have {})", section, n, pos_,
                            remaining()));
  }
  std::string_view out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint64_t ByteReader::get(int n, std::string_view section) {
  std::string_view raw = bytes(static_cast<std::size_t>(n), section);
  std::uint64_t v = 0;
  for (int i = n; i-- > 0;) v = (v << 8) | static_cast<std::uint8_t>(raw[static_cast<std::size_t>(i)]);
  return v;
}

float ByteReader::f32(std::string_view section) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, section)));
}

double ByteReader::f64(std::string_view section) { return std::bit_cast<double>(get(8, section)); }

}  // namespace douap
