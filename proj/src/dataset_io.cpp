#include "douap/dataset_io.hpp"

#include <fmt/format.h>

#include "douap/error.hpp"
#include "douap/io.hpp"

namespace douap {

namespace {

constexpr std::string_view kMagic = "DOUP";

}  // namespace

std::string serialize_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.train.size() + ds.test.size()));
  w.u16(kImageH);
  w.u16(kImageW);
  w.u16(kImageC);
  w.u16(kSeqLen);
  Json keys = Json::array();
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const PairSample& s : *split) {
      for (double p : s.image) w.f32(static_cast<float>(p));
      for (int t : s.tokens) w.u16(static_cast<std::uint16_t>(t));
      keys.push_back(s.key.str());
    }
  }
  Json index = {{"seed", ds.seed}, {"n_train", ds.train.size()}, {"n_test", ds.test.size()}, {"keys", keys}};
  const std::string text = index.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return w.take();
}

Dataset parse_dataset(std::string_view bytes) {
  ByteReader r(bytes, "dataset");
  if (r.bytes(4, "magic") != kMagic) throw Error(ErrorCode::kFormat, "dataset", "bad magic in section 'magic'");
  if (const auto v = r.u16("version"); v != kDatasetVersion) {
    throw Error(ErrorCode::kFormat, "dataset", fmt::format("unsupported version {} in section 'version'", v));
  }
  const std::uint32_t n = r.u32("header");
  const auto h = r.u16("header"), wd = r.u16("header"), c = r.u16("header"), len = r.u16("header");
  if (h != kImageH || wd != kImageW || c != kImageC || len != kSeqLen) {
    throw Error(ErrorCode::kFormat, "dataset",
                fmt::format("section 'header' declares {}x{}x{} / {} tokens", h, wd, c, len));
  }
  const std::size_t per_sample = kImageSize * 4 + kSeqLen * 2;
  if (r.remaining() / per_sample < n) {
    throw Error(ErrorCode::kFormat, "dataset", fmt::format("truncated in section 'samples' ({} declared)", n));
  }
  std::vector<PairSample> samples(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (double& p : samples[i].image) p = r.f32("samples");
    for (int& t : samples[i].tokens) t = r.u16("samples");
  }
  const std::uint32_t json_len = r.u32("index");
  const std::string_view text = r.bytes(json_len, "index");
  if (r.remaining() != 0) throw Error(ErrorCode::kFormat, "dataset", "trailing bytes after section 'index'");

  Json index;
  try {
    index = Json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kFormat, "dataset", fmt::format("section 'index' is not JSON: {}", e.what()));
  }
  Dataset ds;
  try {
    ds.seed = index.at("seed").get<std::uint64_t>();
    const auto n_train = index.at("n_train").get<std::size_t>();
    const auto n_test = index.at("n_test").get<std::size_t>();
    const auto& keys = index.at("keys");
    if (n_train + n_test != n || keys.size() != n) {
      throw Error(ErrorCode::kFormat, "dataset", "section 'index' disagrees with sample count");
    }
    for (std::size_t i = 0; i < n; ++i) samples[i].key = SemanticKey::parse(keys[i].get<std::string>());
    ds.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test.assign(samples.begin() + static_cast<std::ptrdiff_t>(n_train), samples.end());
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kFormat, "dataset", fmt::format("section 'index': {}", e.what()));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormat) throw;
    throw Error(ErrorCode::kFormat, "dataset", fmt::format("section 'index': {}", e.message()));
  }
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const PairSample& s : *split) {
      if (!tokens_well_formed(s.tokens)) throw Error(ErrorCode::kFormat, "dataset", "section 'samples' has bad tokens");
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file(path, serialize_dataset(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(read_file(path)); }

}  // namespace douap
