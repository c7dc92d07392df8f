#include "douap/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "douap/error.hpp"

namespace douap {

namespace {

constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"square", "cross", "stripes"};
constexpr std::array<std::string_view, kNumCells> kCellNames = {"TL", "TR", "BL", "BR"};
constexpr std::array<std::array<double, 3>, kNumColors> kColorRgb = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}}};

constexpr std::uint64_t kPoolStream = 0xD1B54A32D192ED03ULL;
constexpr std::size_t kCellSide = 8;

template <std::size_t N>
std::size_t lookup(const std::array<std::string_view, N>& names, std::string_view name, std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return i;
  }
  throw Error(ErrorCode::kInvalidArgument, "SemanticKey::parse", fmt::format("unknown {} '{}'", what, name));
}

SceneObject object_from_index(std::size_t index, Cell cell) {
  return {static_cast<Color>(index / kNumShapes), static_cast<ShapeKind>(index % kNumShapes), cell};
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

std::pair<Cell, Cell> distinct_cells(Rng& rng) {
  const auto first = rng.below(kNumCells);
  const auto second = (first + 1 + rng.below(kNumCells - 1)) % kNumCells;
  return {static_cast<Cell>(first), static_cast<Cell>(second)};
}

SemanticKey random_key(Rng& rng) {
  if (rng.below(2) == 0) {
    const auto color = static_cast<Color>(rng.below(kNumColors));
    const auto shape = static_cast<ShapeKind>(rng.below(kNumShapes));
    const auto cell = static_cast<Cell>(rng.below(kNumCells));
    return make_key({{color, shape, cell}});
  }
  constexpr std::size_t kObjects = kNumColors * kNumShapes;
  const std::size_t a = rng.below(kObjects);
  const std::size_t b = (a + 1 + rng.below(kObjects - 1)) % kObjects;
  const auto [ca, cb] = distinct_cells(rng);
  return make_key({object_from_index(a, ca), object_from_index(b, cb)});
}

PairSample make_sample(const SemanticKey& key, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  PairSample s;
  s.key = key;
  s.image = render(key);
  s.tokens = caption(key, rng);
  return s;
}

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

bool SemanticKey::valid() const {
  if (objects.empty() || objects.size() > 2) return false;
  for (const SceneObject& o : objects) {
    if (static_cast<std::size_t>(o.color) >= kNumColors || static_cast<std::size_t>(o.shape) >= kNumShapes ||
        static_cast<std::size_t>(o.cell) >= kNumCells) {
      return false;
    }
  }
  if (!std::is_sorted(objects.begin(), objects.end())) return false;
  if (objects.size() == 2) {
    const SceneObject& a = objects[0];
    const SceneObject& b = objects[1];
    if (a.cell == b.cell) return false;
    if (a.color == b.color && a.shape == b.shape) return false;
  }
  return true;
}

std::string SemanticKey::str() const {
  std::string out;
  for (const SceneObject& o : objects) {
    if (!out.empty()) out += '+';
    out += fmt::format("{}-{}-{}", kColorNames[static_cast<std::size_t>(o.color)],
                       kShapeNames[static_cast<std::size_t>(o.shape)], kCellNames[static_cast<std::size_t>(o.cell)]);
  }
  return out;
}

SemanticKey SemanticKey::parse(std::string_view text) {
  std::vector<SceneObject> objects;
  while (!text.empty()) {
    const std::size_t plus = text.find('+');
    std::string_view part = text.substr(0, plus);
    text = plus == std::string_view::npos ? std::string_view{} : text.substr(plus + 1);
    const std::size_t d1 = part.find('-');
    const std::size_t d2 = d1 == std::string_view::npos ? d1 : part.find('-', d1 + 1);
    if (d2 == std::string_view::npos) {
      throw Error(ErrorCode::kInvalidArgument, "SemanticKey::parse", fmt::format("malformed object '{}'", part));
    }
    objects.push_back({static_cast<Color>(lookup(kColorNames, part.substr(0, d1), "color")),
                       static_cast<ShapeKind>(lookup(kShapeNames, part.substr(d1 + 1, d2 - d1 - 1), "shape")),
                       static_cast<Cell>(lookup(kCellNames, part.substr(d2 + 1), "cell"))});
  }
  SemanticKey key = make_key(std::move(objects));
  if (!key.valid()) {
    throw Error(ErrorCode::kInvalidArgument, "SemanticKey::parse", fmt::format("invalid key '{}'", key.str()));
  }
  return key;
}

SemanticKey make_key(std::vector<SceneObject> objects) {
  std::sort(objects.begin(), objects.end());
  return SemanticKey{std::move(objects)};
}

std::vector<SemanticKey> test_key_pool(std::uint64_t seed) {
  std::vector<SemanticKey> pool;
  pool.reserve(kTestPoolSize);
  for (std::size_t c = 0; c < kNumColors; ++c) {
    for (std::size_t s = 0; s < kNumShapes; ++s) {
      for (std::size_t cell = 0; cell < kNumCells; ++cell) {
        pool.push_back(make_key({{static_cast<Color>(c), static_cast<ShapeKind>(s), static_cast<Cell>(cell)}}));
      }
    }
  }

  Rng rng(seed ^ kPoolStream);
  constexpr std::size_t kObjects = kNumColors * kNumShapes;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < kObjects; ++a) {
    for (std::size_t b = a + 1; b < kObjects; ++b) pairs.emplace_back(a, b);
  }
  shuffle(pairs, rng);
  const std::size_t n_pairs = kTestPoolSize - pool.size();
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto [ca, cb] = distinct_cells(rng);
    pool.push_back(make_key({object_from_index(pairs[i].first, ca), object_from_index(pairs[i].second, cb)}));
  }
  shuffle(pool, rng);
  return pool;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test) {
  if (n_train < 1) throw Error(ErrorCode::kInvalidArgument, "generate_dataset", "n_train must be >= 1");
  if (n_test > kTestPoolSize) {
    throw Error(ErrorCode::kPoolExhausted, "generate_dataset",
                fmt::format("n_test {} exceeds the {} distinct test scenes", n_test, kTestPoolSize));
  }
  Dataset ds;
  ds.seed = seed;
  ds.train.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    Rng key_rng(seed ^ i);
    const SemanticKey key = random_key(key_rng);
    // caption draws continue on the same per-sample stream
    PairSample s;
    s.key = key;
    s.image = render(key);
    s.tokens = caption(key, key_rng);
    ds.train.push_back(std::move(s));
  }
  const std::vector<SemanticKey> pool = test_key_pool(seed);
  ds.test.reserve(n_test);
  for (std::size_t i = 0; i < n_test; ++i) ds.test.push_back(make_sample(pool[i], seed ^ (n_train + i)));
  return ds;
}

Image render(const SemanticKey& key) {
  Image img;
  img.fill(static_cast<double>(static_cast<float>(kBackground)));
  for (const SceneObject& o : key.objects) {
    const std::size_t cell = static_cast<std::size_t>(o.cell);
    const std::size_t oy = (cell / 2) * kCellSide;
    const std::size_t ox = (cell % 2) * kCellSide;
    const auto& rgb = kColorRgb[static_cast<std::size_t>(o.color)];
    for (std::size_t y = 0; y < kCellSide; ++y) {
      for (std::size_t x = 0; x < kCellSide; ++x) {
        bool on = false;
        switch (o.shape) {
          case ShapeKind::kSquare: on = y >= 1 && y <= 6 && x >= 1 && x <= 6; break;
          case ShapeKind::kCross: on = (y == 3 || y == 4) || (x == 3 || x == 4); break;
          case ShapeKind::kStripes: on = y % 2 == 0; break;
        }
        if (!on) continue;
        for (std::size_t c = 0; c < kImageC; ++c) img[pixel_index(oy + y, ox + x, c)] = rgb[c];
      }
    }
  }
  return img;
}

TokenSeq caption(const SemanticKey& key, Rng& rng) {
  TokenSeq t{};
  auto color_tok = [](const SceneObject& o) { return kFirstColor + static_cast<int>(o.color); };
  auto shape_tok = [](const SceneObject& o) { return kFirstShape + static_cast<int>(o.shape); };
  if (key.objects.size() == 1) {
    const SceneObject& o = key.objects[0];
    const int article = rng.below(2) == 0 ? kArticleA : kArticleThe;
    t = {kBos, article, color_tok(o), shape_tok(o), kAt, kFirstPosition + static_cast<int>(o.cell), kEos, kPad};
  } else {
    const SceneObject& a = key.objects[0];
    const SceneObject& b = key.objects[1];
    t = {kBos, color_tok(a), shape_tok(a), kAnd, color_tok(b), shape_tok(b), kEos, kPad};
  }
  return t;
}

bool tokens_well_formed(const TokenSeq& tokens) {
  if (tokens[0] != kBos) return false;
  std::size_t eos = kSeqLen;
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    if (tokens[i] < 0 || tokens[i] >= static_cast<int>(kVocabSize)) return false;
    if (tokens[i] == kEos) {
      if (eos != kSeqLen) return false;
      eos = i;
    }
    if (tokens[i] == kBos && i != 0) return false;
    const bool after_eos = eos != kSeqLen && i > eos;
    if ((tokens[i] == kPad) != after_eos) return false;
  }
  return eos != kSeqLen;
}

std::string_view to_string(AugKind kind) {
  switch (kind) {
    case AugKind::kNone: return "none";
    case AugKind::kBrightness: return "brightness";
    case AugKind::kFlip: return "flip";
    case AugKind::kNoise: return "noise";
    case AugKind::kCrop: return "crop";
    case AugKind::kCompression: return "compression";
  }
  return "none";
}

AugKind parse_aug_kind(std::string_view name) {
  for (AugKind k : {AugKind::kNone, AugKind::kBrightness, AugKind::kFlip, AugKind::kNoise, AugKind::kCrop,
                    AugKind::kCompression}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "AugSpec", fmt::format("unknown augmentation '{}'", name));
}

void AugSpec::validate() const {
  auto fail = [](std::string msg) { throw Error(ErrorCode::kInvalidArgument, "AugSpec", std::move(msg)); };
  switch (kind) {
    case AugKind::kBrightness:
      if (!(0.0 <= brightness_lo && brightness_lo <= brightness_hi && brightness_hi <= 1.0)) {
        fail(fmt::format("brightness needs 0 <= lo <= hi <= 1, got [{:g}, {:g}]", brightness_lo, brightness_hi));
      }
      break;
    case AugKind::kNoise:
      if (!(noise_sigma >= 0.0 && std::isfinite(noise_sigma))) fail(fmt::format("noise sigma {:g}", noise_sigma));
      break;
    case AugKind::kCrop:
      if (!(crop_keep > 0.0 && crop_keep <= 1.0)) fail(fmt::format("crop keep-fraction {:g} not in (0, 1]", crop_keep));
      break;
    case AugKind::kCompression:
      if (compression_levels < 2) fail(fmt::format("compression levels {} < 2", compression_levels));
      break;
    case AugKind::kNone:
    case AugKind::kFlip:
      break;
  }
}

Image augment(const Image& image, const AugSpec& spec, Rng& rng) {
  spec.validate();
  Image out = image;
  switch (spec.kind) {
    case AugKind::kNone:
      break;
    case AugKind::kBrightness: {
      const double b = rng.uniform(spec.brightness_lo, spec.brightness_hi);
      for (double& p : out) p = clip01(p + b);
      break;
    }
    case AugKind::kFlip:
      for (std::size_t y = 0; y < kImageH; ++y) {
        for (std::size_t x = 0; x < kImageW; ++x) {
          for (std::size_t c = 0; c < kImageC; ++c) {
            out[pixel_index(y, x, c)] = image[pixel_index(y, kImageW - 1 - x, c)];
          }
        }
      }
      break;
    case AugKind::kNoise:
      for (double& p : out) p = clip01(p + spec.noise_sigma * rng.gaussian());
      break;
    case AugKind::kCrop: {
      const auto side = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(spec.crop_keep * static_cast<double>(kImageH))));
      const std::size_t oy = rng.below(kImageH - side + 1);
      const std::size_t ox = rng.below(kImageW - side + 1);
      for (std::size_t y = 0; y < kImageH; ++y) {
        for (std::size_t x = 0; x < kImageW; ++x) {
          const std::size_t sy = oy + y * side / kImageH;
          const std::size_t sx = ox + x * side / kImageW;
          for (std::size_t c = 0; c < kImageC; ++c) out[pixel_index(y, x, c)] = image[pixel_index(sy, sx, c)];
        }
      }
      break;
    }
    case AugKind::kCompression: {
      const double steps = static_cast<double>(spec.compression_levels - 1);
      for (double& p : out) p = clip01(std::round(p * steps) / steps);
      break;
    }
  }
  return out;
}

}  // namespace douap
