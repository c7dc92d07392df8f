#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "douap/rng.hpp"

namespace douap {

inline constexpr std::size_t kImageH = 16;
inline constexpr std::size_t kImageW = 16;
inline constexpr std::size_t kImageC = 3;
inline constexpr std::size_t kImageSize = kImageH * kImageW * kImageC;
inline constexpr std::size_t kSeqLen = 8;
inline constexpr std::size_t kVocabSize = 18;
inline constexpr double kBackground = 0.2;

// Vocabulary ids.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kFirstColor = 3;
inline constexpr int kFirstShape = 7;
inline constexpr int kFirstPosition = 10;
inline constexpr int kArticleA = 14;
inline constexpr int kArticleThe = 15;
inline constexpr int kAt = 16;
inline constexpr int kAnd = 17;

inline constexpr bool is_structural_token(int token) { return token == kPad || token == kBos || token == kEos; }

enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow };
enum class ShapeKind : std::uint8_t { kSquare, kCross, kStripes };
enum class Cell : std::uint8_t { kTopLeft, kTopRight, kBottomLeft, kBottomRight };

inline constexpr std::size_t kNumColors = 4;
inline constexpr std::size_t kNumShapes = 3;
inline constexpr std::size_t kNumCells = 4;

struct SceneObject {
  Color color;
  ShapeKind shape;
  Cell cell;
  auto operator<=>(const SceneObject&) const = default;
};

/// Canonical scene description: one or two objects in distinct cells, sorted
/// by (color, shape, cell). Two-object scenes hold distinct (color, shape).
struct SemanticKey {
  std::vector<SceneObject> objects;

  bool valid() const;
  /// e.g. "red-square-TL" or "green-cross-TR+blue-stripes-BL".
  std::string str() const;
  static SemanticKey parse(std::string_view text);
  bool operator==(const SemanticKey&) const = default;
};

SemanticKey make_key(std::vector<SceneObject> objects);

using Image = std::array<double, kImageSize>;  // row-major H x W x C
using TokenSeq = std::array<int, kSeqLen>;

constexpr std::size_t pixel_index(std::size_t y, std::size_t x, std::size_t c) {
  return (y * kImageW + x) * kImageC + c;
}

struct PairSample {
  Image image{};
  TokenSeq tokens{};
  SemanticKey key;
};

struct Dataset {
  std::uint64_t seed = 0;
  std::vector<PairSample> train;
  std::vector<PairSample> test;
};

/// Distinct-caption test pool: 48 single-object + 48 two-object scenes.
inline constexpr std::size_t kTestPoolSize = 96;

Dataset generate_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test);
std::vector<SemanticKey> test_key_pool(std::uint64_t seed);

Image render(const SemanticKey& key);
TokenSeq caption(const SemanticKey& key, Rng& rng);
/// Checks BOS/EOS/PAD layout and id range.
bool tokens_well_formed(const TokenSeq& tokens);

enum class AugKind : std::uint8_t { kNone, kBrightness, kFlip, kNoise, kCrop, kCompression };

std::string_view to_string(AugKind kind);
AugKind parse_aug_kind(std::string_view name);

struct AugSpec {
  AugKind kind = AugKind::kNone;
  double brightness_lo = 0.0;
  double brightness_hi = 0.05;
  double noise_sigma = 0.05;
  double crop_keep = 0.875;
  int compression_levels = 8;

  static AugSpec none() { return {}; }
  static AugSpec brightness(double lo, double hi) {
    AugSpec s;
    s.kind = AugKind::kBrightness;
    s.brightness_lo = lo;
    s.brightness_hi = hi;
    return s;
  }
  static AugSpec of(AugKind kind) {
    AugSpec s;
    s.kind = kind;
    return s;
  }

  /// Throws Error(kInvalidArgument) on out-of-range parameters.
  void validate() const;
};

Image augment(const Image& image, const AugSpec& spec, Rng& rng);

}  // namespace douap
