#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "douap/autodiff.hpp"
#include "douap/synthdata.hpp"

namespace douap {

inline constexpr std::size_t kEmbedDim = 32;
inline constexpr std::size_t kHiddenDim = 64;
inline constexpr std::size_t kPatchSide = 4;
inline constexpr std::size_t kNumPatches = (kImageH / kPatchSide) * (kImageW / kPatchSide);
inline constexpr std::size_t kPatchDim = kPatchSide * kPatchSide * kImageC;
inline constexpr double kTemperature = 0.07;

/// Weights of the aligned dual encoder. Each encoder applies tanh per patch /
/// per token before mean pooling, then a 32-64-32 tanh MLP and L2 norm.
struct DualEncoderParams {
  Tensor patch_w;    // 48 x 32
  Tensor patch_b;    // 32
  Tensor img_pos;    // 16 x 32, one row per patch
  Tensor img_w1;     // 32 x 64
  Tensor img_b1;     // 64
  Tensor img_w2;     // 64 x 32
  Tensor img_b2;     // 32
  Tensor tok_embed;  // 18 x 32
  Tensor pos_embed;  // 8 x 32
  Tensor txt_w1;
  Tensor txt_b1;
  Tensor txt_w2;
  Tensor txt_b2;

  static DualEncoderParams init(std::uint64_t seed);

  std::vector<std::pair<std::string_view, Tensor*>> named();
  std::vector<std::pair<std::string_view, const Tensor*>> named() const;
  /// FNV-1a over the raw bytes of every tensor, in declaration order.
  std::uint64_t checksum() const;
  bool operator==(const DualEncoderParams& other) const;
};

/// Graph handles for every parameter tensor.
struct ParamNodes {
  NodeId patch_w, patch_b, img_pos, img_w1, img_b1, img_w2, img_b2;
  NodeId tok_embed, pos_embed, txt_w1, txt_b1, txt_w2, txt_b2;
};

ParamNodes add_params(Graph& g, const DualEncoderParams& params, bool trainable);

/// Patch-major layout: patch k = (py, px) row-major, each patch flattened as
/// (dy, dx, c). Universal image deltas live in this layout inside graphs.
std::array<double, kImageSize> to_patch_order(const Image& image);
Image from_patch_order(std::span<const double> patch_rows);
/// (n, 768) rows in patch order.
Tensor image_rows(std::span<const Image> images);

/// Replace the token embedding at `position` with row `slot` of the override table.
struct TokenOverride {
  std::size_t position = 0;
  std::size_t slot = 0;
};

struct TextEncoding {
  NodeId embedding;        // (n, 32) unit rows
  NodeId token_embedding;  // (n, 8, 32) token + position embedding before tanh
};

/// Image encoder over a (n, 768) patch-ordered node.
NodeId encode_images(Graph& g, const ParamNodes& p, NodeId image_rows);
TextEncoding encode_texts(Graph& g, const ParamNodes& p, std::span<const TokenSeq> tokens,
                          std::span<const std::optional<TokenOverride>> overrides = {},
                          std::optional<NodeId> override_table = std::nullopt);
/// Symmetric InfoNCE over S = I T^T / tau with diagonal targets.
NodeId contrastive_loss(Graph& g, NodeId image_emb, NodeId text_emb);

Tensor encode_images(const DualEncoderParams& params, std::span<const Image> images);
Tensor encode_texts(const DualEncoderParams& params, std::span<const TokenSeq> tokens,
                    std::span<const std::optional<TokenOverride>> overrides = {},
                    const Tensor* override_table = nullptr);
double contrastive_loss(const DualEncoderParams& params, std::span<const PairSample> batch);

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch = 64;
  std::size_t epochs = 30;
  std::uint64_t seed = 42;

  void validate() const;
};

struct TrainResult {
  DualEncoderParams params;
  std::vector<double> epoch_loss;
};

/// SGD with momentum on the contrastive loss; batches come from a per-epoch
/// shuffle of the training set and the trailing partial batch is dropped.
TrainResult train(DualEncoderParams params, std::span<const PairSample> train_set, const TrainConfig& config);

/// Checkpoint: "DOUP", u16 version 2, u32 section count, then per section
/// u16 name length + ASCII name + u32 element count + f64 payload, then CRC32.
inline constexpr std::uint16_t kCheckpointVersion = 2;

std::string serialize_checkpoint(const DualEncoderParams& params);
DualEncoderParams parse_checkpoint(std::string_view bytes);
void save_checkpoint(const DualEncoderParams& params, const std::filesystem::path& path);
DualEncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace douap
