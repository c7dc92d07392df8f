#include "douap/toyvlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "douap/error.hpp"
#include "douap/io.hpp"
#include "douap/rng.hpp"

namespace douap {

namespace {

constexpr std::size_t kTextInputs = kVocabSize + kSeqLen;
constexpr std::uint64_t kInitStream = 0x7F4A7C159E3779B9ULL;

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.gaussian();
  return t;
}

Tensor zeros(std::size_t n) { return Tensor(Shape{n}); }

NodeId mlp_head(Graph& g, NodeId x, NodeId w1, NodeId b1, NodeId w2, NodeId b2) {
  const NodeId h = g.tanh(g.affine(x, w1, b1));
  return g.l2_normalize(g.affine(h, w2, b2));
}

}  // namespace

DualEncoderParams DualEncoderParams::init(std::uint64_t seed) {
  Rng rng(seed ^ kInitStream);
  auto fan_in = [](std::size_t n) { return 2.0 / std::sqrt(static_cast<double>(n)); };
  DualEncoderParams p;
  p.patch_w = gaussian({kPatchDim, kEmbedDim}, fan_in(kPatchDim), rng);
  p.patch_b = zeros(kEmbedDim);
  p.img_pos = gaussian({kNumPatches, kEmbedDim}, 0.5, rng);
  p.img_w1 = gaussian({kEmbedDim, kHiddenDim}, fan_in(kEmbedDim), rng);
  p.img_b1 = zeros(kHiddenDim);
  p.img_w2 = gaussian({kHiddenDim, kEmbedDim}, fan_in(kHiddenDim), rng);
  p.img_b2 = zeros(kEmbedDim);
  p.tok_embed = gaussian({kVocabSize, kEmbedDim}, 0.5, rng);
  p.pos_embed = gaussian({kSeqLen, kEmbedDim}, 0.5, rng);
  p.txt_w1 = gaussian({kEmbedDim, kHiddenDim}, fan_in(kEmbedDim), rng);
  p.txt_b1 = zeros(kHiddenDim);
  p.txt_w2 = gaussian({kHiddenDim, kEmbedDim}, fan_in(kHiddenDim), rng);
  p.txt_b2 = zeros(kEmbedDim);
  return p;
}

std::vector<std::pair<std::string_view, Tensor*>> DualEncoderParams::named() {
  return {{"patch_w", &patch_w},     {"patch_b", &patch_b},     {"img_pos", &img_pos}, {"img_w1", &img_w1},
          {"img_b1", &img_b1},       {"img_w2", &img_w2},       {"img_b2", &img_b2},   {"tok_embed", &tok_embed},
          {"pos_embed", &pos_embed}, {"txt_w1", &txt_w1},       {"txt_b1", &txt_b1},   {"txt_w2", &txt_w2},
          {"txt_b2", &txt_b2}};
}

std::vector<std::pair<std::string_view, const Tensor*>> DualEncoderParams::named() const {
  std::vector<std::pair<std::string_view, const Tensor*>> out;
  for (auto [name, t] : const_cast<DualEncoderParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

std::uint64_t DualEncoderParams::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto [name, t] : named()) {
    for (double v : t->data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

bool DualEncoderParams::operator==(const DualEncoderParams& other) const {
  auto a = named();
  auto b = other.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second->shape() != b[i].second->shape() || a[i].second->values() != b[i].second->values()) return false;
  }
  return true;
}

ParamNodes add_params(Graph& g, const DualEncoderParams& p, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? g.param(t) : g.constant(t); };
  ParamNodes n{};
  n.patch_w = put(p.patch_w);
  n.patch_b = put(p.patch_b);
  n.img_pos = put(p.img_pos);
  n.img_w1 = put(p.img_w1);
  n.img_b1 = put(p.img_b1);
  n.img_w2 = put(p.img_w2);
  n.img_b2 = put(p.img_b2);
  n.tok_embed = put(p.tok_embed);
  n.pos_embed = put(p.pos_embed);
  n.txt_w1 = put(p.txt_w1);
  n.txt_b1 = put(p.txt_b1);
  n.txt_w2 = put(p.txt_w2);
  n.txt_b2 = put(p.txt_b2);
  return n;
}

std::array<double, kImageSize> to_patch_order(const Image& image) {
  std::array<double, kImageSize> out{};
  std::size_t i = 0;
  for (std::size_t py = 0; py < kImageH / kPatchSide; ++py) {
    for (std::size_t px = 0; px < kImageW / kPatchSide; ++px) {
      for (std::size_t dy = 0; dy < kPatchSide; ++dy) {
        for (std::size_t dx = 0; dx < kPatchSide; ++dx) {
          for (std::size_t c = 0; c < kImageC; ++c) {
            out[i++] = image[pixel_index(py * kPatchSide + dy, px * kPatchSide + dx, c)];
          }
        }
      }
    }
  }
  return out;
}

Image from_patch_order(std::span<const double> rows) {
  if (rows.size() != kImageSize) {
    throw Error(ErrorCode::kShapeMismatch, "from_patch_order", fmt::format("need {} values, got {}", kImageSize,
                                                                           rows.size()));
  }
  Image out{};
  std::size_t i = 0;
  for (std::size_t py = 0; py < kImageH / kPatchSide; ++py) {
    for (std::size_t px = 0; px < kImageW / kPatchSide; ++px) {
      for (std::size_t dy = 0; dy < kPatchSide; ++dy) {
        for (std::size_t dx = 0; dx < kPatchSide; ++dx) {
          for (std::size_t c = 0; c < kImageC; ++c) {
            out[pixel_index(py * kPatchSide + dy, px * kPatchSide + dx, c)] = rows[i++];
          }
        }
      }
    }
  }
  return out;
}

Tensor image_rows(std::span<const Image> images) {
  Tensor t({images.size(), kImageSize});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto rows = to_patch_order(images[i]);
    std::copy(rows.begin(), rows.end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * kImageSize));
  }
  return t;
}

NodeId encode_images(Graph& g, const ParamNodes& p, NodeId rows) {
  const std::size_t n = g.value(rows).dim(0);
  const NodeId patches = g.reshape(rows, {n, kNumPatches, kPatchDim});
  Tensor onehot({n, kNumPatches, kNumPatches});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kNumPatches; ++k) onehot[(i * kNumPatches + k) * kNumPatches + k] = 1.0;
  }
  const NodeId pos = g.affine(g.constant(std::move(onehot)), p.img_pos);
  const NodeId feats = g.tanh(g.add(g.affine(patches, p.patch_w, p.patch_b), pos));
  return mlp_head(g, g.mean(feats, 1), p.img_w1, p.img_b1, p.img_w2, p.img_b2);
}

TextEncoding encode_texts(Graph& g, const ParamNodes& p, std::span<const TokenSeq> tokens,
                          std::span<const std::optional<TokenOverride>> overrides,
                          std::optional<NodeId> override_table) {
  const std::size_t n = tokens.size();
  if (!overrides.empty() && overrides.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "encode_texts",
                fmt::format("{} override entries for {} sequences", overrides.size(), n));
  }
  const std::size_t slots = override_table ? g.value(*override_table).dim(0) : 0;
  const std::size_t width = kTextInputs + slots;

  // One-hot selector over [tok_embed; pos_embed; override rows].
  Tensor select({n, kSeqLen, width});
  Tensor mask({n, kSeqLen, kEmbedDim});
  Tensor rescale({n, kEmbedDim});
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<TokenOverride> ov = overrides.empty() ? std::nullopt : overrides[i];
    if (ov) {
      if (ov->position >= kSeqLen || is_structural_token(tokens[i][ov->position])) {
        throw Error(ErrorCode::kInvalidArgument, "encode_texts",
                    fmt::format("override position {} is not a content token of sequence {}", ov->position, i));
      }
      if (ov->slot >= slots) {
        throw Error(ErrorCode::kInvalidArgument, "encode_texts",
                    fmt::format("override slot {} but table has {} rows", ov->slot, slots));
      }
    }
    std::size_t count = 0;
    for (std::size_t pos = 0; pos < kSeqLen; ++pos) {
      const int tok = tokens[i][pos];
      if (tok < 0 || tok >= static_cast<int>(kVocabSize)) {
        throw Error(ErrorCode::kInvalidArgument, "encode_texts", fmt::format("token id {} out of range", tok));
      }
      double* row = select.data().data() + (i * kSeqLen + pos) * width;
      if (ov && ov->position == pos) {
        row[kTextInputs + ov->slot] = 1.0;
      } else {
        row[static_cast<std::size_t>(tok)] = 1.0;
      }
      row[kVocabSize + pos] = 1.0;
      if (tok != kPad) {
        ++count;
        std::fill_n(mask.data().begin() + static_cast<std::ptrdiff_t>((i * kSeqLen + pos) * kEmbedDim), kEmbedDim,
                    1.0);
      }
    }
    const double r = static_cast<double>(kSeqLen) / static_cast<double>(count);
    std::fill_n(rescale.data().begin() + static_cast<std::ptrdiff_t>(i * kEmbedDim), kEmbedDim, r);
  }

  const NodeId table = override_table ? g.concat_rows({p.tok_embed, p.pos_embed, *override_table})
                                      : g.concat_rows({p.tok_embed, p.pos_embed});
  const NodeId embed = g.affine(g.constant(std::move(select)), table);
  const NodeId masked = g.mul(g.tanh(embed), g.constant(std::move(mask)));
  const NodeId pooled = g.mul(g.mean(masked, 1), g.constant(std::move(rescale)));
  return {mlp_head(g, pooled, p.txt_w1, p.txt_b1, p.txt_w2, p.txt_b2), embed};
}

NodeId contrastive_loss(Graph& g, NodeId image_emb, NodeId text_emb) {
  const std::size_t m = g.value(image_emb).dim(0);
  std::vector<std::size_t> diag(m);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  const NodeId logits = g.scale(g.affine(image_emb, g.transpose(text_emb)), 1.0 / kTemperature);
  const NodeId i2t = g.softmax_xent(logits, diag);
  const NodeId t2i = g.softmax_xent(g.transpose(logits), diag);
  return g.scale(g.add(i2t, t2i), 0.5);
}

Tensor encode_images(const DualEncoderParams& params, std::span<const Image> images) {
  Graph g;
  const ParamNodes p = add_params(g, params, false);
  return g.value(encode_images(g, p, g.constant(image_rows(images))));
}

Tensor encode_texts(const DualEncoderParams& params, std::span<const TokenSeq> tokens,
                    std::span<const std::optional<TokenOverride>> overrides, const Tensor* override_table) {
  Graph g;
  const ParamNodes p = add_params(g, params, false);
  std::optional<NodeId> table;
  if (override_table) table = g.constant(*override_table);
  return g.value(encode_texts(g, p, tokens, overrides, table).embedding);
}

double contrastive_loss(const DualEncoderParams& params, std::span<const PairSample> batch) {
  Graph g;
  const ParamNodes p = add_params(g, params, false);
  std::vector<Image> images;
  std::vector<TokenSeq> tokens;
  for (const PairSample& s : batch) {
    images.push_back(s.image);
    tokens.push_back(s.tokens);
  }
  const NodeId img = encode_images(g, p, g.constant(image_rows(images)));
  const NodeId txt = encode_texts(g, p, tokens).embedding;
  return g.value(contrastive_loss(g, img, txt)).item();
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw Error(ErrorCode::kInvalidArgument, "TrainConfig", fmt::format("lr {:g} must be >= 0", lr));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "TrainConfig", fmt::format("momentum {:g} not in [0, 1)", momentum));
  }
  if (batch < 2) throw Error(ErrorCode::kInvalidArgument, "TrainConfig", "batch must be >= 2");
}

TrainResult train(DualEncoderParams params, std::span<const PairSample> train_set, const TrainConfig& config) {
  config.validate();
  if (train_set.size() < config.batch) {
    throw Error(ErrorCode::kInvalidArgument, "train",
                fmt::format("{} samples cannot fill a batch of {}", train_set.size(), config.batch));
  }
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto named = params.named();
  std::vector<std::vector<double>> velocity;
  for (auto& [name, t] : named) velocity.emplace_back(t->size(), 0.0);

  const std::size_t iters = train_set.size() / config.batch;
  TrainResult result;
  std::vector<Image> images(config.batch);
  std::vector<TokenSeq> tokens(config.batch);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double total = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      for (std::size_t b = 0; b < config.batch; ++b) {
        const PairSample& s = train_set[order[it * config.batch + b]];
        images[b] = s.image;
        tokens[b] = s.tokens;
      }
      const std::string at = fmt::format("epoch {} iteration {}", epoch, it);
      Graph g;
      const ParamNodes p = add_params(g, params, true);
      NodeId loss{};
      try {
        const NodeId img = encode_images(g, p, g.constant(image_rows(images)));
        const NodeId txt = encode_texts(g, p, tokens).embedding;
        loss = contrastive_loss(g, img, txt);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kNonFinite, "train", fmt::format("diverged at {}: {}", at, e.message()));
      }
      const double value = g.value(loss).item();
      if (!std::isfinite(value)) throw Error(ErrorCode::kNonFinite, "train", fmt::format("loss diverged at {}", at));
      total += value;
      g.backward(loss);
      const NodeId ids[] = {p.patch_w,   p.patch_b, p.img_pos, p.img_w1, p.img_b1, p.img_w2, p.img_b2,
                            p.tok_embed, p.pos_embed, p.txt_w1, p.txt_b1, p.txt_w2, p.txt_b2};
      for (std::size_t k = 0; k < named.size(); ++k) {
        std::span<const double> grad = g.grad(ids[k]);
        std::span<double> w = named[k].second->data();
        std::vector<double>& v = velocity[k];
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = config.momentum * v[j] + grad[j];
          w[j] -= config.lr * v[j];
        }
      }
    }
    result.epoch_loss.push_back(total / static_cast<double>(iters));
  }
  result.params = std::move(params);
  return result;
}

std::string serialize_checkpoint(const DualEncoderParams& params) {
  ByteWriter w;
  w.bytes("DOUP");
  w.u16(kCheckpointVersion);
  const auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (auto [name, t] : named) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t->size()));
    for (double v : t->data()) w.f64(v);
  }
  const std::string& body = w.str();
  w.u32(crc32({reinterpret_cast<const std::uint8_t*>(body.data()), body.size()}));
  return w.take();
}

DualEncoderParams parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4, "magic") != "DOUP") throw Error(ErrorCode::kFormat, "checkpoint", "bad magic in section 'magic'");
  if (const auto v = r.u16("version"); v != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, "checkpoint", fmt::format("unsupported version {} in section 'version'", v));
  }
  DualEncoderParams params = DualEncoderParams::init(0);
  auto named = params.named();
  const std::uint32_t count = r.u32("header");
  if (count != named.size()) {
    throw Error(ErrorCode::kFormat, "checkpoint", fmt::format("expected {} sections, found {}", named.size(), count));
  }
  for (auto& [expected, tensor] : named) {
    const std::string section(expected);
    const std::uint16_t len = r.u16(section);
    const std::string_view name = r.bytes(len, section);
    if (name != expected) {
      throw Error(ErrorCode::kFormat, "checkpoint", fmt::format("section '{}' found where '{}' expected", name,
                                                                expected));
    }
    const std::uint32_t elems = r.u32(section);
    if (elems != tensor->size()) {
      throw Error(ErrorCode::kFormat, "checkpoint",
                  fmt::format("section '{}' holds {} values, expected {}", section, elems, tensor->size()));
    }
    for (double& v : tensor->data()) v = r.f64(section);
  }
  const std::size_t body_len = r.offset();
  const std::uint32_t stored = r.u32("crc32");
  if (r.remaining() != 0) throw Error(ErrorCode::kFormat, "checkpoint", "trailing bytes after section 'crc32'");
  const std::uint32_t actual = crc32({reinterpret_cast<const std::uint8_t*>(bytes.data()), body_len});
  if (stored != actual) {
    throw Error(ErrorCode::kFormat, "checkpoint", fmt::format("section 'crc32' mismatch ({:08x} != {:08x})", stored,
                                                              actual));
  }
  return params;
}

void save_checkpoint(const DualEncoderParams& params, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(params));
}

DualEncoderParams load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace douap
