#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "douap/autodiff.hpp"
#include "douap/synthdata.hpp"
#include "douap/toyvlp.hpp"

namespace douap {

inline constexpr double kDefaultEpsV = 12.0 / 255.0;
inline constexpr int kFirstEligibleToken = kFirstColor;

struct AttackConfig {
  double eps_v = kDefaultEpsV;
  std::size_t eps_t = 1;
  double alpha = 1.0;
  double beta = 0.1;
  std::size_t epochs = 2;
  std::size_t batch = 64;
  AugSpec aug = AugSpec::brightness(0.0, 0.05);
  std::uint64_t seed = 0;
  /// Step for the text embedding; unset means 0.1 x RMS of the token table.
  std::optional<double> text_step_scale;
  /// Generator learning rate (generator baseline only).
  double generator_lr = 0.01;
  /// Write measured wall-clock into artifacts; off gives byte-identical reruns.
  bool record_wallclock = true;

  void validate() const;
};

/// Universal perturbation pair. delta_v is stored in image (H, W, C) layout.
/// delta_t_token unset means each key token is "replaced" by itself (control).
struct Uap {
  Image delta_v{};
  std::vector<double> delta_t_embed = std::vector<double>(kEmbedDim, 0.0);
  std::optional<int> delta_t_token;
  /// Per-sentence substitution index for the corpus being evaluated; filled lazily.
  std::vector<std::size_t> key_positions;

  double linf() const;
  static Uap zero();
};

struct IterationLog {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double loss = 0.0;
  double linf = 0.0;
  double seconds = 0.0;
};

struct AttackResult {
  std::string method;
  AttackConfig config;
  Uap uap;
  std::vector<IterationLog> log;
  double wallclock_seconds = 0.0;
  std::size_t iterations = 0;

  double seconds_per_iteration() const;
};

/// Called after every update with the iteration record, the current delta in
/// patch order, and the adversarial image batch that produced the gradient.
using AttackObserver = std::function<void(const IterationLog&, std::span<const double> delta_patch_order,
                                          const Tensor& adv_image_rows)>;

Image apply_image(const Image& image, const Image& delta_v);
TokenSeq apply_text(const TokenSeq& tokens, std::size_t key_position, int token);
bool eligible_position(const TokenSeq& tokens, std::size_t position);

/// argmax over eligible positions of ||dJ/de_p||, lowest index on ties.
/// `grads` holds the (8, 32) gradient block of one sentence.
std::size_t most_salient_position(const TokenSeq& tokens, std::span<const double> grads);

/// Clean-gradient saliency per sentence. J is evaluated on consecutive chunks
/// of `chunk` sentences in index order (a trailing single sentence joins the
/// previous chunk).
std::vector<std::size_t> select_key_positions(const DualEncoderParams& params, std::span<const PairSample> samples,
                                              std::size_t chunk = 64);

struct LossNodes {
  NodeId total;
  NodeId cross_modal;
  NodeId unimodal;
};

/// L = J(f_I(v'), f_T(t')) + alpha * mean[D(f_I(v'), f_I(v)) + D(f_T(t'), f_T(t))]
/// with D the cosine distance of unit rows. Row nodes are (m, 768) patch order.
struct TextSide {
  std::span<const TokenSeq> tokens;
  std::span<const std::optional<TokenOverride>> overrides;
  std::optional<NodeId> override_table;
};
LossNodes multimodal_loss(Graph& g, const ParamNodes& p, NodeId adv_image_rows, const TextSide& adv_text,
                          NodeId clean_image_rows, std::span<const TokenSeq> clean_tokens, double alpha);

struct LossValues {
  double total;
  double cross_modal;
  double unimodal;
};

LossValues multimodal_loss(const DualEncoderParams& params, std::span<const Image> adv_images,
                           std::span<const TokenSeq> adv_tokens, std::span<const Image> clean_images,
                           std::span<const TokenSeq> clean_tokens, double alpha,
                           std::span<const std::optional<TokenOverride>> overrides = {},
                           const Tensor* override_table = nullptr);

/// Nearest eligible vocabulary token to `u` by cosine (ties to the lower id).
int project_token(const DualEncoderParams& params, std::span<const double> u);
std::vector<double> token_centroid(const DualEncoderParams& params);
double default_text_step(const DualEncoderParams& params);

AttackResult do_uap(const DualEncoderParams& params, std::span<const PairSample> train_set,
                    const AttackConfig& config, const AttackObserver& observer = {});

struct GeneratorParams {
  Tensor z;   // 1 x 64
  Tensor w1;  // 64 x 256
  Tensor b1;  // 256
  Tensor w2;  // 256 x 768
  Tensor b2;  // 768

  static GeneratorParams init(std::uint64_t seed);
  /// eps * G(z) in patch order.
  std::vector<double> emit(double eps_v) const;
};

/// Same loop as do_uap, but delta_v = eps_v * G(z) and the gradient trains the
/// generator by SGD ascent instead of moving delta_v directly.
AttackResult generator_baseline(const DualEncoderParams& params, std::span<const PairSample> train_set,
                                const AttackConfig& config, const AttackObserver& observer = {});

}  // namespace douap
