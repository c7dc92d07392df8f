#include "douap/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "douap/error.hpp"
#include "douap/rng.hpp"

namespace douap {

namespace {

constexpr std::size_t kLatentDim = 64;
constexpr std::size_t kGeneratorHidden = 256;
constexpr std::uint64_t kGeneratorStream = 0x94D049BB133111EBULL;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double linf_of(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// D(a, b) = 1 - cos(a, b) = 0.5 * |a - b|^2 for unit rows, averaged over the batch.
NodeId mean_cosine_distance(Graph& g, NodeId a, NodeId b) {
  const NodeId d = g.sub(a, b);
  return g.scale(g.mean(g.row_dot(d, d), 0), 0.5);
}

// clip(v + delta, 0, 1) as mask * (v + delta) + fill, with mask/fill frozen
// from the forward values; this is the clamp's subgradient.
NodeId perturbed_rows(Graph& g, const Tensor& clean_rows, NodeId delta) {
  const std::size_t m = clean_rows.dim(0);
  const Tensor& d = g.value(delta);
  Tensor mask(clean_rows.shape());
  Tensor fill(clean_rows.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < kImageSize; ++j) {
      const double s = clean_rows[i * kImageSize + j] + d[j];
      if (s < 0.0) {
        fill[i * kImageSize + j] = 0.0;
      } else if (s > 1.0) {
        fill[i * kImageSize + j] = 1.0;
      } else {
        mask[i * kImageSize + j] = 1.0;
      }
    }
  }
  const NodeId broadcast = g.affine(g.constant(Tensor({m, 1}, 1.0)), delta);
  const NodeId shifted = g.add(g.constant(clean_rows), broadcast);
  return g.add(g.mul(shifted, g.constant(std::move(mask))), g.constant(std::move(fill)));
}

struct Batch {
  std::vector<Image> images;
  std::vector<TokenSeq> tokens;
  std::vector<std::optional<TokenOverride>> overrides;
};

// Shared state of the attack loop for both delta sources.
class AttackLoop {
 public:
  AttackLoop(const DualEncoderParams& params, std::span<const PairSample> train_set, const AttackConfig& config)
      : params_(params), train_(train_set), config_(config), rng_(config.seed) {
    config.validate();
    if (train_set.size() < config.batch) {
      throw Error(ErrorCode::kInvalidArgument, "attack",
                  fmt::format("{} samples cannot fill a batch of {}", train_set.size(), config.batch));
    }
    key_positions_ = select_key_positions(params, train_set, config.batch);
    u_ = token_centroid(params);
    text_step_ = config.text_step_scale.value_or(default_text_step(params));
    order_.resize(train_set.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  std::size_t iterations_per_epoch() const { return train_.size() / config_.batch; }

  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  Batch sample(std::size_t it) {
    Batch b;
    for (std::size_t k = 0; k < config_.batch; ++k) {
      const std::size_t idx = order_[it * config_.batch + k];
      b.images.push_back(augment(train_[idx].image, config_.aug, rng_));
      b.tokens.push_back(train_[idx].tokens);
      b.overrides.push_back(TokenOverride{key_positions_[idx], 0});
    }
    return b;
  }

  // Records the loss graph for `delta` (1 x 768 node) and the current u.
  // Returns {loss node, u node, adversarial rows node}.
  std::tuple<LossNodes, NodeId, NodeId> build(Graph& g, const ParamNodes& p, const Batch& b, NodeId delta,
                                              std::size_t iteration) {
    const Tensor clean = image_rows(b.images);
    const NodeId adv_rows = perturbed_rows(g, clean, delta);
    const NodeId u = g.param(Tensor({1, kEmbedDim}, u_));
    const TextSide adv_text{b.tokens, b.overrides, u};
    try {
      LossNodes loss = multimodal_loss(g, p, adv_rows, adv_text, g.constant(clean), b.tokens, config_.alpha);
      return {loss, u, adv_rows};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      throw Error(ErrorCode::kNonFinite, "attack", fmt::format("non-finite at iteration {}: {}", iteration, e.message()));
    }
  }

  void step_text(std::span<const double> grad_u) {
    for (std::size_t j = 0; j < kEmbedDim; ++j) u_[j] += text_step_ * sign(grad_u[j]);
  }

  void check_finite(double loss, std::size_t iteration) const {
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kNonFinite, "attack", fmt::format("non-finite loss at iteration {}", iteration));
    }
  }

  AttackResult finish(std::string method, std::span<const double> delta_patch, std::vector<IterationLog> log,
                      double seconds) const {
    AttackResult r;
    r.method = std::move(method);
    r.config = config_;
    r.uap.delta_v = from_patch_order(delta_patch);
    r.uap.delta_t_embed = u_;
    r.uap.delta_t_token = project_token(params_, u_);
    r.iterations = log.size();
    r.log = std::move(log);
    r.wallclock_seconds = seconds;
    return r;
  }

 private:
  const DualEncoderParams& params_;
  std::span<const PairSample> train_;
  const AttackConfig& config_;
  Rng rng_;
  std::vector<std::size_t> key_positions_;
  std::vector<std::size_t> order_;
  std::vector<double> u_;
  double text_step_ = 0.0;
};

}  // namespace

void AttackConfig::validate() const {
  auto fail = [](std::string msg) { throw Error(ErrorCode::kInvalidArgument, "AttackConfig", std::move(msg)); };
  if (!(eps_v > 0.0 && eps_v <= 1.0)) fail(fmt::format("eps_v {:g} not in (0, 1]", eps_v));
  if (eps_t != 1) fail(fmt::format("eps_t {} unsupported (one token per sentence)", eps_t));
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(fmt::format("alpha {:g} must be >= 0", alpha));
  if (!(beta > 0.0 && beta <= 1.0)) fail(fmt::format("beta {:g} not in (0, 1]", beta));
  if (batch < 2) fail("batch must be >= 2");
  if (text_step_scale && !(*text_step_scale >= 0.0)) fail("text_step_scale must be >= 0");
  if (!(generator_lr >= 0.0)) fail("generator_lr must be >= 0");
  aug.validate();
}

double Uap::linf() const { return linf_of(delta_v); }

Uap Uap::zero() { return Uap{}; }

double AttackResult::seconds_per_iteration() const {
  if (log.empty()) return 0.0;
  double total = 0.0;
  for (const IterationLog& l : log) total += l.seconds;
  return total / static_cast<double>(log.size());
}

Image apply_image(const Image& image, const Image& delta_v) {
  Image out;
  for (std::size_t i = 0; i < kImageSize; ++i) out[i] = std::clamp(image[i] + delta_v[i], 0.0, 1.0);
  return out;
}

bool eligible_position(const TokenSeq& tokens, std::size_t position) {
  return position < kSeqLen && !is_structural_token(tokens[position]);
}

TokenSeq apply_text(const TokenSeq& tokens, std::size_t key_position, int token) {
  if (!eligible_position(tokens, key_position)) {
    throw Error(ErrorCode::kInvalidArgument, "apply_text", fmt::format("position {} is not eligible", key_position));
  }
  if (token < kFirstEligibleToken || token >= static_cast<int>(kVocabSize)) {
    throw Error(ErrorCode::kInvalidArgument, "apply_text", fmt::format("token {} is not substitutable", token));
  }
  TokenSeq out = tokens;
  out[key_position] = token;
  return out;
}

std::size_t most_salient_position(const TokenSeq& tokens, std::span<const double> grads) {
  std::optional<std::size_t> best;
  double best_norm = -1.0;
  for (std::size_t p = 0; p < kSeqLen; ++p) {
    if (!eligible_position(tokens, p)) continue;
    double ss = 0.0;
    for (std::size_t c = 0; c < kEmbedDim; ++c) ss += grads[p * kEmbedDim + c] * grads[p * kEmbedDim + c];
    const double norm = std::sqrt(ss);
    if (norm > best_norm) {
      best_norm = norm;
      best = p;
    }
  }
  if (!best) throw Error(ErrorCode::kInvalidArgument, "select_key_positions", "sentence has no eligible position");
  return *best;
}

std::vector<std::size_t> select_key_positions(const DualEncoderParams& params, std::span<const PairSample> samples,
                                              std::size_t chunk) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "select_key_positions", "contrastive saliency needs >= 2 sentences");
  }
  chunk = std::max<std::size_t>(chunk, 2);
  std::vector<std::size_t> out(samples.size());
  std::size_t start = 0;
  while (start < samples.size()) {
    std::size_t end = std::min(samples.size(), start + chunk);
    if (samples.size() - end == 1) ++end;
    std::vector<Image> images;
    std::vector<TokenSeq> tokens;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(samples[i].image);
      tokens.push_back(samples[i].tokens);
    }
    Graph g;
    ParamNodes p = add_params(g, params, false);
    // only the token table needs to carry gradient to reach e_p
    p.tok_embed = g.param(params.tok_embed);
    const NodeId img = encode_images(g, p, g.constant(image_rows(images)));
    const TextEncoding txt = encode_texts(g, p, tokens);
    g.backward(contrastive_loss(g, img, txt.embedding));
    std::span<const double> grads = g.grad(txt.token_embedding);
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t block = (i - start) * kSeqLen * kEmbedDim;
      out[i] = most_salient_position(samples[i].tokens, grads.subspan(block, kSeqLen * kEmbedDim));
    }
    start = end;
  }
  return out;
}

LossNodes multimodal_loss(Graph& g, const ParamNodes& p, NodeId adv_image_rows, const TextSide& adv_text,
                          NodeId clean_image_rows, std::span<const TokenSeq> clean_tokens, double alpha) {
  const NodeId adv_img = encode_images(g, p, adv_image_rows);
  const NodeId adv_txt = encode_texts(g, p, adv_text.tokens, adv_text.overrides, adv_text.override_table).embedding;
  const NodeId clean_img = encode_images(g, p, clean_image_rows);
  const NodeId clean_txt = encode_texts(g, p, clean_tokens).embedding;
  const NodeId cross = contrastive_loss(g, adv_img, adv_txt);
  const NodeId uni = g.add(mean_cosine_distance(g, adv_img, clean_img), mean_cosine_distance(g, adv_txt, clean_txt));
  return {g.add(cross, g.scale(uni, alpha)), cross, uni};
}

LossValues multimodal_loss(const DualEncoderParams& params, std::span<const Image> adv_images,
                           std::span<const TokenSeq> adv_tokens, std::span<const Image> clean_images,
                           std::span<const TokenSeq> clean_tokens, double alpha,
                           std::span<const std::optional<TokenOverride>> overrides, const Tensor* override_table) {
  if (adv_images.size() != clean_images.size() || adv_tokens.size() != clean_tokens.size() ||
      adv_images.size() != adv_tokens.size()) {
    throw Error(ErrorCode::kShapeMismatch, "multimodal_loss", "adversarial and clean batches are not aligned");
  }
  Graph g;
  const ParamNodes p = add_params(g, params, false);
  std::optional<NodeId> table;
  if (override_table) table = g.constant(*override_table);
  const LossNodes n = multimodal_loss(g, p, g.constant(image_rows(adv_images)), TextSide{adv_tokens, overrides, table},
                                      g.constant(image_rows(clean_images)), clean_tokens, alpha);
  return {g.value(n.total).item(), g.value(n.cross_modal).item(), g.value(n.unimodal).item()};
}

int project_token(const DualEncoderParams& params, std::span<const double> u) {
  double u_norm = 0.0;
  for (double v : u) u_norm += v * v;
  u_norm = std::sqrt(u_norm);
  int best = kFirstEligibleToken;
  double best_cos = -2.0;
  for (int w = kFirstEligibleToken; w < static_cast<int>(kVocabSize); ++w) {
    double dot = 0.0, nn = 0.0;
    for (std::size_t c = 0; c < kEmbedDim; ++c) {
      const double e = params.tok_embed[static_cast<std::size_t>(w) * kEmbedDim + c];
      dot += u[c] * e;
      nn += e * e;
    }
    const double denom = u_norm * std::sqrt(nn);
    const double cos = denom > 0.0 ? dot / denom : 0.0;
    if (cos > best_cos) {
      best_cos = cos;
      best = w;
    }
  }
  return best;
}

std::vector<double> token_centroid(const DualEncoderParams& params) {
  std::vector<double> c(kEmbedDim, 0.0);
  for (std::size_t w = 0; w < kVocabSize; ++w) {
    for (std::size_t k = 0; k < kEmbedDim; ++k) c[k] += params.tok_embed[w * kEmbedDim + k];
  }
  for (double& v : c) v /= static_cast<double>(kVocabSize);
  return c;
}

double default_text_step(const DualEncoderParams& params) {
  double ss = 0.0;
  for (double v : params.tok_embed.data()) ss += v * v;
  return 0.1 * std::sqrt(ss / static_cast<double>(params.tok_embed.size()));
}

AttackResult do_uap(const DualEncoderParams& params, std::span<const PairSample> train_set,
                    const AttackConfig& config, const AttackObserver& observer) {
  const auto t_start = Clock::now();
  AttackLoop loop(params, train_set, config);
  std::vector<double> delta(kImageSize, 0.0);
  const double step = config.beta * config.eps_v;
  std::vector<IterationLog> log;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    loop.shuffle();
    for (std::size_t it = 0; it < loop.iterations_per_epoch(); ++it) {
      const auto t_iter = Clock::now();
      const Batch b = loop.sample(it);
      Graph g;
      const ParamNodes p = add_params(g, params, false);
      const NodeId delta_node = g.param(Tensor({1, kImageSize}, delta));
      const auto [loss, u, adv_rows] = loop.build(g, p, b, delta_node, log.size());
      const double value = g.value(loss.total).item();
      loop.check_finite(value, log.size());
      g.backward(loss.total);

      std::span<const double> grad = g.grad(delta_node);
      for (std::size_t j = 0; j < kImageSize; ++j) {
        delta[j] = std::clamp(delta[j] + step * sign(grad[j]), -config.eps_v, config.eps_v);
      }
      loop.step_text(g.grad(u));

      IterationLog entry{epoch, log.size(), value, linf_of(delta), seconds_since(t_iter)};
      log.push_back(entry);
      if (observer) observer(entry, delta, g.value(adv_rows));
    }
  }
  return loop.finish("do-uap", delta, std::move(log), seconds_since(t_start));
}

GeneratorParams GeneratorParams::init(std::uint64_t seed) {
  Rng rng(seed ^ kGeneratorStream);
  auto gaussian = [&](Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * rng.gaussian();
    return t;
  };
  GeneratorParams gp;
  gp.z = gaussian({1, kLatentDim}, 1.0);
  gp.w1 = gaussian({kLatentDim, kGeneratorHidden}, 1.0 / std::sqrt(static_cast<double>(kLatentDim)));
  gp.b1 = Tensor(Shape{kGeneratorHidden});
  gp.w2 = gaussian({kGeneratorHidden, kImageSize}, 1.0 / std::sqrt(static_cast<double>(kGeneratorHidden)));
  gp.b2 = Tensor(Shape{kImageSize});
  return gp;
}

namespace {

NodeId generator_output(Graph& g, NodeId z, NodeId w1, NodeId b1, NodeId w2, NodeId b2, double eps_v) {
  const NodeId h = g.tanh(g.affine(z, w1, b1));
  return g.scale(g.tanh(g.affine(h, w2, b2)), eps_v);
}

}  // namespace

std::vector<double> GeneratorParams::emit(double eps_v) const {
  Graph g;
  const NodeId out = generator_output(g, g.constant(z), g.constant(w1), g.constant(b1), g.constant(w2),
                                      g.constant(b2), eps_v);
  return g.value(out).values();
}

AttackResult generator_baseline(const DualEncoderParams& params, std::span<const PairSample> train_set,
                                const AttackConfig& config, const AttackObserver& observer) {
  const auto t_start = Clock::now();
  AttackLoop loop(params, train_set, config);
  GeneratorParams gen = GeneratorParams::init(config.seed);
  std::vector<IterationLog> log;
  std::vector<double> delta = gen.emit(config.eps_v);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    loop.shuffle();
    for (std::size_t it = 0; it < loop.iterations_per_epoch(); ++it) {
      const auto t_iter = Clock::now();
      const Batch b = loop.sample(it);
      Graph g;
      const ParamNodes p = add_params(g, params, false);
      const NodeId z = g.constant(gen.z);
      const NodeId w1 = g.param(gen.w1), b1 = g.param(gen.b1), w2 = g.param(gen.w2), b2 = g.param(gen.b2);
      const NodeId delta_node = generator_output(g, z, w1, b1, w2, b2, config.eps_v);
      const auto [loss, u, adv_rows] = loop.build(g, p, b, delta_node, log.size());
      const double value = g.value(loss.total).item();
      loop.check_finite(value, log.size());
      g.backward(loss.total);

      const std::pair<Tensor*, NodeId> trained[] = {{&gen.w1, w1}, {&gen.b1, b1}, {&gen.w2, w2}, {&gen.b2, b2}};
      for (auto [tensor, id] : trained) {
        std::span<const double> grad = g.grad(id);
        std::span<double> w = tensor->data();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] += config.generator_lr * grad[j];
      }
      loop.step_text(g.grad(u));
      delta = gen.emit(config.eps_v);

      IterationLog entry{epoch, log.size(), value, linf_of(delta), seconds_since(t_iter)};
      log.push_back(entry);
      if (observer) observer(entry, delta, g.value(adv_rows));
    }
  }
  return loop.finish("generator", delta, std::move(log), seconds_since(t_start));
}

}  // namespace douap
