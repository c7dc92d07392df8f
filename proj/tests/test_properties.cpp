#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "douap/attack.hpp"
#include "douap/dataset_io.hpp"
#include "douap/eval.hpp"
#include "douap/io.hpp"
#include "douap/rng.hpp"
#include "douap/uap_io.hpp"

using namespace douap;

TEST_CASE("perturbed pixels stay in range and within the budget") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const double eps = rng.uniform() * 0.2;
    Image v, d;
    for (double& x : v) x = rng.uniform();
    for (double& x : d) x = (2.0 * rng.uniform() - 1.0) * eps;
    const Image out = apply_image(v, d);
    for (std::size_t i = 0; i < kImageSize; ++i) {
      CHECK((out[i] >= 0.0 && out[i] <= 1.0));
      CHECK(std::abs(out[i] - v[i]) <= eps + 1e-15);
    }
  }
}

TEST_CASE("text substitution changes exactly one eligible token") {
  Rng rng(12);
  const Dataset ds = generate_dataset(12, 300, 0);
  for (const PairSample& s : ds.train) {
    std::vector<std::size_t> eligible;
    for (std::size_t p = 0; p < kSeqLen; ++p) {
      if (eligible_position(s.tokens, p)) eligible.push_back(p);
    }
    REQUIRE_FALSE(eligible.empty());
    const std::size_t p = eligible[rng.below(eligible.size())];
    const int tok = kFirstEligibleToken + static_cast<int>(rng.below(kVocabSize - kFirstEligibleToken));
    const TokenSeq out = apply_text(s.tokens, p, tok);
    std::size_t changed = 0;
    for (std::size_t q = 0; q < kSeqLen; ++q) changed += out[q] != s.tokens[q];
    CHECK(changed <= 1);
    CHECK(out[p] == tok);
    CHECK(tokens_well_formed(out));
  }
}

TEST_CASE("rankings are equivariant under a shared permutation") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(30);
    Tensor s({n, n});
    for (double& v : s.data()) v = rng.uniform();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    Tensor p({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] = s[perm[i] * n + perm[j]];
    }
    const std::size_t k = 1 + rng.below(n);
    const CorrectFlags a = correct_at_k(s, k);
    const CorrectFlags b = correct_at_k(p, k);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(b.tr[i] == a.tr[perm[i]]);
      CHECK(b.ir[i] == a.ir[perm[i]]);
    }
  }
}

TEST_CASE("attack success rates are proper fractions") {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    CorrectFlags c{std::vector<bool>(n), std::vector<bool>(n)}, a = c;
    for (std::size_t i = 0; i < n; ++i) {
      c.tr[i] = rng.uniform() < 0.7;
      c.ir[i] = rng.uniform() < 0.7;
      a.tr[i] = rng.uniform() < 0.5;
      a.ir[i] = rng.uniform() < 0.5;
    }
    const AsrResult r = asr_from_flags(c, a);
    CHECK(r.tr_flipped <= r.tr_denominator);
    CHECK(r.tr.has_value() == (r.tr_denominator > 0));
    if (r.tr) CHECK((*r.tr >= 0.0 && *r.tr <= 1.0));
    if (r.ir) CHECK((*r.ir >= 0.0 && *r.ir <= 1.0));
    CHECK(asr_from_flags(c, c).tr_flipped == 0);
  }
}

TEST_CASE("byte formats round-trip") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> bytes(rng.below(64));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset ds = generate_dataset(seed, 20, 10);
    const std::string bytes = serialize_dataset(ds);
    CHECK(serialize_dataset(parse_dataset(bytes)) == bytes);
    const DualEncoderParams p = DualEncoderParams::init(seed);
    CHECK(parse_checkpoint(serialize_checkpoint(p)) == p);
  }
}

TEST_CASE("random artifacts round-trip") {
  Rng rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    UapArtifact a;
    a.method = trial % 2 ? "generator" : "do-uap";
    a.config.eps_v = 0.01 + 0.2 * rng.uniform();
    a.config.alpha = 10.0 * rng.uniform();
    a.config.beta = 0.05 + 0.9 * rng.uniform();
    a.config.seed = rng.next();
    for (double& v : a.uap.delta_v) v = (2.0 * rng.uniform() - 1.0) * a.config.eps_v;
    for (double& v : a.uap.delta_t_embed) v = rng.gaussian();
    a.uap.delta_t_token = kFirstEligibleToken + static_cast<int>(rng.below(kVocabSize - kFirstEligibleToken));
    const std::string text = serialize_uap(a);
    const UapArtifact b = parse_uap(text);
    CHECK(b.uap.delta_v == a.uap.delta_v);
    CHECK(b.config.seed == a.config.seed);
    CHECK(serialize_uap(b) == text);
  }
}
