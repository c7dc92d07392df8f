#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "douap/error.hpp"
#include "douap/eval.hpp"
#include "douap/rng.hpp"
#include "fixtures.hpp"

using namespace douap;
using namespace douap::testing;

namespace {

// Full stable sort per query: lower index first among equal scores.
CorrectFlags sorted_flags(const Tensor& sim, std::size_t k) {
  const std::size_t n = sim.dim(0);
  CorrectFlags f{std::vector<bool>(n), std::vector<bool>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> row(n), col(n);
    std::iota(row.begin(), row.end(), std::size_t{0});
    std::iota(col.begin(), col.end(), std::size_t{0});
    std::stable_sort(row.begin(), row.end(), [&](auto a, auto b) { return sim[i * n + a] > sim[i * n + b]; });
    std::stable_sort(col.begin(), col.end(), [&](auto a, auto b) { return sim[a * n + i] > sim[b * n + i]; });
    f.tr[i] = std::find(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), i) != row.begin() + static_cast<std::ptrdiff_t>(k);
    f.ir[i] = std::find(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(k), i) != col.begin() + static_cast<std::ptrdiff_t>(k);
  }
  return f;
}

Tensor random_sim(Rng& rng, std::size_t n, int levels) {
  Tensor s({n, n});
  for (double& v : s.data()) v = std::floor(rng.uniform() * levels) / levels;
  return s;
}

std::span<const PairSample> test_set() { return small_world().data.test; }

Uap token_uap(int token) {
  Uap u;
  u.delta_t_token = token;
  return u;
}

}  // namespace

TEST_CASE("ranking matches a full stable sort, ties included") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    const Tensor s = random_sim(rng, n, trial % 2 ? 4 : 1000);
    const std::size_t k = 1 + rng.below(n);
    const CorrectFlags a = correct_at_k(s, k);
    const CorrectFlags b = sorted_flags(s, k);
    CHECK(a.tr == b.tr);
    CHECK(a.ir == b.ir);
  }
}

TEST_CASE("ties go to the lower index") {
  const Tensor s({2, 2}, {0.5, 0.5, 0.5, 0.5});
  const CorrectFlags f = correct_at_k(s, 1);
  CHECK(f.tr == std::vector<bool>{true, false});
  CHECK(f.ir == std::vector<bool>{true, false});
}

TEST_CASE("recall at n is one and grows with k") {
  Rng rng(6);
  const Tensor s = random_sim(rng, 12, 1000);
  const RecallRates all = recall_from_flags(correct_at_k(s, 12));
  CHECK(all.tr == 1.0);
  CHECK(all.ir == 1.0);
  RecallRates prev{};
  for (std::size_t k = 1; k <= 12; ++k) {
    const RecallRates r = recall_from_flags(correct_at_k(s, k));
    CHECK(r.tr >= prev.tr);
    CHECK(r.ir >= prev.ir);
    prev = r;
  }
  CHECK_THROWS_AS(correct_at_k(s, 0), Error);
  CHECK_THROWS_AS(correct_at_k(s, 13), Error);
}

TEST_CASE("attack success counts only clean-correct queries") {
  CorrectFlags clean{{true, true, true, false}, {false, false, false, false}};
  CorrectFlags adv{{true, false, true, true}, {true, false, false, false}};
  const AsrResult a = asr_from_flags(clean, adv);
  CHECK(a.tr_denominator == 3);
  CHECK(a.tr_flipped == 1);
  CHECK(*a.tr == doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(a.ir.has_value());
  CHECK(*a.mean() == *a.tr);
  CHECK_FALSE(AsrResult{}.mean().has_value());
}

TEST_CASE("zero perturbation flips nothing") {
  const World& w = small_world();
  const Uap zero = Uap::zero();
  for (std::size_t k : kReportKs) {
    const AsrResult a = asr_at_k(w.params, test_set(), zero, k);
    CHECK(a.tr_flipped == 0);
    CHECK(a.ir_flipped == 0);
  }
  const Embeddings clean = embed_corpus(w.params, test_set(), nullptr);
  const Embeddings ctrl = embed_corpus(w.params, test_set(), &zero);
  CHECK(max_abs_diff(clean.images.data(), ctrl.images.data()) == 0.0);
  CHECK(max_abs_diff(clean.texts.data(), ctrl.texts.data()) == 0.0);
}

TEST_CASE("projected substitution matches per-sample edits") {
  const World& w = small_world();
  Uap u = token_uap(9);
  for (std::size_t i = 0; i < kImageSize; ++i) u.delta_v[i] = i % 2 ? 0.03 : -0.03;
  const auto keys = select_key_positions(w.params, test_set());
  std::vector<Image> imgs;
  std::vector<TokenSeq> toks;
  for (std::size_t i = 0; i < test_set().size(); ++i) {
    imgs.push_back(apply_image(test_set()[i].image, u.delta_v));
    toks.push_back(apply_text(test_set()[i].tokens, keys[i], 9));
  }
  const Embeddings e = embed_corpus(w.params, test_set(), &u);
  CHECK(max_abs_diff(e.images.data(), encode_images(w.params, imgs).data()) == 0.0);
  CHECK(max_abs_diff(e.texts.data(), encode_texts(w.params, toks).data()) == 0.0);

  const Embeddings img_only = embed_corpus(w.params, test_set(), &u, {Modality::kImageOnly, TextMode::kProjected});
  CHECK(max_abs_diff(img_only.texts.data(), encode_texts(w.params, tokens_of(test_set())).data()) == 0.0);
  const Embeddings txt_only = embed_corpus(w.params, test_set(), &u, {Modality::kTextOnly, TextMode::kProjected});
  CHECK(max_abs_diff(txt_only.images.data(), encode_images(w.params, images_of(test_set())).data()) == 0.0);
}

TEST_CASE("continuous text equals projected text when u is a vocabulary row") {
  const World& w = small_world();
  Uap u = token_uap(12);
  const auto row = w.params.tok_embed.data().subspan(12 * kEmbedDim, kEmbedDim);
  u.delta_t_embed.assign(row.begin(), row.end());
  const Embeddings a = embed_corpus(w.params, test_set(), &u);
  const Embeddings b = embed_corpus(w.params, test_set(), &u, {Modality::kBoth, TextMode::kContinuous});
  CHECK(max_abs_diff(a.texts.data(), b.texts.data()) < 1e-12);
}

TEST_CASE("cached key positions are reused only when they cover the corpus") {
  const World& w = small_world();
  Uap u = token_uap(5);
  u.key_positions.assign(test_set().size(), 1);
  CHECK(key_positions_for(w.params, test_set(), u) == u.key_positions);
  u.key_positions.resize(3);
  CHECK(key_positions_for(w.params, test_set(), u) == select_key_positions(w.params, test_set()));
}

TEST_CASE("similarity matches explicit dot products") {
  const World& w = small_world();
  const Embeddings e = embed_corpus(w.params, test_set(), nullptr);
  const Tensor s = similarity(e);
  const std::size_t n = test_set().size();
  for (std::size_t i = 0; i < n; i += 7) {
    for (std::size_t j = 0; j < n; j += 5) {
      double d = 0.0;
      for (std::size_t c = 0; c < kEmbedDim; ++c) d += e.images[i * kEmbedDim + c] * e.texts[j * kEmbedDim + c];
      CHECK(s[i * n + j] == doctest::Approx(d).epsilon(1e-12));
    }
  }
}

TEST_CASE("pair similarity probe") {
  const World& w = small_world();
  AugSpec noise = AugSpec::of(AugKind::kNoise);
  CHECK(pair_similarity_probe(w.params, test_set(), noise, 3) == pair_similarity_probe(w.params, test_set(), noise, 3));
  CHECK(pair_similarity_probe(w.params, test_set(), noise, 3) != pair_similarity_probe(w.params, test_set(), noise, 4));

  std::vector<PairSample> sym(test_set().begin(), test_set().begin() + 12);
  for (PairSample& s : sym) {
    const Image im = s.image;
    for (std::size_t y = 0; y < kImageH; ++y) {
      for (std::size_t x = 0; x < kImageW; ++x) {
        for (std::size_t c = 0; c < kImageC; ++c) {
          s.image[pixel_index(y, x, c)] = 0.5 * (im[pixel_index(y, x, c)] + im[pixel_index(y, kImageW - 1 - x, c)]);
        }
      }
    }
  }
  const double flipped = pair_similarity_probe(w.params, sym, AugSpec::of(AugKind::kFlip));
  CHECK(std::abs(flipped - pair_similarity_probe(w.params, sym, AugSpec::none())) < 1e-12);

  std::vector<PairSample> rev(test_set().rbegin(), test_set().rend());
  CHECK(pair_similarity_probe(w.params, rev, AugSpec::none()) ==
        doctest::Approx(pair_similarity_probe(w.params, test_set(), AugSpec::none())).epsilon(1e-12));
  CHECK_THROWS_AS(pair_similarity_probe(w.params, {}, AugSpec::none()), Error);
}

TEST_CASE("evaluate reports every view and a clean control") {
  const World& w = small_world();
  UapArtifact art;
  art.uap = token_uap(7);
  art.uap.delta_v.fill(0.04);
  art.config.record_wallclock = false;
  const RetrievalReport r = evaluate(w.params, w.data, art);
  CHECK(r.n_test == test_set().size());
  CHECK(r.control.tr_flipped == 0);
  CHECK(r.control.ir_flipped == 0);
  CHECK(r.clean[0].tr <= r.clean[1].tr);
  CHECK(r.clean[1].tr <= r.clean[2].tr);
  const AsrResult direct = asr_at_k(w.params, test_set(), art.uap, 1);
  CHECK(r.asr[0].tr == direct.tr);
  CHECK(r.asr[0].ir == direct.ir);

  const Json j = report_to_json(r);
  CHECK(j.at("format") == "douap-report");
  CHECK(j.at("asr").contains("at_10"));
  CHECK(j.at("diagnostics").contains("asr_at_1_text_only"));
  CHECK(j.at("control").at("asr_at_1").at("tr_flipped") == 0);
  CHECK(serialize_report(r) == serialize_report(evaluate(w.params, w.data, art)));

  Dataset tiny = w.data;
  tiny.test.resize(9);
  CHECK_THROWS_AS(evaluate(w.params, tiny, art), Error);
}

TEST_CASE("sweep table and csv") {
  SweepTable t;
  t.param = SweepParam::kBeta;
  AsrResult a;
  a.tr = 0.5;
  a.ir = 0.25;
  AsrResult b;
  b.tr = 1.0;
  b.ir = 0.75;
  AsrResult none;
  t.rows = {{"0.1", 1, a, 2.0}, {"0.1", 2, b, 4.0}, {"0.3", 1, none, 1.0}};
  const auto agg = t.aggregates();
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].runs == 2);
  CHECK(agg[0].tr_mean == 0.75);
  CHECK(agg[0].tr_sd == doctest::Approx(std::sqrt(0.125)));
  CHECK(agg[0].mean == doctest::Approx(0.625));
  CHECK(agg[1].runs == 1);

  const std::string csv = t.to_csv();
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 1 + 3 + 4);
  CHECK(lines[0] == "param,value,seed,tr_asr,ir_asr,mean_asr,wallclock");
  CHECK(lines[1] == "beta,0.1,1,0.5,0.25,0.375,2");
  CHECK(lines[3] == "beta,0.3,1,,,,1");
  CHECK(lines[4].starts_with("beta,0.1,mean,0.75,0.5,0.625,3"));
  CHECK(lines[5].starts_with("beta,0.1,sd,"));
}

TEST_CASE("run_sweep produces one row per value and seed") {
  const World& w = small_world();
  SweepSpec spec;
  spec.param = SweepParam::kAlpha;
  spec.values = {"1"};
  spec.seeds = {3};
  AttackConfig base;
  base.epochs = 1;
  base.batch = 64;
  base.record_wallclock = false;
  const SweepTable t = run_sweep(w.params, w.data, spec, base);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].seed == 3);
  CHECK(t.rows[0].wallclock == 0.0);
  AttackConfig direct = base;
  direct.seed = 3;
  const Uap u = do_uap(w.params, w.data.train, direct).uap;
  CHECK(t.rows[0].asr.tr == asr_at_k(w.params, test_set(), u, 1).tr);
  CHECK(run_sweep(w.params, w.data, spec, base, AttackMethod::kGenerator).rows.size() == 1);

  try {
    AttackConfig huge = base;
    huge.batch = 4096;
    run_sweep(w.params, w.data, spec, huge);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.where() == "sweep alpha=1 seed=3");
  }
  spec.values = {"abc"};
  try {
    run_sweep(w.params, w.data, spec, base);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.where() == "sweep.values");
  }
  spec.values.clear();
  CHECK_THROWS_AS(run_sweep(w.params, w.data, spec, base), Error);
}

TEST_CASE("aggregate table folds sweeps and reports") {
  SweepTable t;
  t.param = SweepParam::kAlpha;
  AsrResult a;
  a.tr = 0.5;
  a.ir = 1.0;
  t.rows = {{"0", 1, a, 1.0}, {"0", 2, a, 3.0}};

  Json rep;
  rep["format"] = "douap-report";
  rep["method"] = "do-uap";
  rep["config"] = {{"eps_v", 0.5}, {"alpha", 1.0}, {"beta", 0.1}, {"epochs", 2}, {"aug", {{"kind", "none"}}}};
  rep["asr"]["at_1"] = {{"tr", 0.25}, {"ir", nullptr}};
  rep["wallclock_attack_seconds"] = 2.0;
  rep["seconds_per_iteration"] = 0.5;
  const std::vector<NamedInput> inputs = {{"s.csv", t.to_csv()}, {"r1.json", rep.dump()}, {"r2.json", rep.dump()}};
  const std::string out = aggregate_table(inputs);
  std::istringstream in(out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(lines[1] == "sweep,,alpha,0,2,0.5,0,1,0,0.75,0,2,");
  CHECK(lines[2] == "report,do-uap,config,eps_v=0.5;alpha=1;beta=0.10000000000000001;epochs=2;aug=none,2,0.25,0,0,0,0.25,0,2,0.5");

  const std::vector<NamedInput> bad = {{"x.txt", "hello"}};
  CHECK_THROWS_AS(aggregate_table(bad), Error);
  const std::vector<NamedInput> short_row = {{"s.csv", "param,value,seed,tr_asr\nalpha,1\n"}};
  CHECK_THROWS_AS(aggregate_table(short_row), Error);
}
