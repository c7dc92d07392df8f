#include "douap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "douap/error.hpp"
#include "douap/rng.hpp"

namespace douap {

namespace {

std::vector<Image> images_of(std::span<const PairSample> samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const PairSample& s : samples) out.push_back(s.image);
  return out;
}

std::vector<TokenSeq> tokens_of(std::span<const PairSample> samples) {
  std::vector<TokenSeq> out;
  out.reserve(samples.size());
  for (const PairSample& s : samples) out.push_back(s.tokens);
  return out;
}

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.dim(1);
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += a[i * d + c] * b[j * d + c];
  return s;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json asr_json(const AsrResult& a) {
  Json j;
  j["tr"] = optional_number(a.tr);
  j["ir"] = optional_number(a.ir);
  j["mean"] = optional_number(a.mean());
  j["tr_denominator"] = a.tr_denominator;
  j["ir_denominator"] = a.ir_denominator;
  j["tr_flipped"] = a.tr_flipped;
  j["ir_flipped"] = a.ir_flipped;
  return j;
}

Json recall_json(const RecallRates& r) { return Json{{"tr", r.tr}, {"ir", r.ir}}; }

std::string csv_number(const std::optional<double>& v) { return v ? fmt::format("{:.17g}", *v) : std::string(); }

struct Stats {
  double mean = 0.0;
  double sd = 0.0;
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

std::vector<std::size_t> key_positions_for(const DualEncoderParams& params, std::span<const PairSample> samples,
                                           const Uap& uap) {
  if (uap.key_positions.size() == samples.size()) return uap.key_positions;
  return select_key_positions(params, samples);
}

Embeddings embed_corpus(const DualEncoderParams& params, std::span<const PairSample> samples, const Uap* uap,
                        PerturbOptions options) {
  std::vector<Image> images = images_of(samples);
  std::vector<TokenSeq> tokens = tokens_of(samples);
  if (uap == nullptr) return {encode_images(params, images), encode_texts(params, tokens)};

  if (options.modality != Modality::kTextOnly) {
    for (Image& im : images) im = apply_image(im, uap->delta_v);
  }
  if (options.modality == Modality::kImageOnly || !uap->delta_t_token) {
    return {encode_images(params, images), encode_texts(params, tokens)};
  }
  const std::vector<std::size_t> keys = key_positions_for(params, samples, *uap);
  if (options.text == TextMode::kProjected) {
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = apply_text(tokens[i], keys[i], *uap->delta_t_token);
    return {encode_images(params, images), encode_texts(params, tokens)};
  }
  std::vector<std::optional<TokenOverride>> overrides;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!eligible_position(tokens[i], keys[i])) {
      throw Error(ErrorCode::kInvalidArgument, "embed_corpus", fmt::format("key position {} ineligible", keys[i]));
    }
    overrides.push_back(TokenOverride{keys[i], 0});
  }
  const Tensor table({1, kEmbedDim}, uap->delta_t_embed);
  return {encode_images(params, images), encode_texts(params, tokens, overrides, &table)};
}

Tensor similarity(const Embeddings& e) {
  const std::size_t n = e.images.dim(0);
  if (e.texts.dim(0) != n) {
    throw Error(ErrorCode::kShapeMismatch, "similarity",
                fmt::format("{} images vs {} texts", n, e.texts.dim(0)));
  }
  Tensor s({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) s[i * n + j] = dot_rows(e.images, i, e.texts, j);
  }
  return s;
}

CorrectFlags correct_at_k(const Tensor& sim, std::size_t k) {
  const std::size_t n = sim.dim(0);
  if (sim.rank() != 2 || sim.dim(1) != n) throw Error(ErrorCode::kShapeMismatch, "correct_at_k", "not square");
  if (k < 1 || k > n) throw Error(ErrorCode::kInvalidArgument, "correct_at_k", fmt::format("k={} with n={}", k, n));
  CorrectFlags f{std::vector<bool>(n), std::vector<bool>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double target = sim[i * n + i];
    std::size_t above_row = 0, above_col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double r = sim[i * n + j];
      const double c = sim[j * n + i];
      if (r > target || (r == target && j < i)) ++above_row;
      if (c > target || (c == target && j < i)) ++above_col;
    }
    f.tr[i] = above_row < k;
    f.ir[i] = above_col < k;
  }
  return f;
}

RecallRates recall_from_flags(const CorrectFlags& flags) {
  const double n = static_cast<double>(flags.tr.size());
  const auto hits = [](const std::vector<bool>& v) { return static_cast<double>(std::count(v.begin(), v.end(), true)); };
  return {hits(flags.tr) / n, hits(flags.ir) / n};
}

std::optional<double> AsrResult::mean() const {
  if (tr && ir) return 0.5 * (*tr + *ir);
  if (tr) return tr;
  return ir;
}

AsrResult asr_from_flags(const CorrectFlags& clean, const CorrectFlags& adversarial) {
  AsrResult a;
  for (std::size_t i = 0; i < clean.tr.size(); ++i) {
    if (clean.tr[i]) {
      ++a.tr_denominator;
      a.tr_flipped += !adversarial.tr[i];
    }
    if (clean.ir[i]) {
      ++a.ir_denominator;
      a.ir_flipped += !adversarial.ir[i];
    }
  }
  if (a.tr_denominator > 0) a.tr = static_cast<double>(a.tr_flipped) / static_cast<double>(a.tr_denominator);
  if (a.ir_denominator > 0) a.ir = static_cast<double>(a.ir_flipped) / static_cast<double>(a.ir_denominator);
  return a;
}

RecallRates recall_at_k(const DualEncoderParams& params, std::span<const PairSample> samples, const Uap* uap,
                        std::size_t k, PerturbOptions options) {
  return recall_from_flags(correct_at_k(similarity(embed_corpus(params, samples, uap, options)), k));
}

AsrResult asr_at_k(const DualEncoderParams& params, std::span<const PairSample> samples, const Uap& uap,
                   std::size_t k, PerturbOptions options) {
  const CorrectFlags clean = correct_at_k(similarity(embed_corpus(params, samples, nullptr)), k);
  const CorrectFlags adv = correct_at_k(similarity(embed_corpus(params, samples, &uap, options)), k);
  return asr_from_flags(clean, adv);
}

double pair_similarity_probe(const DualEncoderParams& params, std::span<const PairSample> samples,
                             const AugSpec& aug, std::uint64_t seed) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "pair_similarity_probe", "empty corpus");
  std::vector<Image> images;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(seed ^ i);
    images.push_back(augment(samples[i].image, aug, rng));
  }
  const Tensor img = encode_images(params, images);
  const Tensor txt = encode_texts(params, tokens_of(samples));
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) total += dot_rows(img, i, txt, i);
  return total / static_cast<double>(samples.size());
}

RetrievalReport evaluate(const DualEncoderParams& params, const Dataset& data, const UapArtifact& artifact,
                         const EvalConfig& config) {
  std::span<const PairSample> test = data.test;
  if (test.size() < kReportKs.back()) {
    throw Error(ErrorCode::kInvalidArgument, "evaluate", fmt::format("need >= {} test pairs", kReportKs.back()));
  }
  RetrievalReport r;
  r.data_seed = data.seed;
  r.n_test = test.size();
  r.attack = artifact;
  r.probe_seed = config.probe_seed;

  Uap uap = artifact.uap;
  uap.key_positions = select_key_positions(params, test);
  const Tensor clean = similarity(embed_corpus(params, test, nullptr));
  const Tensor adv = similarity(embed_corpus(params, test, &uap));
  const Tensor cont = similarity(embed_corpus(params, test, &uap, {Modality::kBoth, TextMode::kContinuous}));
  const Tensor img_only = similarity(embed_corpus(params, test, &uap, {Modality::kImageOnly, TextMode::kProjected}));
  const Tensor txt_only = similarity(embed_corpus(params, test, &uap, {Modality::kTextOnly, TextMode::kProjected}));
  const Uap zero = Uap::zero();
  const Tensor control = similarity(embed_corpus(params, test, &zero));

  for (std::size_t i = 0; i < kReportKs.size(); ++i) {
    const CorrectFlags c = correct_at_k(clean, kReportKs[i]);
    const CorrectFlags a = correct_at_k(adv, kReportKs[i]);
    r.clean[i] = recall_from_flags(c);
    r.adversarial[i] = recall_from_flags(a);
    r.asr[i] = asr_from_flags(c, a);
    r.asr_continuous[i] = asr_from_flags(c, correct_at_k(cont, kReportKs[i]));
  }
  const CorrectFlags c1 = correct_at_k(clean, 1);
  r.asr_image_only = asr_from_flags(c1, correct_at_k(img_only, 1));
  r.asr_text_only = asr_from_flags(c1, correct_at_k(txt_only, 1));
  r.control = asr_from_flags(c1, correct_at_k(control, 1));
  r.mean_pair_cosine_clean = pair_similarity_probe(params, test, AugSpec::none(), config.probe_seed);
  r.mean_pair_cosine_augmented = pair_similarity_probe(params, test, artifact.config.aug, config.probe_seed);
  return r;
}

Json report_to_json(const RetrievalReport& r) {
  Json j;
  j["format"] = "douap-report";
  j["version"] = 1;
  j["data_seed"] = r.data_seed;
  j["n_test"] = r.n_test;
  j["method"] = r.attack.method;
  j["seed"] = r.attack.config.seed;
  Json cfg;
  cfg["eps_v"] = r.attack.config.eps_v;
  cfg["eps_t"] = r.attack.config.eps_t;
  cfg["alpha"] = r.attack.config.alpha;
  cfg["beta"] = r.attack.config.beta;
  cfg["epochs"] = r.attack.config.epochs;
  cfg["batch"] = r.attack.config.batch;
  cfg["aug"] = aug_to_json(r.attack.config.aug);
  j["config"] = cfg;
  j["delta_t_token"] = r.attack.uap.delta_t_token ? Json(*r.attack.uap.delta_t_token) : Json(nullptr);
  j["linf_delta_v"] = r.attack.uap.linf();
  for (std::size_t i = 0; i < kReportKs.size(); ++i) {
    const std::string k = std::to_string(kReportKs[i]);
    j["clean"]["r_at_" + k] = recall_json(r.clean[i]);
    j["adversarial"]["r_at_" + k] = recall_json(r.adversarial[i]);
    j["asr"]["at_" + k] = asr_json(r.asr[i]);
    j["asr_continuous"]["at_" + k] = asr_json(r.asr_continuous[i]);
  }
  j["diagnostics"]["asr_at_1_image_only"] = asr_json(r.asr_image_only);
  j["diagnostics"]["asr_at_1_text_only"] = asr_json(r.asr_text_only);
  j["control"]["asr_at_1"] = asr_json(r.control);
  j["mean_pair_cosine"] = Json{{"clean", r.mean_pair_cosine_clean},
                               {"augmented", r.mean_pair_cosine_augmented},
                               {"aug", aug_to_json(r.attack.config.aug)},
                               {"probe_seed", r.probe_seed}};
  j["wallclock_attack_seconds"] = r.attack.wallclock_seconds;
  j["seconds_per_iteration"] = r.attack.seconds_per_iteration;
  j["iterations"] = r.attack.iterations;
  j["threads"] = r.attack.threads;
  return j;
}

std::string serialize_report(const RetrievalReport& report) { return dump_json(report_to_json(report)); }

std::vector<SweepAggregate> SweepTable::aggregates() const {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SweepRow*>> by_value;
  for (const SweepRow& row : rows) {
    if (!by_value.contains(row.value)) order.push_back(row.value);
    by_value[row.value].push_back(&row);
  }
  std::vector<SweepAggregate> out;
  for (const std::string& value : order) {
    std::vector<double> tr, ir, mean;
    for (const SweepRow* row : by_value[value]) {
      if (row->asr.tr) tr.push_back(*row->asr.tr);
      if (row->asr.ir) ir.push_back(*row->asr.ir);
      if (row->asr.mean()) mean.push_back(*row->asr.mean());
    }
    const Stats t = stats(tr), i = stats(ir), m = stats(mean);
    out.push_back({value, by_value[value].size(), t.mean, i.mean, m.mean, t.sd, i.sd, m.sd});
  }
  return out;
}

std::string SweepTable::to_csv() const {
  const std::string_view name = to_string(param);
  std::string out = "param,value,seed,tr_asr,ir_asr,mean_asr,wallclock\n";
  for (const SweepRow& row : rows) {
    out += fmt::format("{},{},{},{},{},{},{:.17g}\n", name, row.value, row.seed, csv_number(row.asr.tr),
                       csv_number(row.asr.ir), csv_number(row.asr.mean()), row.wallclock);
  }
  for (const SweepAggregate& a : aggregates()) {
    std::vector<double> walls;
    for (const SweepRow& row : rows) {
      if (row.value == a.value) walls.push_back(row.wallclock);
    }
    const Stats w = stats(walls);
    out += fmt::format("{},{},mean,{:.17g},{:.17g},{:.17g},{:.17g}\n", name, a.value, a.tr_mean, a.ir_mean, a.mean,
                       w.mean);
    out += fmt::format("{},{},sd,{:.17g},{:.17g},{:.17g},{:.17g}\n", name, a.value, a.tr_sd, a.ir_sd, a.sd, w.sd);
  }
  return out;
}

SweepTable run_sweep(const DualEncoderParams& params, const Dataset& data, const SweepSpec& spec,
                     const AttackConfig& base, AttackMethod method) {
  spec.validate();
  SweepTable table;
  table.param = spec.param;
  const CorrectFlags clean = correct_at_k(similarity(embed_corpus(params, data.test, nullptr)), 1);
  Uap cached;
  cached.key_positions = select_key_positions(params, data.test);
  for (const std::string& value : spec.values) {
    for (std::uint64_t seed : spec.seeds) {
      try {
        AttackConfig cfg = with_sweep_value(base, spec.param, value);
        cfg.seed = seed;
        const AttackResult res =
            method == AttackMethod::kDoUap ? do_uap(params, data.train, cfg) : generator_baseline(params, data.train, cfg);
        Uap uap = res.uap;
        uap.key_positions = cached.key_positions;
        const CorrectFlags adv = correct_at_k(similarity(embed_corpus(params, data.test, &uap)), 1);
        table.rows.push_back({value, seed, asr_from_flags(clean, adv), cfg.record_wallclock ? res.wallclock_seconds : 0.0});
      } catch (const Error& e) {
        throw Error(e.code(), fmt::format("sweep {}={} seed={}", to_string(spec.param), value, seed), e.message());
      }
    }
  }
  return table;
}

namespace {

struct Group {
  std::string source, method, param, value;
  std::vector<double> tr, ir, mean, wall, per_iter;
  std::size_t runs = 0;
};

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = line.find(',');
    out.emplace_back(line.substr(0, comma));
    if (comma == std::string_view::npos) return out;
    line.remove_prefix(comma + 1);
  }
}

std::optional<double> csv_field(const std::string& text, std::string_view where) {
  if (text.empty()) return std::nullopt;
  try {
    return parse_number(text);
  } catch (const Error&) {
    throw Error(ErrorCode::kFormat, std::string(where), fmt::format("'{}' is not a number", text));
  }
}

const Json& need(const Json& j, std::string_view key, std::string_view where) {
  const auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::kFormat, std::string(where), fmt::format("missing '{}'", key));
  return *it;
}

std::optional<double> json_rate(const Json& j) { return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>()); }

}  // namespace

std::string aggregate_table(std::span<const NamedInput> inputs) {
  std::vector<Group> groups;
  auto group_for = [&](std::string source, std::string method, std::string param, std::string value) -> Group& {
    for (Group& g : groups) {
      if (g.source == source && g.method == method && g.param == param && g.value == value) return g;
    }
    groups.push_back({std::move(source), std::move(method), std::move(param), std::move(value), {}, {}, {}, {}, {}, 0});
    return groups.back();
  };
  auto add = [](Group& g, std::optional<double> tr, std::optional<double> ir, double wall) {
    ++g.runs;
    if (tr) g.tr.push_back(*tr);
    if (ir) g.ir.push_back(*ir);
    if (tr && ir) {
      g.mean.push_back(0.5 * (*tr + *ir));
    } else if (tr || ir) {
      g.mean.push_back(tr ? *tr : *ir);
    }
    g.wall.push_back(wall);
  };

  for (const NamedInput& in : inputs) {
    const std::string_view body = in.contents;
    if (body.starts_with("param,value,seed,")) {
      std::size_t start = body.find('\n') + 1;
      std::size_t line_no = 1;
      while (start < body.size()) {
        ++line_no;
        const auto nl = body.find('\n', start);
        const std::string_view line = body.substr(start, (nl == std::string_view::npos ? body.size() : nl) - start);
        start = nl == std::string_view::npos ? body.size() : nl + 1;
        if (line.empty()) continue;
        const std::string where = fmt::format("{}:{}", in.name, line_no);
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 7) throw Error(ErrorCode::kFormat, where, fmt::format("expected 7 columns, got {}", f.size()));
        if (f[2] == "mean" || f[2] == "sd") continue;
        add(group_for("sweep", "", f[0], f[1]), csv_field(f[3], where), csv_field(f[4], where),
            csv_field(f[6], where).value_or(0.0));
      }
      continue;
    }
    const Json j = Json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("format", "") != "douap-report") {
      throw Error(ErrorCode::kFormat, in.name, "neither a sweep CSV nor a report JSON");
    }
    try {
      const Json& cfg = need(j, "config", in.name);
      const std::string value =
          fmt::format("eps_v={:.17g};alpha={:.17g};beta={:.17g};epochs={};aug={}", need(cfg, "eps_v", in.name).get<double>(),
                      need(cfg, "alpha", in.name).get<double>(), need(cfg, "beta", in.name).get<double>(),
                      need(cfg, "epochs", in.name).get<std::size_t>(),
                      need(need(cfg, "aug", in.name), "kind", in.name).get<std::string>());
      Group& g = group_for("report", need(j, "method", in.name).get<std::string>(), "config", value);
      const Json& at1 = need(need(j, "asr", in.name), "at_1", in.name);
      add(g, json_rate(need(at1, "tr", in.name)), json_rate(need(at1, "ir", in.name)),
          need(j, "wallclock_attack_seconds", in.name).get<double>());
      g.per_iter.push_back(need(j, "seconds_per_iteration", in.name).get<double>());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kFormat, in.name, e.what());
    }
  }

  std::string out =
      "source,method,param,value,runs,tr_asr_mean,tr_asr_sd,ir_asr_mean,ir_asr_sd,mean_asr_mean,mean_asr_sd,"
      "wallclock_mean,seconds_per_iteration_mean\n";
  for (const Group& g : groups) {
    const Stats tr = stats(g.tr), ir = stats(g.ir), mean = stats(g.mean), wall = stats(g.wall);
    const std::string per_iter = g.per_iter.empty() ? "" : fmt::format("{:.17g}", stats(g.per_iter).mean);
    out += fmt::format("{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", g.source, g.method,
                       g.param, g.value, g.runs, tr.mean, tr.sd, ir.mean, ir.sd, mean.mean, mean.sd, wall.mean, per_iter);
  }
  return out;
}

}  // namespace douap
