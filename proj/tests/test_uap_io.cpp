#include <doctest.h>

#include <filesystem>

#include "douap/error.hpp"
#include "douap/uap_io.hpp"

using namespace douap;

namespace {

AugSpec with(AugKind kind, void (*set)(AugSpec&)) {
  AugSpec s = AugSpec::of(kind);
  set(s);
  return s;
}

UapArtifact sample_artifact() {
  UapArtifact a;
  a.method = "generator";
  a.config.eps_v = 8.0 / 255.0;
  a.config.alpha = 0.1;
  a.config.beta = 0.3;
  a.config.epochs = 5;
  a.config.batch = 32;
  a.config.seed = 17;
  a.config.aug = with(AugKind::kNoise, [](AugSpec& s) { s.noise_sigma = 0.02; });
  a.config.text_step_scale = 0.125;
  for (std::size_t i = 0; i < kImageSize; ++i) a.uap.delta_v[i] = (i % 3 == 0 ? -1.0 : 0.7) * a.config.eps_v;
  for (std::size_t i = 0; i < kEmbedDim; ++i) a.uap.delta_t_embed[i] = 0.1 * static_cast<double>(i) - 1.0 / 3.0;
  a.uap.delta_t_token = 11;
  a.wallclock_seconds = 1.25;
  a.seconds_per_iteration = 0.01;
  a.iterations = 125;
  return a;
}

std::string field_of_error(const std::string& text) {
  try {
    parse_uap(text);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
    return e.where();
  }
  FAIL("expected an error");
  return {};
}

std::string edited(const std::string& key, const Json& value) {
  Json j = Json::parse(serialize_uap(sample_artifact()));
  if (value.is_discarded()) {
    j.erase(key);
  } else {
    j[key] = value;
  }
  return j.dump();
}

}  // namespace

TEST_CASE("artifact round-trips exactly") {
  const UapArtifact a = sample_artifact();
  const std::string text = serialize_uap(a);
  const UapArtifact b = parse_uap(text);
  CHECK(b.method == a.method);
  CHECK(b.config.eps_v == a.config.eps_v);
  CHECK(b.config.alpha == a.config.alpha);
  CHECK(b.config.beta == a.config.beta);
  CHECK(b.config.epochs == a.config.epochs);
  CHECK(b.config.batch == a.config.batch);
  CHECK(b.config.seed == a.config.seed);
  CHECK(b.config.aug.kind == AugKind::kNoise);
  CHECK(b.config.aug.noise_sigma == 0.02);
  CHECK(b.config.text_step_scale == 0.125);
  CHECK(b.uap.delta_v == a.uap.delta_v);
  CHECK(b.uap.delta_t_embed == a.uap.delta_t_embed);
  CHECK(b.uap.delta_t_token == 11);
  CHECK(b.iterations == 125);
  CHECK(serialize_uap(b) == text);

  const auto path = std::filesystem::temp_directory_path() / "douap_uap_test.json";
  save_uap(a, path);
  CHECK(serialize_uap(load_uap(path)) == text);
  std::filesystem::remove(path);
}

TEST_CASE("every augmentation kind round-trips") {
  const AugSpec augs[] = {AugSpec::none(), AugSpec::brightness(0.1, 0.2), AugSpec::of(AugKind::kFlip),
                          with(AugKind::kNoise, [](AugSpec& s) { s.noise_sigma = 0.03; }),
                          with(AugKind::kCrop, [](AugSpec& s) { s.crop_keep = 0.75; }),
                          with(AugKind::kCompression, [](AugSpec& s) { s.compression_levels = 4; })};
  for (const AugSpec& aug : augs) {
    const AugSpec back = aug_from_json(aug_to_json(aug));
    CHECK(aug_to_json(back) == aug_to_json(aug));
  }
  CHECK_THROWS_AS(aug_from_json(Json{{"kind", "blur"}}), Error);
  CHECK_THROWS_AS(aug_from_json(Json{{"kind", "noise"}}), Error);
}

TEST_CASE("auto text step serializes as null") {
  UapArtifact a = sample_artifact();
  a.config.text_step_scale.reset();
  const Json j = Json::parse(serialize_uap(a));
  CHECK(j.at("text_step_scale").is_null());
  CHECK_FALSE(parse_uap(j.dump()).config.text_step_scale.has_value());
}

TEST_CASE("parse errors name the offending field") {
  CHECK(field_of_error("not json") == "uap.json");
  CHECK(field_of_error(edited("format", "other")) == "uap.format");
  CHECK(field_of_error(edited("version", 2)) == "uap.version");
  CHECK(field_of_error(edited("method", "pgd")) == "uap.method");
  CHECK(field_of_error(edited("alpha", Json::value_t::discarded)) == "uap.alpha");
  CHECK(field_of_error(edited("alpha", "one")) == "uap.alpha");
  CHECK(field_of_error(edited("seed", -3)) == "uap.seed");
  CHECK(field_of_error(edited("delta_v", "AAAA")) == "uap.delta_v");
  CHECK(field_of_error(edited("delta_v", "!!!!")) == "uap.delta_v");
  CHECK(field_of_error(edited("delta_t_token", 2)) == "uap.delta_t_token");
  CHECK(field_of_error(edited("delta_t_token", 18)) == "uap.delta_t_token");
  CHECK(field_of_error(edited("key_position_policy", "random")) == "uap.key_position_policy");
  CHECK(field_of_error(edited("record_wallclock", 1)) == "uap.record_wallclock");
}

TEST_CASE("a delta outside the budget is rejected") {
  UapArtifact a = sample_artifact();
  a.uap.delta_v[100] = 2.0 * a.config.eps_v;
  CHECK(field_of_error(serialize_uap(a)) == "uap.delta_v");
  a = sample_artifact();
  a.config.beta = 0.0;
  CHECK(field_of_error(serialize_uap(a)) == "uap.config");
}

TEST_CASE("serializing requires a projected token") {
  UapArtifact a = sample_artifact();
  a.uap.delta_t_token.reset();
  CHECK_THROWS_AS(serialize_uap(a), Error);
}

TEST_CASE("to_artifact zeroes timings for reproducible runs") {
  AttackResult r;
  r.method = "do-uap";
  r.uap.delta_t_token = 5;
  r.log = {IterationLog{0, 0, 1.0, 0.0, 0.5}, IterationLog{0, 1, 1.0, 0.0, 1.5}};
  r.iterations = 2;
  r.wallclock_seconds = 2.5;
  r.config.record_wallclock = true;
  UapArtifact a = to_artifact(r);
  CHECK(a.wallclock_seconds == 2.5);
  CHECK(a.seconds_per_iteration == 1.0);
  CHECK(a.iterations == 2);
  r.config.record_wallclock = false;
  a = to_artifact(r);
  CHECK(a.wallclock_seconds == 0.0);
  CHECK(a.seconds_per_iteration == 0.0);
  CHECK(a.iterations == 2);
}
