#include "douap/uap_io.hpp"

#include <cmath>

#include <fmt/format.h>

#include "douap/error.hpp"

namespace douap {

namespace {

constexpr std::string_view kPolicy = "saliency";

[[noreturn]] void bad(std::string_view field, std::string msg) {
  throw Error(ErrorCode::kFormat, fmt::format("uap.{}", field), std::move(msg));
}

const Json& field(const Json& j, std::string_view name) {
  const auto it = j.find(name);
  if (it == j.end()) bad(name, "missing");
  return *it;
}

double number(const Json& j, std::string_view name) {
  const Json& v = field(j, name);
  if (!v.is_number()) bad(name, "expected a number");
  return v.get<double>();
}

std::size_t count(const Json& j, std::string_view name) {
  const Json& v = field(j, name);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad(name, "expected a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

UapArtifact to_artifact(const AttackResult& result) {
  UapArtifact a;
  a.method = result.method;
  a.config = result.config;
  a.uap = result.uap;
  a.iterations = result.iterations;
  if (result.config.record_wallclock) {
    a.wallclock_seconds = result.wallclock_seconds;
    a.seconds_per_iteration = result.seconds_per_iteration();
  }
  return a;
}

Json aug_to_json(const AugSpec& aug) {
  Json j;
  j["kind"] = std::string(to_string(aug.kind));
  switch (aug.kind) {
    case AugKind::kBrightness:
      j["lo"] = aug.brightness_lo;
      j["hi"] = aug.brightness_hi;
      break;
    case AugKind::kNoise: j["sigma"] = aug.noise_sigma; break;
    case AugKind::kCrop: j["keep"] = aug.crop_keep; break;
    case AugKind::kCompression: j["levels"] = aug.compression_levels; break;
    case AugKind::kNone:
    case AugKind::kFlip: break;
  }
  return j;
}

AugSpec aug_from_json(const Json& j) {
  if (!j.is_object()) bad("aug", "expected an object");
  const Json& kind = field(j, "kind");
  if (!kind.is_string()) bad("aug.kind", "expected a string");
  AugSpec aug;
  try {
    aug = AugSpec::of(parse_aug_kind(kind.get<std::string>()));
  } catch (const Error& e) {
    bad("aug.kind", e.message());
  }
  switch (aug.kind) {
    case AugKind::kBrightness:
      aug.brightness_lo = number(j, "lo");
      aug.brightness_hi = number(j, "hi");
      break;
    case AugKind::kNoise: aug.noise_sigma = number(j, "sigma"); break;
    case AugKind::kCrop: aug.crop_keep = number(j, "keep"); break;
    case AugKind::kCompression: aug.compression_levels = static_cast<int>(count(j, "levels")); break;
    case AugKind::kNone:
    case AugKind::kFlip: break;
  }
  try {
    aug.validate();
  } catch (const Error& e) {
    bad("aug", e.message());
  }
  return aug;
}

std::string serialize_uap(const UapArtifact& a) {
  if (!a.uap.delta_t_token) throw Error(ErrorCode::kInvalidArgument, "serialize_uap", "no projected token");
  Json j;
  j["format"] = "douap-uap";
  j["version"] = 1;
  j["method"] = a.method;
  j["eps_v"] = a.config.eps_v;
  j["eps_t"] = a.config.eps_t;
  j["alpha"] = a.config.alpha;
  j["beta"] = a.config.beta;
  j["epochs"] = a.config.epochs;
  j["batch"] = a.config.batch;
  j["seed"] = a.config.seed;
  j["aug"] = aug_to_json(a.config.aug);
  if (a.config.text_step_scale) {
    j["text_step_scale"] = *a.config.text_step_scale;
  } else {
    j["text_step_scale"] = nullptr;
  }
  j["generator_lr"] = a.config.generator_lr;
  j["delta_v"] = encode_f64_base64(a.uap.delta_v);
  j["delta_t_embed"] = encode_f64_base64(a.uap.delta_t_embed);
  j["delta_t_token"] = *a.uap.delta_t_token;
  j["key_position_policy"] = kPolicy;
  j["record_wallclock"] = a.config.record_wallclock;
  j["wallclock_seconds"] = a.wallclock_seconds;
  j["seconds_per_iteration"] = a.seconds_per_iteration;
  j["iterations"] = a.iterations;
  j["threads"] = a.threads;
  return dump_json(j);
}

UapArtifact parse_uap(std::string_view text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) bad("json", "not a JSON object");
  if (!field(j, "format").is_string() || field(j, "format").get<std::string>() != "douap-uap") {
    bad("format", "not a UAP artifact");
  }
  if (count(j, "version") != 1) bad("version", fmt::format("unsupported version {}", field(j, "version").dump()));

  UapArtifact a;
  const Json& method = field(j, "method");
  if (!method.is_string() || (method != "do-uap" && method != "generator")) bad("method", "expected do-uap or generator");
  a.method = method.get<std::string>();
  a.config.eps_v = number(j, "eps_v");
  a.config.eps_t = count(j, "eps_t");
  a.config.alpha = number(j, "alpha");
  a.config.beta = number(j, "beta");
  a.config.epochs = count(j, "epochs");
  a.config.batch = count(j, "batch");
  if (!field(j, "seed").is_number_unsigned()) bad("seed", "expected a non-negative integer");
  a.config.seed = field(j, "seed").get<std::uint64_t>();
  a.config.aug = aug_from_json(field(j, "aug"));
  if (!field(j, "text_step_scale").is_null()) a.config.text_step_scale = number(j, "text_step_scale");
  a.config.generator_lr = number(j, "generator_lr");
  const Json& record = field(j, "record_wallclock");
  if (!record.is_boolean()) bad("record_wallclock", "expected a boolean");
  a.config.record_wallclock = record.get<bool>();
  try {
    a.config.validate();
  } catch (const Error& e) {
    bad("config", e.message());
  }

  auto decode = [&](std::string_view name, std::size_t expected) {
    const Json& v = field(j, name);
    if (!v.is_string()) bad(name, "expected base64 text");
    std::vector<double> out;
    try {
      out = decode_f64_base64(v.get<std::string>());
    } catch (const Error& e) {
      bad(name, e.message());
    }
    if (out.size() != expected) bad(name, fmt::format("expected {} values, got {}", expected, out.size()));
    for (double x : out) {
      if (!std::isfinite(x)) bad(name, "non-finite value");
    }
    return out;
  };
  const std::vector<double> dv = decode("delta_v", kImageSize);
  std::copy(dv.begin(), dv.end(), a.uap.delta_v.begin());
  if (a.uap.linf() > a.config.eps_v + 1e-12) {
    bad("delta_v", fmt::format("|delta_v|_inf {:.17g} exceeds eps_v {:.17g}", a.uap.linf(), a.config.eps_v));
  }
  a.uap.delta_t_embed = decode("delta_t_embed", kEmbedDim);

  const Json& tok = field(j, "delta_t_token");
  if (!tok.is_number_integer()) bad("delta_t_token", "expected an integer");
  const long long token = tok.get<long long>();
  if (token < kFirstEligibleToken || token >= static_cast<long long>(kVocabSize)) {
    bad("delta_t_token", fmt::format("token {} is not substitutable", token));
  }
  a.uap.delta_t_token = static_cast<int>(token);
  if (field(j, "key_position_policy") != kPolicy) bad("key_position_policy", "expected \"saliency\"");

  a.wallclock_seconds = number(j, "wallclock_seconds");
  a.seconds_per_iteration = number(j, "seconds_per_iteration");
  a.iterations = count(j, "iterations");
  a.threads = count(j, "threads");
  return a;
}

void save_uap(const UapArtifact& artifact, const std::filesystem::path& path) {
  write_file(path, serialize_uap(artifact));
}

UapArtifact load_uap(const std::filesystem::path& path) { return parse_uap(read_file(path)); }

}  // namespace douap
