#include "douap/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>

#include <fmt/format.h>

#include "douap/error.hpp"
#include "douap/io.hpp"

namespace douap {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::kConfig, "value", fmt::format("'{}' is not a number", text));
  }
  return v;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorCode::kConfig, "value", fmt::format("'{}' is not a boolean", text));
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, std::map<std::string, Setter>, std::less<>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>, std::less<>> table = {
      {"data",
       {
           {"seed", [](RunConfig& c, std::string_view v) { c.data.seed = parse_count(v); }},
           {"n_train", [](RunConfig& c, std::string_view v) { c.data.n_train = parse_count(v); }},
           {"n_test", [](RunConfig& c, std::string_view v) { c.data.n_test = parse_count(v); }},
       }},
      {"train",
       {
           {"lr", [](RunConfig& c, std::string_view v) { c.train.lr = parse_number(v); }},
           {"momentum", [](RunConfig& c, std::string_view v) { c.train.momentum = parse_number(v); }},
           {"batch", [](RunConfig& c, std::string_view v) { c.train.batch = parse_count(v); }},
           {"epochs", [](RunConfig& c, std::string_view v) { c.train.epochs = parse_count(v); }},
           {"seed", [](RunConfig& c, std::string_view v) { c.train.seed = parse_count(v); }},
       }},
      {"attack",
       {
           {"eps_v", [](RunConfig& c, std::string_view v) { c.attack.eps_v = parse_number(v); }},
           {"eps_t", [](RunConfig& c, std::string_view v) { c.attack.eps_t = parse_count(v); }},
           {"alpha", [](RunConfig& c, std::string_view v) { c.attack.alpha = parse_number(v); }},
           {"beta", [](RunConfig& c, std::string_view v) { c.attack.beta = parse_number(v); }},
           {"epochs", [](RunConfig& c, std::string_view v) { c.attack.epochs = parse_count(v); }},
           {"batch", [](RunConfig& c, std::string_view v) { c.attack.batch = parse_count(v); }},
           {"seed", [](RunConfig& c, std::string_view v) { c.attack.seed = parse_count(v); }},
           {"aug", [](RunConfig& c, std::string_view v) { c.attack.aug.kind = parse_aug_kind(v); }},
           {"brightness_lo", [](RunConfig& c, std::string_view v) { c.attack.aug.brightness_lo = parse_number(v); }},
           {"brightness_hi", [](RunConfig& c, std::string_view v) { c.attack.aug.brightness_hi = parse_number(v); }},
           {"noise_sigma", [](RunConfig& c, std::string_view v) { c.attack.aug.noise_sigma = parse_number(v); }},
           {"crop_keep", [](RunConfig& c, std::string_view v) { c.attack.aug.crop_keep = parse_number(v); }},
           {"compression_levels",
            [](RunConfig& c, std::string_view v) { c.attack.aug.compression_levels = static_cast<int>(parse_count(v)); }},
           {"text_step_scale",
            [](RunConfig& c, std::string_view v) {
              if (v == "auto") {
                c.attack.text_step_scale.reset();
              } else {
                c.attack.text_step_scale = parse_number(v);
              }
            }},
           {"generator_lr", [](RunConfig& c, std::string_view v) { c.attack.generator_lr = parse_number(v); }},
           {"record_wallclock", [](RunConfig& c, std::string_view v) { c.attack.record_wallclock = parse_bool(v); }},
       }},
      {"eval",
       {
           {"probe_seed", [](RunConfig& c, std::string_view v) { c.eval.probe_seed = parse_count(v); }},
       }},
      {"sweep",
       {
           {"param", [](RunConfig& c, std::string_view v) { c.sweep.param = parse_sweep_param(v); }},
           {"values", [](RunConfig& c, std::string_view v) { c.sweep.values = split_list(v); }},
           {"seeds",
            [](RunConfig& c, std::string_view v) {
              c.sweep.seeds.clear();
              for (const std::string& s : split_list(v)) c.sweep.seeds.push_back(parse_count(s));
            }},
       }},
  };
  return table;
}

}  // namespace

std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kAlpha: return "alpha";
    case SweepParam::kBeta: return "beta";
    case SweepParam::kEpsV: return "eps_v";
    case SweepParam::kAug: return "aug";
  }
  return "?";
}

SweepParam parse_sweep_param(std::string_view name) {
  for (SweepParam p : {SweepParam::kAlpha, SweepParam::kBeta, SweepParam::kEpsV, SweepParam::kAug}) {
    if (to_string(p) == name) return p;
  }
  throw Error(ErrorCode::kConfig, "sweep.param", fmt::format("'{}' is not one of alpha, beta, eps_v, aug", name));
}

void SweepSpec::validate() const {
  if (values.empty()) throw Error(ErrorCode::kConfig, "sweep.values", "empty value list");
  if (seeds.empty()) throw Error(ErrorCode::kConfig, "sweep.seeds", "empty seed list");
  for (const std::string& v : values) {
    try {
      with_sweep_value(AttackConfig{}, param, v);
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, "sweep.values", fmt::format("{}={}: {}", to_string(param), v, e.message()));
    }
  }
}

double parse_number(std::string_view text) {
  text = trim(text);
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return parse_double(text);
  const double num = parse_double(trim(text.substr(0, slash)));
  const double den = parse_double(trim(text.substr(slash + 1)));
  if (den == 0.0) throw Error(ErrorCode::kConfig, "value", fmt::format("'{}' divides by zero", text));
  return num / den;
}

std::uint64_t parse_count(std::string_view text) {
  text = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::kConfig, "value", fmt::format("'{}' is not a non-negative integer", text));
  }
  return v;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

RunConfig parse_config(std::string_view text, std::string_view source) {
  RunConfig config;
  std::vector<std::string> problems;
  std::set<std::string> seen;
  const auto& table = schema();
  const std::map<std::string, Setter>* section = nullptr;
  std::string section_name;
  bool section_known = true;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    ++line_no;
    const auto nl = text.find('\n', start);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    const auto comment = line.find_first_of("#;");
    line = trim(line.substr(0, comment));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(fmt::format("line {}: malformed section header", line_no));
        continue;
      }
      section_name = std::string(trim(line.substr(1, line.size() - 2)));
      const auto it = table.find(section_name);
      section_known = it != table.end();
      section = section_known ? &it->second : nullptr;
      if (!section_known) problems.push_back(fmt::format("[{}]: unknown section", section_name));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      problems.push_back(fmt::format("line {}: expected key = value", line_no));
      continue;
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!section_known) continue;
    if (section == nullptr) {
      problems.push_back(fmt::format("line {}: key '{}' outside any section", line_no, key));
      continue;
    }
    const std::string full = fmt::format("{}.{}", section_name, key);
    const auto setter = section->find(key);
    if (setter == section->end()) {
      problems.push_back(fmt::format("{}: unknown key", full));
      continue;
    }
    if (!seen.insert(full).second) {
      problems.push_back(fmt::format("{}: duplicate key", full));
      continue;
    }
    try {
      setter->second(config, value);
    } catch (const Error& e) {
      problems.push_back(fmt::format("{}: {}", full, e.message()));
    }
  }

  auto check = [&](std::string_view name, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.push_back(fmt::format("[{}]: {}", name, e.message()));
    }
  };
  check("data", [&] {
    if (config.data.n_train < 1) throw Error(ErrorCode::kConfig, "data", "n_train must be >= 1");
    if (config.data.n_test < 2 || config.data.n_test > kTestPoolSize) {
      throw Error(ErrorCode::kConfig, "data", fmt::format("n_test must be in [2, {}]", kTestPoolSize));
    }
  });
  check("train", [&] { config.train.validate(); });
  check("attack", [&] { config.attack.validate(); });
  check("sweep", [&] { config.sweep.validate(); });

  if (!problems.empty()) {
    std::string joined;
    for (const std::string& p : problems) joined += (joined.empty() ? "" : "; ") + p;
    throw Error(ErrorCode::kConfig, std::string(source), joined);
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path), path.string()); }

AttackConfig with_sweep_value(AttackConfig base, SweepParam param, std::string_view value) {
  switch (param) {
    case SweepParam::kAlpha: base.alpha = parse_number(value); break;
    case SweepParam::kBeta: base.beta = parse_number(value); break;
    case SweepParam::kEpsV: base.eps_v = parse_number(value); break;
    case SweepParam::kAug: {
      const AugSpec defaults = AttackConfig{}.aug;
      base.aug = AugSpec::of(parse_aug_kind(trim(value)));
      base.aug.brightness_lo = defaults.brightness_lo;
      base.aug.brightness_hi = defaults.brightness_hi;
      break;
    }
  }
  base.validate();
  return base;
}

}  // namespace douap
