#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "douap/attack.hpp"
#include "douap/toyvlp.hpp"

namespace douap {

struct DataConfig {
  std::uint64_t seed = 42;
  std::size_t n_train = 2048;
  std::size_t n_test = kTestPoolSize;
};

struct EvalConfig {
  std::uint64_t probe_seed = 0;
};

enum class SweepParam { kAlpha, kBeta, kEpsV, kAug };

std::string_view to_string(SweepParam p);
SweepParam parse_sweep_param(std::string_view name);

struct SweepSpec {
  SweepParam param = SweepParam::kAlpha;
  std::vector<std::string> values = {"0", "0.1", "1", "10"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  void validate() const;
};

struct RunConfig {
  DataConfig data;
  TrainConfig train;
  AttackConfig attack;
  EvalConfig eval;
  SweepSpec sweep;
};

/// Decimal number or a fraction such as "12/255".
double parse_number(std::string_view text);
std::uint64_t parse_count(std::string_view text);
std::vector<std::string> split_list(std::string_view text);

/// INI-style text: [section] headers, key = value lines, '#' or ';' comments.
/// Every problem (unknown section or key, malformed value, violated invariant)
/// is collected and reported in a single Error.
RunConfig parse_config(std::string_view text, std::string_view source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Applies one sweep value to a base attack config.
AttackConfig with_sweep_value(AttackConfig base, SweepParam param, std::string_view value);

}  // namespace douap
