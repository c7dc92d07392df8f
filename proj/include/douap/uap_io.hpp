#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "douap/attack.hpp"
#include "douap/io.hpp"

namespace douap {

/// What an attack run leaves on disk: the perturbation plus enough of the run
/// to reproduce and compare it.
struct UapArtifact {
  std::string method = "do-uap";
  AttackConfig config;
  Uap uap;
  double wallclock_seconds = 0.0;
  double seconds_per_iteration = 0.0;
  std::size_t iterations = 0;
  std::size_t threads = 1;
};

/// Timings are zeroed when the config asks for reproducible artifacts.
UapArtifact to_artifact(const AttackResult& result);

Json aug_to_json(const AugSpec& aug);
AugSpec aug_from_json(const Json& j);

std::string serialize_uap(const UapArtifact& artifact);
UapArtifact parse_uap(std::string_view text);
void save_uap(const UapArtifact& artifact, const std::filesystem::path& path);
UapArtifact load_uap(const std::filesystem::path& path);

}  // namespace douap
