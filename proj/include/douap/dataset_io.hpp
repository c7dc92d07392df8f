#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "douap/synthdata.hpp"

namespace douap {

/// Dataset container: "DOUP", u16 version 1, u32 n_samples, u16 H/W/C, u16
/// seq_len, then per sample f32 pixels and u16 tokens (train first, then
/// test), then u32 length + JSON index {seed, n_train, n_test, keys}.
inline constexpr std::uint16_t kDatasetVersion = 1;

std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(std::string_view bytes);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace douap
