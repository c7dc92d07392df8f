#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "douap/synthdata.hpp"
#include "douap/toyvlp.hpp"

namespace douap::testing {

/// Small trained victim shared by attack and eval tests.
struct World {
  Dataset data;
  DualEncoderParams params;
};

inline const World& small_world() {
  static const World world = [] {
    World w;
    w.data = generate_dataset(7, 512, 48);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.seed = 7;
    w.params = train(DualEncoderParams::init(7), w.data.train, cfg).params;
    return w;
  }();
  return world;
}

inline std::vector<Image> images_of(std::span<const PairSample> s) {
  std::vector<Image> out;
  for (const PairSample& p : s) out.push_back(p.image);
  return out;
}

inline std::vector<TokenSeq> tokens_of(std::span<const PairSample> s) {
  std::vector<TokenSeq> out;
  for (const PairSample& p : s) out.push_back(p.tokens);
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace douap::testing
