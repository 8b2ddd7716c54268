#pragma once

#include <set>
#include <string>
#include <vector>

#include "hsa/config.hpp"
#include "hsa/graph.hpp"

namespace hsa {

struct GradCheckCase {
  std::string name;
  double worst = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

struct GradCheckSuite {
  std::vector<GradCheckCase> cases;
  std::set<OpKind> covered;
  double worst = 0;
  double seconds = 0;

  /// Ops that no case exercised.
  std::vector<OpKind> missing() const;
};

/// Central-difference checks of every graph op on small random inputs, then
/// of the full multi-head training loss of `config` (double precision, batch
/// 3, `negatives` queue rows).
GradCheckSuite run_gradcheck_suite(const TrainConfig& config, std::size_t negatives = 16, double epsilon = 1e-6);

/// Toy setting: 8x8 inputs, 2-stage encoder, companion at stage 1.
TrainConfig gradcheck_toy_config();

}  // namespace hsa
