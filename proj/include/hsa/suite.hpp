#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hsa/config.hpp"
#include "hsa/metrics.hpp"

namespace hsa {

/// Evaluation numbers of one finished pretraining run.
struct RunRecord {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::map<std::size_t, double> knn;   // neighbors -> accuracy
  std::map<int, double> probe;         // backbone stage -> probe accuracy
  double train_seconds = 0;
  double final_loss = 0;
};

struct RunOptions {
  /// Stages to probe after training (empty: none).
  std::vector<int> probe_stages;
  /// Directory holding <hash>.json records and <hash>.ckpt checkpoints;
  /// finished runs found there are reused.
  std::optional<std::filesystem::path> cache_dir;
  MetricsLog* log = nullptr;
};

/// Pretrains `config` at float precision and evaluates it. With a cache,
/// missing probe stages are computed from the cached checkpoint.
RunRecord run_and_evaluate(const TrainConfig& config, const RunOptions& options = {});

struct VariantSpec {
  std::string name;
  TrainConfig config;
};

/// baseline, +q_p, +q_p+mix on top of `base` (stages as in `base`).
std::vector<VariantSpec> standard_variants(const TrainConfig& base);

struct VariantOutcome {
  std::string name;
  std::vector<RunRecord> runs;  // one per seed
  double median = 0;            // median kNN accuracy at the suite's neighbor count
};

struct SuiteReport {
  std::size_t neighbors = 20;
  std::vector<VariantOutcome> variants;
  /// Medians nondecreasing in variant order.
  bool ordered = false;
};

double median(std::vector<double> v);

/// Trains every variant for every seed and reports median kNN accuracy in
/// variant order.
SuiteReport run_variant_suite(const std::vector<VariantSpec>& variants, const std::vector<std::uint64_t>& seeds,
                              std::size_t neighbors = 20, const RunOptions& options = {});

std::string format_report(const SuiteReport& report);

}  // namespace hsa
