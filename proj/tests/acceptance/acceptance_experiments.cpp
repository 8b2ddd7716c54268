// Training experiments at desk scale: variant ordering, neighbor-count sweep
// and stage-head probes. Finished runs are cached under HSA_ACCEPTANCE_CACHE
// (default: ./acceptance_cache) and reused across criteria and invocations.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hsa/config.hpp"
#include "hsa/suite.hpp"

using namespace hsa;

namespace {

constexpr std::size_t kNeighbors = 20;
constexpr double kMinQpGain = 0.01;
constexpr double kSuiteBudgetSeconds = 2 * 3600;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};
const std::vector<std::size_t> kSweep{0, 1, 5, 10};
constexpr int kProbeStage = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

RunOptions options(std::vector<int> probes = {}) {
  RunOptions o;
  const char* dir = std::getenv("HSA_ACCEPTANCE_CACHE");
  o.cache_dir = std::filesystem::path(dir && *dir ? dir : "acceptance_cache");
  o.probe_stages = std::move(probes);
  return o;
}

TrainConfig stages_off(TrainConfig c) {
  c.variant.stages_on = false;
  return c;
}

Outcome variant_ordering() {
  const auto report = run_variant_suite(standard_variants(stages_off(acceptance_config())), kSeeds, kNeighbors,
                                        options());
  std::fputs(format_report(report).c_str(), stdout);
  std::fflush(stdout);
  const double base = report.variants[0].median, qp = report.variants[1].median, mix = report.variants[2].median;
  double seconds = 0;
  for (const auto& v : report.variants)
    for (const auto& r : v.runs) seconds += r.train_seconds;
  Outcome o;
  o.pass = base <= qp && qp <= mix && qp >= base + kMinQpGain && seconds <= kSuiteBudgetSeconds;
  o.detail = fmt("baseline %.4f, +q_p %.4f, +q_p+mix %.4f", base, qp, mix) +
             fmt(" (gain %.4f, need %.2f); training %.0f s", qp - base, kMinQpGain, seconds);
  return o;
}

Outcome neighbor_sweep() {
  std::map<std::size_t, double> med;
  for (std::size_t k : kSweep) {
    TrainConfig c = standard_variants(stages_off(acceptance_config()))[2].config;
    c.miner.k = k;
    const auto report = run_variant_suite({{"k=" + std::to_string(k), c}}, kSeeds, kNeighbors, options());
    std::fputs(format_report(report).c_str(), stdout);
    std::fflush(stdout);
    med[k] = report.variants[0].median;
  }
  double best = 0;
  std::size_t best_k = 0;
  for (std::size_t k : kSweep)
    if (k != 0 && med[k] > best) best = med[k], best_k = k;
  Outcome o;
  o.pass = med[0] < best;
  o.detail = fmt("k=0 %.4f, best %.4f at k=%.0f", med[0], best, double(best_k));
  return o;
}

Outcome stage_probes() {
  const TrainConfig mix = standard_variants(acceptance_config())[2].config;
  std::vector<double> on, off;
  for (auto seed : kSeeds) {
    TrainConfig c = mix;
    c.seed = seed;
    c.eval.knn_neighbors = {kNeighbors};
    on.push_back(run_and_evaluate(c, options({2, kProbeStage})).probe.at(kProbeStage));
    off.push_back(run_and_evaluate(stages_off(c), options({2, kProbeStage})).probe.at(kProbeStage));
    std::printf("seed %llu stage-%d probe: stages on %.4f, off %.4f\n", static_cast<unsigned long long>(seed),
                kProbeStage, on.back(), off.back());
    std::fflush(stdout);
  }
  Outcome o;
  o.pass = median(on) >= median(off);
  o.detail = fmt("median stage-3 probe: stages on %.4f, off %.4f", median(on), median(off));
  return o;
}

}  // namespace

int main() {
  const std::pair<int, Outcome (*)()> criteria[] = {{9, variant_ordering}, {10, neighbor_sweep}, {11, stage_probes}};
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
