#include "hsa/suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hsa/eval.hpp"
#include "hsa/trainer.hpp"
#include "json.hpp"

namespace hsa {

namespace {

using nlohmann::json;

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json to_json(const RunRecord& r) {
  json j{{"config_hash", hex(r.config_hash)}, {"seed", r.seed}, {"train_seconds", r.train_seconds}, {"final_loss", r.final_loss}};
  j["knn"] = json::object();
  for (const auto& [n, a] : r.knn) j["knn"][std::to_string(n)] = a;
  j["probe"] = json::object();
  for (const auto& [s, a] : r.probe) j["probe"][std::to_string(s)] = a;
  return j;
}

RunRecord from_json(const json& j, std::uint64_t hash) {
  RunRecord r;
  r.config_hash = hash;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.train_seconds = j.at("train_seconds").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
  for (const auto& [k, v] : j.at("knn").items()) r.knn[std::stoul(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("probe").items()) r.probe[std::stoi(k)] = v.get<double>();
  return r;
}

void write_record(const std::filesystem::path& path, const RunRecord& r) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json(r).dump(2) << '\n';
    if (!out.flush()) throw std::runtime_error("cannot write run record " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void add_probes(Trainer<float>& t, const data::Dataset& train, const data::Dataset& val, const TrainConfig& c,
                const std::vector<int>& stages, RunRecord& r) {
  for (int s : stages) {
    if (r.probe.count(s)) continue;
    eval::ProbeConfig p{s, c.eval.probe_epochs, c.eval.probe_lr, c.eval.probe_batch, 0.9, 0.0, c.seed};
    r.probe[s] = eval::linear_probe(t.pair().query, c.encoder, train, val, p).val_accuracy;
  }
}

}  // namespace

RunRecord run_and_evaluate(const TrainConfig& config, const RunOptions& options) {
  const std::uint64_t hash = config_hash(config);
  std::optional<std::filesystem::path> record_path, ckpt_path;
  if (options.cache_dir) {
    std::filesystem::create_directories(*options.cache_dir);
    record_path = *options.cache_dir / (hex(hash) + ".json");
    ckpt_path = *options.cache_dir / (hex(hash) + ".ckpt");
  }
  const auto train = load_train_set(config);
  const auto val = load_val_set(config);

  if (record_path && std::filesystem::exists(*record_path)) {
    std::ifstream in(*record_path);
    RunRecord r = from_json(json::parse(in), hash);
    const bool complete = std::all_of(options.probe_stages.begin(), options.probe_stages.end(),
                                      [&](int s) { return r.probe.count(s) != 0; }) &&
                          std::all_of(config.eval.knn_neighbors.begin(), config.eval.knn_neighbors.end(),
                                      [&](std::size_t n) { return r.knn.count(n) != 0; });
    if (complete) return r;
    if (std::filesystem::exists(*ckpt_path)) {
      Trainer<float> t(config, train);
      t.load_checkpoint(*ckpt_path);
      const auto acc = eval::knn_accuracy(t.pair().query, config.encoder, *train, *val, config.eval.knn_neighbors,
                                          config.eval.knn_tau);
      for (std::size_t i = 0; i < acc.size(); ++i) r.knn[config.eval.knn_neighbors[i]] = acc[i];
      add_probes(t, *train, *val, config, options.probe_stages, r);
      write_record(*record_path, r);
      return r;
    }
  }

  RunRecord r;
  r.config_hash = hash;
  r.seed = config.seed;
  Trainer<float> t(config, train);
  const auto start = std::chrono::steady_clock::now();
  while (std::size_t(t.epoch()) < config.optim.epochs) r.final_loss = t.train_epoch(options.log).mean_loss;
  r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (ckpt_path) t.save_checkpoint(*ckpt_path);
  const auto acc = eval::knn_accuracy(t.pair().query, config.encoder, *train, *val, config.eval.knn_neighbors,
                                      config.eval.knn_tau);
  for (std::size_t i = 0; i < acc.size(); ++i) r.knn[config.eval.knn_neighbors[i]] = acc[i];
  add_probes(t, *train, *val, config, options.probe_stages, r);
  if (options.log) {
    std::map<std::string, double> m{{"train_seconds", r.train_seconds}};
    for (const auto& [n, a] : r.knn) m["knn" + std::to_string(n)] = a;
    for (const auto& [s, a] : r.probe) m["probe.stage" + std::to_string(s)] = a;
    options.log->write("eval", t.epoch(), std::int64_t(t.step()), m);
    options.log->flush();
  }
  if (record_path) write_record(*record_path, r);
  return r;
}

std::vector<VariantSpec> standard_variants(const TrainConfig& base) {
  std::vector<VariantSpec> out;
  auto add = [&](std::string name, bool baseline, bool qp, bool mix) {
    TrainConfig c = base;
    c.variant.baseline_moco = baseline;
    c.variant.add_qp = qp;
    c.variant.add_mix = mix;
    out.push_back({std::move(name), c});
  };
  add("baseline_moco", true, false, false);
  add("+q_p", false, true, false);
  add("+q_p+mix", false, true, true);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SuiteReport run_variant_suite(const std::vector<VariantSpec>& variants, const std::vector<std::uint64_t>& seeds,
                              std::size_t neighbors, const RunOptions& options) {
  SuiteReport report;
  report.neighbors = neighbors;
  for (const auto& v : variants) {
    VariantOutcome o{v.name, {}, 0.0};
    std::vector<double> acc;
    for (auto seed : seeds) {
      TrainConfig c = v.config;
      c.seed = seed;
      if (std::find(c.eval.knn_neighbors.begin(), c.eval.knn_neighbors.end(), neighbors) == c.eval.knn_neighbors.end())
        c.eval.knn_neighbors.push_back(neighbors);
      o.runs.push_back(run_and_evaluate(c, options));
      acc.push_back(o.runs.back().knn.at(neighbors));
    }
    o.median = median(acc);
    report.variants.push_back(std::move(o));
  }
  report.ordered = true;
  for (std::size_t i = 1; i < report.variants.size(); ++i)
    report.ordered = report.ordered && report.variants[i - 1].median <= report.variants[i].median;
  return report;
}

std::string format_report(const SuiteReport& report) {
  std::ostringstream out;
  char buf[64];
  for (const auto& v : report.variants) {
    std::snprintf(buf, sizeof buf, "%-16s median %zu-NN %.4f  [", v.name.c_str(), report.neighbors, v.median);
    out << buf;
    for (std::size_t i = 0; i < v.runs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.4f", i ? " " : "", v.runs[i].knn.at(report.neighbors));
      out << buf;
    }
    out << "]\n";
  }
  out << "ordered: " << (report.ordered ? "yes" : "no") << '\n';
  return out.str();
}

}  // namespace hsa
