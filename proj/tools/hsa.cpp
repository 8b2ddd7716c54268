#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hsa/eval.hpp"
#include "hsa/gradcheck_suite.hpp"
#include "hsa/suite.hpp"
#include "hsa/trainer.hpp"

namespace fs = std::filesystem;
using namespace hsa;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string metrics;
  std::string run_id = "hsa";
};

TrainConfig load_config(const Common& c) {
  return c.config_path.empty() ? parse_config_text("", c.overrides) : parse_config(c.config_path, c.overrides);
}

void add_config_options(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.overrides, "Override a config key, e.g. --set contrast.tau=0.1");
}

std::optional<MetricsLog> open_log(const Common& c) {
  if (c.metrics.empty()) return std::nullopt;
  return MetricsLog(c.metrics, c.run_id);
}

/// Trainer restored from a checkpoint written under the same configuration.
Trainer<float> restore(const TrainConfig& config, const std::shared_ptr<const data::Dataset>& train, const Common& c) {
  Trainer<float> t(config, train);
  t.load_checkpoint(c.checkpoint);
  return t;
}

eval::EntropyBase entropy_base(const TrainConfig& c) {
  return c.eval.entropy_base == "2" ? eval::EntropyBase::two : eval::EntropyBase::e;
}

int cmd_pretrain(const Common& c, const std::string& resume) {
  const auto config = load_config(c);
  const auto train = load_train_set(config);
  Trainer<float> t(config, train);
  if (!resume.empty()) t.load_checkpoint(resume);
  auto log = open_log(c);
  std::optional<fs::path> out;
  if (!c.checkpoint.empty()) out = c.checkpoint;
  while (std::size_t(t.epoch()) < config.optim.epochs) {
    const auto r = t.train_epoch(log ? &*log : nullptr);
    std::printf("epoch %lld loss %.6f%s\n", static_cast<long long>(r.epoch), r.mean_loss, r.refreshed ? " (bank refreshed)" : "");
    if (out && config.checkpoint_every && std::size_t(t.epoch()) % config.checkpoint_every == 0) t.save_checkpoint(*out);
  }
  if (out) t.save_checkpoint(*out);
  return 0;
}

int cmd_eval_knn(const Common& c, std::vector<std::size_t> neighbors) {
  const auto config = load_config(c);
  const auto train = load_train_set(config);
  const auto val = load_val_set(config);
  auto t = restore(config, train, c);
  if (neighbors.empty()) neighbors = config.eval.knn_neighbors;
  const auto bank = eval::make_feature_bank(eval::extract_features(t.pair().query, config.encoder, *train), train->labels,
                                            train->num_classes);
  const auto queries = eval::extract_features(t.pair().query, config.encoder, *val);
  auto log = open_log(c);
  for (auto n : neighbors) {
    const auto pred = eval::knn_predict(bank, queries, std::min(n, bank.size()), config.eval.knn_tau);
    const double acc = eval::accuracy(pred, val->labels);
    std::printf("knn%zu %.4f\n", n, acc);
    if (log) {
      log->write("eval_knn", t.epoch(), -1, {{"knn" + std::to_string(n), acc}});
      eval::log_per_class(*log, "knn" + std::to_string(n), eval::report_per_class(pred, val->labels, val->num_classes), t.epoch());
    }
  }
  return 0;
}

int cmd_eval_linear(const Common& c, std::optional<int> stage) {
  const auto config = load_config(c);
  const auto train = load_train_set(config);
  const auto val = load_val_set(config);
  auto t = restore(config, train, c);
  eval::ProbeConfig p{stage.value_or(config.eval.probe_stage), config.eval.probe_epochs, config.eval.probe_lr,
                      config.eval.probe_batch, 0.9, 0.0, config.seed};
  const auto r = eval::linear_probe(t.pair().query, config.encoder, *train, *val, p);
  std::printf("linear stage %d train %.4f val %.4f\n", p.stage, r.train_accuracy, r.val_accuracy);
  if (auto log = open_log(c)) {
    log->write("eval_linear", t.epoch(), -1, {{"probe.stage" + std::to_string(p.stage), r.val_accuracy}});
    eval::log_per_class(*log, "probe", eval::report_per_class(r.val_predictions, val->labels, val->num_classes), t.epoch());
  }
  return 0;
}

eval::FinetuneConfig finetune_config(const TrainConfig& c, std::size_t epochs, std::size_t decay_every) {
  eval::FinetuneConfig f;
  f.epochs = epochs;
  f.backbone_lr = c.eval.backbone_lr;
  f.head_lr = c.eval.head_lr;
  f.decay_every = decay_every;
  f.seed = c.seed;
  return f;
}

int cmd_finetune(const Common& c, std::optional<double> fraction) {
  const auto config = load_config(c);
  const auto train = load_train_set(config);
  const auto val = load_val_set(config);
  auto t = restore(config, train, c);
  const double frac = fraction.value_or(config.eval.label_fraction);
  const auto [labeled, unlabeled] = data::split_labels(*train, frac, config.seed);
  auto model = eval::make_classifier(t.pair().query, config.encoder, train->num_classes);
  eval::finetune(model, labeled, finetune_config(config, config.eval.finetune_epochs, 0));
  const auto pred = eval::predict(model, *val);
  const auto report = eval::report_per_class(pred, val->labels, val->num_classes);
  std::printf("finetune fraction %.3f labeled %zu val %.4f macro %.4f\n", frac, labeled.size(), eval::accuracy(pred, val->labels),
              report.macro);
  if (auto log = open_log(c)) eval::log_per_class(*log, "finetune", report, t.epoch());
  return 0;
}

int cmd_mine(const Common& c) {
  const auto config = load_config(c);
  const auto train = load_train_set(config);
  const auto val = load_val_set(config);
  auto t = restore(config, train, c);
  const auto [labeled, unlabeled] = data::split_labels(*train, config.eval.label_fraction, config.seed);

  auto model = eval::make_classifier(t.pair().query, config.encoder, train->num_classes);
  eval::finetune(model, labeled, finetune_config(config, config.eval.finetune_epochs, 0));
  const double before = eval::accuracy(eval::predict(model, *val), val->labels);

  const auto pseudo = eval::mine_pseudo_labels(eval::predict_proba(model, unlabeled), config.eval.entropy_threshold,
                                               entropy_base(config));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i) correct += pseudo.labels[i] == unlabeled.labels[pseudo.ids[i]];
  const auto merged = eval::merge_pseudo_labels(labeled, unlabeled, pseudo);

  auto retrained = eval::make_classifier(t.pair().query, config.encoder, train->num_classes);
  eval::finetune(retrained, merged,
                 finetune_config(config, config.eval.retrain_epochs, config.eval.retrain_decay_every));
  const auto pred = eval::predict(retrained, *val);
  const double after = eval::accuracy(pred, val->labels);
  std::printf("pseudo labels %zu of %zu retained (threshold %.3f), %.4f correct\n", pseudo.size(), unlabeled.size(),
              pseudo.threshold, pseudo.size() ? double(correct) / double(pseudo.size()) : 0.0);
  std::printf("val accuracy finetuned %.4f retrained %.4f\n", before, after);
  if (auto log = open_log(c)) {
    log->write("mine", t.epoch(), -1,
               {{"pseudo.retained", double(pseudo.size())}, {"val.finetuned", before}, {"val.retrained", after}});
    eval::log_per_class(*log, "retrained", eval::report_per_class(pred, val->labels, val->num_classes), t.epoch());
  }
  return 0;
}

int cmd_export(const Common& c, const std::string& out, bool val_split) {
  const auto config = load_config(c);
  const auto train = load_train_set(config);
  auto t = restore(config, train, c);
  const auto ds = val_split ? load_val_set(config) : train;
  eval::export_embeddings(t.pair().query, config.encoder, *ds, out);
  std::printf("wrote %zu embeddings to %s\n", ds->size(), out.c_str());
  return 0;
}

int cmd_variant_suite(const Common& c, const std::vector<std::uint64_t>& seeds, const std::string& cache,
                      std::size_t neighbors, const std::vector<std::size_t>& k_sweep, bool mixup) {
  const auto base = load_config(c);
  RunOptions opts;
  if (!cache.empty()) opts.cache_dir = fs::path(cache);
  auto log = open_log(c);
  opts.log = log ? &*log : nullptr;
  std::vector<VariantSpec> variants;
  if (!k_sweep.empty()) {
    for (auto k : k_sweep) {
      auto cfg = base;
      cfg.variant = {false, true, true, base.variant.stages_on};
      cfg.miner.k = k;
      variants.push_back({"k=" + std::to_string(k), cfg});
    }
  } else {
    variants = standard_variants(base);
    if (mixup) {
      auto cfg = variants.back().config;
      cfg.mix.kind = MixKind::mixup;
      variants.push_back({"+q_p+mixup", cfg});
    }
  }
  const auto report = run_variant_suite(variants, seeds, neighbors, opts);
  std::cout << format_report(report);
  return 0;
}

int cmd_gradcheck(double tolerance) {
  const auto suite = run_gradcheck_suite(gradcheck_toy_config());
  for (const auto& k : suite.cases)
    std::printf("%-48s checked %5zu  max rel. error %.3e\n", k.name.c_str(), k.checked, k.worst);
  for (auto op : suite.missing()) std::printf("op not covered: %s\n", std::string(op_name(op)).c_str());
  std::printf("max rel. error %.3e (tolerance %.1e) in %.1fs\n", suite.worst, tolerance, suite.seconds);
  return suite.worst < tolerance && suite.missing().empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive pretraining with mined positives, mixed queries and stage heads"};
  app.require_subcommand(1);
  Common common;

  auto* pretrain = app.add_subcommand("pretrain", "Train the encoder pair");
  add_config_options(pretrain, common);
  std::string resume;
  pretrain->add_option("-o,--checkpoint", common.checkpoint, "Checkpoint to write");
  pretrain->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  pretrain->add_option("-m,--metrics", common.metrics, "JSONL metrics log (appended)");
  pretrain->add_option("--run-id", common.run_id, "Run id written to the metrics log");

  auto with_checkpoint = [&](CLI::App* sub) {
    add_config_options(sub, common);
    sub->add_option("-k,--checkpoint", common.checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("-m,--metrics", common.metrics, "JSONL metrics log (appended)");
    sub->add_option("--run-id", common.run_id, "Run id written to the metrics log");
  };
  auto* knn = app.add_subcommand("eval-knn", "Weighted kNN accuracy on the validation split");
  with_checkpoint(knn);
  std::vector<std::size_t> neighbors;
  knn->add_option("-n,--neighbors", neighbors, "Neighbor counts (default: eval.knn_neighbors)");

  auto* linear = app.add_subcommand("eval-linear", "Linear probe on frozen pooled features");
  with_checkpoint(linear);
  std::optional<int> stage;
  linear->add_option("--stage", stage, "Backbone stage to probe (0: final)");

  auto* ft = app.add_subcommand("finetune", "Semi-supervised fine-tuning on a labeled fraction");
  with_checkpoint(ft);
  std::optional<double> fraction;
  ft->add_option("--fraction", fraction, "Labeled fraction (default: eval.label_fraction)");

  auto* mine = app.add_subcommand("mine", "Fine-tune, mine entropy-filtered pseudo labels, retrain");
  with_checkpoint(mine);

  auto* exp = app.add_subcommand("export-embeddings", "Write pooled unit embeddings as text");
  with_checkpoint(exp);
  std::string out;
  bool val_split = false;
  exp->add_option("-o,--out", out, "Output file")->required();
  exp->add_flag("--val", val_split, "Export the validation split instead of the training split");

  auto* suite = app.add_subcommand("variant-suite", "Train and compare variants over several seeds");
  add_config_options(suite, common);
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string cache;
  std::size_t suite_neighbors = 20;
  std::vector<std::size_t> k_sweep;
  bool mixup = false;
  suite->add_option("--seeds", seeds, "Seeds")->capture_default_str();
  suite->add_option("--cache", cache, "Directory for cached run records and checkpoints");
  suite->add_option("--neighbors", suite_neighbors, "kNN neighbor count compared")->capture_default_str();
  suite->add_option("--k-sweep", k_sweep, "Compare miner k values with mixing on instead of the standard variants");
  suite->add_flag("--mixup", mixup, "Also run +q_p with MixUp instead of CutMix");
  suite->add_option("-m,--metrics", common.metrics, "JSONL metrics log (appended)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full loss");
  double tolerance = 1e-4;
  gc->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << '\n' << app.help();
    return 2;
  }

  try {
    if (*pretrain) return cmd_pretrain(common, resume);
    if (*knn) return cmd_eval_knn(common, neighbors);
    if (*linear) return cmd_eval_linear(common, stage);
    if (*ft) return cmd_finetune(common, fraction);
    if (*mine) return cmd_mine(common);
    if (*exp) return cmd_export(common, out, val_split);
    if (*suite) return cmd_variant_suite(common, seeds, cache, suite_neighbors, k_sweep, mixup);
    if (*gc) return cmd_gradcheck(tolerance);
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
