#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsa/augment.hpp"
#include "hsa/dataio.hpp"
#include "hsa/encoder.hpp"
#include "hsa/loss.hpp"

namespace hsa {

enum class MixKind { cutmix, mixup };

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::string cifar_dir;             // empty: $HSA_DATA_DIR
  std::uint64_t seed = 7;
  int val_samples_per_class = 100;
  data::SyntheticSpec synthetic;
  bool operator==(const DataConfig&) const = default;
};

struct ContrastConfig {
  double tau = 0.2;
  double momentum = 0.999;
  std::size_t queue_capacity = 4096;
  bool queue_prefill = false;
  bool queue_strict = false;
  bool operator==(const ContrastConfig&) const = default;
};

struct MinerConfig {
  std::size_t k = 10;
  std::size_t refresh_period = 5;
  bool operator==(const MinerConfig&) const = default;
};

struct MixConfig {
  MixKind kind = MixKind::cutmix;
  double alpha = 1.0;
  bool operator==(const MixConfig&) const = default;
};

struct VariantFlags {
  bool baseline_moco = false;
  bool add_qp = true;
  bool add_mix = true;
  bool stages_on = true;
  bool operator==(const VariantFlags&) const = default;
};

struct OptimConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 60;
  double base_lr = 0.06;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool operator==(const OptimConfig&) const = default;
};

struct EvalConfig {
  std::vector<std::size_t> knn_neighbors{20, 200};
  double knn_tau = 0.07;
  /// Backbone stage whose pooled features the probe reads; 0 is the last stage.
  int probe_stage = 0;
  std::size_t probe_epochs = 100;
  double probe_lr = 0.5;
  std::size_t probe_batch = 256;
  double label_fraction = 0.1;
  std::size_t finetune_epochs = 20;
  double backbone_lr = 1e-4;
  double head_lr = 10.0;
  double entropy_threshold = 1.0;
  /// "e" (natural log) or "2".
  std::string entropy_base = "e";
  std::size_t retrain_epochs = 30;
  std::size_t retrain_decay_every = 10;
  bool operator==(const EvalConfig&) const = default;
};

struct TrainConfig {
  DataConfig data;
  EncoderConfig encoder;
  aug::ViewParams augment;
  ContrastConfig contrast;
  MinerConfig miner;
  LossWeights weights;
  MixConfig mix;
  VariantFlags variant;
  OptimConfig optim;
  EvalConfig eval;
  std::uint64_t seed = 1;
  /// Epochs between checkpoints; 0 disables periodic checkpoints.
  std::size_t checkpoint_every = 0;

  /// Variant flags after composition: baseline switches every addition off.
  VariantFlags effective_variant() const;
  LossTerms loss_terms() const;
  bool mines_positives() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Every invalid field, reported together.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Throws ConfigError listing all problems.
void validate(const TrainConfig& config);

std::string to_json_string(const TrainConfig& config, int indent = 2);
/// Unknown keys and type mismatches are errors; missing keys keep defaults.
TrainConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {});
TrainConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// FNV-1a of the canonical serialization.
std::uint64_t config_hash(const TrainConfig& config);

/// Small configuration used by the acceptance experiments.
TrainConfig acceptance_config();

}  // namespace hsa
