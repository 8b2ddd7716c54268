#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsa/config.hpp"
#include "hsa/contrast.hpp"
#include "hsa/metrics.hpp"
#include "hsa/miner.hpp"
#include "hsa/optim.hpp"

namespace hsa {

/// Independent random streams of a run, all derived from TrainConfig::seed.
struct Streams {
  std::uint64_t init, data, augment, mining, mix;
  static Streams from_seed(std::uint64_t seed);
};

struct StepResult {
  double total = 0;
  double main = 0;
  std::array<double, 3> main_terms{};  // anchor, positive, mixed (unweighted)
  std::map<int, double> stages;
  double lr = 0;
  std::size_t negatives = 0;
  /// Graph nodes of the key side that received an adjoint (always expected 0).
  std::size_t key_adjoints = 0;
  /// Strict queue mode before warmup: keys were enqueued, nothing was trained.
  bool warmup = false;
};

/// Node handles of the query-side training graph.
struct TrainingGraphNodes {
  EncoderNodes encoder;
  std::size_t views = 1;  // query views per anchor: x_a, then x_p, then the mix
  std::map<int, HeadLossNodes> heads;  // kFinalHead and each companion stage
  NodeId total;
};

/// Query encoder over [views * batch] images plus the loss of every head,
/// summed. Keys, negatives and lambda are constant inputs named
/// h<head>.k_a / .k_p / .neg / .lambda.
template <class T>
TrainingGraphNodes build_training_graph(Graph<T>& g, const TrainConfig& config, const EncoderConfig& encoder,
                                        std::size_t batch, std::size_t num_negatives);

/// Thrown when a step produces a non-finite loss.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Main-head tensors of one step, for reduction checks.
template <class T>
struct StepTrace {
  Tensor<T> q_a, k_a, k_p, negatives;
};

struct EpochResult {
  std::int64_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0;
  bool refreshed = false;
};

template <class T>
class Trainer {
 public:
  /// Fresh run: parameters from the init stream, empty (or prefilled) queues.
  Trainer(TrainConfig config, std::shared_ptr<const data::Dataset> train);

  StepResult train_step(std::span<const std::size_t> anchors, StepTrace<T>* trace = nullptr);
  EpochResult train_epoch(MetricsLog* log = nullptr);
  /// Runs the remaining epochs; checkpoints every `checkpoint_every` epochs
  /// when a path is given.
  void fit(MetricsLog* log = nullptr, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer, queues, bank and counters. Throws when
  /// the checkpoint was written under a different configuration.
  void load_checkpoint(const std::filesystem::path& path);

  const TrainConfig& config() const noexcept { return config_; }
  const MomentumPair<T>& pair() const noexcept { return pair_; }
  MomentumPair<T>& pair() noexcept { return pair_; }
  const PositiveMiner<T>& miner() const noexcept { return miner_; }
  const OptimState<T>& optimizer() const noexcept { return optim_; }
  const data::Dataset& dataset() const noexcept { return *train_; }
  std::int64_t epoch() const noexcept { return epoch_; }
  std::uint64_t step() const noexcept { return step_; }
  std::uint64_t total_steps() const noexcept;
  /// Epoch at which the bank was last refreshed, or -1.
  std::int64_t bank_epoch() const noexcept { return miner_.bank().epoch; }

 private:
  struct QueryGraph;
  QueryGraph& query_graph(std::size_t batch, std::size_t negatives);

  TrainConfig config_;
  EncoderConfig train_encoder_;  // companions dropped when stages are off
  std::shared_ptr<const data::Dataset> train_;
  Streams streams_;
  MomentumPair<T> pair_;
  OptimState<T> optim_;
  PositiveMiner<T> miner_;
  std::int64_t epoch_ = 0;
  std::uint64_t step_ = 0;
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<QueryGraph>> graphs_;
};

/// Builds the train and validation sets a config describes.
std::shared_ptr<const data::Dataset> load_train_set(const TrainConfig& config);
std::shared_ptr<const data::Dataset> load_val_set(const TrainConfig& config);

}  // namespace hsa
