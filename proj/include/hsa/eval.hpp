#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsa/dataio.hpp"
#include "hsa/encoder.hpp"
#include "hsa/metrics.hpp"

namespace hsa::eval {

/// Eval-mode pooled features of every sample, in dataset order. stage 0 is the
/// final pooled feature; stage l (1-based) pools the stage-l feature map.
template <class T>
Tensor<double> extract_features(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds,
                                int stage = 0, std::size_t chunk = 256);

/// Rows scaled to unit length; all-zero rows stay zero.
Tensor<double> normalize_rows(Tensor<double> x);

// -- weighted kNN ------------------------------------------------------------

inline constexpr double kKnnTemperature = 0.07;

struct FeatureBank {
  Tensor<double> features;  // [N, D] unit rows
  std::vector<int> labels;
  int num_classes = 0;
  std::string mode = "eval-pooled";

  std::size_t size() const { return labels.size(); }
};

/// Normalizes `features` and checks labels against num_classes.
FeatureBank make_feature_bank(Tensor<double> features, std::vector<int> labels, int num_classes);

/// Vote of the top-n cosine neighbors weighted by exp(sim / tau); ties go to
/// the smallest label. `query` need not be normalized.
int knn_classify(const FeatureBank& bank, std::span<const double> query, std::size_t n, double tau = kKnnTemperature);

/// Predictions for every row of `queries` (OpenMP over rows).
std::vector<int> knn_predict(const FeatureBank& bank, const Tensor<double>& queries, std::size_t n,
                             double tau = kKnnTemperature);

/// Serial reference of knn_predict.
std::vector<int> knn_predict_serial(const FeatureBank& bank, const Tensor<double>& queries, std::size_t n,
                                    double tau = kKnnTemperature);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// kNN accuracy of `val` against a bank built from `train`, one entry per n.
template <class T>
std::vector<double> knn_accuracy(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& train,
                                 const data::Dataset& val, std::span<const std::size_t> neighbors,
                                 double tau = kKnnTemperature);

// -- linear probe ------------------------------------------------------------

struct ProbeConfig {
  int stage = 0;
  std::size_t epochs = 100;
  double lr = 0.5;
  std::size_t batch_size = 256;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  double train_accuracy = 0;
  double val_accuracy = 0;
  std::vector<int> val_predictions;
  Tensor<double> weight;  // [C, D] over standardized features
  Tensor<double> bias;    // [C]
};

/// Softmax regression on fixed features. Features are standardized with the
/// training-set per-dimension mean and std. Throws if any gradient reaches
/// the feature input.
ProbeResult train_probe(const Tensor<double>& train_x, std::span<const int> train_y, const Tensor<double>& val_x,
                        std::span<const int> val_y, int num_classes, const ProbeConfig& config);

/// Probe on frozen encoder features (center view). Throws if the encoder
/// parameters change.
template <class T>
ProbeResult linear_probe(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& train,
                         const data::Dataset& val, const ProbeConfig& probe);

// -- semi-supervised fine-tuning --------------------------------------------

struct FinetuneConfig {
  std::size_t epochs = 20;
  double backbone_lr = 1e-4;
  double head_lr = 10.0;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// 0: cosine decay over the run; otherwise x0.1 every `decay_every` epochs.
  std::size_t decay_every = 0;
  std::uint64_t seed = 1;
};

/// Encoder plus classifier "cls.w" [C, D], "cls.b" [C] over the unit-normalized
/// pooled feature.
template <class T>
struct Classifier {
  ParamStore<T> params;
  EncoderConfig config;
  int num_classes = 0;
};

/// Adds a zero-initialized classifier to a copy of the pretrained parameters.
template <class T>
Classifier<T> make_classifier(const ParamStore<T>& pretrained, const EncoderConfig& config, int num_classes);

/// Class distributions [N, C], eval mode.
template <class T>
Tensor<double> predict_proba(Classifier<T>& model, const data::Dataset& ds, std::size_t chunk = 256);

template <class T>
std::vector<int> predict(Classifier<T>& model, const data::Dataset& ds);

/// Fine-tunes every layer with crop+flip views. The head and the backbone use
/// separate learning rates.
template <class T>
void finetune(Classifier<T>& model, const data::Dataset& labeled, const FinetuneConfig& config);

// -- pseudo labels ------------------------------------------------------------

enum class EntropyBase { e, two };

/// -sum p log p; throws unless the entries sum to 1 within 1e-4.
double entropy(std::span<const double> p, EntropyBase base = EntropyBase::e);

struct PseudoLabelSet {
  std::vector<std::size_t> ids;  // rows of the scored set
  std::vector<int> labels;
  std::vector<double> entropies;
  double threshold = 1.0;

  std::size_t size() const { return ids.size(); }
};

/// Keeps rows of `probs` with entropy <= threshold, labeled by argmax.
PseudoLabelSet mine_pseudo_labels(const Tensor<double>& probs, double threshold, EntropyBase base = EntropyBase::e);

/// `labeled` plus the retained samples of `unlabeled` under their pseudo labels.
data::Dataset merge_pseudo_labels(const data::Dataset& labeled, const data::Dataset& unlabeled,
                                  const PseudoLabelSet& pseudo);

// -- reporting ------------------------------------------------------------------

struct PerClassReport {
  std::vector<std::optional<double>> accuracy;  // empty when the class is absent
  std::vector<std::size_t> support;
  double macro = 0;
};

PerClassReport report_per_class(std::span<const int> predictions, std::span<const int> labels, int num_classes);

void log_per_class(MetricsLog& log, const std::string& prefix, const PerClassReport& report, std::int64_t epoch);

/// Text export of the bank features: header "dim=<D> count=<N>", then one
/// "id,label,f1,...,fD" record per sample (shortest round-trip decimals).
template <class T>
void export_embeddings(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds,
                       const std::filesystem::path& path);

void write_embeddings(const Tensor<double>& features, const data::Dataset& ds, const std::filesystem::path& path);

}  // namespace hsa::eval
