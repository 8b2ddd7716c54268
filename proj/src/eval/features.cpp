#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "hsa/eval.hpp"
#include "hsa/kernels.hpp"
#include "hsa/miner.hpp"

namespace hsa::eval {

template <class T>
Tensor<double> extract_features(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds, int stage,
                                std::size_t chunk) {
  if (stage < 0 || stage > int(config.num_stages()))
    throw std::invalid_argument("extract_features: stage " + std::to_string(stage) + " outside 0.." +
                                std::to_string(config.num_stages()));
  if (chunk == 0) throw std::invalid_argument("extract_features: chunk must be positive");
  const std::size_t n = ds.size();
  Tensor<double> out;
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Graph<T> g(&params, Mode::eval);
    const auto nodes = build_encoder(g, config, e - b, "x", false);
    const NodeId feat = stage == 0 ? nodes.pooled : g.global_avg_pool(nodes.taps.at(std::size_t(stage - 1)));
    g.forward({{"x", standardize(params, slice_rows(ds.images, b, e))}});
    const auto& v = g.value(feat);
    if (out.empty()) out = Tensor<double>({n, v.dim(1)});
    std::copy(v.data().begin(), v.data().end(), out.row(b).begin());
  }
  return out;
}

Tensor<double> normalize_rows(Tensor<double> x) {
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    auto row = x.row(r);
    double s = 0;
    for (double v : row) s += v * v;
    const double norm = std::sqrt(s);
    for (double& v : row) v = norm > kNormalizeEps ? v / norm : 0.0;
  }
  return x;
}

FeatureBank make_feature_bank(Tensor<double> features, std::vector<int> labels, int num_classes) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw std::invalid_argument("feature bank: " + to_string(features.shape()) + " features for " +
                                std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw std::invalid_argument("feature bank: label " + std::to_string(y) + " outside 0.." + std::to_string(num_classes - 1));
  return {normalize_rows(std::move(features)), std::move(labels), num_classes};
}

namespace {

void check_query(const FeatureBank& bank, std::size_t dim, std::size_t n) {
  if (bank.size() == 0) throw std::invalid_argument("knn: empty bank");
  if (n == 0 || n > bank.size())
    throw std::invalid_argument("knn: neighbor count " + std::to_string(n) + " must be in 1.." + std::to_string(bank.size()));
  if (dim != bank.features.dim(1)) throw std::invalid_argument("knn: query dimension does not match the bank");
}

int vote(const FeatureBank& bank, std::span<const double> sims, std::size_t n, double tau) {
  const auto top = kernels::top_k(sims, n, std::numeric_limits<std::size_t>::max());
  std::vector<double> score(std::size_t(bank.num_classes), 0.0);
  for (auto i : top) score[std::size_t(bank.labels[i])] += std::exp(sims[i] / tau);
  return int(std::max_element(score.begin(), score.end()) - score.begin());
}

std::vector<double> similarities(const FeatureBank& bank, std::span<const double> q) {
  double s = 0;
  for (double v : q) s += v * v;
  const double norm = std::sqrt(s) > kNormalizeEps ? std::sqrt(s) : 1.0;
  std::vector<double> sims(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto r = bank.features.row(i);
    double dot = 0;
    for (std::size_t j = 0; j < q.size(); ++j) dot += r[j] * q[j];
    sims[i] = dot / norm;
  }
  return sims;
}

}  // namespace

int knn_classify(const FeatureBank& bank, std::span<const double> query, std::size_t n, double tau) {
  check_query(bank, query.size(), n);
  return vote(bank, similarities(bank, query), n, tau);
}

std::vector<int> knn_predict_serial(const FeatureBank& bank, const Tensor<double>& queries, std::size_t n, double tau) {
  check_query(bank, queries.dim(1), n);
  std::vector<int> out(queries.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = vote(bank, similarities(bank, queries.row(r)), n, tau);
  return out;
}

std::vector<int> knn_predict(const FeatureBank& bank, const Tensor<double>& queries, std::size_t n, double tau) {
  check_query(bank, queries.dim(1), n);
  const Tensor<double> q = normalize_rows(queries);
  const std::size_t m = q.dim(0), nb = bank.size(), d = q.dim(1);
  std::vector<int> out(m);
  constexpr std::size_t chunk = 256;
  std::vector<double> sims;
  for (std::size_t r0 = 0; r0 < m; r0 += chunk) {
    const std::size_t len = std::min(chunk, m - r0);
    sims.assign(len * nb, 0.0);
    kernels::gemm<double>(kernels::Transpose::no, kernels::Transpose::yes, len, nb, d,
                          q.data().subspan(r0 * d, len * d), bank.features.data(), sims);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < std::ptrdiff_t(len); ++r)
      out[r0 + std::size_t(r)] = vote(bank, std::span<const double>(sims.data() + std::size_t(r) * nb, nb), n, tau);
  }
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return double(hit) / double(labels.size());
}

template <class T>
std::vector<double> knn_accuracy(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& train,
                                 const data::Dataset& val, std::span<const std::size_t> neighbors, double tau) {
  const auto bank = make_feature_bank(extract_features(params, config, train), train.labels, train.num_classes);
  const auto queries = extract_features(params, config, val);
  std::vector<double> out;
  for (auto n : neighbors) out.push_back(accuracy(knn_predict(bank, queries, std::min(n, bank.size()), tau), val.labels));
  return out;
}

PerClassReport report_per_class(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("report_per_class: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  if (num_classes <= 0) throw std::invalid_argument("report_per_class: need at least one class");
  std::vector<std::size_t> hit(std::size_t(num_classes), 0);
  PerClassReport r;
  r.support.assign(std::size_t(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw std::invalid_argument("report_per_class: label out of range");
    ++r.support[std::size_t(labels[i])];
    hit[std::size_t(labels[i])] += predictions[i] == labels[i];
  }
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < hit.size(); ++c) {
    if (r.support[c] == 0) {
      r.accuracy.emplace_back(std::nullopt);
      continue;
    }
    r.accuracy.emplace_back(double(hit[c]) / double(r.support[c]));
    sum += *r.accuracy.back();
    ++present;
  }
  r.macro = present ? sum / double(present) : 0.0;
  return r;
}

void log_per_class(MetricsLog& log, const std::string& prefix, const PerClassReport& report, std::int64_t epoch) {
  std::map<std::string, double> m{{prefix + ".macro", report.macro}};
  for (std::size_t c = 0; c < report.accuracy.size(); ++c)
    if (report.accuracy[c]) m[prefix + ".class" + std::to_string(c)] = *report.accuracy[c];
  log.write("per_class", epoch, -1, m);
}

void write_embeddings(const Tensor<double>& features, const data::Dataset& ds, const std::filesystem::path& path) {
  if (features.rank() != 2 || features.dim(0) != ds.size())
    throw std::invalid_argument("export_embeddings: feature rows do not match the dataset");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("export_embeddings: cannot write " + path.string());
  const std::size_t d = features.dim(1);
  out << "dim=" << d << " count=" << ds.size() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << (ds.source_ids.empty() ? i : ds.source_ids[i]) << ',' << ds.labels[i];
    for (double v : features.row(i)) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out.flush()) throw std::runtime_error("export_embeddings: failed writing " + path.string());
}

template <class T>
void export_embeddings(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds,
                       const std::filesystem::path& path) {
  write_embeddings(refresh_bank(params, config, ds, -1).rows.template cast<double>(), ds, path);
}

#define HSA_INSTANTIATE(T)                                                                                            \
  template Tensor<double> extract_features<T>(ParamStore<T>&, const EncoderConfig&, const data::Dataset&, int,       \
                                              std::size_t);                                                           \
  template std::vector<double> knn_accuracy<T>(ParamStore<T>&, const EncoderConfig&, const data::Dataset&,           \
                                               const data::Dataset&, std::span<const std::size_t>, double);           \
  template void export_embeddings<T>(ParamStore<T>&, const EncoderConfig&, const data::Dataset&,                     \
                                     const std::filesystem::path&);
HSA_INSTANTIATE(float)
HSA_INSTANTIATE(double)
#undef HSA_INSTANTIATE

}  // namespace hsa::eval
