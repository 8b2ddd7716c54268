#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hsa/dataio.hpp"
#include "hsa/random.hpp"

namespace hsa::data {

void compute_channel_stats(Dataset& ds) {
  const std::size_t n = ds.size(), c = ds.channels(), plane = ds.height() * ds.width();
  ds.channel_mean.assign(c, 0.0f);
  ds.channel_std.assign(c, 0.0f);
  if (n == 0 || plane == 0) return;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = ds.images.raw() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += p[j];
    }
    const double count = double(n * plane);
    const double mean = sum / count;
    double sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = ds.images.raw() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
    }
    ds.channel_mean[ch] = float(mean);
    ds.channel_std[ch] = float(std::sqrt(sq / count));
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  Shape s = ds.images.shape();
  s[0] = indices.size();
  std::vector<float> pixels;
  pixels.reserve(numel(s));
  for (auto i : indices) {
    if (i >= ds.size()) throw std::out_of_range("subset: index " + std::to_string(i) + " >= " + std::to_string(ds.size()));
    auto img = ds.image(i);
    pixels.insert(pixels.end(), img.begin(), img.end());
    out.labels.push_back(ds.labels[i]);
    out.source_ids.push_back(ds.source_ids[i]);
  }
  out.images = Tensor<float>(std::move(s), std::move(pixels));
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  out.channel_mean = ds.channel_mean;
  out.channel_std = ds.channel_std;
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng = make_rng(seed, {0x5348554646ULL, epoch});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::size_t((static_cast<unsigned __int128>(rng()) * i) >> 64);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch size must be positive");
  const auto perm = epoch_permutation(n, seed, epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size)
    batches.emplace_back(perm.begin() + std::ptrdiff_t(b), perm.begin() + std::ptrdiff_t(std::min(n, b + batch_size)));
  return batches;
}

std::pair<Dataset, Dataset> split_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("split_labels: fraction must lie in (0, 1]");
  if (fraction * double(ds.size()) < double(ds.num_classes))
    throw std::invalid_argument("split_labels: fraction " + std::to_string(fraction) + " of " + std::to_string(ds.size()) +
                                " samples is fewer than one per class");
  std::vector<std::vector<std::size_t>> by_class(std::size_t(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(std::size_t(ds.labels[i])).push_back(i);
  std::vector<std::size_t> labeled, unlabeled;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    const auto take = std::size_t(std::llround(fraction * double(members.size())));
    if (take == 0)
      throw std::invalid_argument("split_labels: fraction " + std::to_string(fraction) + " leaves class " +
                                  std::to_string(c) + " without labeled samples");
    const auto perm = epoch_permutation(members.size(), seed, c);
    for (std::size_t j = 0; j < members.size(); ++j) (j < take ? labeled : unlabeled).push_back(members[perm[j]]);
  }
  std::sort(labeled.begin(), labeled.end());
  std::sort(unlabeled.begin(), unlabeled.end());
  return {subset(ds, labeled), subset(ds, unlabeled)};
}

}  // namespace hsa::data
