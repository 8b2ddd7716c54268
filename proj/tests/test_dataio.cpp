#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

#include "doctest.h"
#include "hsa/dataio.hpp"
#include "hsa/random.hpp"

using namespace hsa;
using namespace hsa::data;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("hsa_dataio_" + std::to_string(derive_seed(std::uint64_t(::getpid()), {})));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// Writes `records` CIFAR records; pixel byte j of record r is (r + j) % 256.
void write_batch(const std::filesystem::path& file, std::size_t records, std::size_t extra_bytes = 0,
                 int bad_label_at = -1) {
  std::ofstream out(file, std::ios::binary);
  for (std::size_t r = 0; r < records; ++r) {
    out.put(char(int(r) == bad_label_at ? 10 : r % 10));
    for (std::size_t j = 0; j < 3072; ++j) out.put(char((r + j) % 256));
  }
  for (std::size_t j = 0; j < extra_bytes; ++j) out.put(0);
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.samples_per_class = 20;
  s.height = s.width = 16;
  return s;
}

}  // namespace

TEST_CASE("cifar loader") {
  TempDir tmp;
  SUBCASE("one batch file") {
    write_batch(tmp.path / "data_batch_1.bin", 10000);
    const auto ds = load_cifar10(tmp.path);
    CHECK(ds.size() == 10000);
    CHECK(ds.images.shape() == Shape{10000, 3, 32, 32});
    for (int l : ds.labels) CHECK((l >= 0 && l < 10));
    CHECK(ds.labels[7] == 7);
    CHECK(ds.images.row(3)[0] == doctest::Approx(3 / 255.0));
    CHECK(ds.images.row(3)[1024] == doctest::Approx(((3 + 1024) % 256) / 255.0));
    CHECK(ds.source_ids[9999] == 9999);
  }
  SUBCASE("five train batches") {
    for (int b = 1; b <= 5; ++b) write_batch(tmp.path / ("data_batch_" + std::to_string(b) + ".bin"), 10000);
    CHECK(load_cifar10(tmp.path).size() == 50000);
  }
  SUBCASE("test batch") {
    write_batch(tmp.path / "test_batch.bin", 20);
    const auto ds = load_cifar10(tmp.path, Split::val);
    CHECK(ds.size() == 20);
    CHECK(ds.split == Split::val);
  }
  SUBCASE("truncated record names its offset") {
    write_batch(tmp.path / "data_batch_1.bin", 3, 100);
    CHECK_THROWS_WITH(load_cifar10(tmp.path), doctest::Contains("byte offset 9219"));
  }
  SUBCASE("bad label") {
    write_batch(tmp.path / "data_batch_1.bin", 4, 0, 2);
    CHECK_THROWS_WITH(load_cifar10(tmp.path), doctest::Contains("byte offset 6146"));
  }
  SUBCASE("empty directory") { CHECK_THROWS(load_cifar10(tmp.path)); }
}

TEST_CASE("synthetic generator") {
  SUBCASE("deterministic, balanced, in range") {
    SyntheticSpec spec;  // 10 classes, 500 per class, 32x32
    const auto a = generate_synthetic(spec, 7);
    const auto b = generate_synthetic(spec, 7);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 5000);
    std::vector<int> counts(10);
    for (int l : a.labels) ++counts[std::size_t(l)];
    for (int c : counts) CHECK(c == 500);
    for (float p : a.images.data()) REQUIRE((p >= 0.0f && p <= 1.0f));
    CHECK_FALSE(generate_synthetic(spec, 8).images == a.images);
  }
  SUBCASE("noise 0 leaves only per-sample parameters") {
    auto spec = small_spec();
    spec.noise = 0;
    const auto ds = generate_synthetic(spec, 3);
    const auto stream = derive_seed(3, {0});
    std::vector<float> img(3 * 16 * 16);
    for (std::size_t i = 0; i < ds.size(); i += 17) {
      render_synthetic(spec, ds.labels[i], synthetic_geometry(spec, stream, i), img);
      CHECK(std::equal(img.begin(), img.end(), ds.image(i).begin()));
    }
    // With geometry fixed, two samples of one class render identically.
    auto g = synthetic_geometry(spec, stream, 0);
    std::vector<float> other(img.size());
    render_synthetic(spec, 0, g, img);
    render_synthetic(spec, 10, g, other);
    CHECK(img == other);
    render_synthetic(spec, 1, g, other);
    CHECK_FALSE(img == other);
  }
  SUBCASE("raw-pixel 1-NN beats chance") {
    auto spec = small_spec();
    spec.samples_per_class = 60;
    const auto ds = generate_synthetic(spec, 11);
    const auto [train, test] = split_labels(ds, 0.5, 1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      double best = 1e300;
      int pred = -1;
      for (std::size_t j = 0; j < train.size(); ++j) {
        double d = 0;
        auto a = test.image(i), b = train.image(j);
        for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
        if (d < best) best = d, pred = train.labels[j];
      }
      correct += pred == test.labels[i];
    }
    const double acc = double(correct) / double(test.size());
    MESSAGE("pixel 1-NN accuracy " << acc);
    CHECK(acc > 0.1 + 3 * std::sqrt(0.09 / double(test.size())));
  }
  SUBCASE("channel statistics") {
    const auto ds = generate_synthetic(small_spec(), 5);
    double sum = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < 256; ++j) sum += ds.image(i)[j];
    CHECK(ds.channel_mean[0] == doctest::Approx(sum / (256.0 * double(ds.size()))).epsilon(1e-6));
    CHECK(ds.channel_std[1] > 0);
  }
  SUBCASE("invalid spec") {
    auto spec = small_spec();
    spec.num_classes = 1;
    CHECK_THROWS_AS(generate_synthetic(spec, 1), std::invalid_argument);
  }
}

TEST_CASE("split_labels") {
  auto spec = small_spec();
  spec.samples_per_class = 500;
  spec.height = spec.width = 4;
  const auto ds = generate_synthetic(spec, 2);
  SUBCASE("full fraction") {
    const auto [lab, unl] = split_labels(ds, 1.0, 9);
    CHECK(lab.size() == ds.size());
    CHECK(unl.size() == 0);
  }
  SUBCASE("stratified partition") {
    const auto [lab, unl] = split_labels(ds, 0.1, 9);
    std::vector<int> counts(10);
    for (int l : lab.labels) ++counts[std::size_t(l)];
    for (int c : counts) CHECK(c == 50);
    std::set<std::size_t> seen(lab.source_ids.begin(), lab.source_ids.end());
    for (auto id : unl.source_ids) CHECK(seen.insert(id).second);
    CHECK(seen.size() == ds.size());
    for (std::size_t i = 0; i < lab.size(); ++i) CHECK(lab.labels[i] == ds.labels[lab.source_ids[i]]);
    const auto [lab2, unl2] = split_labels(ds, 0.1, 9);
    CHECK(lab2.source_ids == lab.source_ids);
    CHECK_FALSE(split_labels(ds, 0.1, 10).first.source_ids == lab.source_ids);
  }
  SUBCASE("too small") {
    CHECK_THROWS_AS(split_labels(ds, 0.001, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_labels(ds, 0.0, 1), std::invalid_argument);
  }
}

TEST_CASE("batch_iter") {
  SUBCASE("partition with short final batch") {
    const auto batches = batch_iter(10, 4, 1, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);
    std::set<std::size_t> all;
    for (const auto& b : batches) all.insert(b.begin(), b.end());
    CHECK(all.size() == 10);
    CHECK(*all.rbegin() == 9);
  }
  SUBCASE("determinism and epoch freshness") {
    CHECK(batch_iter(1000, 128, 5, 3) == batch_iter(1000, 128, 5, 3));
    for (std::uint64_t e = 0; e < 5; ++e) {
      const auto p = epoch_permutation(1000, 5, e), q = epoch_permutation(1000, 5, e + 1);
      CHECK(p != q);
      std::vector<std::size_t> sorted = p;
      std::sort(sorted.begin(), sorted.end());
      std::vector<std::size_t> iota(1000);
      std::iota(iota.begin(), iota.end(), 0);
      CHECK(sorted == iota);
    }
  }
  SUBCASE("zero batch") { CHECK_THROWS(batch_iter(10, 0, 1, 0)); }
}
