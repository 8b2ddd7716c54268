#include <fstream>
#include <iterator>
#include <stdexcept>

#include "hsa/dataio.hpp"

namespace hsa::data {

namespace {

void append_records(const std::filesystem::path& file, std::vector<float>& pixels, std::vector<int>& labels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR-10 batch " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t full = bytes.size() / kCifarRecordBytes;
  if (bytes.empty()) throw std::runtime_error(file.string() + ": empty batch file");
  if (bytes.size() % kCifarRecordBytes != 0)
    throw std::runtime_error(file.string() + ": truncated record at byte offset " +
                             std::to_string(full * kCifarRecordBytes) + " (file has " + std::to_string(bytes.size()) +
                             " bytes, records are " + std::to_string(kCifarRecordBytes) + ")");
  for (std::size_t r = 0; r < full; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    if (bytes[off] >= 10)
      throw std::runtime_error(file.string() + ": label " + std::to_string(bytes[off]) + " at byte offset " +
                               std::to_string(off) + " is outside 0..9");
    labels.push_back(bytes[off]);
    for (std::size_t j = 1; j < kCifarRecordBytes; ++j) pixels.push_back(float(bytes[off + j]) / 255.0f);
  }
}

Dataset finish(std::vector<float> pixels, std::vector<int> labels, Split split) {
  Dataset ds;
  ds.images = Tensor<float>({labels.size(), 3, kCifarSide, kCifarSide}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = 10;
  ds.split = split;
  ds.source_ids.resize(ds.labels.size());
  for (std::size_t i = 0; i < ds.source_ids.size(); ++i) ds.source_ids[i] = i;
  compute_channel_stats(ds);
  return ds;
}

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& file) {
  std::vector<float> pixels;
  std::vector<int> labels;
  append_records(file, pixels, labels);
  return finish(std::move(pixels), std::move(labels), Split::train);
}

Dataset load_cifar10(const std::filesystem::path& dir, Split split) {
  std::vector<float> pixels;
  std::vector<int> labels;
  if (split == Split::val) {
    append_records(dir / "test_batch.bin", pixels, labels);
  } else {
    int found = 0;
    for (int b = 1; b <= 5; ++b) {
      const auto file = dir / ("data_batch_" + std::to_string(b) + ".bin");
      if (!std::filesystem::exists(file)) continue;
      append_records(file, pixels, labels);
      ++found;
    }
    if (found == 0) throw std::runtime_error("no data_batch_*.bin files in " + dir.string());
  }
  return finish(std::move(pixels), std::move(labels), split);
}

}  // namespace hsa::data
