#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace hsa {

/// Append-only JSONL log, one self-contained record per line. Single writer.
class MetricsLog {
 public:
  MetricsLog() = default;
  MetricsLog(const std::filesystem::path& path, std::string run_id);

  bool is_open() const { return out_.is_open(); }
  void write(const std::string& event, std::int64_t epoch, std::int64_t step, const std::map<std::string, double>& metrics);
  void flush();

 private:
  std::filesystem::path path_;
  std::string run_id_;
  std::ofstream out_;
};

}  // namespace hsa
