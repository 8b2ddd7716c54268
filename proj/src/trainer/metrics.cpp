#include "hsa/metrics.hpp"

#include <chrono>
#include <stdexcept>

#include "json.hpp"

namespace hsa {

MetricsLog::MetricsLog(const std::filesystem::path& path, std::string run_id)
    : path_(path), run_id_(std::move(run_id)), out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
}

void MetricsLog::write(const std::string& event, std::int64_t epoch, std::int64_t step,
                       const std::map<std::string, double>& metrics) {
  if (!out_.is_open()) return;
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch());
  nlohmann::json j{{"time_ms", now.count()}, {"run", run_id_}, {"event", event}, {"epoch", epoch}, {"step", step}};
  j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : metrics) j["metrics"][k] = v;
  out_ << j.dump() << '\n';
  if (!out_) throw std::runtime_error("write failed on metrics log " + path_.string());
}

void MetricsLog::flush() {
  out_.flush();
  if (!out_) throw std::runtime_error("flush failed on metrics log " + path_.string());
}

}  // namespace hsa
