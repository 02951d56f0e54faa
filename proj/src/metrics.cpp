#include "o2o/metrics.hpp"

#include <json.hpp>

namespace o2o {

using nlohmann::json;

MetricsWriter::MetricsWriter(const std::string& path, const std::string& timings_path)
    : path_(path), f_(path, std::ios::trunc) {
  if (!f_) throw FormatError("cannot open metrics file for writing: " + path);
  if (!timings_path.empty()) {
    tf_.open(timings_path, std::ios::trunc);
    if (!tf_)
      throw FormatError("cannot open timings file for writing: " + timings_path);
    timings_enabled_ = true;
  }
}

void MetricsWriter::record(const std::string& stage, std::int64_t step,
                           const ScalarMap& values) {
  const auto it = last_step_.find(stage);
  if (it != last_step_.end() && step <= it->second)
    throw FormatError("metrics: step " + std::to_string(step) +
                      " not strictly increasing within stage " + stage);
  last_step_[stage] = step;
  json j;
  j["stage"] = stage;
  j["step"] = step;
  j["values"] = values;
  f_ << j.dump() << '\n';
  f_.flush();
  if (!f_) throw FormatError("metrics: write failed for " + path_);
}

void MetricsWriter::timing(const std::string& stage, std::int64_t step,
                           double wall_ms) {
  if (!timings_enabled_) return;
  json j;
  j["stage"] = stage;
  j["step"] = step;
  j["wall_ms"] = wall_ms;
  tf_ << j.dump() << '\n';
  tf_.flush();
}

void MetricsWriter::close() {
  f_.close();
  if (timings_enabled_) tf_.close();
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics file: " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("metrics: bad record at " + path + ":" +
                        std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("stage") || !j.contains("step") || !j.contains("values"))
      throw FormatError("metrics: missing field at " + path + ":" +
                        std::to_string(line_no));
    MetricsRecord r;
    r.stage = j.at("stage").get<std::string>();
    r.step = j.at("step").get<std::int64_t>();
    for (const auto& [k, v] : j.at("values").items())
      r.values[k] = v.get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace o2o
