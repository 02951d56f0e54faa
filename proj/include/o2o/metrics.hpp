#pragma once

// Line-delimited metrics: one self-describing JSON object per line, flushed
// per record so partial runs stay parseable. The primary stream is a pure
// function of (config, seed); wall-clock timings go to a separate sidecar
// file that deterministic comparisons ignore.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "o2o/common.hpp"

namespace o2o {

using ScalarMap = std::map<std::string, double>;

struct MetricsRecord {
  std::string stage;
  std::int64_t step = 0;
  ScalarMap values;
};

class MetricsWriter {
 public:
  // Truncates path (and timings_path when nonempty) so a rerun reproduces the
  // stream byte for byte.
  explicit MetricsWriter(const std::string& path,
                         const std::string& timings_path = "");
  // Appends one record; within a stage, steps must be strictly increasing.
  void record(const std::string& stage, std::int64_t step, const ScalarMap& values);
  // Wall-clock sidecar record; no-op when the sidecar is disabled.
  void timing(const std::string& stage, std::int64_t step, double wall_ms);
  void close();

 private:
  std::string path_;
  std::ofstream f_, tf_;
  bool timings_enabled_ = false;
  std::map<std::string, std::int64_t> last_step_;
};

// Parses a metrics file; throws FormatError naming the line on bad input.
std::vector<MetricsRecord> read_metrics(const std::string& path);

}  // namespace o2o
