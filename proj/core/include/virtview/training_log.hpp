#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace virtview {

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> terms;
};

// Per-epoch training records. Each record serializes to one JSON line.
struct TrainingLog {
  std::vector<EpochRecord> records;
  std::function<void(const EpochRecord&)> on_record;  // optional live sink

  void push(EpochRecord record) {
    if (on_record) on_record(record);
    records.push_back(std::move(record));
  }
};

std::string to_json_line(const EpochRecord& record);

}  // namespace virtview
