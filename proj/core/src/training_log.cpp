#include "virtview/training_log.hpp"

#include "json.hpp"

namespace virtview {

std::string to_json_line(const EpochRecord& record) {
  nlohmann::ordered_json j;
  j["stage"] = record.stage;
  j["epoch"] = record.epoch;
  j["lr"] = record.lr;
  j["loss"] = record.loss;
  for (const auto& [name, value] : record.terms) j[name] = value;
  return j.dump();
}

}  // namespace virtview
