#include "virtview/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "virtview/error.hpp"

namespace virtview {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kFormat = "virtview-checkpoint";
constexpr int kVersion = 1;

std::string dump(const char* kind, std::uint64_t seed, json config, const nn::ParamSet& tensors) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["kind"] = kind;
  j["seed"] = seed;
  j["config"] = std::move(config);
  j["tensors"] = json::array();
  for (const nn::Tensor& t : tensors.tensors()) {
    json e;
    e["name"] = t.name;
    e["dims"] = {t.value.rows(), t.value.cols()};
    // Row-major so the listing reads like the matrix.
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.value.size()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) data.push_back(t.value(r, c));
    }
    e["data"] = std::move(data);
    j["tensors"].push_back(std::move(e));
  }
  return j.dump(1);
}

json parse(const std::string& text, const char* kind) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("checkpoint is not JSON: ") + e.what());
  }
  if (j.value("format", "") != kFormat) throw Error(ErrorCode::FormatError, "not a virtview checkpoint");
  if (j.value("version", 0) != kVersion) {
    throw Error(ErrorCode::FormatError, "unsupported checkpoint version " + j.value("version", json()).dump());
  }
  if (j.value("kind", "") != kind) {
    throw Error(ErrorCode::FormatError,
                std::string("expected a ") + kind + " checkpoint, got '" + j.value("kind", "") + "'");
  }
  return j;
}

// Overwrites the freshly initialised layout with the stored values.
void load_tensors(const json& j, nn::ParamSet& params) {
  const json& list = j.at("tensors");
  if (list.size() != params.tensors().size()) {
    throw Error(ErrorCode::FormatError, "checkpoint has " + std::to_string(list.size()) +
                                            " tensors, model expects " +
                                            std::to_string(params.tensors().size()));
  }
  for (const json& e : list) {
    const std::string name = e.at("name").get<std::string>();
    if (!params.contains(name)) throw Error(ErrorCode::FormatError, "unexpected tensor " + name);
    nn::Matrix& m = params.get(name);
    const auto rows = e.at("dims").at(0).get<Eigen::Index>();
    const auto cols = e.at("dims").at(1).get<Eigen::Index>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (rows != m.rows() || cols != m.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw Error(ErrorCode::FormatError, "tensor " + name + " has the wrong shape");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
  }
}

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace

std::string to_checkpoint(const EstimatorParams& p) {
  const A2JConfig& c = p.config;
  json cfg = {{"crop_size", c.crop_size},         {"channels", c.channels},
              {"joints", c.joints},               {"feature_tap", c.feature_tap},
              {"offset_scale_px", c.offset_scale_px}, {"depth_scale_mm", c.depth_scale_mm}};
  return dump("estimator", p.rng_seed, std::move(cfg), p.tensors);
}

std::string to_checkpoint(const TeacherParams& p) {
  const TeacherConfig& c = p.config;
  json cfg = {{"in_channels", c.in_channels}, {"in_height", c.in_height}, {"in_width", c.in_width},
              {"channels", c.channels},       {"key_dim", c.key_dim},     {"value_dim", c.value_dim},
              {"heads", c.heads}};
  return dump("teacher", p.rng_seed, std::move(cfg), p.tensors);
}

std::string to_checkpoint(const StudentParams& p) {
  const StudentConfig& c = p.config;
  json cfg = {{"crop_size", c.crop_size}, {"pool", c.pool}, {"channels", c.channels}, {"views", c.views}};
  return dump("student", p.rng_seed, std::move(cfg), p.tensors);
}

EstimatorParams estimator_from_checkpoint(const std::string& text) {
  return guarded([&] {
    const json j = parse(text, "estimator");
    const json& c = j.at("config");
    A2JConfig cfg;
    cfg.crop_size = c.at("crop_size").get<int>();
    cfg.channels = c.at("channels").get<std::vector<int>>();
    cfg.joints = c.at("joints").get<int>();
    cfg.feature_tap = c.at("feature_tap").get<int>();
    cfg.offset_scale_px = c.at("offset_scale_px").get<double>();
    cfg.depth_scale_mm = c.at("depth_scale_mm").get<double>();
    EstimatorParams p = EstimatorParams::initialize(cfg, j.at("seed").get<std::uint64_t>());
    load_tensors(j, p.tensors);
    return p;
  });
}

TeacherParams teacher_from_checkpoint(const std::string& text) {
  return guarded([&] {
    const json j = parse(text, "teacher");
    const json& c = j.at("config");
    TeacherConfig cfg;
    cfg.in_channels = c.at("in_channels").get<int>();
    cfg.in_height = c.at("in_height").get<int>();
    cfg.in_width = c.at("in_width").get<int>();
    cfg.channels = c.at("channels").get<std::array<int, 3>>();
    cfg.key_dim = c.at("key_dim").get<int>();
    cfg.value_dim = c.at("value_dim").get<int>();
    cfg.heads = c.at("heads").get<int>();
    TeacherParams p = TeacherParams::initialize(cfg, j.at("seed").get<std::uint64_t>());
    load_tensors(j, p.tensors);
    return p;
  });
}

StudentParams student_from_checkpoint(const std::string& text) {
  return guarded([&] {
    const json j = parse(text, "student");
    const json& c = j.at("config");
    StudentConfig cfg;
    cfg.crop_size = c.at("crop_size").get<int>();
    cfg.pool = c.at("pool").get<int>();
    cfg.channels = c.at("channels").get<std::vector<int>>();
    cfg.views = c.at("views").get<int>();
    StudentParams p = StudentParams::initialize(cfg, j.at("seed").get<std::uint64_t>());
    load_tensors(j, p.tensors);
    return p;
  });
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace virtview
