#include "run_config.hpp"

#include <set>

#include "json.hpp"
#include "virtview/checkpoint.hpp"
#include "virtview/error.hpp"
#include "virtview/parallel.hpp"

namespace virtview::cli {

namespace {

using json = nlohmann::ordered_json;

// Rejects keys the config does not define, so typos fail loudly.
void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw Error(ErrorCode::ConfigError, "unknown key " + where + "." + key);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json range_json(const AngleRange& r) { return json::array({r.min, r.max}); }

AngleRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::ConfigError, "angle range must be [min, max]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json train_json(const TrainConfig& t) {
  return {{"gamma", t.gamma}, {"lambda", t.lambda}, {"beta", t.beta},   {"lr", t.lr},
          {"decay", t.decay}, {"epochs", t.epochs}, {"batch_size", t.batch_size},
          {"freeze_estimator", t.freeze_estimator}};
}

void train_from(const json& j, TrainConfig& t, const std::string& where) {
  check_keys(j, {"gamma", "lambda", "beta", "lr", "decay", "epochs", "batch_size", "freeze_estimator"}, where);
  read(j, "gamma", t.gamma);
  read(j, "lambda", t.lambda);
  read(j, "beta", t.beta);
  read(j, "lr", t.lr);
  read(j, "decay", t.decay);
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "freeze_estimator", t.freeze_estimator);
}

}  // namespace

int RunConfig::resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }

void RunConfig::validate() const {
  if (frames < 1) throw Error(ErrorCode::ConfigError, "frames must be >= 1");
  if (threads < 0) throw Error(ErrorCode::ConfigError, "threads must be >= 0");
  camera.validate();
  if (augment) augmentation.validate();
  pipeline.validate();
  if (pipeline.masks) {
    for (const auto& [n, ids] : *pipeline.masks) {
      if (static_cast<int>(ids.size()) != n) {
        throw Error(ErrorCode::ConfigError, "mask for n=" + std::to_string(n) + " lists " +
                                                std::to_string(ids.size()) + " ids");
      }
      for (int id : ids) {
        if (id < 0 || id >= pipeline.view_count()) {
          throw Error(ErrorCode::ConfigError, "mask id " + std::to_string(id) + " outside the grid");
        }
      }
    }
  }
  if (estimator != "oracle" && estimator != "a2j") {
    throw Error(ErrorCode::ConfigError, "estimator must be 'oracle' or 'a2j', got '" + estimator + "'");
  }
  oracle.validate();
  a2j.validate();
  if (a2j.crop_size != pipeline.crop.crop_size) {
    throw Error(ErrorCode::ConfigError, "a2j.crop_size must equal pipeline.crop.crop_size");
  }
  if (estimator_schedule.epochs < 0 || !(estimator_schedule.lr > 0.0) || estimator_schedule.batch_size < 1) {
    throw Error(ErrorCode::ConfigError, "invalid estimator schedule");
  }
  teacher_training.validate();
  student_training.validate();
  teacher_config_for(*this).validate();
  student_config_for(*this).validate();
  if (repetitions < 3) throw Error(ErrorCode::ConfigError, "bench repetitions must be >= 3");
  if (bench_frames < 1) throw Error(ErrorCode::ConfigError, "bench frames must be >= 1");
}

TeacherConfig teacher_config_for(const RunConfig& cfg) {
  TeacherConfig t = cfg.teacher;
  if (cfg.estimator == "oracle") {
    t.in_channels = kOracleFeatureChannels;
    t.in_height = t.in_width = kOracleFeatureSide;
  } else {
    t.in_channels = cfg.a2j.channels[static_cast<std::size_t>(cfg.a2j.feature_tap - 1)];
    t.in_height = t.in_width = cfg.a2j.side_after(cfg.a2j.feature_tap);
  }
  return t;
}

StudentConfig student_config_for(const RunConfig& cfg) {
  StudentConfig s = cfg.student;
  s.crop_size = cfg.pipeline.crop.crop_size;
  s.views = cfg.pipeline.view_count();
  return s;
}

std::string to_json_text(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["paths"] = {{"dataset", c.dataset}, {"checkpoints", c.checkpoints}, {"reports", c.reports}};
  j["synth"] = {{"frames", c.frames},
                {"camera",
                 {{"fx", c.camera.fx}, {"fy", c.camera.fy}, {"cx", c.camera.cx}, {"cy", c.camera.cy},
                  {"width", c.camera.width}, {"height", c.camera.height}}},
                {"augment", c.augment},
                {"augmentation",
                 {{"scale_range", {c.augmentation.scale_min, c.augmentation.scale_max}},
                  {"centroid_jitter_mm", c.augmentation.centroid_jitter_mm},
                  {"camera_rotation_jitter_rad", c.augmentation.camera_rotation_jitter_rad}}}};

  const PipelineConfig& p = c.pipeline;
  json pj;
  pj["grid_rows"] = p.grid_rows;
  pj["grid_cols"] = p.grid_cols;
  pj["n"] = p.num_selected;
  pj["mode"] = to_string(p.mode);
  pj["fusion"] = p.fusion ? json(to_string(*p.fusion)) : json(nullptr);
  pj["zenith_range"] = range_json(p.zenith_range);
  pj["azimuth_range"] = range_json(p.azimuth_range);
  pj["render"] = {{"width", p.render.out_width}, {"height", p.render.out_height},
                  {"splat_radius", p.render.splat_radius}, {"max_range_mm", p.render.max_range_mm}};
  pj["crop"] = {{"crop_size", p.crop.crop_size}, {"cube_mm", p.crop.cube_mm}, {"normalize", p.crop.normalize}};
  if (p.masks) {
    json m = json::object();
    for (const auto& [n, ids] : *p.masks) m[std::to_string(n)] = ids;
    pj["masks"] = m;
  } else {
    pj["masks"] = nullptr;
  }
  j["pipeline"] = pj;

  j["estimator"] = {
      {"kind", c.estimator},
      {"oracle",
       {{"base_sigma_mm", c.oracle.base_sigma_mm}, {"occlusion_gain_mm", c.oracle.occlusion_gain_mm},
        {"occlusion_margin_mm", c.oracle.occlusion_margin_mm},
        {"occlusion_window_px", c.oracle.occlusion_window_px}}},
      {"a2j",
       {{"channels", c.a2j.channels}, {"joints", c.a2j.joints}, {"feature_tap", c.a2j.feature_tap},
        {"offset_scale_px", c.a2j.offset_scale_px}, {"depth_scale_mm", c.a2j.depth_scale_mm}}}};

  const EstimatorSchedule& es = c.estimator_schedule;
  j["train"] = {{"estimator",
                 {{"epochs", es.epochs}, {"lr", es.lr}, {"decay", es.decay}, {"lambda", es.lambda},
                  {"batch_size", es.batch_size}}},
                {"teacher", train_json(c.teacher_training)},
                {"student", train_json(c.student_training)}};
  j["teacher"] = {{"channels", c.teacher.channels}, {"key_dim", c.teacher.key_dim},
                  {"value_dim", c.teacher.value_dim}, {"heads", c.teacher.heads}};
  j["student"] = {{"pool", c.student.pool}, {"channels", c.student.channels}};
  j["bench"] = {{"repetitions", c.repetitions}, {"frames", c.bench_frames}};
  return j.dump(2) + "\n";
}

RunConfig from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    check_keys(j, {"seed", "threads", "paths", "synth", "pipeline", "estimator", "train", "teacher",
                   "student", "bench"},
               "config");
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    if (j.contains("paths")) {
      const json& p = j["paths"];
      check_keys(p, {"dataset", "checkpoints", "reports"}, "paths");
      read(p, "dataset", c.dataset);
      read(p, "checkpoints", c.checkpoints);
      read(p, "reports", c.reports);
    }
    if (j.contains("synth")) {
      const json& s = j["synth"];
      check_keys(s, {"frames", "camera", "augment", "augmentation"}, "synth");
      read(s, "frames", c.frames);
      read(s, "augment", c.augment);
      if (s.contains("camera")) {
        const json& cam = s["camera"];
        check_keys(cam, {"fx", "fy", "cx", "cy", "width", "height"}, "synth.camera");
        read(cam, "fx", c.camera.fx);
        read(cam, "fy", c.camera.fy);
        read(cam, "cx", c.camera.cx);
        read(cam, "cy", c.camera.cy);
        read(cam, "width", c.camera.width);
        read(cam, "height", c.camera.height);
      }
      if (s.contains("augmentation")) {
        const json& a = s["augmentation"];
        check_keys(a, {"scale_range", "centroid_jitter_mm", "camera_rotation_jitter_rad"}, "synth.augmentation");
        if (a.contains("scale_range")) {
          c.augmentation.scale_min = a["scale_range"].at(0).get<double>();
          c.augmentation.scale_max = a["scale_range"].at(1).get<double>();
        }
        read(a, "centroid_jitter_mm", c.augmentation.centroid_jitter_mm);
        read(a, "camera_rotation_jitter_rad", c.augmentation.camera_rotation_jitter_rad);
      }
    }
    if (j.contains("pipeline")) {
      const json& p = j["pipeline"];
      check_keys(p, {"grid_rows", "grid_cols", "n", "mode", "fusion", "zenith_range", "azimuth_range",
                     "render", "crop", "masks"},
                 "pipeline");
      PipelineConfig& pc = c.pipeline;
      read(p, "grid_rows", pc.grid_rows);
      read(p, "grid_cols", pc.grid_cols);
      read(p, "n", pc.num_selected);
      if (p.contains("mode")) pc.mode = parse_selection_mode(p["mode"].get<std::string>());
      if (p.contains("fusion") && !p["fusion"].is_null()) {
        pc.fusion = parse_fusion_kind(p["fusion"].get<std::string>());
      }
      if (p.contains("zenith_range")) pc.zenith_range = range_from(p["zenith_range"]);
      if (p.contains("azimuth_range")) pc.azimuth_range = range_from(p["azimuth_range"]);
      if (p.contains("render")) {
        const json& r = p["render"];
        check_keys(r, {"width", "height", "splat_radius", "max_range_mm"}, "pipeline.render");
        read(r, "width", pc.render.out_width);
        read(r, "height", pc.render.out_height);
        read(r, "splat_radius", pc.render.splat_radius);
        read(r, "max_range_mm", pc.render.max_range_mm);
      }
      if (p.contains("crop")) {
        const json& r = p["crop"];
        check_keys(r, {"crop_size", "cube_mm", "normalize"}, "pipeline.crop");
        read(r, "crop_size", pc.crop.crop_size);
        read(r, "cube_mm", pc.crop.cube_mm);
        read(r, "normalize", pc.crop.normalize);
      }
      if (p.contains("masks") && !p["masks"].is_null()) {
        SubsetMasks masks;
        for (const auto& [key, ids] : p["masks"].items()) masks[std::stoi(key)] = ids.get<std::vector<int>>();
        pc.masks = std::move(masks);
      }
    }
    if (j.contains("estimator")) {
      const json& e = j["estimator"];
      check_keys(e, {"kind", "oracle", "a2j"}, "estimator");
      read(e, "kind", c.estimator);
      if (e.contains("oracle")) {
        const json& o = e["oracle"];
        check_keys(o, {"base_sigma_mm", "occlusion_gain_mm", "occlusion_margin_mm", "occlusion_window_px"},
                   "estimator.oracle");
        read(o, "base_sigma_mm", c.oracle.base_sigma_mm);
        read(o, "occlusion_gain_mm", c.oracle.occlusion_gain_mm);
        read(o, "occlusion_margin_mm", c.oracle.occlusion_margin_mm);
        read(o, "occlusion_window_px", c.oracle.occlusion_window_px);
      }
      if (e.contains("a2j")) {
        const json& a = e["a2j"];
        check_keys(a, {"channels", "joints", "feature_tap", "offset_scale_px", "depth_scale_mm"}, "estimator.a2j");
        read(a, "channels", c.a2j.channels);
        read(a, "joints", c.a2j.joints);
        read(a, "feature_tap", c.a2j.feature_tap);
        read(a, "offset_scale_px", c.a2j.offset_scale_px);
        read(a, "depth_scale_mm", c.a2j.depth_scale_mm);
      }
    }
    c.a2j.crop_size = c.pipeline.crop.crop_size;
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, {"estimator", "teacher", "student"}, "train");
      if (t.contains("estimator")) {
        const json& e = t["estimator"];
        check_keys(e, {"epochs", "lr", "decay", "lambda", "batch_size"}, "train.estimator");
        read(e, "epochs", c.estimator_schedule.epochs);
        read(e, "lr", c.estimator_schedule.lr);
        read(e, "decay", c.estimator_schedule.decay);
        read(e, "lambda", c.estimator_schedule.lambda);
        read(e, "batch_size", c.estimator_schedule.batch_size);
      }
      if (t.contains("teacher")) train_from(t["teacher"], c.teacher_training, "train.teacher");
      if (t.contains("student")) train_from(t["student"], c.student_training, "train.student");
    }
    if (j.contains("teacher")) {
      const json& t = j["teacher"];
      check_keys(t, {"channels", "key_dim", "value_dim", "heads"}, "teacher");
      read(t, "channels", c.teacher.channels);
      read(t, "key_dim", c.teacher.key_dim);
      read(t, "value_dim", c.teacher.value_dim);
      read(t, "heads", c.teacher.heads);
    }
    if (j.contains("student")) {
      const json& s = j["student"];
      check_keys(s, {"pool", "channels"}, "student");
      read(s, "pool", c.student.pool);
      read(s, "channels", c.student.channels);
    }
    if (j.contains("bench")) {
      const json& b = j["bench"];
      check_keys(b, {"repetitions", "frames"}, "bench");
      read(b, "repetitions", c.repetitions);
      read(b, "frames", c.bench_frames);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, "cannot read config " + path);
  }
  return from_json_text(text);
}

}  // namespace virtview::cli
