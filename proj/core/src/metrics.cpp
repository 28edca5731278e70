#include "virtview/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "virtview/error.hpp"
#include "virtview/hash.hpp"

namespace virtview {

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 80; ++i) t.push_back(i);
  return t;
}

EvalReport mean_joint_error(std::span<const HandPose> preds, std::span<const HandPose> gts,
                            std::span<const double> thresholds) {
  if (preds.size() != gts.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(preds.size()) + " predictions for " +
                                               std::to_string(gts.size()) + " ground truths");
  }
  if (preds.empty()) throw Error(ErrorCode::EmptyDataset, "no frames to evaluate");
  const std::vector<double> defaults = default_thresholds();
  if (thresholds.empty()) thresholds = defaults;

  const std::size_t k = gts[0].joints.size();
  EvalReport r;
  r.n_frames = preds.size();
  r.per_joint_error_mm.assign(k, 0.0);
  std::vector<double> worst(preds.size());
  for (std::size_t f = 0; f < preds.size(); ++f) {
    if (preds[f].frame_id != gts[f].frame_id) {
      throw Error(ErrorCode::FrameMismatch, "frame " + std::to_string(f) + ": '" + preds[f].frame_id +
                                                "' vs '" + gts[f].frame_id + "'");
    }
    if (preds[f].joints.size() != k || gts[f].joints.size() != k) {
      throw Error(ErrorCode::LengthMismatch, "frame " + std::to_string(f) + " has a different joint count");
    }
    double w = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = (preds[f].joints[j] - gts[f].joints[j]).norm();
      r.per_joint_error_mm[j] += e;
      w = std::max(w, e);
    }
    worst[f] = w;
  }
  double sum = 0.0;
  for (double& e : r.per_joint_error_mm) {
    e /= static_cast<double>(preds.size());
    sum += e;
  }
  r.mean_joint_error_mm = sum / static_cast<double>(k);
  for (double t : thresholds) {
    const auto ok = std::count_if(worst.begin(), worst.end(), [t](double w) { return w <= t; });
    r.success_curve.emplace_back(t, static_cast<double>(ok) / static_cast<double>(worst.size()));
  }
  return r;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["mean_joint_error_mm"] = report.mean_joint_error_mm;
  j["per_joint_error_mm"] = report.per_joint_error_mm;
  j["n_frames"] = report.n_frames;
  j["success_curve"] = nlohmann::ordered_json::array();
  for (const auto& [t, f] : report.success_curve) {
    j["success_curve"].push_back({{"threshold_mm", t}, {"fraction", f}});
  }
  return j.dump(2);
}

std::string success_curve_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "threshold_mm,fraction\n";
  char line[64];
  for (const auto& [t, f] : report.success_curve) {
    std::snprintf(line, sizeof line, "%g,%.6f\n", t, f);
    out << line;
  }
  return out.str();
}

std::string config_fingerprint(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  j["grid"] = {cfg.grid_rows, cfg.grid_cols};
  j["n"] = cfg.num_selected;
  j["mode"] = to_string(cfg.mode);
  j["fusion"] = to_string(cfg.fusion_kind());
  j["zenith"] = {cfg.zenith_range.min, cfg.zenith_range.max};
  j["azimuth"] = {cfg.azimuth_range.min, cfg.azimuth_range.max};
  j["render"] = {cfg.render.out_width, cfg.render.out_height, cfg.render.splat_radius,
                 cfg.render.max_range_mm};
  j["crop"] = {cfg.crop.crop_size, cfg.crop.cube_mm, cfg.crop.normalize};
  if (cfg.masks) {
    for (const auto& [n, ids] : *cfg.masks) j["masks"][std::to_string(n)] = ids;
  }
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j.dump();
}

std::string config_hash(const PipelineConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_fingerprint(cfg))));
  return buf;
}

FpsReport bench_fps(const PipelineConfig& cfg, const Models& models, std::span<const Frame> frames,
                    int repetitions) {
  if (repetitions < 3) throw Error(ErrorCode::InvalidArgument, "bench needs at least 3 repetitions");
  if (frames.empty()) throw Error(ErrorCode::EmptyDataset, "no frames to benchmark");
  for (const Frame& f : frames) infer(frame_input(f), cfg, models);  // warm-up

  struct Pass {
    double fps;
    StageTimes times;
  };
  std::vector<Pass> passes;
  for (int r = 0; r < repetitions; ++r) {
    StageTimes sum;
    for (const Frame& f : frames) sum += infer(frame_input(f), cfg, models).times;
    passes.push_back({static_cast<double>(frames.size()) / sum.total, sum});
  }
  FpsReport rep;
  for (const Pass& p : passes) rep.repetition_fps.push_back(p.fps);
  std::vector<Pass> sorted = passes;
  std::sort(sorted.begin(), sorted.end(), [](const Pass& a, const Pass& b) { return a.fps < b.fps; });
  const Pass& median = sorted[sorted.size() / 2];
  const double n = static_cast<double>(frames.size());
  rep.frames_per_second = median.fps;
  rep.stage_seconds = median.times;
  for (double* s : {&rep.stage_seconds.prepare, &rep.stage_seconds.render, &rep.stage_seconds.estimate,
                    &rep.stage_seconds.confidence, &rep.stage_seconds.fuse, &rep.stage_seconds.total}) {
    *s /= n;
  }
  rep.thread_count = cfg.threads;
  rep.repetitions = repetitions;
  rep.frames = frames.size();
  rep.config_hash = config_hash(cfg);
  return rep;
}

std::string to_json(const FpsReport& report) {
  const StageTimes& s = report.stage_seconds;
  nlohmann::ordered_json j;
  j["frames_per_second"] = report.frames_per_second;
  j["stage_seconds_per_frame"] = {{"prepare", s.prepare},       {"render", s.render},
                                  {"estimate", s.estimate},     {"confidence", s.confidence},
                                  {"fuse", s.fuse},             {"total", s.total}};
  j["thread_count"] = report.thread_count;
  j["repetitions"] = report.repetitions;
  j["frames"] = report.frames;
  j["repetition_fps"] = report.repetition_fps;
  j["config_hash"] = report.config_hash;
  return j.dump(2);
}

}  // namespace virtview
