#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "virtview/fusion.hpp"
#include "virtview/geometry.hpp"

namespace virtview {

struct EvalReport {
  double mean_joint_error_mm = 0.0;
  std::vector<double> per_joint_error_mm;
  std::vector<std::pair<double, double>> success_curve;  // (threshold_mm, fraction)
  std::size_t n_frames = 0;
};

// Thresholds 0, 1, ..., 80 mm.
std::vector<double> default_thresholds();

// A frame succeeds at threshold t when its largest joint error is <= t.
// Throws LengthMismatch, FrameMismatch.
EvalReport mean_joint_error(std::span<const HandPose> preds, std::span<const HandPose> gts,
                            std::span<const double> thresholds = {});

std::string to_json(const EvalReport& report);
std::string success_curve_csv(const EvalReport& report);

struct FpsReport {
  StageTimes stage_seconds;  // per frame, median repetition
  double frames_per_second = 0.0;
  int thread_count = 1;
  int repetitions = 0;
  std::size_t frames = 0;
  std::string config_hash;  // FNV-1a of the canonical pipeline config
  std::vector<double> repetition_fps;
};

std::string config_fingerprint(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

// One warm-up pass over the frames, then `repetitions` timed passes; reports
// the median pass. Throws InvalidArgument when repetitions < 3.
FpsReport bench_fps(const PipelineConfig& cfg, const Models& models, std::span<const Frame> frames,
                    int repetitions);

std::string to_json(const FpsReport& report);

}  // namespace virtview
