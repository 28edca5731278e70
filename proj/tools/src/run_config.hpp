#pragma once

#include <cstdint>
#include <string>

#include "virtview/confidence.hpp"
#include "virtview/estimator.hpp"
#include "virtview/fusion.hpp"
#include "virtview/synthdata.hpp"

namespace virtview::cli {

// Everything a command needs. Loaded from one JSON file; flags override it.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 0;  // 0: VIRTVIEW_THREADS or the logical core count

  std::string dataset = "data/synth.vvds";
  std::string checkpoints = "checkpoints";
  std::string reports = "reports";

  // synth
  std::size_t frames = 200;
  Intrinsics camera;
  bool augment = false;
  AugmentConfig augmentation;

  PipelineConfig pipeline;

  // "oracle" (ground truth + occlusion noise) or "a2j" (trained anchor regressor)
  std::string estimator = "oracle";
  OracleNoiseModel oracle;
  A2JConfig a2j;

  EstimatorSchedule estimator_schedule;
  TrainConfig teacher_training;
  TrainConfig student_training;
  TeacherConfig teacher;  // input shape is derived from the estimator
  StudentConfig student;  // output size is derived from the grid

  int repetitions = 5;
  std::size_t bench_frames = 20;

  int resolved_threads() const;
  // Throws ConfigError / BadN / InvalidRange before any work starts.
  void validate() const;
};

RunConfig from_json_text(const std::string& text);
std::string to_json_text(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// Teacher/student configs with the derived fields filled in.
TeacherConfig teacher_config_for(const RunConfig& cfg);
StudentConfig student_config_for(const RunConfig& cfg);

}  // namespace virtview::cli
