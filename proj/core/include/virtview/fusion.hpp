#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "virtview/confidence.hpp"
#include "virtview/estimator.hpp"
#include "virtview/geometry.hpp"
#include "virtview/render.hpp"
#include "virtview/synthdata.hpp"

namespace virtview {

// Each view pose is mapped to the original frame with its view's to_original
// and the results are summed with conf.weights. Throws FrameMismatch, LengthMismatch.
HandPose fuse_poses(std::span<const HandPose> poses, const ConfidenceVector& conf,
                    const VirtualViewSet& views);
// fuse_poses with weights 1/n; poses[i] belongs to views[ids[i]].
HandPose average_fuse(std::span<const HandPose> poses, std::span<const int> ids,
                      const VirtualViewSet& views);

// n cameras with zenith and azimuth drawn i.i.d. uniform in the ranges, ids 0..n-1.
VirtualViewSet random_views(const Vec3& center_mm, double radius_mm, AngleRange zenith_range,
                            AngleRange azimuth_range, int n, std::uint64_t seed);

enum class SelectionMode { Uniform, SelectTeacher, SelectLight, Random };
enum class FusionKind { Weighted, Average };

std::string_view to_string(SelectionMode mode);
std::string_view to_string(FusionKind kind);
// Throws ConfigError on unknown names.
SelectionMode parse_selection_mode(std::string_view name);
FusionKind parse_fusion_kind(std::string_view name);

struct PipelineConfig {
  int grid_rows = 5;
  int grid_cols = 5;
  int num_selected = 3;  // N
  SelectionMode mode = SelectionMode::Uniform;
  // Defaults to Weighted for the selection modes and Average otherwise.
  std::optional<FusionKind> fusion;
  AngleRange zenith_range;
  AngleRange azimuth_range;
  RenderConfig render;
  CropConfig crop;
  std::optional<SubsetMasks> masks;
  std::uint64_t seed = 0;
  int threads = 1;

  int view_count() const { return grid_rows * grid_cols; }  // M
  FusionKind fusion_kind() const;
  // Throws BadN / InvalidRange / InvalidArgument.
  void validate() const;
};

struct Models {
  const ViewEstimator* estimator = nullptr;
  const TeacherParams* teacher = nullptr;  // select_teacher
  const StudentParams* student = nullptr;  // select_light
};

struct FrameInput {
  const DepthImage* depth = nullptr;
  std::optional<Vec3> center_mm;  // defaults to the centroid of the unprojected depth
  const HandPose* ground_truth = nullptr;  // needed by the oracle estimator only
  std::uint64_t frame_seed = 0;
  Vec3 view_jitter = Vec3::Zero();
};

FrameInput frame_input(const Frame& frame);

// Wall time per stage, seconds.
struct StageTimes {
  double prepare = 0.0;     // unproject + view sampling + original crop
  double render = 0.0;
  double estimate = 0.0;    // crop + per-view estimator
  double confidence = 0.0;  // teacher or student
  double fuse = 0.0;
  double total = 0.0;

  StageTimes& operator+=(const StageTimes& o);
};

struct InferResult {
  HandPose pose;  // original frame
  ConfidenceVector confidence;
  std::vector<int> evaluated_ids;  // views rendered and estimated, ascending
  StageTimes times;
  int render_calls = 0;
  int estimate_calls = 0;
};

InferResult infer(const FrameInput& input, const PipelineConfig& cfg, const Models& models);

std::vector<HandPose> infer_all(std::span<const Frame> frames, const PipelineConfig& cfg,
                                const Models& models);

// Multi-view training sample of a frame. With an oracle estimator the per-view
// outputs are computed once; otherwise crops are re-rendered on demand.
MultiViewSample make_training_sample(const Frame& frame, const PipelineConfig& cfg,
                                     const ViewEstimator& estimator);

}  // namespace virtview
