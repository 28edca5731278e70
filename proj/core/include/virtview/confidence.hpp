#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "virtview/estimator.hpp"
#include "virtview/geometry.hpp"
#include "virtview/nn.hpp"
#include "virtview/render.hpp"
#include "virtview/training_log.hpp"

namespace virtview {

// ---------------------------------------------------------------------------
// Teacher: per-view conv encoder -> single-head attention across views ->
// per-view scalar.

struct TeacherConfig {
  int in_channels = 32;
  int in_height = 22;
  int in_width = 22;
  std::array<int, 3> channels = {64, 128, 256};  // 3x3, stride 2, pad 1 each
  int key_dim = 64;    // d_q = d_k
  int value_dim = 64;  // d_v
  int heads = 1;

  int feature_dim() const { return channels[2]; }
  void validate() const;
  bool operator==(const TeacherConfig&) const = default;
};

struct TeacherParams {
  TeacherConfig config;
  nn::ParamSet tensors;
  std::uint64_t rng_seed = 0;

  static TeacherParams initialize(const TeacherConfig& config, std::uint64_t seed);
};

struct AttentionResult {
  nn::Matrix queries;  // M x d_k
  nn::Matrix keys;     // M x d_k
  nn::Matrix values;   // M x d_v
  nn::Matrix weights;  // M x M, rows sum to 1
  nn::Matrix output;   // M x d_v
};

// softmax(Q K^T / sqrt(d_k)) V with Q = H Wq^T, K = H Wk^T, V = H Wv^T; rows of H are views.
AttentionResult attention(const nn::Matrix& h, const nn::Matrix& wq, const nn::Matrix& wk,
                          const nn::Matrix& wv);

struct TeacherTrace {
  std::vector<std::vector<nn::FeatureMap>> encoder;  // per view: input + 3 conv outputs
  nn::Matrix encoded;  // M x 256
  AttentionResult attn;
  nn::Matrix fused;    // M x 256
};

std::vector<double> teacher_confidence(std::span<const nn::FeatureMap> features,
                                       const TeacherParams& params, TeacherTrace* trace = nullptr);

// Accumulates parameter gradients for dL/d(raw scores); returns dL/d(features)
// when need_input_grad, otherwise an empty vector.
std::vector<nn::FeatureMap> teacher_backward(const TeacherParams& params, const TeacherTrace& trace,
                                             std::span<const double> d_scores,
                                             nn::ParamSet& grads, bool need_input_grad);

// ---------------------------------------------------------------------------
// Student: original crop -> pooled conv stack -> fully connected -> M scores.

struct StudentConfig {
  int crop_size = 176;
  int pool = 4;
  std::vector<int> channels = {8, 16, 32, 32};
  int views = 25;

  int pooled_side() const { return crop_size / pool; }
  int flat_dim() const;
  void validate() const;
  bool operator==(const StudentConfig&) const = default;
};

struct StudentParams {
  StudentConfig config;
  nn::ParamSet tensors;
  std::uint64_t rng_seed = 0;

  static StudentParams initialize(const StudentConfig& config, std::uint64_t seed);
};

struct StudentTrace {
  std::vector<nn::FeatureMap> layers;  // [0] = pooled input
};

nn::FeatureMap student_input(const NormalizedCrop& crop, const StudentConfig& config);
std::vector<double> student_confidence(const NormalizedCrop& crop, const StudentParams& params);
std::vector<double> student_forward(const nn::FeatureMap& pooled, const StudentParams& params,
                                    StudentTrace* trace = nullptr);
void student_backward(const StudentParams& params, const StudentTrace& trace,
                      std::span<const double> d_scores, nn::ParamSet& grads);

// ---------------------------------------------------------------------------
// Selection and losses.

struct ConfidenceVector {
  std::vector<double> raw;        // M scores
  std::vector<int> selected_ids;  // in descending score order
  std::vector<double> weights;    // softmax over the selected raw scores
};

// Top-n by raw score (ties -> smaller id). Throws BadN.
ConfidenceVector softmax_select(std::span<const double> raw, int n);
// Selection restricted to a fixed id list, weights = softmax over their raw scores.
ConfidenceVector softmax_over(std::span<const double> raw, std::span<const int> ids);
ConfidenceVector uniform_confidence(int m, std::span<const int> ids);

struct TrainConfig {
  double gamma = 0.1;
  double lambda = 3.0;
  double beta = 100.0;
  double lr = 1e-3;
  double decay = 0.9;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 0;
  bool freeze_estimator = false;

  void validate() const;
};

// sum_k smooth_l1(||fused_k - gt_k||). Throws FrameMismatch.
double fusion_loss(const HandPose& fused, const HandPose& gt);
// mean(per-view L_A2J) + gamma * L_J
double joint_loss(std::span<const double> a2j_terms, double fused_loss, const TrainConfig& cfg);
// sum_i smooth_l1(beta * (student_i - teacher_i)). Throws LengthMismatch.
double distill_loss(std::span<const double> student_raw, std::span<const double> teacher_post,
                    double beta = 100.0);
std::vector<double> distill_loss_grad(std::span<const double> student_raw,
                                      std::span<const double> teacher_post, double beta = 100.0);

// ---------------------------------------------------------------------------
// Training data: one frame seen from M virtual views.

// Re-renders the frame's cloud on demand so multi-view crops need not be stored.
struct CropSource {
  PointCloud cloud;
  Vec3 center_mm = Vec3::Zero();
  Intrinsics intrinsics;
  RenderConfig render;
  CropConfig crop;

  NormalizedCrop crop_for(const VirtualView& view) const;
};

struct MultiViewSample {
  VirtualViewSet views;
  HandPose gt;  // original frame
  // Per-view outputs of a non-trainable estimator (e.g. the oracle); empty
  // when the anchor regressor is evaluated from `source`.
  std::vector<EstimatorOutput> fixed_outputs;
  std::shared_ptr<const CropSource> source;
  NormalizedCrop original_crop;  // student input
};

struct ViewSelectionLoss {
  double a2j = 0.0;      // mean over views
  double fusion = 0.0;   // L_J
  double total = 0.0;    // a2j + gamma * fusion
};

// Forward pass of the joint objective with softmax over all M views.
ViewSelectionLoss view_selection_loss(const MultiViewSample& sample, const EstimatorParams* estimator,
                                      const TeacherParams& teacher, const TrainConfig& cfg);

// Gradients of view_selection_loss. estimator_grads may be null (frozen estimator).
ViewSelectionLoss view_selection_backward(const MultiViewSample& sample,
                                          const EstimatorParams* estimator,
                                          const TeacherParams& teacher, const TrainConfig& cfg,
                                          nn::ParamSet* estimator_grads, nn::ParamSet& teacher_grads,
                                          double scale = 1.0);

// Jointly optimises L_viewsel. Samples with fixed_outputs leave the estimator untouched.
std::pair<EstimatorParams, TeacherParams> train_teacher_joint(
    std::span<const MultiViewSample> data, EstimatorParams estimator, TeacherParams teacher,
    const TrainConfig& cfg, TrainingLog* log = nullptr);

// Teacher post-softmax over all M views for one sample.
std::vector<double> teacher_targets(const MultiViewSample& sample, const EstimatorParams* estimator,
                                    const TeacherParams& teacher);

StudentParams train_student(std::span<const MultiViewSample> data,
                            const TeacherParams& frozen_teacher,
                            const EstimatorParams* frozen_estimator, StudentParams student,
                            const TrainConfig& cfg, TrainingLog* log = nullptr);

// Same, with precomputed teacher targets.
StudentParams train_student_on_targets(std::span<const NormalizedCrop> crops,
                                       std::span<const std::vector<double>> targets,
                                       StudentParams student, const TrainConfig& cfg,
                                       TrainingLog* log = nullptr);

}  // namespace virtview
