#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "virtview/geometry.hpp"
#include "virtview/nn.hpp"
#include "virtview/render.hpp"
#include "virtview/training_log.hpp"

namespace virtview {

// Anchors at the centres of stride x stride blocks covering the crop.
struct AnchorGrid {
  int crop_size = 176;
  int stride = 16;
  int per_side = 0;
  std::vector<Eigen::Vector2d> anchors;  // crop pixel coordinates, row-major

  static AnchorGrid make(int crop_size, int stride);
  int size() const { return static_cast<int>(anchors.size()); }
};

struct A2JConfig {
  int crop_size = 176;
  std::vector<int> channels = {8, 16, 32, 32};  // one stride-2 conv layer each
  int joints = kDefaultJointCount;
  int feature_tap = 3;  // 1-based backbone layer handed to the confidence network
  double offset_scale_px = 16.0;
  double depth_scale_mm = 150.0;

  int layers() const { return static_cast<int>(channels.size()); }
  int stride() const { return 1 << layers(); }
  int side_after(int layer) const;  // spatial size after `layer` conv layers
  void validate() const;
  bool operator==(const A2JConfig&) const = default;
};

struct EstimatorParams {
  A2JConfig config;
  nn::ParamSet tensors;
  std::uint64_t rng_seed = 0;

  static EstimatorParams initialize(const A2JConfig& config, std::uint64_t seed);
};

struct AnchorResponses {
  nn::Matrix logits;    // K x A
  nn::Matrix weights;   // softmax over anchors, per joint
  nn::Matrix offset_u;  // crop pixels
  nn::Matrix offset_v;
  nn::Matrix depth;     // mm relative to the crop centre depth
};

struct EstimatorOutput {
  HandPose pose;             // view camera frame, mm
  nn::FeatureMap feature;    // input to the confidence network
  AnchorResponses per_anchor;  // empty for estimators without anchors
  std::vector<Eigen::Vector2d> barycenter;  // anchor-weight barycentre per joint, crop px
  std::vector<Eigen::Vector2d> in_plane;    // predicted joint position per joint, crop px
  CropWindow window;
  Intrinsics intrinsics;
  Vec3 crop_center = Vec3::Zero();

  bool has_anchor_terms() const { return per_anchor.weights.size() > 0; }
};

// Activations retained by estimate() for backpropagation.
struct A2JTrace {
  std::vector<nn::FeatureMap> layers;  // [0] = input, [i] = output of conv layer i (post-ReLU)
};

EstimatorOutput estimate(const NormalizedCrop& crop, const EstimatorParams& params,
                         A2JTrace* trace = nullptr);

struct A2JLossTerms {
  double objective = 0.0;    // sum_k smooth_l1(||pose_k - gt_k||), mm
  double informative = 0.0;  // sum_k smooth_l1(||barycentre_k - gt_k||), crop px
  double total = 0.0;        // lambda * objective + informative
};

// Ground truth must be in the output's frame. Throws FrameMismatch.
A2JLossTerms a2j_loss_terms(const EstimatorOutput& out, const HandPose& gt, double lambda = 3.0);
double a2j_loss(const EstimatorOutput& out, const HandPose& gt, double lambda = 3.0);

// dL/d(outputs) of an estimator.
struct OutputGrad {
  nn::Matrix pose;        // K x 3
  nn::Matrix barycenter;  // K x 2 (crop px)
};

OutputGrad a2j_loss_grad(const EstimatorOutput& out, const HandPose& gt, double lambda,
                         double scale = 1.0);

// Accumulates parameter gradients. `feature_grad` (may be null) is dL/d(feature).
void estimate_backward(const EstimatorParams& params, const A2JTrace& trace,
                       const EstimatorOutput& out, const OutputGrad& grad,
                       const nn::FeatureMap* feature_grad, nn::ParamSet& grads);

struct EstimatorSample {
  NormalizedCrop crop;
  HandPose gt;  // same frame as the crop
};

struct EstimatorSchedule {
  int epochs = 10;
  double lr = 1e-3;
  double decay = 0.9;
  double lambda = 3.0;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

double mean_a2j_loss(std::span<const EstimatorSample> data, const EstimatorParams& params,
                     double lambda = 3.0);

// Adam with lr * decay^epoch. Throws EmptyDataset, NonFiniteLoss.
EstimatorParams train_estimator(std::span<const EstimatorSample> data, EstimatorParams params,
                                const EstimatorSchedule& schedule, TrainingLog* log = nullptr);

// ---------------------------------------------------------------------------
// Oracle estimator: ground truth plus occlusion-dependent Gaussian noise.

struct OracleNoiseModel {
  double base_sigma_mm = 2.0;
  double occlusion_gain_mm = 8.0;
  std::uint64_t rng_seed = 0;
  // A window pixel occludes a joint when its rendered depth is more than this
  // much in front of the joint.
  double occlusion_margin_mm = 20.0;
  int occlusion_window_px = 2;  // Chebyshev radius around the joint projection

  void validate() const;
  bool operator==(const OracleNoiseModel&) const = default;
};

inline constexpr int kOracleFeatureChannels = 8;
inline constexpr int kOracleFeatureSide = 4;

// Fraction of the window around each joint's projection covered by geometry in front of it.
std::vector<double> joint_occlusion(const HandPose& joints_in_view, const DepthImage& rendered,
                                    const OracleNoiseModel& noise);

// `gt` is in the original frame; `rendered` is the view's depth map.
EstimatorOutput oracle_estimate(const HandPose& gt, const VirtualView& view,
                                const DepthImage& rendered, const OracleNoiseModel& noise);
EstimatorOutput oracle_estimate(const HandPose& gt, const VirtualView& view,
                                const PointCloud& cloud, const Intrinsics& intr,
                                const RenderConfig& cfg, const OracleNoiseModel& noise);

// ---------------------------------------------------------------------------
// Per-view estimator interface used by the pipeline.

struct ViewContext {
  const VirtualView* view = nullptr;
  const DepthImage* rendered = nullptr;
  const NormalizedCrop* crop = nullptr;      // set when needs_crop()
  const HandPose* ground_truth = nullptr;    // original frame; set when needs_ground_truth()
  std::uint64_t frame_seed = 0;
};

class ViewEstimator {
 public:
  virtual ~ViewEstimator() = default;
  virtual EstimatorOutput estimate(const ViewContext& ctx) const = 0;
  virtual bool needs_crop() const = 0;
  virtual bool needs_ground_truth() const = 0;
  virtual std::string_view name() const = 0;
};

class AnchorEstimator final : public ViewEstimator {
 public:
  explicit AnchorEstimator(EstimatorParams params) : params_(std::move(params)) {}
  EstimatorOutput estimate(const ViewContext& ctx) const override;
  bool needs_crop() const override { return true; }
  bool needs_ground_truth() const override { return false; }
  std::string_view name() const override { return "a2j"; }
  const EstimatorParams& params() const { return params_; }

 private:
  EstimatorParams params_;
};

class OracleEstimator final : public ViewEstimator {
 public:
  explicit OracleEstimator(OracleNoiseModel noise) : noise_(noise) {}
  // Noise stream is derived from (noise.rng_seed, frame_seed, view id).
  EstimatorOutput estimate(const ViewContext& ctx) const override;
  bool needs_crop() const override { return false; }
  bool needs_ground_truth() const override { return true; }
  std::string_view name() const override { return "oracle"; }
  const OracleNoiseModel& noise() const { return noise_; }

 private:
  OracleNoiseModel noise_;
};

}  // namespace virtview
