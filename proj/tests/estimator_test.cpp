#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "virtview/error.hpp"
#include "virtview/estimator.hpp"
#include "virtview/synthdata.hpp"

using namespace virtview;
using virtview::testing::check_gradient;

namespace {

A2JConfig small_config() {
  A2JConfig c;
  c.crop_size = 32;
  c.channels = {4, 6};
  c.joints = 14;
  c.feature_tap = 1;
  return c;
}

const Frame& frame() {
  static const Frame f = generate_dataset(SynthHandSpec::default_hand(), 1, 77).frames[0];
  return f;
}

NormalizedCrop small_crop() {
  CropConfig cfg;
  cfg.crop_size = 32;
  return crop_hand(frame().depth, frame().centroid_mm, cfg);
}

double reference_softmax_weight(const nn::Matrix& logits, int k, int a) {
  double mx = logits.row(k).maxCoeff(), sum = 0.0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) sum += std::exp(logits(k, i) - mx);
  return std::exp(logits(k, a) - mx) / sum;
}

}  // namespace

TEST(AnchorGrid, DefaultLayout) {
  const AnchorGrid g = AnchorGrid::make(176, 16);
  EXPECT_EQ(g.size(), 121);
  EXPECT_EQ(g.anchors.front(), Eigen::Vector2d(7.5, 7.5));
  EXPECT_EQ(g.anchors.back(), Eigen::Vector2d(167.5, 167.5));
}

TEST(Estimate, DefaultShapes) {
  const EstimatorParams p = EstimatorParams::initialize(A2JConfig{}, 1);
  CropConfig cc;
  const EstimatorOutput out = estimate(crop_hand(frame().depth, frame().centroid_mm, cc), p);
  EXPECT_EQ(out.pose.joint_count(), 14);
  EXPECT_EQ(out.per_anchor.weights.cols(), 121);
  EXPECT_EQ(out.feature.channels, 32);
  EXPECT_EQ(out.feature.height, 22);
  EXPECT_EQ(out.feature.width, 22);
}

TEST(Estimate, WrongCropSize) {
  const EstimatorParams p = EstimatorParams::initialize(small_config(), 1);
  CropConfig cc;
  const NormalizedCrop c = crop_hand(frame().depth, frame().centroid_mm, cc);
  try {
    estimate(c, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Estimate, UniformVoteGivesAnchorCentroid) {
  EstimatorParams p = EstimatorParams::initialize(small_config(), 2);
  for (const char* h : {"head.logits", "head.offset_u", "head.offset_v"}) {
    p.tensors.get(std::string(h) + ".weight").setZero();
    p.tensors.get(std::string(h) + ".bias").setZero();
  }
  const EstimatorOutput out = estimate(small_crop(), p);
  const AnchorGrid g = AnchorGrid::make(32, 4);
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& a : g.anchors) mean += a;
  mean /= g.size();
  for (const auto& j : out.in_plane) EXPECT_LT((j - mean).norm(), 1e-12);
}

TEST(Estimate, DominantAnchorWins) {
  EstimatorParams p = EstimatorParams::initialize(small_config(), 3);
  p.tensors.get("head.logits.weight") *= 1e4;
  p.tensors.get("head.logits.bias") *= 1e4;
  const EstimatorOutput hard = estimate(small_crop(), p);
  const AnchorGrid g = AnchorGrid::make(32, 4);
  int decided = 0;
  for (int k = 0; k < 14; ++k) {
    Eigen::Index best = 0;
    const double top = hard.per_anchor.logits.row(k).maxCoeff(&best);
    double runner_up = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < g.size(); ++a) {
      if (a != best) runner_up = std::max(runner_up, hard.per_anchor.logits(k, a));
    }
    if (top - runner_up < 30.0) continue;
    ++decided;
    const Eigen::Vector2d expect =
        g.anchors[static_cast<std::size_t>(best)] +
        Eigen::Vector2d(hard.per_anchor.offset_u(k, best), hard.per_anchor.offset_v(k, best));
    EXPECT_LT((hard.in_plane[static_cast<std::size_t>(k)] - expect).norm(), 1e-6);
  }
  EXPECT_GT(decided, 0);
}

TEST(Estimate, VoteMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EstimatorParams p = EstimatorParams::initialize(small_config(), seed);
    const NormalizedCrop crop = small_crop();
    const EstimatorOutput out = estimate(crop, p);
    const AnchorGrid g = AnchorGrid::make(32, 4);
    const auto& r = out.per_anchor;
    for (int k = 0; k < 14; ++k) {
      double u = 0, v = 0, dz = 0;
      for (int a = 0; a < g.size(); ++a) {
        const double w = reference_softmax_weight(r.logits, k, a);
        u += w * (g.anchors[static_cast<std::size_t>(a)].x() + r.offset_u(k, a));
        v += w * (g.anchors[static_cast<std::size_t>(a)].y() + r.offset_v(k, a));
        dz += w * r.depth(k, a);
      }
      const double z = crop.center_mm.z() + dz;
      const double iu = crop.window.u0 + (u + 0.5) * crop.window.scale_u;
      const double iv = crop.window.v0 + (v + 0.5) * crop.window.scale_v;
      const Vec3 expect((iu - crop.intrinsics.cx) * z / crop.intrinsics.fx,
                        (iv - crop.intrinsics.cy) * z / crop.intrinsics.fy, z);
      EXPECT_LT((out.pose.joints[static_cast<std::size_t>(k)] - expect).norm(), 1e-9);
    }
  }
}

TEST(A2JLoss, UnitValues) {
  EstimatorOutput out;
  out.intrinsics = Intrinsics{100, 100, 0, 0, 10, 10};
  out.window = CropWindow{};
  out.per_anchor.weights = nn::Matrix::Ones(1, 1);
  out.pose.joints = {Vec3(1.5, 0, 100)};
  out.barycenter = {{0.5, -0.5}};
  HandPose gt{{Vec3(0, 0, 100)}, kOriginalFrame};
  const A2JLossTerms t = a2j_loss_terms(out, gt, 3.0);
  EXPECT_EQ(t.objective, 1.0);
  EXPECT_EQ(t.informative, 0.5);
  EXPECT_EQ(t.total, 3.5);

  out.pose.joints = {Vec3(0.5, 0, 100)};
  out.barycenter = {{-0.5, -0.5}};
  EXPECT_EQ(a2j_loss(out, gt, 3.0), 0.375);

  out.pose.joints = gt.joints;
  EXPECT_EQ(a2j_loss(out, gt, 3.0), 0.0);

  gt.frame_id = "view:3";
  EXPECT_THROW(a2j_loss(out, gt), Error);
}

TEST(A2JLoss, GradientMatchesFiniteDifference) {
  const NormalizedCrop crop = small_crop();
  const HandPose& gt = frame().gt;
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EstimatorParams p = EstimatorParams::initialize(small_config(), 100 + seed);
    const nn::FeatureMap probe = virtview::testing::random_map(4, 16, 16, rng, 0.01);
    auto loss = [&] {
      const EstimatorOutput out = estimate(crop, p);
      return a2j_loss(out, gt) + (out.feature.data.array() * probe.data.array()).sum();
    };
    A2JTrace trace;
    const EstimatorOutput out = estimate(crop, p, &trace);
    nn::ParamSet grads = p.tensors.zeros_like();
    estimate_backward(p, trace, out, a2j_loss_grad(out, gt, 3.0), &probe, grads);
    const auto c = check_gradient(p.tensors, grads, loss, 40, seed);
    EXPECT_LT(c.worst, 1e-4) << "seed " << seed;
    EXPECT_GE(c.checked, 20u) << "seed " << seed;
  }
}

TEST(TrainEstimator, OverfitsOneSample) {
  const EstimatorSample s{small_crop(), frame().gt};
  EstimatorSchedule sched;
  sched.epochs = 200;
  sched.batch_size = 1;
  const EstimatorParams init = EstimatorParams::initialize(small_config(), 4);
  const double before = mean_a2j_loss({&s, 1}, init);
  TrainingLog log;
  const EstimatorParams trained = train_estimator({&s, 1}, init, sched, &log);
  EXPECT_LT(mean_a2j_loss({&s, 1}, trained), before);
  ASSERT_EQ(log.records.size(), 200u);
  for (int e = 0; e < 200; ++e) {
    EXPECT_NEAR(log.records[static_cast<std::size_t>(e)].lr, 1e-3 * std::pow(0.9, e), 1e-15);
  }
}

TEST(TrainEstimator, EmptyDataset) {
  try {
    train_estimator({}, EstimatorParams::initialize(small_config(), 4), EstimatorSchedule{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Oracle, NoiselessIsExactTransform) {
  const Frame& f = frame();
  const VirtualViewSet views = sample_virtual_views(f.centroid_mm, 5, 5);
  const PointCloud cloud = unproject(f.depth);
  const OracleNoiseModel noise{0.0, 0.0, 1};
  for (int id : {0, 12, 19}) {
    const EstimatorOutput out =
        oracle_estimate(f.gt, views[id], cloud, f.depth.intrinsics, RenderConfig{}, noise);
    const HandPose expect = transform_pose(f.gt, views[id].from_original, views[id].frame_id);
    EXPECT_EQ(out.pose.joints, expect.joints);
    EXPECT_EQ(out.pose.frame_id, views[id].frame_id);
    EXPECT_EQ(out.feature.channels, kOracleFeatureChannels);
  }
}

TEST(Oracle, VisibleJointSigma) {
  VirtualView view;
  view.frame_id = "view:0";
  DepthImage empty(Intrinsics{}, "view:0");
  const HandPose gt{{Vec3(0, 0, 400)}, kOriginalFrame};
  double sum = 0, sq = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const OracleNoiseModel noise{2.0, 8.0, static_cast<std::uint64_t>(i)};
    const double x = oracle_estimate(gt, view, empty, noise).pose.joints[0].x();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sigma = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sigma, 2.0, 0.2);
}

TEST(Oracle, OccludedJointHasLargerError) {
  VirtualView view;
  view.frame_id = "view:0";
  DepthImage clear(Intrinsics{}, "view:0");
  DepthImage blocked = clear;
  for (double& v : blocked.values) v = 300.0;
  const HandPose gt{{Vec3(0, 0, 400)}, kOriginalFrame};
  const OracleNoiseModel base{2.0, 8.0, 0};
  EXPECT_EQ(joint_occlusion(gt, clear, base)[0], 0.0);
  EXPECT_EQ(joint_occlusion(gt, blocked, base)[0], 1.0);
  double e_clear = 0, e_blocked = 0;
  for (int i = 0; i < 2000; ++i) {
    OracleNoiseModel noise = base;
    noise.rng_seed = static_cast<std::uint64_t>(i);
    e_clear += (oracle_estimate(gt, view, clear, noise).pose.joints[0] - gt.joints[0]).norm();
    e_blocked += (oracle_estimate(gt, view, blocked, noise).pose.joints[0] - gt.joints[0]).norm();
  }
  EXPECT_GT(e_blocked, e_clear);
}
