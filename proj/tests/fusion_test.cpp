#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "virtview/error.hpp"
#include "virtview/fusion.hpp"
#include "virtview/synthdata.hpp"

using namespace virtview;

namespace {

const Dataset& frames() {
  static const Dataset ds = generate_dataset(SynthHandSpec::default_hand(), 4, 55);
  return ds;
}

TeacherConfig oracle_teacher() {
  TeacherConfig c;
  c.in_channels = kOracleFeatureChannels;
  c.in_height = c.in_width = kOracleFeatureSide;
  return c;
}

}  // namespace

TEST(FusePoses, SingletonIdentity) {
  const VirtualViewSet set = sample_virtual_views(Vec3(0, 0, 400), 1, 1);
  const HandPose p{{Vec3(1, 2, 3), Vec3(-4, 5, 6)}, set[0].frame_id};
  const HandPose fused = fuse_poses({&p, 1}, uniform_confidence(1, std::vector<int>{0}), set);
  EXPECT_EQ(fused.frame_id, kOriginalFrame);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_LT((fused.joints[j] - p.joints[j]).norm(), 1e-12);
}

TEST(FusePoses, HandComputedTwoViews) {
  VirtualViewSet set;
  set.views.resize(2);
  set.views[0].id = 0;
  set.views[0].frame_id = "a";
  set.views[1].id = 1;
  set.views[1].frame_id = "b";
  set.views[1].to_original.rotation << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  set.views[1].to_original.translation = Vec3(1, 2, 3);
  set.views[1].from_original = invert(set.views[1].to_original);
  const std::vector<HandPose> poses{{{Vec3(10, 0, 0)}, "a"}, {{Vec3(0, 0, 5)}, "b"}};
  ConfidenceVector c;
  c.raw = {0.0, 0.0};
  c.selected_ids = {0, 1};
  c.weights = {0.5, 0.5};
  const HandPose fused = fuse_poses(poses, c, set);
  EXPECT_LT((fused.joints[0] - Vec3(5.5, 1.0, 4.0)).norm(), 1e-12);
}

TEST(FusePoses, NoiselessViewsRecoverGroundTruthForAnyWeights) {
  const Frame& f = frames().frames[0];
  const VirtualViewSet set = sample_virtual_views(f.centroid_mm, 5, 5);
  std::vector<HandPose> poses;
  std::vector<int> ids;
  for (const VirtualView& v : set.views) {
    poses.push_back(transform_pose(f.gt, v.from_original, v.frame_id));
    ids.push_back(v.id);
  }
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 50; ++trial) {
    ConfidenceVector c;
    c.selected_ids = ids;
    double sum = 0.0;
    for (int i = 0; i < 25; ++i) sum += c.weights.emplace_back(e(rng));
    for (double& w : c.weights) w /= sum;
    const HandPose fused = fuse_poses(poses, c, set);
    for (std::size_t j = 0; j < f.gt.joints.size(); ++j) EXPECT_LT((fused.joints[j] - f.gt.joints[j]).norm(), 1e-9);
  }
}

TEST(FusePoses, Mismatches) {
  const VirtualViewSet set = sample_virtual_views(Vec3(0, 0, 400), 5, 5);
  const std::vector<HandPose> poses{{{Vec3(0, 0, 0)}, "view:0"}};
  try {
    fuse_poses(poses, uniform_confidence(25, std::vector<int>{0, 1}), set);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  try {
    fuse_poses(poses, uniform_confidence(25, std::vector<int>{3}), set);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FrameMismatch);
  }
}

TEST(AverageFuse, EqualsUniformWeightsAndCancels) {
  const VirtualViewSet set = sample_virtual_views(Vec3(0, 0, 400), 5, 5);
  const std::vector<int> ids{12, 7};
  const Vec3 truth(3, 4, 400), err(1.5, -2.0, 0.5);
  std::vector<HandPose> poses;
  poses.push_back(transform_pose(HandPose{{truth + err}, kOriginalFrame}, set[12].from_original, set[12].frame_id));
  poses.push_back(transform_pose(HandPose{{truth - err}, kOriginalFrame}, set[7].from_original, set[7].frame_id));
  const HandPose avg = average_fuse(poses, ids, set);
  const HandPose uni = fuse_poses(poses, uniform_confidence(25, ids), set);
  EXPECT_LT((avg.joints[0] - uni.joints[0]).norm(), 1e-12);
  EXPECT_LT((avg.joints[0] - truth).norm(), 1e-9);
}

TEST(RandomViews, DeterministicAndInRange) {
  const AngleRange r;
  const VirtualViewSet a = random_views(Vec3(0, 0, 400), 400, r, r, 5, 9);
  const VirtualViewSet b = random_views(Vec3(0, 0, 400), 400, r, r, 5, 9);
  ASSERT_EQ(a.size(), 5);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].zenith, b[i].zenith);
    EXPECT_EQ(a[i].azimuth, b[i].azimuth);
    EXPECT_EQ(a[i].id, i);
  }
  const VirtualViewSet many = random_views(Vec3(0, 0, 400), 400, r, r, 10000, 10);
  double zs = 0, as = 0;
  for (const VirtualView& v : many.views) {
    EXPECT_GE(v.zenith, r.min);
    EXPECT_LE(v.zenith, r.max);
    EXPECT_GE(v.azimuth, r.min);
    EXPECT_LE(v.azimuth, r.max);
    zs += v.zenith;
    as += v.azimuth;
  }
  EXPECT_LT(std::abs(zs / 10000), 0.02);
  EXPECT_LT(std::abs(as / 10000), 0.02);
}

TEST(Names, RoundTrip) {
  for (SelectionMode m : {SelectionMode::Uniform, SelectionMode::SelectTeacher, SelectionMode::SelectLight,
                          SelectionMode::Random}) {
    EXPECT_EQ(parse_selection_mode(to_string(m)), m);
  }
  EXPECT_EQ(parse_fusion_kind("average"), FusionKind::Average);
  EXPECT_EQ(parse_fusion_kind("weighted"), FusionKind::Weighted);
  EXPECT_THROW(parse_selection_mode("best"), Error);
  EXPECT_THROW(parse_fusion_kind("max"), Error);
}

TEST(PipelineConfig, Validation) {
  PipelineConfig p;
  p.validate();
  EXPECT_EQ(p.fusion_kind(), FusionKind::Average);
  p.mode = SelectionMode::SelectTeacher;
  EXPECT_EQ(p.fusion_kind(), FusionKind::Weighted);
  p.num_selected = 26;
  try {
    p.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadN);
  }
}

TEST(Infer, UniformSingleViewIsTheCentre) {
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  PipelineConfig p;
  p.num_selected = 1;
  const InferResult r = infer(frame_input(frames().frames[0]), p, {&oracle});
  EXPECT_EQ(r.evaluated_ids, std::vector<int>{12});
  EXPECT_EQ(r.render_calls, 1);
  EXPECT_EQ(r.estimate_calls, 1);
}

TEST(Infer, LightModeEvaluatesOnlySelectedViews) {
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  const StudentParams s = StudentParams::initialize(StudentConfig{}, 3);
  PipelineConfig p;
  p.mode = SelectionMode::SelectLight;
  p.num_selected = 3;
  const InferResult r = infer(frame_input(frames().frames[1]), p, {&oracle, nullptr, &s});
  EXPECT_EQ(r.render_calls, 3);
  EXPECT_EQ(r.estimate_calls, 3);
  EXPECT_EQ(r.confidence.selected_ids.size(), 3u);
}

TEST(Infer, TeacherModeEvaluatesAllViews) {
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  const TeacherParams t = TeacherParams::initialize(oracle_teacher(), 3);
  PipelineConfig p;
  p.mode = SelectionMode::SelectTeacher;
  const InferResult r = infer(frame_input(frames().frames[1]), p, {&oracle, &t});
  EXPECT_EQ(r.render_calls, 25);
  EXPECT_EQ(r.confidence.selected_ids.size(), 3u);
  double sum = 0;
  for (double w : r.confidence.weights) sum += w;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Infer, NoiselessOracleRecoversGroundTruth) {
  const OracleEstimator oracle(OracleNoiseModel{0.0, 0.0, 1});
  for (int n : {1, 3, 9, 15, 25}) {
    PipelineConfig p;
    p.num_selected = n;
    const Frame& f = frames().frames[2];
    const InferResult r = infer(frame_input(f), p, {&oracle});
    for (std::size_t j = 0; j < f.gt.joints.size(); ++j) EXPECT_LT((r.pose.joints[j] - f.gt.joints[j]).norm(), 1e-9);
  }
}

TEST(Infer, MissingModels) {
  const OracleEstimator oracle(OracleNoiseModel{});
  PipelineConfig p;
  p.mode = SelectionMode::SelectTeacher;
  EXPECT_THROW(infer(frame_input(frames().frames[0]), p, {&oracle}), Error);
}

TEST(Infer, ThreadCountDoesNotChangeResult) {
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  PipelineConfig p;
  p.num_selected = 25;
  const InferResult a = infer(frame_input(frames().frames[3]), p, {&oracle});
  p.threads = 4;
  const InferResult b = infer(frame_input(frames().frames[3]), p, {&oracle});
  EXPECT_EQ(a.pose.joints, b.pose.joints);
}
