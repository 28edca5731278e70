#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "virtview/confidence.hpp"
#include "virtview/error.hpp"
#include "virtview/fusion.hpp"
#include "virtview/synthdata.hpp"

using namespace virtview;
using virtview::testing::check_gradient;
using virtview::testing::random_map;

namespace {

TeacherConfig oracle_teacher() {
  TeacherConfig c;
  c.in_channels = kOracleFeatureChannels;
  c.in_height = c.in_width = kOracleFeatureSide;
  return c;
}

TeacherConfig tiny_teacher(int in_channels, int side) {
  TeacherConfig c;
  c.in_channels = in_channels;
  c.in_height = c.in_width = side;
  c.channels = {6, 8, 12};
  c.key_dim = c.value_dim = 5;
  return c;
}

std::vector<nn::FeatureMap> random_views(int m, const TeacherConfig& c, std::mt19937_64& rng) {
  std::vector<nn::FeatureMap> v;
  for (int i = 0; i < m; ++i) v.push_back(random_map(c.in_channels, c.in_height, c.in_width, rng));
  return v;
}

const Dataset& frames() {
  static const Dataset ds = generate_dataset(SynthHandSpec::default_hand(), 40, 91);
  return ds;
}

// Samples whose fixed outputs are ground truth except for noise on every view
// but one; the clean view is flagged in feature channel 0.
std::vector<MultiViewSample> separable_samples(std::size_t count, std::uint64_t seed) {
  const Dataset ds = generate_dataset(SynthHandSpec::default_hand(), count, seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 24);
  std::normal_distribution<double> noise(0.0, 10.0);
  std::vector<MultiViewSample> out;
  for (const Frame& f : ds.frames) {
    MultiViewSample s;
    s.views = sample_virtual_views(f.centroid_mm, 5, 5);
    s.gt = f.gt;
    const int clean = pick(rng);
    for (const VirtualView& v : s.views.views) {
      EstimatorOutput o;
      o.pose = transform_pose(f.gt, v.from_original, v.frame_id);
      if (v.id != clean) {
        for (Vec3& j : o.pose.joints) j += Vec3(noise(rng), noise(rng), noise(rng));
      }
      o.feature = random_map(kOracleFeatureChannels, kOracleFeatureSide, kOracleFeatureSide, rng, 0.1);
      o.feature.data.row(0).setConstant(v.id == clean ? 1.0 : 0.0);
      s.fixed_outputs.push_back(std::move(o));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Attention, MatchesReferenceLoops) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  const int m = 6, d = 10, dk = 64;
  auto rnd = [&](int r, int c) {
    nn::Matrix x(r, c);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng) * 0.3;
    return x;
  };
  const nn::Matrix h = rnd(m, d), wq = rnd(dk, d), wk = rnd(dk, d), wv = rnd(dk, d);
  const AttentionResult r = attention(h, wq, wk, wv);
  for (int i = 0; i < m; ++i) {
    std::vector<double> logits(m);
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int a = 0; a < dk; ++a) {
        double q = 0.0, k = 0.0;
        for (int b = 0; b < d; ++b) q += wq(a, b) * h(i, b), k += wk(a, b) * h(j, b);
        s += q * k;
      }
      logits[static_cast<std::size_t>(j)] = s / 8.0;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (int a = 0; a < dk; ++a) {
      double o = 0.0;
      for (int j = 0; j < m; ++j) {
        double v = 0.0;
        for (int b = 0; b < d; ++b) v += wv(a, b) * h(j, b);
        o += logits[static_cast<std::size_t>(j)] / z * v;
      }
      EXPECT_NEAR(r.output(i, a), o, 1e-12);
    }
    EXPECT_NEAR(r.weights.row(i).sum(), 1.0, 1e-14);
  }
}

TEST(Teacher, DefaultOutputLength) {
  std::mt19937_64 rng(2);
  const TeacherParams t = TeacherParams::initialize(oracle_teacher(), 3);
  const auto scores = teacher_confidence(random_views(25, t.config, rng), t);
  EXPECT_EQ(scores.size(), 25u);
}

TEST(Teacher, IdenticalViewsScoreEqually) {
  std::mt19937_64 rng(3);
  const TeacherParams t = TeacherParams::initialize(oracle_teacher(), 4);
  const auto one = random_views(1, t.config, rng);
  const std::vector<nn::FeatureMap> same(25, one[0]);
  const auto s = teacher_confidence(same, t);
  for (double v : s) EXPECT_NEAR(v, s[0], 1e-12);
}

TEST(Teacher, PermutationEquivariant) {
  std::mt19937_64 rng(4);
  const TeacherParams t = TeacherParams::initialize(oracle_teacher(), 5);
  auto views = random_views(25, t.config, rng);
  const auto s = teacher_confidence(views, t);
  std::vector<int> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<nn::FeatureMap> shuffled;
  for (int p : perm) shuffled.push_back(views[static_cast<std::size_t>(p)]);
  const auto sp = teacher_confidence(shuffled, t);
  for (int i = 0; i < 25; ++i) EXPECT_NEAR(sp[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])], 1e-10);
}

TEST(Teacher, Deterministic) {
  std::mt19937_64 rng(5);
  const TeacherParams a = TeacherParams::initialize(oracle_teacher(), 6);
  const TeacherParams b = TeacherParams::initialize(oracle_teacher(), 6);
  EXPECT_TRUE(a.tensors == b.tensors);
  const auto views = random_views(25, a.config, rng);
  EXPECT_EQ(teacher_confidence(views, a), teacher_confidence(views, b));
}

TEST(Teacher, ZeroHeadDegeneratesToLowestIds) {
  std::mt19937_64 rng(6);
  TeacherParams t = TeacherParams::initialize(oracle_teacher(), 7);
  t.tensors.get("teacher.head.weight").setZero();
  t.tensors.get("teacher.head.bias").setZero();
  const auto s = teacher_confidence(random_views(25, t.config, rng), t);
  for (double v : s) EXPECT_EQ(v, s[0]);
  EXPECT_EQ(softmax_select(s, 3).selected_ids, (std::vector<int>{0, 1, 2}));
}

TEST(Teacher, WrongFeatureShape) {
  std::mt19937_64 rng(7);
  const TeacherParams t = TeacherParams::initialize(oracle_teacher(), 8);
  const std::vector<nn::FeatureMap> bad{random_map(3, 4, 4, rng)};
  try {
    teacher_confidence(bad, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Teacher, BackwardMatchesFiniteDifference) {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TeacherParams t = TeacherParams::initialize(tiny_teacher(3, 6), 200 + seed);
    auto views = random_views(5, t.config, rng);
    std::vector<double> w(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : w) x = n(rng);
    auto loss = [&] {
      const auto s = teacher_confidence(views, t);
      return std::inner_product(s.begin(), s.end(), w.begin(), 0.0);
    };
    TeacherTrace trace;
    teacher_confidence(views, t, &trace);
    nn::ParamSet g = t.tensors.zeros_like();
    const auto dx = teacher_backward(t, trace, w, g, true);
    EXPECT_LT(check_gradient(t.tensors, g, loss, 60, seed).worst, 1e-4) << "seed " << seed;

    double worst = 0.0;
    for (int probe = 0; probe < 10; ++probe) {
      const auto v = static_cast<std::size_t>(probe % 5);
      const Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(views[v].data.size()));
      const double saved = views[v].data.data()[i];
      views[v].data.data()[i] = saved + 1e-5;
      const double up = loss();
      views[v].data.data()[i] = saved - 1e-5;
      const double down = loss();
      views[v].data.data()[i] = saved;
      worst = std::max(worst, virtview::testing::relative_error(dx[v].data.data()[i], (up - down) / 2e-5));
    }
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(SoftmaxSelect, Examples) {
  const std::vector<double> flat(25, 0.3);
  const ConfidenceVector all = softmax_select(flat, 25);
  for (double w : all.weights) EXPECT_NEAR(w, 1.0 / 25.0, 1e-15);

  const ConfidenceVector tie = softmax_select(std::vector<double>{0.1, 0.9, 0.9, 0.2}, 2);
  EXPECT_EQ(tie.selected_ids, (std::vector<int>{1, 2}));
  EXPECT_EQ(tie.weights, (std::vector<double>{0.5, 0.5}));

  const ConfidenceVector c = softmax_select(std::vector<double>{1, 2, 3}, 2);
  EXPECT_EQ(c.selected_ids, (std::vector<int>{2, 1}));
  const double e = std::exp(1.0);
  EXPECT_NEAR(c.weights[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(c.weights[1], 1 / (e + 1), 1e-15);

  EXPECT_THROW(softmax_select(std::vector<double>{1, 2}, 3), Error);
  EXPECT_THROW(softmax_select(std::vector<double>{1, 2}, 0), Error);
}

TEST(Losses, FusionLoss) {
  HandPose gt{{Vec3(0, 0, 0)}, kOriginalFrame};
  EXPECT_EQ(fusion_loss(gt, gt), 0.0);
  HandPose p{{Vec3(0.5, 0, 0)}, kOriginalFrame};
  EXPECT_EQ(fusion_loss(p, gt), 0.125);
  HandPose gt2{{Vec3(0, 0, 0), Vec3(0, 0, 0)}, kOriginalFrame};
  HandPose p2{{Vec3(0, 0.5, 0), Vec3(0, 0, 2)}, kOriginalFrame};
  EXPECT_EQ(fusion_loss(p2, gt2), 1.625);
  p.frame_id = "view:1";
  EXPECT_THROW(fusion_loss(p, gt), Error);
}

TEST(Losses, JointLoss) {
  TrainConfig cfg;
  EXPECT_EQ(joint_loss(std::vector<double>{0.0, 0.0}, 0.0, cfg), 0.0);
  EXPECT_NEAR(joint_loss(std::vector<double>{1.0, 3.0}, 1.0, cfg), 2.1, 1e-15);
}

TEST(Losses, DistillLoss) {
  const std::vector<double> t(25, 0.04);
  EXPECT_EQ(distill_loss(t, t), 0.0);
  std::vector<double> s(25);
  for (std::size_t i = 0; i < 25; ++i) s[i] = t[i] + 0.005;
  EXPECT_NEAR(distill_loss(s, t, 100.0), 3.125, 1e-12);
  EXPECT_NEAR(distill_loss(std::vector<double>{0.52}, std::vector<double>{0.5}, 100.0), 1.5, 1e-12);
  EXPECT_THROW(distill_loss(std::vector<double>{1.0}, t), Error);
}

TEST(Losses, DistillGradient) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 0.1);
  std::vector<double> s(25), t(25);
  for (std::size_t i = 0; i < 25; ++i) s[i] = u(rng), t[i] = u(rng);
  const auto g = distill_loss_grad(s, t);
  for (std::size_t i = 0; i < 25; ++i) {
    auto up = s, down = s;
    up[i] += 1e-7;
    down[i] -= 1e-7;
    EXPECT_LT(virtview::testing::relative_error(g[i], (distill_loss(up, t) - distill_loss(down, t)) / 2e-7), 1e-4);
  }
}

TEST(ViewSelection, GradientWithFixedOutputs) {
  PipelineConfig pc;
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  TrainConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MultiViewSample s = make_training_sample(frames().frames[seed], pc, oracle);
    TeacherParams t = TeacherParams::initialize(oracle_teacher(), 300 + seed);
    nn::ParamSet g = t.tensors.zeros_like();
    view_selection_backward(s, nullptr, t, cfg, nullptr, g);
    auto loss = [&] { return view_selection_loss(s, nullptr, t, cfg).total; };
    EXPECT_LT(check_gradient(t.tensors, g, loss, 40, seed).worst, 1e-4) << "seed " << seed;
  }
}

TEST(ViewSelection, GradientThroughEstimator) {
  A2JConfig ac;
  ac.crop_size = 32;
  ac.channels = {4, 6};
  ac.feature_tap = 1;
  PipelineConfig pc;
  pc.grid_rows = pc.grid_cols = 3;
  pc.masks = SubsetMasks{{3, {3, 4, 5}}};
  pc.crop.crop_size = 32;
  TrainConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EstimatorParams e = EstimatorParams::initialize(ac, 400 + seed);
    const MultiViewSample s = make_training_sample(frames().frames[seed], pc, AnchorEstimator(e));
    ASSERT_TRUE(s.fixed_outputs.empty());
    TeacherParams t = TeacherParams::initialize(tiny_teacher(4, 16), 500 + seed);
    nn::ParamSet ge = e.tensors.zeros_like(), gt = t.tensors.zeros_like();
    view_selection_backward(s, &e, t, cfg, &ge, gt);
    auto loss = [&] { return view_selection_loss(s, &e, t, cfg).total; };
    EXPECT_LT(check_gradient(t.tensors, gt, loss, 20, seed).worst, 1e-4) << "teacher seed " << seed;
    EXPECT_LT(check_gradient(e.tensors, ge, loss, 20, seed).worst, 1e-4) << "estimator seed " << seed;
  }
}

TEST(TrainTeacher, FirstEpochDescends) {
  PipelineConfig pc;
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  std::vector<MultiViewSample> data;
  for (std::size_t i = 0; i < 32; ++i) data.push_back(make_training_sample(frames().frames[i], pc, oracle));
  TrainConfig cfg;
  cfg.epochs = 1;
  const TeacherParams init = TeacherParams::initialize(oracle_teacher(), 10);
  auto mean_loss = [&](const TeacherParams& t) {
    double s = 0.0;
    for (const auto& d : data) s += view_selection_loss(d, nullptr, t, cfg).total;
    return s / static_cast<double>(data.size());
  };
  const double before = mean_loss(init);
  const auto [est, trained] = train_teacher_joint(data, EstimatorParams{}, init, cfg);
  EXPECT_LT(mean_loss(trained), before);
}

TEST(TrainTeacher, FrozenEstimatorIsUntouched) {
  A2JConfig ac;
  ac.crop_size = 32;
  ac.channels = {4, 6};
  ac.feature_tap = 1;
  PipelineConfig pc;
  pc.grid_rows = pc.grid_cols = 3;
  pc.masks = SubsetMasks{{3, {3, 4, 5}}};
  pc.crop.crop_size = 32;
  const EstimatorParams e = EstimatorParams::initialize(ac, 11);
  std::vector<MultiViewSample> data;
  for (std::size_t i = 0; i < 4; ++i) data.push_back(make_training_sample(frames().frames[i], pc, AnchorEstimator(e)));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.freeze_estimator = true;
  const TeacherParams t = TeacherParams::initialize(tiny_teacher(4, 16), 12);
  const auto [e2, t2] = train_teacher_joint(data, e, t, cfg);
  EXPECT_TRUE(e2.tensors == e.tensors);
  EXPECT_FALSE(t2.tensors == t.tensors);

  cfg.freeze_estimator = false;
  const auto [e3, t3] = train_teacher_joint(data, e, t, cfg);
  EXPECT_FALSE(e3.tensors == e.tensors);
}

TEST(TrainTeacher, FindsTheCleanView) {
  const auto train = separable_samples(64, 1);
  const auto test = separable_samples(64, 2);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 3;
  const auto [e, t] =
      train_teacher_joint(train, EstimatorParams{}, TeacherParams::initialize(oracle_teacher(), 13), cfg);
  int hits = 0;
  for (const MultiViewSample& s : test) {
    std::vector<nn::FeatureMap> feats;
    int clean = -1;
    for (std::size_t i = 0; i < s.fixed_outputs.size(); ++i) {
      feats.push_back(s.fixed_outputs[i].feature);
      if (s.fixed_outputs[i].feature.data(0, 0) == 1.0) clean = static_cast<int>(i);
    }
    hits += softmax_select(teacher_confidence(feats, t), 1).selected_ids[0] == clean;
  }
  EXPECT_GE(hits, static_cast<int>(0.8 * 64));
}

TEST(Student, BackwardMatchesFiniteDifference) {
  StudentConfig sc;
  sc.crop_size = 32;
  sc.pool = 2;
  sc.channels = {3, 4};
  sc.views = 9;
  CropConfig cc;
  cc.crop_size = 32;
  const Frame& f = frames().frames[0];
  const nn::FeatureMap x = student_input(crop_hand(f.depth, f.centroid_mm, cc), sc);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    StudentParams s = StudentParams::initialize(sc, 600 + seed);
    std::vector<double> target(9);
    for (double& v : target) v = u(rng);
    auto loss = [&] { return distill_loss(student_forward(x, s), target); };
    StudentTrace trace;
    const auto out = student_forward(x, s, &trace);
    nn::ParamSet g = s.tensors.zeros_like();
    student_backward(s, trace, distill_loss_grad(out, target), g);
    EXPECT_LT(check_gradient(s.tensors, g, loss, 60, seed).worst, 1e-4) << "seed " << seed;
  }
}

TEST(Student, OverfitsSmallSet) {
  PipelineConfig pc;
  const OracleEstimator oracle(OracleNoiseModel{2.0, 8.0, 1});
  const TeacherParams t = TeacherParams::initialize(oracle_teacher(), 15);
  std::vector<MultiViewSample> data;
  for (std::size_t i = 0; i < 16; ++i) data.push_back(make_training_sample(frames().frames[i], pc, oracle));
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.decay = 0.99;
  cfg.batch_size = 4;
  const TeacherParams t_copy = t;
  TrainingLog log;
  const StudentParams s = train_student(data, t, nullptr, StudentParams::initialize(StudentConfig{}, 16), cfg, &log);
  EXPECT_TRUE(t.tensors == t_copy.tensors);
  double total = 0.0;
  for (const auto& d : data) total += distill_loss(student_confidence(d.original_crop, s), teacher_targets(d, nullptr, t));
  EXPECT_LT(total / static_cast<double>(data.size()), 0.01);
  EXPECT_EQ(log.records.back().stage, "student");
}
