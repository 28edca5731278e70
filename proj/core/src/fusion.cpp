#include "virtview/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "virtview/error.hpp"
#include "virtview/parallel.hpp"
#include "virtview/random.hpp"

namespace virtview {

HandPose fuse_poses(std::span<const HandPose> poses, const ConfidenceVector& conf,
                    const VirtualViewSet& views) {
  if (poses.size() != conf.selected_ids.size() || conf.weights.size() != conf.selected_ids.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(poses.size()) + " poses for " + std::to_string(conf.selected_ids.size()) +
                    " selected views");
  }
  if (poses.empty()) throw Error(ErrorCode::LengthMismatch, "nothing to fuse");
  const std::size_t k = poses[0].joints.size();
  HandPose out;
  out.frame_id = kOriginalFrame;
  out.joints.assign(k, Vec3::Zero());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const int id = conf.selected_ids[i];
    if (id < 0 || id >= views.size()) {
      throw Error(ErrorCode::LengthMismatch, "selected id " + std::to_string(id) + " not in view set");
    }
    const VirtualView& v = views[id];
    if (poses[i].frame_id != v.frame_id) {
      throw Error(ErrorCode::FrameMismatch,
                  "pose in '" + poses[i].frame_id + "' paired with view '" + v.frame_id + "'");
    }
    if (poses[i].joints.size() != k) throw Error(ErrorCode::LengthMismatch, "joint counts differ");
    for (std::size_t j = 0; j < k; ++j) out.joints[j] += conf.weights[i] * v.to_original.apply(poses[i].joints[j]);
  }
  return out;
}

HandPose average_fuse(std::span<const HandPose> poses, std::span<const int> ids,
                      const VirtualViewSet& views) {
  return fuse_poses(poses, uniform_confidence(views.size(), ids), views);
}

VirtualViewSet random_views(const Vec3& center_mm, double radius_mm, AngleRange zenith_range,
                            AngleRange azimuth_range, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::BadN, "random view count must be >= 1");
  if (!(zenith_range.min <= zenith_range.max) || !(azimuth_range.min <= azimuth_range.max)) {
    throw Error(ErrorCode::InvalidRange, "angle range is empty");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> zen(zenith_range.min, zenith_range.max);
  std::uniform_real_distribution<double> az(azimuth_range.min, azimuth_range.max);
  VirtualViewSet set;
  set.center_mm = center_mm;
  set.radius_mm = radius_mm;
  for (int i = 0; i < n; ++i) {
    VirtualView v;
    v.id = i;
    v.zenith = zen(rng);
    v.azimuth = az(rng);
    v.to_original = orbit_transform(center_mm, radius_mm, view_rotation(v.zenith, v.azimuth));
    v.from_original = invert(v.to_original);
    v.frame_id = "view:" + std::to_string(i);
    set.views.push_back(std::move(v));
  }
  return set;
}

std::string_view to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::Uniform: return "uniform";
    case SelectionMode::SelectTeacher: return "select_teacher";
    case SelectionMode::SelectLight: return "select_light";
    case SelectionMode::Random: return "random";
  }
  return "?";
}

std::string_view to_string(FusionKind kind) {
  return kind == FusionKind::Weighted ? "weighted" : "average";
}

SelectionMode parse_selection_mode(std::string_view name) {
  for (SelectionMode m : {SelectionMode::Uniform, SelectionMode::SelectTeacher, SelectionMode::SelectLight,
                          SelectionMode::Random}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::ConfigError, "unknown mode '" + std::string(name) +
                                          "' (expected uniform, select_teacher, select_light, random)");
}

FusionKind parse_fusion_kind(std::string_view name) {
  if (name == "weighted") return FusionKind::Weighted;
  if (name == "average") return FusionKind::Average;
  throw Error(ErrorCode::ConfigError, "unknown fusion '" + std::string(name) + "' (expected weighted, average)");
}

FusionKind PipelineConfig::fusion_kind() const {
  if (fusion) return *fusion;
  const bool selects = mode == SelectionMode::SelectTeacher || mode == SelectionMode::SelectLight;
  return selects ? FusionKind::Weighted : FusionKind::Average;
}

void PipelineConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) throw Error(ErrorCode::InvalidArgument, "grid must be at least 1x1");
  if (num_selected < 1 || num_selected > view_count()) {
    throw Error(ErrorCode::BadN, "N=" + std::to_string(num_selected) + " outside [1, " +
                                     std::to_string(view_count()) + "]");
  }
  for (const AngleRange& r : {zenith_range, azimuth_range}) {
    if (!(r.min > -std::numbers::pi / 2 && r.max < std::numbers::pi / 2 && r.min <= r.max)) {
      throw Error(ErrorCode::InvalidRange, "angle range must lie inside (-pi/2, pi/2)");
    }
  }
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  render.validate();
  crop.validate();
  if (mode == SelectionMode::Uniform) {
    const Vec3 probe(0.0, 0.0, 400.0);
    uniform_subset(sample_virtual_views(probe, probe.norm(), grid_rows, grid_cols, zenith_range, azimuth_range),
                   num_selected, masks ? &*masks : nullptr);
  }
}

FrameInput frame_input(const Frame& frame) {
  FrameInput in;
  in.depth = &frame.depth;
  in.center_mm = frame.centroid_mm;
  in.ground_truth = &frame.gt;
  in.frame_seed = frame.meta.seed;
  in.view_jitter = frame.meta.view_jitter;
  return in;
}

StageTimes& StageTimes::operator+=(const StageTimes& o) {
  prepare += o.prepare;
  render += o.render;
  estimate += o.estimate;
  confidence += o.confidence;
  fuse += o.fuse;
  total += o.total;
  return *this;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

VirtualViewSet lattice_for(const Vec3& center, const PipelineConfig& cfg, const Vec3& jitter) {
  return apply_view_jitter(
      sample_virtual_views(center, center.norm(), cfg.grid_rows, cfg.grid_cols, cfg.zenith_range,
                           cfg.azimuth_range),
      jitter);
}

struct ViewRun {
  std::vector<DepthImage> rendered;
  std::vector<EstimatorOutput> outputs;
};

// Renders and estimates `ids` of `views`, each stage fanned out over the pool.
ViewRun run_views(const PointCloud& cloud, const VirtualViewSet& views, std::span<const int> ids,
                  const FrameInput& input, const Vec3& center, const PipelineConfig& cfg,
                  const ViewEstimator& est, InferResult& res) {
  ViewRun run;
  const int n = static_cast<int>(ids.size());
  run.rendered.resize(ids.size());
  run.outputs.resize(ids.size());
  const Intrinsics& intr = input.depth->intrinsics;

  auto t0 = Clock::now();
  parallel_for(n, cfg.threads, [&](int i) {
    run.rendered[static_cast<std::size_t>(i)] = render_depth(cloud, views[ids[static_cast<std::size_t>(i)]], intr, cfg.render);
  });
  res.times.render += seconds_since(t0);
  res.render_calls += n;

  t0 = Clock::now();
  parallel_for(n, cfg.threads, [&](int i) {
    const auto u = static_cast<std::size_t>(i);
    const VirtualView& v = views[ids[u]];
    ViewContext ctx;
    ctx.view = &v;
    ctx.rendered = &run.rendered[u];
    ctx.ground_truth = input.ground_truth;
    ctx.frame_seed = input.frame_seed;
    NormalizedCrop crop;
    if (est.needs_crop()) {
      crop = crop_hand(run.rendered[u], v.from_original.apply(center), cfg.crop);
      ctx.crop = &crop;
    }
    run.outputs[u] = est.estimate(ctx);
  });
  res.times.estimate += seconds_since(t0);
  res.estimate_calls += n;
  return run;
}

std::vector<HandPose> poses_of(const std::vector<EstimatorOutput>& outs, std::span<const int> order,
                               std::span<const int> evaluated) {
  // outs[i] belongs to evaluated[i]; returns poses in `order`.
  std::vector<HandPose> poses;
  for (int id : order) {
    const auto it = std::find(evaluated.begin(), evaluated.end(), id);
    poses.push_back(outs[static_cast<std::size_t>(it - evaluated.begin())].pose);
  }
  return poses;
}

}  // namespace

InferResult infer(const FrameInput& input, const PipelineConfig& cfg, const Models& models) {
  cfg.validate();
  if (input.depth == nullptr) throw Error(ErrorCode::InvalidArgument, "no depth image");
  if (models.estimator == nullptr) throw Error(ErrorCode::InvalidArgument, "no per-view estimator");
  const ViewEstimator& est = *models.estimator;
  if (est.needs_ground_truth() && input.ground_truth == nullptr) {
    throw Error(ErrorCode::InvalidArgument, std::string(est.name()) + " estimator needs ground truth");
  }
  const int n = cfg.num_selected;
  const int m = cfg.view_count();

  InferResult res;
  const auto start = Clock::now();
  auto t0 = start;
  const PointCloud cloud = unproject(*input.depth);
  const Vec3 center = input.center_mm ? *input.center_mm : centroid(cloud);
  if (!(center.z() > 0.0)) throw Error(ErrorCode::CenterBehindCamera, "hand centre has z <= 0");

  VirtualViewSet views;
  std::vector<HandPose> poses;
  switch (cfg.mode) {
    case SelectionMode::Uniform: {
      views = lattice_for(center, cfg, input.view_jitter);
      const std::vector<int> ids =
          uniform_subset(views, n, cfg.masks ? &*cfg.masks : nullptr);
      res.times.prepare = seconds_since(t0);
      res.evaluated_ids = ids;
      std::sort(res.evaluated_ids.begin(), res.evaluated_ids.end());
      const ViewRun run = run_views(cloud, views, ids, input, center, cfg, est, res);
      res.confidence = uniform_confidence(m, ids);
      for (const EstimatorOutput& o : run.outputs) poses.push_back(o.pose);
      break;
    }
    case SelectionMode::Random: {
      const std::uint64_t seed = mix_seed(cfg.seed, input.frame_seed);
      views = apply_view_jitter(
          random_views(center, center.norm(), cfg.zenith_range, cfg.azimuth_range, n, seed),
          input.view_jitter);
      std::vector<int> ids(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
      res.times.prepare = seconds_since(t0);
      res.evaluated_ids = ids;
      const ViewRun run = run_views(cloud, views, ids, input, center, cfg, est, res);
      res.confidence = uniform_confidence(n, ids);
      for (const EstimatorOutput& o : run.outputs) poses.push_back(o.pose);
      break;
    }
    case SelectionMode::SelectTeacher: {
      if (models.teacher == nullptr) throw Error(ErrorCode::InvalidArgument, "select_teacher needs a teacher");
      views = lattice_for(center, cfg, input.view_jitter);
      std::vector<int> all(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) all[static_cast<std::size_t>(i)] = i;
      res.times.prepare = seconds_since(t0);
      res.evaluated_ids = all;
      const ViewRun run = run_views(cloud, views, all, input, center, cfg, est, res);
      t0 = Clock::now();
      std::vector<nn::FeatureMap> feats;
      feats.reserve(run.outputs.size());
      for (const EstimatorOutput& o : run.outputs) feats.push_back(o.feature);
      const std::vector<double> raw = teacher_confidence(feats, *models.teacher);
      res.confidence = softmax_select(raw, n);
      res.times.confidence = seconds_since(t0);
      poses = poses_of(run.outputs, res.confidence.selected_ids, all);
      break;
    }
    case SelectionMode::SelectLight: {
      if (models.student == nullptr) throw Error(ErrorCode::InvalidArgument, "select_light needs a student");
      if (models.student->config.views != m) {
        throw Error(ErrorCode::ShapeMismatch, "student predicts " + std::to_string(models.student->config.views) +
                                                  " views, grid has " + std::to_string(m));
      }
      views = lattice_for(center, cfg, input.view_jitter);
      const NormalizedCrop original = crop_hand(*input.depth, center, cfg.crop);
      res.times.prepare = seconds_since(t0);
      t0 = Clock::now();
      // The student regresses post-softmax confidences; selecting on their
      // logarithm makes the fusion weights the renormalised student values.
      std::vector<double> raw = student_confidence(original, *models.student);
      for (double& r : raw) r = std::log(std::max(r, 1e-6));
      res.confidence = softmax_select(raw, n);
      res.times.confidence = seconds_since(t0);
      res.evaluated_ids = res.confidence.selected_ids;
      std::sort(res.evaluated_ids.begin(), res.evaluated_ids.end());
      const ViewRun run = run_views(cloud, views, res.evaluated_ids, input, center, cfg, est, res);
      poses = poses_of(run.outputs, res.confidence.selected_ids, res.evaluated_ids);
      break;
    }
  }

  t0 = Clock::now();
  if (cfg.fusion_kind() == FusionKind::Average) {
    res.pose = average_fuse(poses, res.confidence.selected_ids, views);
  } else {
    res.pose = fuse_poses(poses, res.confidence, views);
  }
  res.times.fuse = seconds_since(t0);
  res.times.total = seconds_since(start);
  return res;
}

std::vector<HandPose> infer_all(std::span<const Frame> frames, const PipelineConfig& cfg,
                                const Models& models) {
  std::vector<HandPose> out;
  out.reserve(frames.size());
  for (const Frame& f : frames) out.push_back(infer(frame_input(f), cfg, models).pose);
  return out;
}

MultiViewSample make_training_sample(const Frame& frame, const PipelineConfig& cfg,
                                     const ViewEstimator& estimator) {
  cfg.validate();
  MultiViewSample s;
  s.views = lattice_for(frame.centroid_mm, cfg, frame.meta.view_jitter);
  s.gt = frame.gt;
  s.original_crop = crop_hand(frame.depth, frame.centroid_mm, cfg.crop);
  const PointCloud cloud = unproject(frame.depth);
  if (estimator.needs_ground_truth()) {
    const std::vector<DepthImage> rendered =
        render_all(cloud, s.views, frame.depth.intrinsics, cfg.render, cfg.threads);
    s.fixed_outputs.resize(rendered.size());
    parallel_for(s.views.size(), cfg.threads, [&](int i) {
      const auto u = static_cast<std::size_t>(i);
      ViewContext ctx;
      ctx.view = &s.views.views[u];
      ctx.rendered = &rendered[u];
      ctx.ground_truth = &frame.gt;
      ctx.frame_seed = frame.meta.seed;
      NormalizedCrop crop;
      if (estimator.needs_crop()) {
        crop = crop_hand(rendered[u], s.views.views[u].from_original.apply(frame.centroid_mm), cfg.crop);
        ctx.crop = &crop;
      }
      s.fixed_outputs[u] = estimator.estimate(ctx);
    });
  } else {
    auto src = std::make_shared<CropSource>();
    src->cloud = cloud;
    src->center_mm = frame.centroid_mm;
    src->intrinsics = frame.depth.intrinsics;
    src->render = cfg.render;
    src->crop = cfg.crop;
    s.source = std::move(src);
  }
  return s;
}

}  // namespace virtview
