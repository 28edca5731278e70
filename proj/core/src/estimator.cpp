#include "virtview/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "virtview/error.hpp"
#include "virtview/random.hpp"

namespace virtview {

using nn::FeatureMap;
using nn::Matrix;
using nn::Vector;

AnchorGrid AnchorGrid::make(int crop_size, int stride) {
  if (crop_size <= 0 || stride <= 0) {
    throw Error(ErrorCode::InvalidArgument, "anchor grid needs positive crop size and stride");
  }
  AnchorGrid g;
  g.crop_size = crop_size;
  g.stride = stride;
  g.per_side = (crop_size + stride - 1) / stride;
  const double half = (stride - 1) / 2.0;
  g.anchors.reserve(static_cast<std::size_t>(g.per_side) * g.per_side);
  for (int iy = 0; iy < g.per_side; ++iy) {
    for (int ix = 0; ix < g.per_side; ++ix) {
      g.anchors.emplace_back(ix * stride + half, iy * stride + half);
    }
  }
  return g;
}

int A2JConfig::side_after(int layer) const {
  int side = crop_size;
  for (int i = 0; i < layer; ++i) side = (side + 1) / 2;
  return side;
}

void A2JConfig::validate() const {
  if (crop_size <= 0 || channels.empty() || joints <= 0) {
    throw Error(ErrorCode::InvalidArgument, "invalid anchor-regressor configuration");
  }
  if (feature_tap < 1 || feature_tap > layers()) {
    throw Error(ErrorCode::InvalidArgument, "feature_tap must name a backbone layer");
  }
}

namespace {

nn::ConvSpec layer_spec(const A2JConfig& cfg, int i) {
  nn::ConvSpec s;
  s.in_channels = i == 0 ? 1 : cfg.channels[static_cast<std::size_t>(i - 1)];
  s.out_channels = cfg.channels[static_cast<std::size_t>(i)];
  return s;
}

std::string conv_name(int i) { return "backbone.conv" + std::to_string(i + 1); }

FeatureMap crop_to_map(const NormalizedCrop& crop) {
  FeatureMap x(1, crop.size, crop.size);
  x.data = Eigen::Map<const Matrix>(crop.values.data(), 1,
                                    static_cast<Eigen::Index>(crop.values.size()));
  return x;
}

const AnchorGrid& anchors_for(const A2JConfig& cfg) {
  thread_local AnchorGrid cached;
  if (cached.crop_size != cfg.crop_size || cached.stride != cfg.stride() || cached.anchors.empty()) {
    cached = AnchorGrid::make(cfg.crop_size, cfg.stride());
  }
  return cached;
}

}  // namespace

EstimatorParams EstimatorParams::initialize(const A2JConfig& config, std::uint64_t seed) {
  config.validate();
  EstimatorParams p;
  p.config = config;
  p.rng_seed = seed;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < config.layers(); ++i) nn::init_conv(p.tensors, conv_name(i), layer_spec(config, i), rng);
  const int c = config.channels.back();
  nn::init_linear(p.tensors, "head.logits", c, config.joints, rng, 0.1);
  nn::init_linear(p.tensors, "head.offset_u", c, config.joints, rng, 0.1);
  nn::init_linear(p.tensors, "head.offset_v", c, config.joints, rng, 0.1);
  nn::init_linear(p.tensors, "head.depth", c, config.joints, rng, 0.1);
  return p;
}

EstimatorOutput estimate(const NormalizedCrop& crop, const EstimatorParams& params,
                         A2JTrace* trace) {
  const A2JConfig& cfg = params.config;
  if (crop.size != cfg.crop_size ||
      crop.values.size() != static_cast<std::size_t>(crop.size) * crop.size) {
    throw Error(ErrorCode::ShapeMismatch, "crop size " + std::to_string(crop.size) +
                                              " != estimator input " + std::to_string(cfg.crop_size));
  }

  A2JTrace local;
  A2JTrace& t = trace != nullptr ? *trace : local;
  t.layers.clear();
  t.layers.reserve(static_cast<std::size_t>(cfg.layers()) + 1);
  t.layers.push_back(crop_to_map(crop));
  for (int i = 0; i < cfg.layers(); ++i) {
    const std::string name = conv_name(i);
    FeatureMap y = nn::conv2d(t.layers.back(), params.tensors.get(name + ".weight"),
                              params.tensors.get(name + ".bias"), layer_spec(cfg, i));
    nn::relu(y);
    t.layers.push_back(std::move(y));
  }

  const Matrix& features = t.layers.back().data;  // C x A
  const AnchorGrid& grid = anchors_for(cfg);
  if (features.cols() != grid.size()) {
    throw Error(ErrorCode::ShapeMismatch, "backbone output does not match the anchor grid");
  }
  auto head = [&](const char* name) {
    Matrix out = params.tensors.get(std::string(name) + ".weight") * features;
    out.colwise() += params.tensors.get(std::string(name) + ".bias").col(0);
    return out;
  };

  EstimatorOutput out;
  AnchorResponses& r = out.per_anchor;
  r.logits = head("head.logits");
  r.offset_u = cfg.offset_scale_px * head("head.offset_u");
  r.offset_v = cfg.offset_scale_px * head("head.offset_v");
  r.depth = cfg.depth_scale_mm * head("head.depth");
  r.weights.resize(r.logits.rows(), r.logits.cols());
  for (Eigen::Index k = 0; k < r.logits.rows(); ++k) {
    r.weights.row(k) = nn::softmax(r.logits.row(k).transpose()).transpose();
  }

  const Intrinsics& intr = crop.intrinsics;
  out.window = crop.window;
  out.intrinsics = intr;
  out.crop_center = crop.center_mm;
  out.pose.frame_id = crop.frame_id;
  out.pose.joints.resize(static_cast<std::size_t>(cfg.joints));
  out.barycenter.resize(static_cast<std::size_t>(cfg.joints));
  out.in_plane.resize(static_cast<std::size_t>(cfg.joints));
  for (int k = 0; k < cfg.joints; ++k) {
    double u = 0.0, v = 0.0, dz = 0.0, bu = 0.0, bv = 0.0;
    for (int a = 0; a < grid.size(); ++a) {
      const double w = r.weights(k, a);
      const Eigen::Vector2d& anchor = grid.anchors[static_cast<std::size_t>(a)];
      u += w * (anchor.x() + r.offset_u(k, a));
      v += w * (anchor.y() + r.offset_v(k, a));
      dz += w * r.depth(k, a);
      bu += w * anchor.x();
      bv += w * anchor.y();
    }
    const double z = crop.center_mm.z() + dz;
    const double img_u = crop.window.to_image_u(u);
    const double img_v = crop.window.to_image_v(v);
    out.pose.joints[static_cast<std::size_t>(k)] =
        Vec3((img_u - intr.cx) * z / intr.fx, (img_v - intr.cy) * z / intr.fy, z);
    out.barycenter[static_cast<std::size_t>(k)] = {bu, bv};
    out.in_plane[static_cast<std::size_t>(k)] = {u, v};
  }
  out.feature = t.layers[static_cast<std::size_t>(cfg.feature_tap)];
  return out;
}

namespace {

void check_same_frame(const HandPose& a, const HandPose& b) {
  if (a.frame_id != b.frame_id) {
    throw Error(ErrorCode::FrameMismatch, "'" + a.frame_id + "' vs '" + b.frame_id + "'");
  }
  if (a.joints.size() != b.joints.size()) {
    throw Error(ErrorCode::LengthMismatch, "joint counts differ");
  }
}

Eigen::Vector2d gt_in_crop(const EstimatorOutput& out, const Vec3& joint) {
  const ProjectedPoint p = project_point(joint, out.intrinsics);
  return {out.window.to_crop_u(p.u), out.window.to_crop_v(p.v)};
}

}  // namespace

A2JLossTerms a2j_loss_terms(const EstimatorOutput& out, const HandPose& gt, double lambda) {
  check_same_frame(out.pose, gt);
  A2JLossTerms terms;
  for (std::size_t k = 0; k < gt.joints.size(); ++k) {
    terms.objective += nn::smooth_l1((out.pose.joints[k] - gt.joints[k]).norm());
    if (out.has_anchor_terms()) {
      terms.informative += nn::smooth_l1((out.barycenter[k] - gt_in_crop(out, gt.joints[k])).norm());
    }
  }
  terms.total = lambda * terms.objective + terms.informative;
  return terms;
}

double a2j_loss(const EstimatorOutput& out, const HandPose& gt, double lambda) {
  return a2j_loss_terms(out, gt, lambda).total;
}

OutputGrad a2j_loss_grad(const EstimatorOutput& out, const HandPose& gt, double lambda,
                         double scale) {
  check_same_frame(out.pose, gt);
  const auto k_count = static_cast<Eigen::Index>(gt.joints.size());
  OutputGrad g{Matrix::Zero(k_count, 3), Matrix::Zero(k_count, 2)};
  Vector grad;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Vector e = out.pose.joints[ku] - gt.joints[ku];
    nn::smooth_l1_norm(e, &grad);
    g.pose.row(k) = (lambda * scale) * grad.transpose();
    if (out.has_anchor_terms()) {
      const Vector eb = out.barycenter[ku] - gt_in_crop(out, gt.joints[ku]);
      nn::smooth_l1_norm(eb, &grad);
      g.barycenter.row(k) = scale * grad.transpose();
    }
  }
  return g;
}

void estimate_backward(const EstimatorParams& params, const A2JTrace& trace,
                       const EstimatorOutput& out, const OutputGrad& grad,
                       const nn::FeatureMap* feature_grad, nn::ParamSet& grads) {
  const A2JConfig& cfg = params.config;
  const AnchorGrid& grid = anchors_for(cfg);
  const AnchorResponses& r = out.per_anchor;
  const Intrinsics& intr = out.intrinsics;
  const int k_count = cfg.joints;
  const int a_count = grid.size();

  Matrix d_logits(k_count, a_count), d_ou(k_count, a_count), d_ov(k_count, a_count),
      d_depth(k_count, a_count);
  Vector dw(a_count);
  for (int k = 0; k < k_count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const double z = out.pose.joints[ku].z();
    const double img_u = out.window.to_image_u(out.in_plane[ku].x());
    const double img_v = out.window.to_image_v(out.in_plane[ku].y());
    const double gx = grad.pose(k, 0), gy = grad.pose(k, 1), gz = grad.pose(k, 2);
    const double d_dz = gz + gx * (img_u - intr.cx) / intr.fx + gy * (img_v - intr.cy) / intr.fy;
    const double du = gx * z * out.window.scale_u / intr.fx;
    const double dv = gy * z * out.window.scale_v / intr.fy;
    const double gbu = grad.barycenter(k, 0), gbv = grad.barycenter(k, 1);
    for (int a = 0; a < a_count; ++a) {
      const Eigen::Vector2d& anchor = grid.anchors[static_cast<std::size_t>(a)];
      const double w = r.weights(k, a);
      dw(a) = du * (anchor.x() + r.offset_u(k, a)) + dv * (anchor.y() + r.offset_v(k, a)) +
              d_dz * r.depth(k, a) + gbu * anchor.x() + gbv * anchor.y();
      d_ou(k, a) = du * w;
      d_ov(k, a) = dv * w;
      d_depth(k, a) = d_dz * w;
    }
    d_logits.row(k) = nn::softmax_backward(r.weights.row(k).transpose(), dw).transpose();
  }

  const Matrix& features = trace.layers.back().data;
  Matrix d_features = Matrix::Zero(features.rows(), features.cols());
  auto head_backward = [&](const char* name, const Matrix& d_out, double scale) {
    const std::string n(name);
    const Matrix d = scale * d_out;
    grads.get(n + ".weight").noalias() += d * features.transpose();
    grads.get(n + ".bias").col(0) += d.rowwise().sum();
    d_features.noalias() += params.tensors.get(n + ".weight").transpose() * d;
  };
  head_backward("head.logits", d_logits, 1.0);
  head_backward("head.offset_u", d_ou, cfg.offset_scale_px);
  head_backward("head.offset_v", d_ov, cfg.offset_scale_px);
  head_backward("head.depth", d_depth, cfg.depth_scale_mm);

  FeatureMap dy = trace.layers.back();
  dy.data = std::move(d_features);
  for (int i = cfg.layers(); i >= 1; --i) {
    if (i == cfg.feature_tap && feature_grad != nullptr) {
      if (!feature_grad->same_shape(dy)) {
        throw Error(ErrorCode::ShapeMismatch, "feature gradient shape mismatch");
      }
      dy.data += feature_grad->data;
    }
    nn::relu_backward(trace.layers[static_cast<std::size_t>(i)], dy);
    const std::string name = conv_name(i - 1);
    dy = nn::conv2d_backward(trace.layers[static_cast<std::size_t>(i - 1)], dy,
                             params.tensors.get(name + ".weight"), layer_spec(cfg, i - 1),
                             grads.get(name + ".weight"), grads.get(name + ".bias"), i > 1);
  }
}

double mean_a2j_loss(std::span<const EstimatorSample> data, const EstimatorParams& params,
                     double lambda) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "no samples");
  double sum = 0.0;
  for (const EstimatorSample& s : data) sum += a2j_loss(estimate(s.crop, params), s.gt, lambda);
  return sum / static_cast<double>(data.size());
}

EstimatorParams train_estimator(std::span<const EstimatorSample> data, EstimatorParams params,
                                const EstimatorSchedule& schedule, TrainingLog* log) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "estimator training set is empty");
  const int batch = std::max(1, schedule.batch_size);
  nn::Adam adam(params.tensors);
  nn::ParamSet grads = params.tensors.zeros_like();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  A2JTrace trace;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(schedule.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = nn::scheduled_lr(schedule.lr, schedule.decay, epoch);
    double epoch_loss = 0.0, epoch_obj = 0.0, epoch_info = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
      const double scale = 1.0 / static_cast<double>(end - start);
      grads.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        const EstimatorSample& s = data[order[i]];
        const EstimatorOutput out = estimate(s.crop, params, &trace);
        const A2JLossTerms terms = a2j_loss_terms(out, s.gt, schedule.lambda);
        if (!std::isfinite(terms.total)) {
          throw Error(ErrorCode::NonFiniteLoss, "estimator loss is not finite at epoch " +
                                                    std::to_string(epoch) + ", sample " +
                                                    std::to_string(order[i]));
        }
        epoch_loss += terms.total;
        epoch_obj += terms.objective;
        epoch_info += terms.informative;
        estimate_backward(params, trace, out, a2j_loss_grad(out, s.gt, schedule.lambda, scale),
                          nullptr, grads);
      }
      adam.step(params.tensors, grads, lr);
      if (!params.tensors.all_finite()) {
        throw Error(ErrorCode::NonFiniteLoss, "estimator parameters diverged at epoch " +
                                                  std::to_string(epoch));
      }
    }
    if (log != nullptr) {
      const double n = static_cast<double>(data.size());
      log->push({"estimator", epoch, lr, epoch_loss / n,
                 {{"l_obj", epoch_obj / n}, {"l_info", epoch_info / n}}});
    }
  }
  return params;
}

void OracleNoiseModel::validate() const {
  if (base_sigma_mm < 0.0 || occlusion_gain_mm < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "oracle noise sigmas must be >= 0");
  }
  if (occlusion_window_px < 0 || occlusion_margin_mm < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "oracle occlusion window/margin must be >= 0");
  }
}

namespace {

struct JointVisibility {
  double occlusion = 0.0;
  double coverage = 0.0;  // fraction of window pixels with any geometry
};

std::vector<JointVisibility> joint_visibility(const HandPose& joints, const DepthImage& rendered,
                                              const OracleNoiseModel& noise) {
  std::vector<JointVisibility> out(joints.joints.size());
  const int w = noise.occlusion_window_px;
  const double total = static_cast<double>((2 * w + 1) * (2 * w + 1));
  for (std::size_t k = 0; k < joints.joints.size(); ++k) {
    const Vec3& j = joints.joints[k];
    if (!(j.z() > 0.0)) {
      out[k] = {1.0, 0.0};
      continue;
    }
    const ProjectedPoint p = project_point(j, rendered.intrinsics);
    if (!std::isfinite(p.u) || !std::isfinite(p.v)) continue;
    const long cu = std::lround(p.u);
    const long cv = std::lround(p.v);
    int occluded = 0, covered = 0;
    for (long v = cv - w; v <= cv + w; ++v) {
      for (long u = cu - w; u <= cu + w; ++u) {
        if (u < 0 || v < 0 || u >= rendered.width || v >= rendered.height) continue;
        const double d = rendered.at(static_cast<int>(u), static_cast<int>(v));
        if (d <= 0.0) continue;
        ++covered;
        if (d < j.z() - noise.occlusion_margin_mm) ++occluded;
      }
    }
    out[k] = {occluded / total, covered / total};
  }
  return out;
}

}  // namespace

std::vector<double> joint_occlusion(const HandPose& joints_in_view, const DepthImage& rendered,
                                    const OracleNoiseModel& noise) {
  std::vector<double> occ;
  for (const JointVisibility& v : joint_visibility(joints_in_view, rendered, noise)) occ.push_back(v.occlusion);
  return occ;
}

EstimatorOutput oracle_estimate(const HandPose& gt, const VirtualView& view,
                                const DepthImage& rendered, const OracleNoiseModel& noise) {
  noise.validate();
  if (gt.frame_id != kOriginalFrame) {
    throw Error(ErrorCode::FrameMismatch, "oracle ground truth must be in the original frame");
  }
  EstimatorOutput out;
  out.pose = transform_pose(gt, view.from_original, view.frame_id);
  out.intrinsics = rendered.intrinsics;
  const std::vector<JointVisibility> vis = joint_visibility(out.pose, rendered, noise);

  std::mt19937_64 rng(mix_seed(noise.rng_seed, static_cast<std::uint64_t>(view.id)));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < out.pose.joints.size(); ++k) {
    const double sigma = noise.base_sigma_mm + noise.occlusion_gain_mm * vis[k].occlusion;
    const double nx = normal(rng), ny = normal(rng), nz = normal(rng);
    if (sigma > 0.0) out.pose.joints[k] += sigma * Vec3(nx, ny, nz);
  }

  constexpr double angle_scale = std::numbers::pi / 3.0;
  double mean_occ = 0.0, max_occ = 0.0, heavy = 0.0;
  for (const JointVisibility& v : vis) {
    mean_occ += v.occlusion;
    max_occ = std::max(max_occ, v.occlusion);
    heavy += v.occlusion > 0.5 ? 1.0 : 0.0;
  }
  const double n = std::max<double>(1.0, static_cast<double>(vis.size()));
  mean_occ /= n;
  heavy /= n;

  FeatureMap f(kOracleFeatureChannels, kOracleFeatureSide, kOracleFeatureSide);
  constexpr int cells = kOracleFeatureSide * kOracleFeatureSide;
  for (int cell = 0; cell < cells; ++cell) {
    const auto k = static_cast<std::size_t>(cell);
    f.data(0, cell) = view.zenith / angle_scale;
    f.data(1, cell) = view.azimuth / angle_scale;
    f.data(2, cell) = k < vis.size() ? vis[k].occlusion : 0.0;
    f.data(3, cell) = mean_occ;
    f.data(4, cell) = max_occ;
    f.data(5, cell) = k < vis.size() ? vis[k].coverage : 0.0;
    f.data(6, cell) = heavy;
    f.data(7, cell) = 1.0;
  }
  out.feature = std::move(f);
  return out;
}

EstimatorOutput oracle_estimate(const HandPose& gt, const VirtualView& view,
                                const PointCloud& cloud, const Intrinsics& intr,
                                const RenderConfig& cfg, const OracleNoiseModel& noise) {
  return oracle_estimate(gt, view, render_depth(cloud, view, intr, cfg), noise);
}

EstimatorOutput AnchorEstimator::estimate(const ViewContext& ctx) const {
  if (ctx.crop == nullptr) throw Error(ErrorCode::InvalidArgument, "anchor estimator needs a crop");
  return virtview::estimate(*ctx.crop, params_);
}

EstimatorOutput OracleEstimator::estimate(const ViewContext& ctx) const {
  if (ctx.ground_truth == nullptr || ctx.view == nullptr || ctx.rendered == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "oracle estimator needs ground truth and a rendered view");
  }
  OracleNoiseModel noise = noise_;
  noise.rng_seed = mix_seed(noise_.rng_seed, ctx.frame_seed);
  return oracle_estimate(*ctx.ground_truth, *ctx.view, *ctx.rendered, noise);
}

}  // namespace virtview
