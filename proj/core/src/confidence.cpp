#include "virtview/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "virtview/error.hpp"
#include "virtview/random.hpp"

namespace virtview {

using nn::FeatureMap;
using nn::Matrix;
using nn::Vector;

// ---------------------------------------------------------------------------
// Teacher

void TeacherConfig::validate() const {
  if (in_channels <= 0 || in_height <= 0 || in_width <= 0) {
    throw Error(ErrorCode::InvalidArgument, "teacher input shape must be positive");
  }
  if (heads != 1) throw Error(ErrorCode::InvalidArgument, "only single-head attention is supported");
  if (key_dim <= 0 || value_dim <= 0) throw Error(ErrorCode::InvalidArgument, "attention dims must be > 0");
  for (int c : channels) {
    if (c <= 0) throw Error(ErrorCode::InvalidArgument, "teacher channels must be > 0");
  }
}

namespace {

nn::ConvSpec teacher_conv(const TeacherConfig& cfg, int i) {
  nn::ConvSpec s;
  s.in_channels = i == 0 ? cfg.in_channels : cfg.channels[static_cast<std::size_t>(i - 1)];
  s.out_channels = cfg.channels[static_cast<std::size_t>(i)];
  return s;
}

std::string teacher_conv_name(int i) { return "teacher.conv" + std::to_string(i + 1); }

Matrix random_weight(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix row_softmax(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) out.row(i) = nn::softmax(s.row(i).transpose()).transpose();
  return out;
}

}  // namespace

TeacherParams TeacherParams::initialize(const TeacherConfig& config, std::uint64_t seed) {
  config.validate();
  TeacherParams p;
  p.config = config;
  p.rng_seed = seed;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < 3; ++i) nn::init_conv(p.tensors, teacher_conv_name(i), teacher_conv(config, i), rng);
  const int d = config.feature_dim();
  const double s = std::sqrt(1.0 / d);
  p.tensors.add("attn.query.weight", random_weight(config.key_dim, d, s, rng));
  p.tensors.add("attn.key.weight", random_weight(config.key_dim, d, s, rng));
  p.tensors.add("attn.value.weight", random_weight(config.value_dim, d, s, rng));
  p.tensors.add("attn.output.weight",
                random_weight(d, config.value_dim, 0.1 * std::sqrt(1.0 / config.value_dim), rng));
  nn::init_linear(p.tensors, "teacher.head", d, 1, rng, 0.1);
  return p;
}

AttentionResult attention(const Matrix& h, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  AttentionResult r;
  r.queries = h * wq.transpose();
  r.keys = h * wk.transpose();
  r.values = h * wv.transpose();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wk.rows()));
  r.weights = row_softmax(inv_sqrt * (r.queries * r.keys.transpose()));
  r.output = r.weights * r.values;
  return r;
}

std::vector<double> teacher_confidence(std::span<const FeatureMap> features,
                                       const TeacherParams& params, TeacherTrace* trace) {
  const TeacherConfig& cfg = params.config;
  if (features.empty()) throw Error(ErrorCode::ShapeMismatch, "teacher needs at least one view");
  const auto m = static_cast<Eigen::Index>(features.size());
  TeacherTrace local;
  TeacherTrace& t = trace != nullptr ? *trace : local;
  t.encoder.assign(features.size(), {});
  t.encoded.resize(m, cfg.feature_dim());

  for (Eigen::Index i = 0; i < m; ++i) {
    const FeatureMap& x = features[static_cast<std::size_t>(i)];
    if (x.channels != cfg.in_channels || x.height != cfg.in_height || x.width != cfg.in_width) {
      throw Error(ErrorCode::ShapeMismatch,
                  "teacher expects " + std::to_string(cfg.in_channels) + "x" +
                      std::to_string(cfg.in_height) + "x" + std::to_string(cfg.in_width) +
                      " features, got " + std::to_string(x.channels) + "x" +
                      std::to_string(x.height) + "x" + std::to_string(x.width));
    }
    auto& layers = t.encoder[static_cast<std::size_t>(i)];
    layers.push_back(x);
    for (int l = 0; l < 3; ++l) {
      const std::string name = teacher_conv_name(l);
      FeatureMap y = nn::conv2d(layers.back(), params.tensors.get(name + ".weight"),
                                params.tensors.get(name + ".bias"), teacher_conv(cfg, l));
      nn::relu(y);
      layers.push_back(std::move(y));
    }
    t.encoded.row(i) = nn::global_average(layers.back()).transpose();
  }

  t.attn = attention(t.encoded, params.tensors.get("attn.query.weight"),
                     params.tensors.get("attn.key.weight"), params.tensors.get("attn.value.weight"));
  t.fused = t.encoded + t.attn.output * params.tensors.get("attn.output.weight").transpose();
  const Vector scores = t.fused * params.tensors.get("teacher.head.weight").row(0).transpose();
  const double bias = params.tensors.get("teacher.head.bias")(0, 0);
  std::vector<double> out(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = scores(i) + bias;
  return out;
}

std::vector<FeatureMap> teacher_backward(const TeacherParams& params, const TeacherTrace& trace,
                                         std::span<const double> d_scores, nn::ParamSet& grads,
                                         bool need_input_grad) {
  const TeacherConfig& cfg = params.config;
  const auto m = static_cast<Eigen::Index>(d_scores.size());
  if (m != trace.encoded.rows()) throw Error(ErrorCode::LengthMismatch, "score gradient length");
  const Vector ds = Eigen::Map<const Vector>(d_scores.data(), m);

  const Matrix& w_head = params.tensors.get("teacher.head.weight");  // 1 x d
  grads.get("teacher.head.weight").row(0) += (trace.fused.transpose() * ds).transpose();
  grads.get("teacher.head.bias")(0, 0) += ds.sum();
  const Matrix d_fused = ds * w_head;  // M x d

  const Matrix& wo = params.tensors.get("attn.output.weight");  // d x dv
  const Matrix& wq = params.tensors.get("attn.query.weight");
  const Matrix& wk = params.tensors.get("attn.key.weight");
  const Matrix& wv = params.tensors.get("attn.value.weight");
  const AttentionResult& a = trace.attn;

  grads.get("attn.output.weight").noalias() += d_fused.transpose() * a.output;
  const Matrix d_out = d_fused * wo;  // M x dv
  const Matrix d_weights = d_out * a.values.transpose();
  const Matrix d_values = a.weights.transpose() * d_out;
  Matrix d_logits(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    d_logits.row(i) =
        nn::softmax_backward(a.weights.row(i).transpose(), d_weights.row(i).transpose()).transpose();
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wk.rows()));
  const Matrix d_q = inv_sqrt * (d_logits * a.keys);
  const Matrix d_k = inv_sqrt * (d_logits.transpose() * a.queries);

  grads.get("attn.query.weight").noalias() += d_q.transpose() * trace.encoded;
  grads.get("attn.key.weight").noalias() += d_k.transpose() * trace.encoded;
  grads.get("attn.value.weight").noalias() += d_values.transpose() * trace.encoded;
  Matrix d_encoded = d_fused;
  d_encoded.noalias() += d_q * wq + d_k * wk + d_values * wv;

  std::vector<FeatureMap> d_inputs;
  if (need_input_grad) d_inputs.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& layers = trace.encoder[static_cast<std::size_t>(i)];
    const FeatureMap& top = layers.back();
    FeatureMap dy =
        nn::global_average_backward(d_encoded.row(i).transpose(), top.channels, top.height, top.width);
    for (int l = 3; l >= 1; --l) {
      nn::relu_backward(layers[static_cast<std::size_t>(l)], dy);
      const std::string name = teacher_conv_name(l - 1);
      const bool need_dx = l > 1 || need_input_grad;
      dy = nn::conv2d_backward(layers[static_cast<std::size_t>(l - 1)], dy,
                               params.tensors.get(name + ".weight"), teacher_conv(cfg, l - 1),
                               grads.get(name + ".weight"), grads.get(name + ".bias"), need_dx);
    }
    if (need_input_grad) d_inputs[static_cast<std::size_t>(i)] = std::move(dy);
  }
  return d_inputs;
}

// ---------------------------------------------------------------------------
// Student

int StudentConfig::flat_dim() const {
  int side = pooled_side();
  for (std::size_t i = 0; i < channels.size(); ++i) side = (side + 1) / 2;
  return channels.back() * side * side;
}

void StudentConfig::validate() const {
  if (crop_size <= 0 || pool <= 0 || crop_size % pool != 0) {
    throw Error(ErrorCode::InvalidArgument, "student crop size must be a multiple of the pool factor");
  }
  if (channels.empty() || views <= 0) throw Error(ErrorCode::InvalidArgument, "invalid student layout");
}

namespace {

nn::ConvSpec student_conv(const StudentConfig& cfg, int i) {
  nn::ConvSpec s;
  s.in_channels = i == 0 ? 1 : cfg.channels[static_cast<std::size_t>(i - 1)];
  s.out_channels = cfg.channels[static_cast<std::size_t>(i)];
  return s;
}

std::string student_conv_name(int i) { return "student.conv" + std::to_string(i + 1); }

}  // namespace

StudentParams StudentParams::initialize(const StudentConfig& config, std::uint64_t seed) {
  config.validate();
  StudentParams p;
  p.config = config;
  p.rng_seed = seed;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < static_cast<int>(config.channels.size()); ++i) {
    nn::init_conv(p.tensors, student_conv_name(i), student_conv(config, i), rng);
  }
  nn::init_linear(p.tensors, "student.fc", config.flat_dim(), config.views, rng, 0.01);
  p.tensors.get("student.fc.bias").setConstant(1.0 / config.views);
  return p;
}

FeatureMap student_input(const NormalizedCrop& crop, const StudentConfig& config) {
  if (crop.size != config.crop_size) {
    throw Error(ErrorCode::ShapeMismatch, "student expects a " + std::to_string(config.crop_size) +
                                              " crop, got " + std::to_string(crop.size));
  }
  FeatureMap x(1, crop.size, crop.size);
  x.data = Eigen::Map<const Matrix>(crop.values.data(), 1,
                                    static_cast<Eigen::Index>(crop.values.size()));
  return nn::average_pool(x, config.pool);
}

std::vector<double> student_forward(const FeatureMap& pooled, const StudentParams& params,
                                    StudentTrace* trace) {
  const StudentConfig& cfg = params.config;
  StudentTrace local;
  StudentTrace& t = trace != nullptr ? *trace : local;
  t.layers.clear();
  t.layers.push_back(pooled);
  for (int i = 0; i < static_cast<int>(cfg.channels.size()); ++i) {
    const std::string name = student_conv_name(i);
    FeatureMap y = nn::conv2d(t.layers.back(), params.tensors.get(name + ".weight"),
                              params.tensors.get(name + ".bias"), student_conv(cfg, i));
    nn::relu(y);
    t.layers.push_back(std::move(y));
  }
  const Matrix& top = t.layers.back().data;
  const Eigen::Map<const Vector> flat(top.data(), top.size());
  const Vector out = params.tensors.get("student.fc.weight") * flat +
                     params.tensors.get("student.fc.bias").col(0);
  return {out.data(), out.data() + out.size()};
}

std::vector<double> student_confidence(const NormalizedCrop& crop, const StudentParams& params) {
  return student_forward(student_input(crop, params.config), params);
}

void student_backward(const StudentParams& params, const StudentTrace& trace,
                      std::span<const double> d_scores, nn::ParamSet& grads) {
  const StudentConfig& cfg = params.config;
  const Eigen::Map<const Vector> ds(d_scores.data(), static_cast<Eigen::Index>(d_scores.size()));
  const FeatureMap& top = trace.layers.back();
  const Eigen::Map<const Vector> flat(top.data.data(), top.data.size());
  grads.get("student.fc.weight").noalias() += ds * flat.transpose();
  grads.get("student.fc.bias").col(0) += ds;
  const Vector d_flat = params.tensors.get("student.fc.weight").transpose() * ds;

  FeatureMap dy(top.channels, top.height, top.width);
  dy.data = Eigen::Map<const Matrix>(d_flat.data(), top.channels, top.pixels());
  for (int l = static_cast<int>(cfg.channels.size()); l >= 1; --l) {
    nn::relu_backward(trace.layers[static_cast<std::size_t>(l)], dy);
    const std::string name = student_conv_name(l - 1);
    dy = nn::conv2d_backward(trace.layers[static_cast<std::size_t>(l - 1)], dy,
                             params.tensors.get(name + ".weight"), student_conv(cfg, l - 1),
                             grads.get(name + ".weight"), grads.get(name + ".bias"), l > 1);
  }
}

// ---------------------------------------------------------------------------
// Selection and losses

ConfidenceVector softmax_over(std::span<const double> raw, std::span<const int> ids) {
  ConfidenceVector c;
  c.raw.assign(raw.begin(), raw.end());
  c.selected_ids.assign(ids.begin(), ids.end());
  Vector sel(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= raw.size()) {
      throw Error(ErrorCode::BadN, "selected id " + std::to_string(id) + " out of range");
    }
    sel(static_cast<Eigen::Index>(i)) = raw[static_cast<std::size_t>(id)];
  }
  const Vector w = nn::softmax(sel);
  c.weights.assign(w.data(), w.data() + w.size());
  return c;
}

ConfidenceVector softmax_select(std::span<const double> raw, int n) {
  const int m = static_cast<int>(raw.size());
  if (n < 1 || n > m) {
    throw Error(ErrorCode::BadN, "n=" + std::to_string(n) + " outside [1, " + std::to_string(m) + "]");
  }
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return raw[static_cast<std::size_t>(a)] > raw[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(n));
  return softmax_over(raw, order);
}

ConfidenceVector uniform_confidence(int m, std::span<const int> ids) {
  ConfidenceVector c;
  c.raw.assign(static_cast<std::size_t>(m), 0.0);
  c.selected_ids.assign(ids.begin(), ids.end());
  c.weights.assign(ids.size(), 1.0 / static_cast<double>(ids.size()));
  return c;
}

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && lambda > 0.0 && beta > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "gamma, lambda and beta must be positive");
  }
  if (!(lr > 0.0) || !(decay > 0.0) || epochs < 0 || batch_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "invalid optimiser schedule");
  }
}

double fusion_loss(const HandPose& fused, const HandPose& gt) {
  if (fused.frame_id != gt.frame_id) {
    throw Error(ErrorCode::FrameMismatch, "'" + fused.frame_id + "' vs '" + gt.frame_id + "'");
  }
  if (fused.joints.size() != gt.joints.size()) throw Error(ErrorCode::LengthMismatch, "joint counts differ");
  double l = 0.0;
  for (std::size_t k = 0; k < gt.joints.size(); ++k) l += nn::smooth_l1((fused.joints[k] - gt.joints[k]).norm());
  return l;
}

double joint_loss(std::span<const double> a2j_terms, double fused_loss, const TrainConfig& cfg) {
  double mean = 0.0;
  if (!a2j_terms.empty()) {
    mean = std::accumulate(a2j_terms.begin(), a2j_terms.end(), 0.0) / static_cast<double>(a2j_terms.size());
  }
  return mean + cfg.gamma * fused_loss;
}

double distill_loss(std::span<const double> student_raw, std::span<const double> teacher_post,
                    double beta) {
  if (student_raw.size() != teacher_post.size()) {
    throw Error(ErrorCode::LengthMismatch, "student and teacher confidence lengths differ");
  }
  double l = 0.0;
  for (std::size_t i = 0; i < student_raw.size(); ++i) {
    l += nn::smooth_l1(beta * (student_raw[i] - teacher_post[i]));
  }
  return l;
}

std::vector<double> distill_loss_grad(std::span<const double> student_raw,
                                      std::span<const double> teacher_post, double beta) {
  if (student_raw.size() != teacher_post.size()) {
    throw Error(ErrorCode::LengthMismatch, "student and teacher confidence lengths differ");
  }
  std::vector<double> g(student_raw.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = beta * nn::smooth_l1_grad(beta * (student_raw[i] - teacher_post[i]));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Joint teacher training

NormalizedCrop CropSource::crop_for(const VirtualView& view) const {
  const DepthImage depth = render_depth(cloud, view, intrinsics, render);
  return crop_hand(depth, view.from_original.apply(center_mm), crop);
}

namespace {

struct ViewForward {
  std::vector<EstimatorOutput> outputs;
  std::vector<A2JTrace> traces;
  std::vector<HandPose> gt_views;
};

ViewForward run_views(const MultiViewSample& sample, const EstimatorParams* estimator, bool keep_trace) {
  ViewForward f;
  const auto m = static_cast<std::size_t>(sample.views.size());
  if (!sample.fixed_outputs.empty()) {
    if (sample.fixed_outputs.size() != m) {
      throw Error(ErrorCode::LengthMismatch, "fixed outputs do not cover every view");
    }
    f.outputs = sample.fixed_outputs;
  } else {
    if (estimator == nullptr || !sample.source) {
      throw Error(ErrorCode::InvalidArgument, "sample needs fixed outputs or an estimator and crop source");
    }
    f.outputs.resize(m);
    if (keep_trace) f.traces.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      f.outputs[i] = estimate(sample.source->crop_for(sample.views.views[i]), *estimator,
                              keep_trace ? &f.traces[i] : nullptr);
    }
  }
  f.gt_views.reserve(m);
  for (const VirtualView& v : sample.views.views) {
    f.gt_views.push_back(transform_pose(sample.gt, v.from_original, v.frame_id));
  }
  return f;
}

std::vector<FeatureMap> features_of(const std::vector<EstimatorOutput>& outputs) {
  std::vector<FeatureMap> f;
  f.reserve(outputs.size());
  for (const EstimatorOutput& o : outputs) f.push_back(o.feature);
  return f;
}

ViewSelectionLoss run_view_selection(const MultiViewSample& sample, const EstimatorParams* estimator,
                                     const TeacherParams& teacher, const TrainConfig& cfg,
                                     nn::ParamSet* estimator_grads, nn::ParamSet* teacher_grads,
                                     double scale) {
  const bool backward = teacher_grads != nullptr;
  const bool train_estimator = backward && estimator_grads != nullptr && sample.fixed_outputs.empty();
  const ViewForward f = run_views(sample, estimator, train_estimator);
  const std::size_t m = f.outputs.size();

  TeacherTrace trace;
  const std::vector<FeatureMap> feats = features_of(f.outputs);
  const std::vector<double> raw = teacher_confidence(feats, teacher, backward ? &trace : nullptr);
  const Vector c = nn::softmax(Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(m)));

  const std::size_t k_count = sample.gt.joints.size();
  std::vector<std::vector<Vec3>> moved(m);
  HandPose fused;
  fused.frame_id = kOriginalFrame;
  fused.joints.assign(k_count, Vec3::Zero());
  for (std::size_t i = 0; i < m; ++i) {
    const RigidTransform& to = sample.views.views[i].to_original;
    for (std::size_t k = 0; k < k_count; ++k) {
      moved[i].push_back(to.apply(f.outputs[i].pose.joints[k]));
      fused.joints[k] += c(static_cast<Eigen::Index>(i)) * moved[i][k];
    }
  }

  ViewSelectionLoss loss;
  loss.fusion = fusion_loss(fused, sample.gt);
  std::vector<double> a2j_terms;
  const bool with_a2j = sample.fixed_outputs.empty();
  if (with_a2j) {
    for (std::size_t i = 0; i < m; ++i) a2j_terms.push_back(a2j_loss(f.outputs[i], f.gt_views[i], cfg.lambda));
    loss.a2j = std::accumulate(a2j_terms.begin(), a2j_terms.end(), 0.0) / static_cast<double>(m);
  }
  loss.total = joint_loss(a2j_terms, loss.fusion, cfg);
  if (!backward) return loss;

  // dL/dfused_k = gamma * grad smooth_l1(||fused_k - gt_k||)
  std::vector<Vec3> d_fused(k_count);
  Vector g;
  for (std::size_t k = 0; k < k_count; ++k) {
    nn::smooth_l1_norm(fused.joints[k] - sample.gt.joints[k], &g);
    d_fused[k] = scale * cfg.gamma * Vec3(g);
  }
  Vector d_c(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) s += d_fused[k].dot(moved[i][k]);
    d_c(static_cast<Eigen::Index>(i)) = s;
  }
  const Vector d_raw = nn::softmax_backward(c, d_c);
  const std::vector<FeatureMap> d_feats = teacher_backward(
      teacher, trace, std::span<const double>(d_raw.data(), m), *teacher_grads, train_estimator);

  if (train_estimator) {
    for (std::size_t i = 0; i < m; ++i) {
      OutputGrad og = a2j_loss_grad(f.outputs[i], f.gt_views[i], cfg.lambda, scale / static_cast<double>(m));
      const Mat3 rt = sample.views.views[i].to_original.rotation.transpose();
      const double ci = c(static_cast<Eigen::Index>(i));
      for (std::size_t k = 0; k < k_count; ++k) {
        og.pose.row(static_cast<Eigen::Index>(k)) += (ci * (rt * d_fused[k])).transpose();
      }
      estimate_backward(*estimator, f.traces[i], f.outputs[i], og, &d_feats[i], *estimator_grads);
    }
  }
  return loss;
}

}  // namespace

ViewSelectionLoss view_selection_loss(const MultiViewSample& sample, const EstimatorParams* estimator,
                                      const TeacherParams& teacher, const TrainConfig& cfg) {
  return run_view_selection(sample, estimator, teacher, cfg, nullptr, nullptr, 1.0);
}

ViewSelectionLoss view_selection_backward(const MultiViewSample& sample,
                                          const EstimatorParams* estimator,
                                          const TeacherParams& teacher, const TrainConfig& cfg,
                                          nn::ParamSet* estimator_grads, nn::ParamSet& teacher_grads,
                                          double scale) {
  return run_view_selection(sample, estimator, teacher, cfg, estimator_grads, &teacher_grads, scale);
}

std::pair<EstimatorParams, TeacherParams> train_teacher_joint(std::span<const MultiViewSample> data,
                                                              EstimatorParams estimator,
                                                              TeacherParams teacher,
                                                              const TrainConfig& cfg,
                                                              TrainingLog* log) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "teacher training set is empty");
  const bool estimator_trainable =
      !cfg.freeze_estimator &&
      std::any_of(data.begin(), data.end(), [](const MultiViewSample& s) { return s.fixed_outputs.empty(); });

  nn::Adam teacher_opt(teacher.tensors);
  nn::Adam estimator_opt;
  nn::ParamSet teacher_grads = teacher.tensors.zeros_like();
  nn::ParamSet estimator_grads;
  if (estimator_trainable) {
    estimator_opt = nn::Adam(estimator.tensors);
    estimator_grads = estimator.tensors.zeros_like();
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = nn::scheduled_lr(cfg.lr, cfg.decay, epoch);
    double sum_total = 0.0, sum_a2j = 0.0, sum_fusion = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      teacher_grads.set_zero();
      if (estimator_trainable) estimator_grads.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        const ViewSelectionLoss l = view_selection_backward(
            data[order[i]], &estimator, teacher, cfg, estimator_trainable ? &estimator_grads : nullptr,
            teacher_grads, scale);
        if (!std::isfinite(l.total)) {
          throw Error(ErrorCode::NonFiniteLoss, "view-selection loss is not finite at epoch " +
                                                    std::to_string(epoch) + ", sample " +
                                                    std::to_string(order[i]));
        }
        sum_total += l.total;
        sum_a2j += l.a2j;
        sum_fusion += l.fusion;
      }
      teacher_opt.step(teacher.tensors, teacher_grads, lr);
      if (estimator_trainable) estimator_opt.step(estimator.tensors, estimator_grads, lr);
      if (!teacher.tensors.all_finite() || !estimator.tensors.all_finite()) {
        throw Error(ErrorCode::NonFiniteLoss, "parameters diverged at epoch " + std::to_string(epoch));
      }
    }
    if (log != nullptr) {
      const double n = static_cast<double>(data.size());
      log->push({"teacher", epoch, lr, sum_total / n, {{"l_a2j", sum_a2j / n}, {"l_j", sum_fusion / n}}});
    }
  }
  return {std::move(estimator), std::move(teacher)};
}

std::vector<double> teacher_targets(const MultiViewSample& sample, const EstimatorParams* estimator,
                                    const TeacherParams& teacher) {
  const ViewForward f = run_views(sample, estimator, false);
  const std::vector<FeatureMap> feats = features_of(f.outputs);
  const std::vector<double> raw = teacher_confidence(feats, teacher);
  const Vector p = nn::softmax(Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(raw.size())));
  return {p.data(), p.data() + p.size()};
}

StudentParams train_student_on_targets(std::span<const NormalizedCrop> crops,
                                       std::span<const std::vector<double>> targets,
                                       StudentParams student, const TrainConfig& cfg,
                                       TrainingLog* log) {
  cfg.validate();
  if (crops.empty()) throw Error(ErrorCode::EmptyDataset, "student training set is empty");
  if (crops.size() != targets.size()) throw Error(ErrorCode::LengthMismatch, "crops and targets differ");
  std::vector<FeatureMap> inputs;
  inputs.reserve(crops.size());
  for (const NormalizedCrop& c : crops) inputs.push_back(student_input(c, student.config));
  for (const auto& t : targets) {
    if (static_cast<int>(t.size()) != student.config.views) {
      throw Error(ErrorCode::LengthMismatch, "target length != student output size");
    }
  }

  nn::Adam opt(student.tensors);
  nn::ParamSet grads = student.tensors.zeros_like();
  std::vector<std::size_t> order(crops.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  StudentTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed ^ 0x5157u, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = nn::scheduled_lr(cfg.lr, cfg.decay, epoch);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      grads.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        const std::vector<double> out = student_forward(inputs[order[i]], student, &trace);
        const std::vector<double>& target = targets[order[i]];
        const double l = distill_loss(out, target, cfg.beta);
        if (!std::isfinite(l)) {
          throw Error(ErrorCode::NonFiniteLoss, "distillation loss is not finite at epoch " + std::to_string(epoch));
        }
        sum += l;
        std::vector<double> d = distill_loss_grad(out, target, cfg.beta);
        for (double& v : d) v *= scale;
        student_backward(student, trace, d, grads);
      }
      opt.step(student.tensors, grads, lr);
    }
    if (log != nullptr) {
      log->push({"student", epoch, lr, sum / static_cast<double>(crops.size()), {}});
    }
  }
  return student;
}

StudentParams train_student(std::span<const MultiViewSample> data, const TeacherParams& frozen_teacher,
                            const EstimatorParams* frozen_estimator, StudentParams student,
                            const TrainConfig& cfg, TrainingLog* log) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "student training set is empty");
  std::vector<NormalizedCrop> crops;
  std::vector<std::vector<double>> targets;
  crops.reserve(data.size());
  targets.reserve(data.size());
  for (const MultiViewSample& s : data) {
    crops.push_back(s.original_crop);
    targets.push_back(teacher_targets(s, frozen_estimator, frozen_teacher));
  }
  return train_student_on_targets(crops, targets, std::move(student), cfg, log);
}

}  // namespace virtview
