#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace virtview::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// C x (H*W) activations, channel-major.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix::Zero(c, h * w)) {}

  int pixels() const { return height * width; }
  double& at(int c, int y, int x) { return data(c, y * width + x); }
  double at(int c, int y, int x) const { return data(c, y * width + x); }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

struct Tensor {
  std::string name;
  Matrix value;
};

// Ordered collection of named trainable tensors. Gradients and optimiser
// moments use the same layout (see zeros_like).
class ParamSet {
 public:
  Matrix& add(std::string name, Matrix value);
  Matrix& get(std::string_view name);
  const Matrix& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  ParamSet zeros_like() const;
  void set_zero();
  std::size_t scalar_count() const;
  // Flat view over every scalar in insertion order.
  double& scalar(std::size_t flat);
  double scalar(std::size_t flat) const;
  bool all_finite() const;
  void add_scaled(const ParamSet& other, double scale);
  bool same_layout(const ParamSet& other) const;
  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Tensor> tensors_;
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 2;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
};

// Weight is out_channels x (in_channels * k * k), bias out_channels x 1.
void init_conv(ParamSet& params, const std::string& prefix, const ConvSpec& spec,
               std::mt19937_64& rng);
void init_linear(ParamSet& params, const std::string& prefix, int in, int out,
                 std::mt19937_64& rng, double gain = 1.0);

Matrix im2col(const FeatureMap& x, const ConvSpec& spec, int out_h, int out_w);
FeatureMap col2im(const Matrix& cols, const ConvSpec& spec, int in_h, int in_w, int out_h,
                  int out_w);

FeatureMap conv2d(const FeatureMap& x, const Matrix& weight, const Matrix& bias,
                  const ConvSpec& spec);
// Accumulates into dweight/dbias; returns dL/dx when need_dx.
FeatureMap conv2d_backward(const FeatureMap& x, const FeatureMap& dy, const Matrix& weight,
                           const ConvSpec& spec, Matrix& dweight, Matrix& dbias, bool need_dx);

void relu(FeatureMap& x);
// Zeroes dy where the forward output y was not positive.
void relu_backward(const FeatureMap& y, FeatureMap& dy);

Vector global_average(const FeatureMap& x);
FeatureMap global_average_backward(const Vector& dy, int channels, int height, int width);

FeatureMap average_pool(const FeatureMap& x, int factor);

// Numerically stable softmax.
Vector softmax(const Vector& logits);
// Given y = softmax(x) and dL/dy, returns dL/dx.
Vector softmax_backward(const Vector& y, const Vector& dy);

// Smooth-L1 (Huber) with switch point tau: 0.5 x^2 / tau below tau, |x| - 0.5 tau above.
double smooth_l1(double x, double tau = 1.0);
double smooth_l1_grad(double x, double tau = 1.0);
// L(||e||) and its gradient with respect to e.
double smooth_l1_norm(const Eigen::Ref<const Vector>& e, Vector* grad, double tau = 1.0);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet& layout, AdamConfig cfg = {});

  void step(ParamSet& params, const ParamSet& grads, double lr);
  int steps() const { return t_; }

 private:
  AdamConfig cfg_;
  ParamSet m_;
  ParamSet v_;
  int t_ = 0;
};

// lr_e = base * decay^e
inline double scheduled_lr(double base, double decay, int epoch) {
  double lr = base;
  for (int e = 0; e < epoch; ++e) lr *= decay;
  return lr;
}

}  // namespace virtview::nn
