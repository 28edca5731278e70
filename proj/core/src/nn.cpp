#include "virtview/nn.hpp"

#include <algorithm>
#include <cmath>

#include "virtview/error.hpp"

namespace virtview::nn {

Matrix& ParamSet::add(std::string name, Matrix value) {
  if (contains(name)) throw Error(ErrorCode::InvalidArgument, "duplicate tensor " + name);
  tensors_.push_back({std::move(name), std::move(value)});
  return tensors_.back().value;
}

Matrix& ParamSet::get(std::string_view name) {
  for (Tensor& t : tensors_) {
    if (t.name == name) return t.value;
  }
  throw Error(ErrorCode::FormatError, "missing tensor " + std::string(name));
}

const Matrix& ParamSet::get(std::string_view name) const {
  return const_cast<ParamSet*>(this)->get(name);
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const Tensor& t) { return t.name == name; });
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const Tensor& t : tensors_) out.add(t.name, Matrix::Zero(t.value.rows(), t.value.cols()));
  return out;
}

void ParamSet::set_zero() {
  for (Tensor& t : tensors_) t.value.setZero();
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

double& ParamSet::scalar(std::size_t flat) {
  for (Tensor& t : tensors_) {
    const auto n = static_cast<std::size_t>(t.value.size());
    if (flat < n) return t.value.data()[flat];
    flat -= n;
  }
  throw Error(ErrorCode::InvalidArgument, "flat parameter index out of range");
}

double ParamSet::scalar(std::size_t flat) const { return const_cast<ParamSet*>(this)->scalar(flat); }

bool ParamSet::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Tensor& t) { return t.value.allFinite(); });
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += scale * other.tensors_[i].value;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const Tensor& a = tensors_[i];
    const Tensor& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].value != other.tensors_[i].value) return false;
  }
  return true;
}

namespace {

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

void init_conv(ParamSet& params, const std::string& prefix, const ConvSpec& spec,
               std::mt19937_64& rng) {
  const double he = std::sqrt(2.0 / spec.patch());
  params.add(prefix + ".weight", random_normal(spec.out_channels, spec.patch(), he, rng));
  params.add(prefix + ".bias", Matrix::Zero(spec.out_channels, 1));
}

void init_linear(ParamSet& params, const std::string& prefix, int in, int out,
                 std::mt19937_64& rng, double gain) {
  const double scale = gain * std::sqrt(1.0 / in);
  params.add(prefix + ".weight", random_normal(out, in, scale, rng));
  params.add(prefix + ".bias", Matrix::Zero(out, 1));
}

Matrix im2col(const FeatureMap& x, const ConvSpec& spec, int out_h, int out_w) {
  const int k = spec.kernel;
  Matrix cols = Matrix::Zero(spec.patch(), static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.pad + kx;
            if (ix < 0 || ix >= x.width) continue;
            cols(row, oy * out_w + ox) = x.data(c, iy * x.width + ix);
          }
        }
      }
    }
  }
  return cols;
}

FeatureMap col2im(const Matrix& cols, const ConvSpec& spec, int in_h, int in_w, int out_h,
                  int out_w) {
  const int k = spec.kernel;
  FeatureMap x(spec.in_channels, in_h, in_w);
  for (int c = 0; c < spec.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= in_h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.pad + kx;
            if (ix < 0 || ix >= in_w) continue;
            x.data(c, iy * in_w + ix) += cols(row, oy * out_w + ox);
          }
        }
      }
    }
  }
  return x;
}

FeatureMap conv2d(const FeatureMap& x, const Matrix& weight, const Matrix& bias,
                  const ConvSpec& spec) {
  if (x.channels != spec.in_channels) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d input channel mismatch");
  }
  const int oh = spec.out_size(x.height);
  const int ow = spec.out_size(x.width);
  FeatureMap y;
  y.channels = spec.out_channels;
  y.height = oh;
  y.width = ow;
  y.data.noalias() = weight * im2col(x, spec, oh, ow);
  y.data.colwise() += bias.col(0);
  return y;
}

FeatureMap conv2d_backward(const FeatureMap& x, const FeatureMap& dy, const Matrix& weight,
                           const ConvSpec& spec, Matrix& dweight, Matrix& dbias, bool need_dx) {
  const Matrix cols = im2col(x, spec, dy.height, dy.width);
  dweight.noalias() += dy.data * cols.transpose();
  dbias.col(0) += dy.data.rowwise().sum();
  if (!need_dx) return {};
  const Matrix dcols = weight.transpose() * dy.data;
  return col2im(dcols, spec, x.height, x.width, dy.height, dy.width);
}

void relu(FeatureMap& x) { x.data = x.data.cwiseMax(0.0); }

void relu_backward(const FeatureMap& y, FeatureMap& dy) {
  dy.data = (y.data.array() > 0.0).select(dy.data, 0.0);
}

Vector global_average(const FeatureMap& x) { return x.data.rowwise().mean(); }

FeatureMap global_average_backward(const Vector& dy, int channels, int height, int width) {
  FeatureMap dx(channels, height, width);
  const double inv = 1.0 / (static_cast<double>(height) * width);
  dx.data.colwise() = dy * inv;
  return dx;
}

FeatureMap average_pool(const FeatureMap& x, int factor) {
  const int oh = x.height / factor;
  const int ow = x.width / factor;
  FeatureMap y(x.channels, oh, ow);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < x.channels; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) s += x.at(c, oy * factor + dy, ox * factor + dx);
        }
        y.at(c, oy, ox) = s * inv;
      }
    }
  }
  return y;
}

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

Vector softmax_backward(const Vector& y, const Vector& dy) {
  const double dot = y.dot(dy);
  return (y.array() * (dy.array() - dot)).matrix();
}

double smooth_l1(double x, double tau) {
  const double a = std::abs(x);
  return a < tau ? 0.5 * a * a / tau : a - 0.5 * tau;
}

double smooth_l1_grad(double x, double tau) {
  const double a = std::abs(x);
  if (a < tau) return x / tau;
  return x > 0.0 ? 1.0 : -1.0;
}

double smooth_l1_norm(const Eigen::Ref<const Vector>& e, Vector* grad, double tau) {
  const double n = e.norm();
  if (n < tau) {
    if (grad != nullptr) *grad = e / tau;
    return 0.5 * n * n / tau;
  }
  if (grad != nullptr) *grad = e / n;
  return n - 0.5 * tau;
}

Adam::Adam(const ParamSet& layout, AdamConfig cfg)
    : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
  auto& pt = params.tensors();
  const auto& gt = grads.tensors();
  auto& mt = m_.tensors();
  auto& vt = v_.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    mt[i].value = cfg_.beta1 * mt[i].value + (1.0 - cfg_.beta1) * gt[i].value;
    vt[i].value = cfg_.beta2 * vt[i].value + (1.0 - cfg_.beta2) * gt[i].value.cwiseAbs2();
    pt[i].value.array() -= lr * (mt[i].value.array() / c1) /
                           ((vt[i].value.array() / c2).sqrt() + cfg_.epsilon);
  }
}

}  // namespace virtview::nn
