#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "virtview/nn.hpp"

namespace virtview::testing {

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

struct GradientCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;       // positions where the loss is not differentiable at this step
  std::size_t unresolved = 0;  // gradient below the quotient's rounding noise
};

// Central differences on `count` seeded scalar positions of `params`, compared
// with the analytic gradient in `grads` (same layout). Two kinds of position are
// left out of `worst` and counted instead:
//  - kinks: a ReLU or smooth-L1 switch within `step`, seen as central quotients at
//    `step` and `step / 2` that disagree, or as forward and backward quotients whose
//    gap does not shrink with the step (a switch exactly at the point);
//  - unresolved: a gradient too small for the quotient's rounding noise
//    (eps * |loss| / step) to resolve to `tolerance`.
inline GradientCheck check_gradient(nn::ParamSet& params, const nn::ParamSet& grads,
                                    const std::function<double()>& loss, std::size_t count,
                                    std::uint64_t seed, double step = 1e-5,
                                    double tolerance = 1e-4) {
  GradientCheck out;
  const double base = loss();
  const double noise = std::numeric_limits<double>::epsilon() * std::abs(base) / step;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, params.scalar_count() - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = pick(rng);
    const double saved = params.scalar(idx);
    auto at = [&](double h) {
      params.scalar(idx) = saved + h;
      const double v = loss();
      params.scalar(idx) = saved;
      return v;
    };
    const double up = at(step), down = at(-step), up2 = at(step / 2), down2 = at(-step / 2);
    const double numeric = (up - down) / (2.0 * step);
    const double half = (up2 - down2) / step;
    if (numeric == grads.scalar(idx)) {
      ++out.checked;
      continue;
    }
    if (10.0 * noise > tolerance * std::max(std::abs(numeric), std::abs(grads.scalar(idx)))) {
      ++out.unresolved;
      continue;
    }
    const double gap = std::abs((up - base) - (base - down)) / step;
    const double gap2 = 2.0 * std::abs((up2 - base) - (base - down2)) / step;
    const double scale = std::max(std::abs(numeric), 1e-8);
    const bool switch_at_point = gap > tolerance * scale && gap2 > 0.75 * gap;
    if (relative_error(numeric, half) > tolerance || switch_at_point) {
      ++out.kinks;
      continue;
    }
    out.worst = std::max(out.worst, relative_error(grads.scalar(idx), numeric));
    ++out.checked;
  }
  return out;
}

inline nn::FeatureMap random_map(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  nn::FeatureMap m(c, h, w);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = n(rng);
  return m;
}

}  // namespace virtview::testing
