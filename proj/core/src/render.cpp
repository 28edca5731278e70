#include "virtview/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include "virtview/error.hpp"
#include "virtview/parallel.hpp"

namespace virtview {

int default_thread_count() {
  if (const char* env = std::getenv("VIRTVIEW_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void RenderConfig::validate() const {
  if (out_width <= 0 || out_height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "render output size must be positive");
  }
  if (splat_radius < 0 || splat_radius > 3) {
    throw Error(ErrorCode::InvalidArgument, "splat_radius must be in [0, 3]");
  }
  if (!(max_range_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "max_range_mm must be > 0");
}

void CropConfig::validate() const {
  if (crop_size <= 0) throw Error(ErrorCode::InvalidArgument, "crop_size must be positive");
  if (!(cube_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "cube_mm must be positive");
}

DepthImage render_depth(const PointCloud& cloud, const VirtualView& view, const Intrinsics& intr,
                        const RenderConfig& cfg) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "cannot render an empty cloud");
  cfg.validate();

  Intrinsics out_intr = intr;
  out_intr.width = cfg.out_width;
  out_intr.height = cfg.out_height;
  DepthImage out(out_intr, view.frame_id);

  const int w = cfg.out_width;
  const int h = cfg.out_height;
  const int r = cfg.splat_radius;
  const Mat3& rot = view.from_original.rotation;
  const Vec3& trans = view.from_original.translation;
  double* buf = out.values.data();

  for (const Vec3& p : cloud.points) {
    const Vec3 q = rot * p + trans;
    const double z = q.z();
    if (!(z > 0.0) || z >= cfg.max_range_mm) continue;
    const double u = intr.fx * q.x() / z + intr.cx;
    const double v = intr.fy * q.y() / z + intr.cy;
    if (!(u > -0.5 && v > -0.5 && u < w - 0.5 && v < h - 0.5)) continue;
    const int ui = static_cast<int>(std::lround(u));
    const int vi = static_cast<int>(std::lround(v));
    if (ui < 0 || vi < 0 || ui >= w || vi >= h) continue;
    const int u_lo = std::max(0, ui - r), u_hi = std::min(w - 1, ui + r);
    const int v_lo = std::max(0, vi - r), v_hi = std::min(h - 1, vi + r);
    for (int y = v_lo; y <= v_hi; ++y) {
      double* row = buf + static_cast<std::size_t>(y) * w;
      for (int x = u_lo; x <= u_hi; ++x) {
        if (row[x] == 0.0 || z < row[x]) row[x] = z;
      }
    }
  }
  return out;
}

std::vector<DepthImage> render_all(const PointCloud& cloud, const VirtualViewSet& views,
                                   const Intrinsics& intr, const RenderConfig& cfg, int threads) {
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "cannot render an empty cloud");
  std::vector<DepthImage> out(views.views.size());
  parallel_for(views.size(), threads, [&](int i) {
    out[static_cast<std::size_t>(i)] =
        render_depth(cloud, views.views[static_cast<std::size_t>(i)], intr, cfg);
  });
  return out;
}

CropWindow crop_window(const Intrinsics& intr, const Vec3& center_mm, const CropConfig& cfg) {
  if (!(center_mm.z() > 0.0)) {
    throw Error(ErrorCode::CenterBehindCamera, "crop centre must have positive z");
  }
  const double z = center_mm.z();
  const double u_left = intr.fx * (center_mm.x() - cfg.cube_mm) / z + intr.cx;
  const double u_right = intr.fx * (center_mm.x() + cfg.cube_mm) / z + intr.cx;
  const double v_top = intr.fy * (center_mm.y() - cfg.cube_mm) / z + intr.cy;
  const double v_bottom = intr.fy * (center_mm.y() + cfg.cube_mm) / z + intr.cy;
  CropWindow win;
  win.u0 = u_left;
  win.v0 = v_top;
  win.scale_u = (u_right - u_left) / cfg.crop_size;
  win.scale_v = (v_bottom - v_top) / cfg.crop_size;
  return win;
}

NormalizedCrop crop_hand(const DepthImage& depth, const Vec3& center_mm, const CropConfig& cfg) {
  cfg.validate();
  NormalizedCrop crop;
  crop.window = crop_window(depth.intrinsics, center_mm, cfg);
  crop.size = cfg.crop_size;
  crop.center_mm = center_mm;
  crop.cube_mm = cfg.cube_mm;
  crop.normalized = cfg.normalize;
  crop.intrinsics = depth.intrinsics;
  crop.frame_id = depth.frame_id;
  crop.values.assign(static_cast<std::size_t>(cfg.crop_size) * cfg.crop_size,
                     cfg.normalize ? 1.0 : 0.0);

  const int s = cfg.crop_size;
  std::vector<int> src_u(static_cast<std::size_t>(s)), src_v(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    src_u[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(crop.window.to_image_u(i)));
    src_v[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(crop.window.to_image_v(i)));
  }
  const double cz = center_mm.z();
  for (int cv = 0; cv < s; ++cv) {
    const int v = src_v[static_cast<std::size_t>(cv)];
    if (v < 0 || v >= depth.height) continue;
    for (int cu = 0; cu < s; ++cu) {
      const int u = src_u[static_cast<std::size_t>(cu)];
      if (u < 0 || u >= depth.width) continue;
      const double d = depth.at(u, v);
      if (d <= 0.0) continue;
      double& dst = crop.values[static_cast<std::size_t>(cv) * s + cu];
      dst = cfg.normalize ? std::clamp((d - cz) / cfg.cube_mm, -1.0, 1.0) : d;
    }
  }
  return crop;
}

}  // namespace virtview
