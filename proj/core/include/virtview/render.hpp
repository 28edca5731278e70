#pragma once

#include <vector>

#include "virtview/geometry.hpp"

namespace virtview {

struct RenderConfig {
  int out_width = 320;
  int out_height = 240;
  int splat_radius = 1;  // Chebyshev radius in pixels, <= 3
  double max_range_mm = kDefaultMaxRangeMm;

  void validate() const;
  bool operator==(const RenderConfig&) const = default;
};

struct CropConfig {
  int crop_size = 176;
  double cube_mm = 150.0;  // half-extent of the metric crop cube
  bool normalize = true;

  void validate() const;
  bool operator==(const CropConfig&) const = default;
};

// Affine map between crop pixel coordinates and source image coordinates.
// Crop pixel i has its centre at coordinate i; it samples the source pixel
// nearest to u0 + (i + 0.5) * scale_u.
struct CropWindow {
  double u0 = 0.0;
  double v0 = 0.0;
  double scale_u = 1.0;
  double scale_v = 1.0;

  double to_image_u(double cu) const { return u0 + (cu + 0.5) * scale_u; }
  double to_image_v(double cv) const { return v0 + (cv + 0.5) * scale_v; }
  double to_crop_u(double u) const { return (u - u0) / scale_u - 0.5; }
  double to_crop_v(double v) const { return (v - v0) / scale_v - 0.5; }
};

// Network input: crop_size x crop_size samples plus the geometry needed to map
// predictions back into the camera frame.
struct NormalizedCrop {
  int size = 0;
  std::vector<double> values;  // row-major; [-1, 1] when normalized, holes = +1
  CropWindow window;
  Vec3 center_mm = Vec3::Zero();
  double cube_mm = 0.0;
  bool normalized = true;
  Intrinsics intrinsics;  // of the source image
  std::string frame_id;

  double at(int cu, int cv) const { return values[static_cast<std::size_t>(cv) * size + cu]; }
};

// Z-buffer point splatting of an original-frame cloud into `view`. Holes stay 0.
DepthImage render_depth(const PointCloud& cloud, const VirtualView& view, const Intrinsics& intr,
                        const RenderConfig& cfg);

// Same as render_depth, ordered by view id, bit-identical for any thread count.
std::vector<DepthImage> render_all(const PointCloud& cloud, const VirtualViewSet& views,
                                   const Intrinsics& intr, const RenderConfig& cfg, int threads);

CropWindow crop_window(const Intrinsics& intr, const Vec3& center_mm, const CropConfig& cfg);

NormalizedCrop crop_hand(const DepthImage& depth, const Vec3& center_mm, const CropConfig& cfg);

}  // namespace virtview
