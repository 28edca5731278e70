#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "virtview/error.hpp"
#include "virtview/render.hpp"
#include "virtview/synthdata.hpp"

using namespace virtview;

namespace {

VirtualView identity_view() {
  VirtualView v;
  v.frame_id = "view:0";
  return v;
}

RenderConfig config(int splat) {
  RenderConfig c;
  c.splat_radius = splat;
  return c;
}

const Dataset& frames() {
  static const Dataset ds = generate_dataset(SynthHandSpec::default_hand(), 6, 31);
  return ds;
}

}  // namespace

TEST(RenderDepth, SingleSplat) {
  const DepthImage img = render_depth(PointCloud{{Vec3(0, 0, 400)}}, identity_view(), Intrinsics{}, config(0));
  EXPECT_EQ(img.valid_count(), 1u);
  EXPECT_EQ(img.at(160, 120), 400.0);
  EXPECT_EQ(img.frame_id, "view:0");
}

TEST(RenderDepth, NearestPointWins) {
  for (const PointCloud& c : {PointCloud{{Vec3(0, 0, 300), Vec3(0, 0, 500)}},
                              PointCloud{{Vec3(0, 0, 500), Vec3(0, 0, 300)}}}) {
    EXPECT_EQ(render_depth(c, identity_view(), Intrinsics{}, config(0)).at(160, 120), 300.0);
  }
}

TEST(RenderDepth, SplatRadiusCoversSquare) {
  const DepthImage img = render_depth(PointCloud{{Vec3(0, 0, 400)}}, identity_view(), Intrinsics{}, config(2));
  EXPECT_EQ(img.valid_count(), 25u);
  EXPECT_EQ(img.at(158, 118), 400.0);
  EXPECT_EQ(img.at(157, 120), 0.0);
}

TEST(RenderDepth, RejectsBadConfigAndEmptyCloud) {
  EXPECT_THROW(render_depth(PointCloud{{Vec3(0, 0, 400)}}, identity_view(), Intrinsics{}, config(4)), Error);
  EXPECT_THROW(render_depth(PointCloud{}, identity_view(), Intrinsics{}, config(0)), Error);
}

TEST(RenderDepth, IdentityViewReproducesInput) {
  for (const Frame& f : frames().frames) {
    const DepthImage img = render_depth(unproject(f.depth), identity_view(), f.depth.intrinsics, config(0));
    std::size_t valid = 0, kept = 0;
    for (int v = 0; v < f.depth.height; ++v) {
      for (int u = 0; u < f.depth.width; ++u) {
        if (f.depth.at(u, v) == 0.0) continue;
        ++valid;
        kept += std::abs(img.at(u, v) - f.depth.at(u, v)) <= 1.0;
      }
    }
    EXPECT_GE(static_cast<double>(kept), 0.99 * static_cast<double>(valid));
  }
}

TEST(RenderAll, ThreadCountDoesNotChangeOutput) {
  const Frame& f = frames().frames[0];
  const PointCloud cloud = unproject(f.depth);
  const VirtualViewSet views = sample_virtual_views(f.centroid_mm, 5, 5);
  const auto one = render_all(cloud, views, f.depth.intrinsics, RenderConfig{}, 1);
  const auto many = render_all(cloud, views, f.depth.intrinsics, RenderConfig{}, 8);
  ASSERT_EQ(one.size(), 25u);
  ASSERT_EQ(many.size(), 25u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].values, many[i].values);
    EXPECT_EQ(one[i].frame_id, views[static_cast<int>(i)].frame_id);
  }
}

TEST(CropHand, CentreDepthMapsToZero) {
  DepthImage d(Intrinsics{}, kOriginalFrame);
  std::fill(d.values.begin(), d.values.end(), 400.0);
  CropConfig cfg;
  const NormalizedCrop crop = crop_hand(d, Vec3(0, 0, 400), cfg);
  ASSERT_EQ(crop.size, 176);
  int surface = 0;
  for (double v : crop.values) {
    if (v == 1.0) continue;
    EXPECT_EQ(v, 0.0);
    ++surface;
  }
  EXPECT_GT(surface, 176 * 176 / 2);
}

TEST(CropHand, HandInsideCubeIsNotClamped) {
  for (const Frame& f : frames().frames) {
    CropConfig cfg;
    const NormalizedCrop crop = crop_hand(f.depth, f.centroid_mm, cfg);
    for (double v : crop.values) {
      if (v == 1.0) continue;  // hole
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(CropHand, ContainsEveryJointProjection) {
  for (const Frame& f : frames().frames) {
    const CropWindow w = crop_window(f.depth.intrinsics, f.centroid_mm, CropConfig{});
    for (const Vec3& j : f.gt.joints) {
      const ProjectedPoint p = project_point(j, f.depth.intrinsics);
      const double cu = w.to_crop_u(p.u), cv = w.to_crop_v(p.v);
      EXPECT_GE(cu, 0.0);
      EXPECT_GE(cv, 0.0);
      EXPECT_LT(cu, 176.0);
      EXPECT_LT(cv, 176.0);
    }
  }
}

TEST(CropHand, CentreBehindCamera) {
  DepthImage d(Intrinsics{}, kOriginalFrame);
  try {
    crop_hand(d, Vec3(0, 0, -5), CropConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CenterBehindCamera);
  }
}
