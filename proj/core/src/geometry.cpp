#include "virtview/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "virtview/error.hpp"

namespace virtview {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
  }
}

Eigen::Matrix4d RigidTransform::homogeneous() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

bool RigidTransform::is_rigid(double tol) const {
  const Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& t) {
  const Mat3 rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

DepthImage::DepthImage(const Intrinsics& intr, std::string frame)
    : width(intr.width),
      height(intr.height),
      values(static_cast<std::size_t>(intr.width) * intr.height, 0.0),
      intrinsics(intr),
      frame_id(std::move(frame)) {}

std::size_t DepthImage::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](double d) { return d > 0.0; }));
}

void DepthImage::validate(double max_range_mm) const {
  if (values.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::ShapeMismatch, "depth buffer length != width*height");
  }
  for (double d : values) {
    if (d < 0.0 || !std::isfinite(d) || d >= max_range_mm) {
      std::ostringstream os;
      os << "depth value " << d << " outside [0, " << max_range_mm << ")";
      throw Error(ErrorCode::InvalidArgument, os.str());
    }
  }
}

PointCloud unproject(const DepthImage& depth) {
  const Intrinsics& k = depth.intrinsics;
  PointCloud cloud;
  cloud.frame_id = depth.frame_id;
  cloud.points.reserve(depth.valid_count());
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double z = depth.at(u, v);
      if (z <= 0.0) continue;
      cloud.points.emplace_back((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
    }
  }
  if (cloud.points.empty()) {
    throw Error(ErrorCode::AllPixelsInvalid, "depth image has no valid pixel");
  }
  return cloud;
}

ProjectedPoint project_point(const Vec3& p, const Intrinsics& intr) {
  return {intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy, p.z()};
}

std::vector<ProjectedPoint> project(const PointCloud& cloud, const Intrinsics& intr) {
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (!(cloud.points[i].z() > 0.0)) bad.push_back(i);
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "points with z <= 0 at indices";
    for (std::size_t i = 0; i < bad.size() && i < 16; ++i) os << ' ' << bad[i];
    if (bad.size() > 16) os << " ... (" << bad.size() << " total)";
    throw Error(ErrorCode::NonPositiveDepth, os.str());
  }
  std::vector<ProjectedPoint> out;
  out.reserve(cloud.points.size());
  for (const Vec3& p : cloud.points) out.push_back(project_point(p, intr));
  return out;
}

Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "centroid of an empty cloud");
  Vec3 sum = Vec3::Zero();
  for (const Vec3& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.points.size());
}

Mat3 view_rotation(double zenith, double azimuth) {
  const Vec3 axis = axis_angle(Vec3::UnitY(), azimuth) * axis_angle(Vec3::UnitX(), zenith) *
                    Vec3::UnitZ();
  // Camera +y is the negated up-vector, so projecting +y keeps the roll at zero.
  Vec3 y = Vec3::UnitY() - Vec3::UnitY().dot(axis) * axis;
  if (y.norm() < 1e-9) {
    y = Vec3::UnitZ() - Vec3::UnitZ().dot(axis) * axis;
  }
  y.normalize();
  const Vec3 x = y.cross(axis);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = axis;
  return r;
}

RigidTransform orbit_transform(const Vec3& center_mm, double radius_mm, const Mat3& rotation) {
  const double dist = center_mm.norm();
  const Vec3 dir = dist > 0.0 ? Vec3(center_mm / dist) : Vec3(Vec3::UnitZ());
  return {rotation, center_mm - radius_mm * (rotation * dir)};
}

namespace {

void check_range(const AngleRange& r, const char* what) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  if (!(r.min > -half_pi && r.max < half_pi && r.min <= r.max)) {
    throw Error(ErrorCode::InvalidRange, std::string(what) + " range must lie inside (-pi/2, pi/2)");
  }
  if (std::abs(r.min + r.max) > 1e-12) {
    throw Error(ErrorCode::InvalidRange, std::string(what) + " range must be symmetric about 0");
  }
}

double lattice_angle(const AngleRange& r, int i, int n) {
  if (n == 1) return 0.0;
  if (2 * i + 1 == n) return 0.0;  // exact centre for odd lattices
  return r.min + (r.max - r.min) * static_cast<double>(i) / static_cast<double>(n - 1);
}

}  // namespace

VirtualViewSet sample_virtual_views(const Vec3& center_mm, double radius_mm, int grid_rows,
                                    int grid_cols, AngleRange zenith_range,
                                    AngleRange azimuth_range) {
  if (grid_rows < 1 || grid_cols < 1) {
    throw Error(ErrorCode::InvalidArgument, "grid dimensions must be >= 1");
  }
  if (!(radius_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "radius must be positive");
  check_range(zenith_range, "zenith");
  check_range(azimuth_range, "azimuth");

  VirtualViewSet set;
  set.center_mm = center_mm;
  set.radius_mm = radius_mm;
  set.grid_rows = grid_rows;
  set.grid_cols = grid_cols;
  set.views.reserve(static_cast<std::size_t>(grid_rows) * grid_cols);
  for (int r = 0; r < grid_rows; ++r) {
    for (int c = 0; c < grid_cols; ++c) {
      VirtualView view;
      view.id = r * grid_cols + c;
      view.zenith = lattice_angle(zenith_range, r, grid_rows);
      view.azimuth = lattice_angle(azimuth_range, c, grid_cols);
      view.to_original =
          orbit_transform(center_mm, radius_mm, view_rotation(view.zenith, view.azimuth));
      view.from_original = invert(view.to_original);
      view.frame_id = "view:" + std::to_string(view.id);
      set.views.push_back(std::move(view));
    }
  }
  return set;
}

VirtualViewSet sample_virtual_views(const Vec3& center_mm, int grid_rows, int grid_cols) {
  return sample_virtual_views(center_mm, center_mm.norm(), grid_rows, grid_cols);
}

const SubsetMasks& default_subset_masks() {
  static const SubsetMasks masks = {
      {1, {12}},
      {3, {10, 12, 14}},
      {9, {0, 2, 4, 10, 12, 14, 20, 22, 24}},
      {15, {0, 2, 4, 6, 8, 10, 11, 12, 13, 14, 16, 18, 20, 22, 24}},
  };
  return masks;
}

std::optional<int> center_view_id(const VirtualViewSet& set) {
  for (const VirtualView& v : set.views) {
    if (v.zenith == 0.0 && v.azimuth == 0.0) return v.id;
  }
  return std::nullopt;
}

std::vector<int> uniform_subset(const VirtualViewSet& set, int n, const SubsetMasks* masks) {
  const int m = set.size();
  if (n == m) {
    std::vector<int> all(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  auto from_mask = [&](const std::vector<int>& ids) {
    if (static_cast<int>(ids.size()) != n) {
      throw Error(ErrorCode::UnknownSubset, "mask for n=" + std::to_string(n) + " has wrong length");
    }
    for (int id : ids) {
      if (id < 0 || id >= m) {
        throw Error(ErrorCode::UnknownSubset, "mask id " + std::to_string(id) + " out of range");
      }
    }
    return ids;
  };
  if (masks != nullptr) {
    if (auto it = masks->find(n); it != masks->end()) return from_mask(it->second);
  }
  if (set.grid_rows == 5 && set.grid_cols == 5) {
    const SubsetMasks& defaults = default_subset_masks();
    if (auto it = defaults.find(n); it != defaults.end()) return from_mask(it->second);
  }
  if (n == 1) {
    if (auto c = center_view_id(set)) return {*c};
  }
  throw Error(ErrorCode::UnknownSubset, "no subset mask for n=" + std::to_string(n));
}

HandPose transform_pose(const HandPose& pose, const RigidTransform& t, std::string frame_id) {
  HandPose out;
  out.frame_id = std::move(frame_id);
  out.joints.reserve(pose.joints.size());
  for (const Vec3& j : pose.joints) out.joints.push_back(t.apply(j));
  return out;
}

}  // namespace virtview
