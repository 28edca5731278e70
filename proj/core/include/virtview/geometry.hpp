#pragma once

#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace virtview {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDefaultMaxRangeMm = 2000.0;
inline constexpr int kDefaultJointCount = 14;
inline constexpr const char* kOriginalFrame = "original";

// Pinhole camera. Right-handed, optical axis +z, u right, v down, millimetres.
struct Intrinsics {
  double fx = 240.0;
  double fy = 240.0;
  double cx = 160.0;
  double cy = 120.0;
  int width = 320;
  int height = 240;

  // Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  bool operator==(const Intrinsics&) const = default;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Eigen::Matrix4d homogeneous() const;
  bool is_rigid(double tol = 1e-9) const;
};

// a ∘ b: applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

// Rotation by `angle` radians about the unit `axis` (right-hand rule).
Mat3 axis_angle(const Vec3& axis, double angle);

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, millimetres, 0 = hole
  Intrinsics intrinsics;
  std::string frame_id = kOriginalFrame;

  DepthImage() = default;
  DepthImage(const Intrinsics& intr, std::string frame);

  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }
  std::size_t valid_count() const;

  void validate(double max_range_mm = kDefaultMaxRangeMm) const;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::string frame_id = kOriginalFrame;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct HandPose {
  std::vector<Vec3> joints;
  std::string frame_id = kOriginalFrame;

  int joint_count() const { return static_cast<int>(joints.size()); }
};

struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

struct AngleRange {
  double min = -std::numbers::pi / 3.0;
  double max = std::numbers::pi / 3.0;

  bool operator==(const AngleRange&) const = default;
};

struct VirtualView {
  int id = 0;
  double zenith = 0.0;
  double azimuth = 0.0;
  RigidTransform to_original;    // view frame -> original camera frame
  RigidTransform from_original;  // original camera frame -> view frame
  std::string frame_id;
};

struct VirtualViewSet {
  std::vector<VirtualView> views;
  Vec3 center_mm = Vec3::Zero();
  double radius_mm = 0.0;
  int grid_rows = 0;  // 0 for non-lattice (random) sets
  int grid_cols = 0;

  int size() const { return static_cast<int>(views.size()); }
  const VirtualView& operator[](int id) const { return views.at(static_cast<std::size_t>(id)); }
};

// View id -> mask of view ids, used by uniform_subset.
using SubsetMasks = std::map<int, std::vector<int>>;

// One point per valid pixel. Throws AllPixelsInvalid.
PointCloud unproject(const DepthImage& depth);

// Continuous pixel coordinates. Throws NonPositiveDepth listing offending indices.
std::vector<ProjectedPoint> project(const PointCloud& cloud, const Intrinsics& intr);
ProjectedPoint project_point(const Vec3& p, const Intrinsics& intr);

Vec3 centroid(const PointCloud& cloud);

// Relative rotation of a virtual camera whose optical axis is the original
// axis tilted by `zenith` about x and then swung by `azimuth` about y. The
// up-vector is the original -y projected orthogonally to the new axis.
Mat3 view_rotation(double zenith, double azimuth);

// Rigid transform (view -> original) for a camera on the sphere of `radius_mm`
// around `center_mm`, rotated by `rotation` about the centre. With
// radius = |center| and rotation = I this is the identity.
RigidTransform orbit_transform(const Vec3& center_mm, double radius_mm, const Mat3& rotation);

// Endpoint-inclusive lattice of grid_rows x grid_cols views; ids are row-major
// with rows indexing zenith and columns azimuth. Throws InvalidRange.
VirtualViewSet sample_virtual_views(const Vec3& center_mm, double radius_mm, int grid_rows,
                                    int grid_cols, AngleRange zenith_range = {},
                                    AngleRange azimuth_range = {});

// Grid with the default radius: the distance from the original camera to the centre.
VirtualViewSet sample_virtual_views(const Vec3& center_mm, int grid_rows = 5, int grid_cols = 5);

const SubsetMasks& default_subset_masks();

// Deterministic id list of length n. Throws UnknownSubset.
std::vector<int> uniform_subset(const VirtualViewSet& set, int n,
                                const SubsetMasks* masks = nullptr);

// Index of the view at (zenith, azimuth) = (0, 0), if any.
std::optional<int> center_view_id(const VirtualViewSet& set);

HandPose transform_pose(const HandPose& pose, const RigidTransform& t, std::string frame_id);

}  // namespace virtview
