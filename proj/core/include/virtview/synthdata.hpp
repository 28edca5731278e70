#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "virtview/geometry.hpp"
#include "virtview/render.hpp"

namespace virtview {

struct AngleLimit {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double a) const { return a >= lo && a <= hi; }
  bool operator==(const AngleLimit&) const = default;
};

// Capsule-skeleton hand. Joint j hangs off parents[j]: its segment starts at
// the parent position offset by pivots[j] (parent frame) and extends along
// bones[j] after the joint's own rotation R_z(abduction) * R_x(flexion).
// Joint 0 is the root and carries the global rotation.
struct SynthHandSpec {
  std::vector<std::string> names;
  std::vector<int> parents;
  std::vector<Vec3> pivots;
  std::vector<Vec3> bones;
  std::vector<double> radii;  // capsule radius of the segment ending at the joint
  std::vector<AngleLimit> flexion;
  std::vector<AngleLimit> abduction;

  // Palm slab approximated by parallel capsules in the root frame.
  struct Capsule {
    Vec3 a = Vec3::Zero();
    Vec3 b = Vec3::Zero();
    double radius = 0.0;
    bool operator==(const Capsule&) const = default;
  };
  std::vector<Capsule> palm;

  Vec3 global_limit = {0.5, 0.6, 0.6};  // |rotation about x, y, z| of the root, radians
  Vec3 root_mm = {0.0, 0.0, 420.0};
  Vec3 root_jitter_mm = {30.0, 25.0, 40.0};
  double density_per_mm2 = 0.5;

  int joint_count() const { return static_cast<int>(parents.size()); }
  // Throws InvalidArgument when the bone graph is not a tree or sizes disagree.
  void validate() const;
  bool operator==(const SynthHandSpec&) const = default;

  static SynthHandSpec default_hand();
};

struct PoseParams {
  Vec3 global_rotation = Vec3::Zero();  // radians about x, then y, then z (applied z * y * x)
  Vec3 root_offset_mm = Vec3::Zero();
  std::vector<double> flexion;
  std::vector<double> abduction;

  bool operator==(const PoseParams&) const = default;
  static PoseParams zero(const SynthHandSpec& spec);
};

// Throws AnglesOutOfRange.
void check_limits(const SynthHandSpec& spec, const PoseParams& pose);

struct Skeleton {
  std::vector<Vec3> joints;           // camera frame, mm
  std::vector<Mat3> frames;           // cumulative rotation per joint
  std::vector<SynthHandSpec::Capsule> capsules;
};

Skeleton forward_kinematics(const SynthHandSpec& spec, const PoseParams& pose);

// Deterministic surface samples of every capsule at the spec density.
PointCloud sample_surface(const std::vector<SynthHandSpec::Capsule>& capsules, double density_per_mm2);

struct FrameMeta {
  std::uint64_t seed = 0;
  std::optional<PoseParams> pose;  // absent for frames read from disk
  Vec3 view_jitter = Vec3::Zero();  // axis-angle applied to virtual cameras
};

struct Frame {
  DepthImage depth;
  HandPose gt;  // original frame
  Vec3 centroid_mm = Vec3::Zero();
  FrameMeta meta;
};

// Renders the visible surface from the original camera with integer-mm depth.
// Throws AnglesOutOfRange.
Frame generate_frame(const SynthHandSpec& spec, const PoseParams& pose, const Intrinsics& camera,
                     std::uint64_t seed);

using PoseSampler = std::function<PoseParams(const SynthHandSpec&, std::mt19937_64&)>;

// Uniform within every limit.
PoseParams sample_pose(const SynthHandSpec& spec, std::mt19937_64& rng);

struct DatasetHeader {
  int version = 1;
  int joints = kDefaultJointCount;
  Intrinsics intrinsics;
  std::uint64_t frame_count = 0;
  std::string spec_hash;  // 16 hex digits

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Frame> frames;
};

// Compares everything the file format stores.
bool same_records(const Dataset& a, const Dataset& b);

std::string spec_hash(const SynthHandSpec& spec);

// Frame i uses seed mix_seed(seed, i); frames are generated in parallel.
Dataset generate_dataset(const SynthHandSpec& spec, std::size_t n_frames, std::uint64_t seed,
                         const Intrinsics& camera = {}, const PoseSampler& sampler = sample_pose,
                         int threads = 1);

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
// Throws FormatError.
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);
// Throws IoError / FormatError.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

struct AugmentConfig {
  double scale_min = 0.9;
  double scale_max = 1.1;
  double centroid_jitter_mm = 10.0;
  double camera_rotation_jitter_rad = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  static AugmentConfig none() { return {1.0, 1.0, 0.0, 0.0, 0}; }
};

// Scales the hand about its centroid and re-renders, jitters the crop centroid,
// and records a camera rotation jitter for multi-view rendering. Ground truth
// follows the same transform.
Frame augment(const Frame& frame, const AugmentConfig& cfg);

// Rotates every camera of the set about its centre by the axis-angle `jitter`.
VirtualViewSet apply_view_jitter(const VirtualViewSet& views, const Vec3& jitter);

}  // namespace virtview
