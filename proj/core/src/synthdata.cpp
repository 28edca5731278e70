#include "virtview/synthdata.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "virtview/error.hpp"
#include "virtview/hash.hpp"
#include "virtview/parallel.hpp"
#include "virtview/random.hpp"

namespace virtview {

namespace {

constexpr char kMagic[8] = {'V', 'V', 'D', 'S', 'E', 'T', '0', '1'};

Mat3 rot_x(double a) { return axis_angle(Vec3::UnitX(), a); }
Mat3 rot_z(double a) { return axis_angle(Vec3::UnitZ(), a); }

Mat3 global_rotation(const Vec3& r) {
  return axis_angle(Vec3::UnitZ(), r.z()) * axis_angle(Vec3::UnitY(), r.y()) *
         axis_angle(Vec3::UnitX(), r.x());
}

// Kept out of line: g++ 11 at -O3 folds the vectorised double->float->double round trip away.
[[gnu::noinline]] double to_float_precision(double v) {
  return static_cast<double>(static_cast<float>(v));
}

Vec3 to_float_precision(const Vec3& v) {
  return Vec3(to_float_precision(v.x()), to_float_precision(v.y()), to_float_precision(v.z()));
}

}  // namespace

void SynthHandSpec::validate() const {
  const std::size_t k = parents.size();
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "hand spec has no joints");
  if (names.size() != k || pivots.size() != k || bones.size() != k || radii.size() != k ||
      flexion.size() != k || abduction.size() != k) {
    throw Error(ErrorCode::InvalidArgument, "hand spec arrays differ in length");
  }
  if (parents[0] != -1) throw Error(ErrorCode::InvalidArgument, "joint 0 must be the root");
  for (std::size_t j = 1; j < k; ++j) {
    if (parents[j] < 0 || parents[j] >= static_cast<int>(j)) {
      throw Error(ErrorCode::InvalidArgument,
                  "joint " + std::to_string(j) + " must hang off an earlier joint");
    }
    if (!(bones[j].norm() > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "bone " + std::to_string(j) + " has zero length");
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (!(radii[j] > 0.0)) throw Error(ErrorCode::InvalidArgument, "capsule radii must be > 0");
    if (flexion[j].lo > flexion[j].hi || abduction[j].lo > abduction[j].hi) {
      throw Error(ErrorCode::InvalidArgument, "empty angle limit for joint " + names[j]);
    }
  }
  for (const Capsule& c : palm) {
    if (!(c.radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "palm capsule radius must be > 0");
  }
  if (!(density_per_mm2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "density must be > 0");
  if ((global_limit.array() < 0.0).any() || (root_jitter_mm.array() < 0.0).any()) {
    throw Error(ErrorCode::InvalidArgument, "negative global limit");
  }
}

SynthHandSpec SynthHandSpec::default_hand() {
  SynthHandSpec s;
  auto add = [&s](std::string name, int parent, Vec3 pivot, Vec3 bone, double radius,
                  AngleLimit flex, AngleLimit abd) {
    s.names.push_back(std::move(name));
    s.parents.push_back(parent);
    s.pivots.push_back(pivot);
    s.bones.push_back(bone);
    s.radii.push_back(radius);
    s.flexion.push_back(flex);
    s.abduction.push_back(abd);
  };
  add("palm", -1, Vec3::Zero(), Vec3::Zero(), 12.0, {}, {});
  add("wrist_a", 0, Vec3::Zero(), {-25.0, 45.0, 0.0}, 10.0, {}, {});
  add("wrist_b", 0, Vec3::Zero(), {25.0, 45.0, 0.0}, 10.0, {}, {});
  add("thumb_root", 0, {-30.0, 30.0, 0.0}, {-20.0, -15.0, -5.0}, 10.0, {0.0, 0.6}, {-0.3, 0.3});
  add("thumb_mid", 3, Vec3::Zero(), {-14.0, -26.0, -6.0}, 9.0, {0.0, 1.0}, {-0.2, 0.2});
  add("thumb_tip", 4, Vec3::Zero(), {-9.0, -24.0, -5.0}, 8.0, {0.0, 1.2}, {});

  const char* fingers[] = {"index", "middle", "ring", "pinky"};
  const double knuckle_x[] = {-27.0, -9.0, 9.0, 27.0};
  const double proximal[] = {42.0, 46.0, 43.0, 34.0};
  const double distal[] = {40.0, 44.0, 41.0, 32.0};
  const double radius[] = {8.5, 9.0, 8.5, 7.5};
  for (int f = 0; f < 4; ++f) {
    const int mid = static_cast<int>(s.parents.size());
    add(std::string(fingers[f]) + "_mid", 0, {knuckle_x[f], -45.0, 0.0}, {0.0, -proximal[f], 0.0},
        radius[f], {-0.1, 1.4}, {-0.25, 0.25});
    add(std::string(fingers[f]) + "_tip", mid, Vec3::Zero(), {0.0, -distal[f], 0.0},
        radius[f] - 1.0, {0.0, 1.6}, {});
  }
  for (double x : knuckle_x) s.palm.push_back({{x, 35.0, 0.0}, {x, -45.0, 0.0}, 12.0});
  return s;
}

PoseParams PoseParams::zero(const SynthHandSpec& spec) {
  PoseParams p;
  p.flexion.assign(static_cast<std::size_t>(spec.joint_count()), 0.0);
  p.abduction.assign(static_cast<std::size_t>(spec.joint_count()), 0.0);
  return p;
}

void check_limits(const SynthHandSpec& spec, const PoseParams& pose) {
  const auto k = static_cast<std::size_t>(spec.joint_count());
  if (pose.flexion.size() != k || pose.abduction.size() != k) {
    throw Error(ErrorCode::AnglesOutOfRange, "pose has " + std::to_string(pose.flexion.size()) +
                                                 " angles, spec has " + std::to_string(k) + " joints");
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (!spec.flexion[j].contains(pose.flexion[j]) || !spec.abduction[j].contains(pose.abduction[j])) {
      throw Error(ErrorCode::AnglesOutOfRange, "joint " + spec.names[j] + " angles outside limits");
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (std::abs(pose.global_rotation[a]) > spec.global_limit[a]) {
      throw Error(ErrorCode::AnglesOutOfRange, "global rotation outside limits");
    }
    if (std::abs(pose.root_offset_mm[a]) > spec.root_jitter_mm[a]) {
      throw Error(ErrorCode::AnglesOutOfRange, "root offset outside limits");
    }
  }
}

Skeleton forward_kinematics(const SynthHandSpec& spec, const PoseParams& pose) {
  spec.validate();
  check_limits(spec, pose);
  const auto k = static_cast<std::size_t>(spec.joint_count());
  Skeleton sk;
  sk.joints.resize(k);
  sk.frames.resize(k);
  sk.joints[0] = spec.root_mm + pose.root_offset_mm;
  sk.frames[0] = global_rotation(pose.global_rotation);
  for (std::size_t j = 1; j < k; ++j) {
    const auto p = static_cast<std::size_t>(spec.parents[j]);
    const Vec3 start = sk.joints[p] + sk.frames[p] * spec.pivots[j];
    sk.frames[j] = sk.frames[p] * rot_z(pose.abduction[j]) * rot_x(pose.flexion[j]);
    sk.joints[j] = start + sk.frames[j] * spec.bones[j];
    sk.capsules.push_back({start, sk.joints[j], spec.radii[j]});
  }
  for (const SynthHandSpec::Capsule& c : spec.palm) {
    sk.capsules.push_back(
        {sk.joints[0] + sk.frames[0] * c.a, sk.joints[0] + sk.frames[0] * c.b, c.radius});
  }
  return sk;
}

PointCloud sample_surface(const std::vector<SynthHandSpec::Capsule>& capsules, double density_per_mm2) {
  if (!(density_per_mm2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "density must be > 0");
  const double step = 1.0 / std::sqrt(density_per_mm2);
  constexpr double golden = 2.399963229728653;  // pi * (3 - sqrt 5)
  PointCloud cloud;
  for (const SynthHandSpec::Capsule& c : capsules) {
    const Vec3 axis = c.b - c.a;
    const double len = axis.norm();
    const Vec3 d = len > 0.0 ? Vec3(axis / len) : Vec3::UnitZ();
    const Vec3 e1 = d.unitOrthogonal();
    const Vec3 e2 = d.cross(e1);
    const double r = c.radius;

    if (len > 0.0) {
      const int along = std::max(1, static_cast<int>(std::ceil(len / step)));
      const int around = std::max(6, static_cast<int>(std::ceil(2.0 * std::numbers::pi * r / step)));
      for (int i = 0; i < along; ++i) {
        const Vec3 base = c.a + ((i + 0.5) / along) * axis;
        const double shift = (i % 2) * 0.5;
        for (int j = 0; j < around; ++j) {
          const double phi = 2.0 * std::numbers::pi * (j + shift) / around;
          cloud.points.push_back(base + r * (std::cos(phi) * e1 + std::sin(phi) * e2));
        }
      }
    }
    // Fibonacci spheres at both ends; samples inside the cylinder are hidden by the z-buffer.
    const int n = std::max(8, static_cast<int>(std::ceil(4.0 * std::numbers::pi * r * r * density_per_mm2)));
    for (const Vec3& end : {c.a, c.b}) {
      for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / n;
        const double rad = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * i;
        cloud.points.push_back(end + r * (rad * std::cos(phi) * e1 + rad * std::sin(phi) * e2 + y * d));
      }
      if (len == 0.0) break;
    }
  }
  return cloud;
}

namespace {

DepthImage render_original(const PointCloud& cloud, const Intrinsics& camera) {
  VirtualView identity;
  identity.frame_id = kOriginalFrame;
  RenderConfig rc;
  rc.out_width = camera.width;
  rc.out_height = camera.height;
  DepthImage depth = render_depth(cloud, identity, camera, rc);
  for (double& v : depth.values) {
    v = std::round(v);
    if (v >= rc.max_range_mm || v > 65535.0) v = 0.0;
  }
  return depth;
}

}  // namespace

Frame generate_frame(const SynthHandSpec& spec, const PoseParams& pose, const Intrinsics& camera,
                     std::uint64_t seed) {
  camera.validate();
  const Skeleton sk = forward_kinematics(spec, pose);
  const PointCloud surface = sample_surface(sk.capsules, spec.density_per_mm2);

  Frame f;
  f.depth = render_original(surface, camera);
  f.gt.frame_id = kOriginalFrame;
  for (const Vec3& j : sk.joints) f.gt.joints.push_back(to_float_precision(j));
  f.centroid_mm = to_float_precision(centroid(unproject(f.depth)));
  f.meta.seed = seed;
  f.meta.pose = pose;
  return f;
}

PoseParams sample_pose(const SynthHandSpec& spec, std::mt19937_64& rng) {
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  PoseParams p = PoseParams::zero(spec);
  for (int a = 0; a < 3; ++a) {
    p.global_rotation[a] = uniform(-spec.global_limit[a], spec.global_limit[a]);
    p.root_offset_mm[a] = uniform(-spec.root_jitter_mm[a], spec.root_jitter_mm[a]);
  }
  for (std::size_t j = 0; j < p.flexion.size(); ++j) {
    p.flexion[j] = uniform(spec.flexion[j].lo, spec.flexion[j].hi);
    p.abduction[j] = uniform(spec.abduction[j].lo, spec.abduction[j].hi);
  }
  return p;
}

std::string spec_hash(const SynthHandSpec& spec) {
  nlohmann::ordered_json j;
  auto vec = [](const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
  for (int i = 0; i < spec.joint_count(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    j["joints"].push_back({{"name", spec.names[u]},
                           {"parent", spec.parents[u]},
                           {"pivot", vec(spec.pivots[u])},
                           {"bone", vec(spec.bones[u])},
                           {"radius", spec.radii[u]},
                           {"flexion", {spec.flexion[u].lo, spec.flexion[u].hi}},
                           {"abduction", {spec.abduction[u].lo, spec.abduction[u].hi}}});
  }
  for (const auto& c : spec.palm) j["palm"].push_back({vec(c.a), vec(c.b), c.radius});
  j["global_limit"] = vec(spec.global_limit);
  j["root_mm"] = vec(spec.root_mm);
  j["root_jitter_mm"] = vec(spec.root_jitter_mm);
  j["density"] = spec.density_per_mm2;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

Dataset generate_dataset(const SynthHandSpec& spec, std::size_t n_frames, std::uint64_t seed,
                         const Intrinsics& camera, const PoseSampler& sampler, int threads) {
  if (n_frames == 0) throw Error(ErrorCode::EmptyDataset, "n_frames must be >= 1");
  spec.validate();
  Dataset ds;
  ds.header.joints = spec.joint_count();
  ds.header.intrinsics = camera;
  ds.header.frame_count = n_frames;
  ds.header.spec_hash = spec_hash(spec);
  ds.frames.resize(n_frames);
  parallel_for(static_cast<int>(n_frames), std::max(1, threads), [&](int i) {
    const std::uint64_t frame_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(frame_seed);
    ds.frames[static_cast<std::size_t>(i)] = generate_frame(spec, sampler(spec, rng), camera, frame_seed);
  });
  return ds;
}

bool same_records(const Dataset& a, const Dataset& b) {
  if (!(a.header == b.header) || a.frames.size() != b.frames.size()) return false;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const Frame& x = a.frames[i];
    const Frame& y = b.frames[i];
    if (x.depth.values != y.depth.values || x.depth.width != y.depth.width ||
        x.depth.height != y.depth.height || x.gt.joints != y.gt.joints ||
        x.centroid_mm != y.centroid_mm || x.meta.seed != y.meta.seed) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Codec

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

  std::vector<std::uint8_t> out;

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  const std::uint8_t* take(std::size_t n) {
    if (buf.size() - pos < n) {
      throw Error(ErrorCode::FormatError, "dataset truncated at byte " + std::to_string(pos));
    }
    const std::uint8_t* p = buf.data() + pos;
    pos += n;
    return p;
  }
  std::uint64_t le(int n) {
    const std::uint8_t* p = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  const Intrinsics& in = ds.header.intrinsics;
  nlohmann::ordered_json h;
  h["version"] = ds.header.version;
  h["joints"] = ds.header.joints;
  h["intrinsics"] = {{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx},
                     {"cy", in.cy}, {"width", in.width}, {"height", in.height}};
  h["frame_count"] = ds.frames.size();
  h["spec_hash"] = ds.header.spec_hash;
  const std::string header = h.dump();

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  const std::size_t pixels = static_cast<std::size_t>(in.width) * in.height;
  for (const Frame& f : ds.frames) {
    if (f.depth.values.size() != pixels) {
      throw Error(ErrorCode::FormatError, "frame size differs from the dataset intrinsics");
    }
    if (f.gt.joint_count() != ds.header.joints) {
      throw Error(ErrorCode::FormatError, "frame joint count differs from the header");
    }
    for (double v : f.depth.values) {
      if (v < 0.0 || v > 65535.0 || v != std::round(v)) {
        throw Error(ErrorCode::FormatError, "depth must be whole millimetres in [0, 65535]");
      }
      w.u16(static_cast<std::uint16_t>(v));
    }
    for (const Vec3& j : f.gt.joints) {
      for (int a = 0; a < 3; ++a) w.f32(j[a]);
    }
    for (int a = 0; a < 3; ++a) w.f32(f.centroid_mm[a]);
    w.u64(f.meta.seed);
  }
  return std::move(w.out);
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (!std::equal(kMagic, kMagic + sizeof kMagic, r.take(sizeof kMagic))) {
    throw Error(ErrorCode::FormatError, "not a virtview dataset (bad magic)");
  }
  const auto header_len = static_cast<std::size_t>(r.le(4));
  const auto* hp = reinterpret_cast<const char*>(r.take(header_len));
  Dataset ds;
  try {
    const nlohmann::json h = nlohmann::json::parse(hp, hp + header_len);
    ds.header.version = h.at("version").get<int>();
    ds.header.joints = h.at("joints").get<int>();
    const auto& in = h.at("intrinsics");
    Intrinsics& intr = ds.header.intrinsics;
    intr.fx = in.at("fx").get<double>();
    intr.fy = in.at("fy").get<double>();
    intr.cx = in.at("cx").get<double>();
    intr.cy = in.at("cy").get<double>();
    intr.width = in.at("width").get<int>();
    intr.height = in.at("height").get<int>();
    ds.header.frame_count = h.at("frame_count").get<std::uint64_t>();
    ds.header.spec_hash = h.at("spec_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("dataset header: ") + e.what());
  }
  if (ds.header.version != 1) {
    throw Error(ErrorCode::FormatError, "unsupported dataset version " + std::to_string(ds.header.version));
  }
  ds.header.intrinsics.validate();
  if (ds.header.joints <= 0) throw Error(ErrorCode::FormatError, "joint count must be positive");

  const Intrinsics& intr = ds.header.intrinsics;
  const std::size_t pixels = static_cast<std::size_t>(intr.width) * intr.height;
  const std::size_t frame_bytes = pixels * 2 + static_cast<std::size_t>(ds.header.joints) * 12 + 12 + 8;
  if ((bytes.size() - r.pos) != frame_bytes * ds.header.frame_count) {
    throw Error(ErrorCode::FormatError, "payload size does not match frame_count");
  }
  ds.frames.resize(ds.header.frame_count);
  for (Frame& f : ds.frames) {
    f.depth = DepthImage(intr, kOriginalFrame);
    for (double& v : f.depth.values) v = static_cast<double>(r.le(2));
    f.gt.frame_id = kOriginalFrame;
    f.gt.joints.resize(static_cast<std::size_t>(ds.header.joints));
    for (Vec3& j : f.gt.joints) {
      for (int a = 0; a < 3; ++a) j[a] = r.f32();
    }
    for (int a = 0; a < 3; ++a) f.centroid_mm[a] = r.f32();
    f.meta.seed = r.le(8);
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const std::vector<std::uint8_t> bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentConfig::validate() const {
  if (!(scale_min > 0.0) || scale_max < scale_min) {
    throw Error(ErrorCode::InvalidArgument, "scale range must be positive and ordered");
  }
  if (centroid_jitter_mm < 0.0 || camera_rotation_jitter_rad < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "jitters must be >= 0");
  }
}

Frame augment(const Frame& frame, const AugmentConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, frame.meta.seed));
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const double s = uniform(cfg.scale_min, cfg.scale_max);
  Vec3 jitter, rotation;
  for (int a = 0; a < 3; ++a) jitter[a] = uniform(-cfg.centroid_jitter_mm, cfg.centroid_jitter_mm);
  for (int a = 0; a < 3; ++a) {
    rotation[a] = uniform(-cfg.camera_rotation_jitter_rad, cfg.camera_rotation_jitter_rad);
  }

  Frame out = frame;
  const Vec3 c = frame.centroid_mm;
  if (s != 1.0) {
    PointCloud cloud = unproject(frame.depth);
    for (Vec3& p : cloud.points) p = c + s * (p - c);
    out.depth = render_original(cloud, frame.depth.intrinsics);
    for (Vec3& j : out.gt.joints) j = c + s * (j - c);
  }
  out.centroid_mm = c + jitter;
  out.meta.view_jitter = frame.meta.view_jitter + rotation;
  return out;
}

VirtualViewSet apply_view_jitter(const VirtualViewSet& views, const Vec3& jitter) {
  VirtualViewSet out = views;
  const double angle = jitter.norm();
  if (angle == 0.0) return out;
  const Mat3 j = axis_angle(jitter / angle, angle);
  const Vec3& c = views.center_mm;
  for (VirtualView& v : out.views) {
    RigidTransform t;
    t.rotation = j * v.to_original.rotation;
    t.translation = j * (v.to_original.translation - c) + c;
    v.to_original = t;
    v.from_original = invert(t);
  }
  return out;
}

}  // namespace virtview
