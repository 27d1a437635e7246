#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "agrol/errors.hpp"
#include "agrol/features.hpp"
#include "agrol/mseq.hpp"
#include "agrol/random.hpp"
#include "agrol/rotations.hpp"
#include "agrol/skeleton.hpp"

namespace agrol {

// A motion with its global placement: local rotations (N x 132), root
// translation (N x 3) and the tracked head trajectory (N x 3), all float.
struct MotionClip {
  std::string name;
  double fps = kDefaultFps;
  Tensor motion;
  Tensor root;
  Tensor head;

  [[nodiscard]] std::size_t frames() const { return motion.rows(); }
};

inline std::vector<Vec3<double>> to_vec3(const Tensor& t) {
  if (t.cols() != 3) {
    throw DimensionError("expected an N x 3 trajectory");
  }
  std::vector<Vec3<double>> out(t.rows());
  for (std::size_t f = 0; f < t.rows(); ++f) {
    out[f] = Vec3<double>(t(f, 0), t(f, 1), t(f, 2));
  }
  return out;
}

inline Tensor from_vec3(std::span<const Vec3<double>> v) {
  Tensor out(v.size(), 3);
  for (std::size_t f = 0; f < v.size(); ++f) {
    for (int a = 0; a < 3; ++a) out(f, a) = static_cast<float>(v[f][a]);
  }
  return out;
}

inline Tensor clip_sparse_input(const SkeletonTree& tree, const MotionClip& clip) {
  return build_sparse_input(tree, clip.motion, to_vec3(clip.root), clip.fps);
}

inline MotionClip slice_clip(const MotionClip& clip, std::size_t begin, std::size_t count) {
  MotionClip out;
  out.name = clip.name;
  out.fps = clip.fps;
  out.motion = slice_rows(clip.motion, begin, count);
  out.root = slice_rows(clip.root, begin, count);
  out.head = slice_rows(clip.head, begin, count);
  return out;
}

// ---------------------------------------------------------------------------
// Procedural walking

struct GaitParams {
  double frequency = 1.0;        // gait cycles per second (one left + one right step)
  double stride_amplitude = 0.5; // peak knee flexion during swing, rad
  double arm_swing = 0.3;        // peak shoulder swing, rad
  double speed = 1.0;            // forward speed, m/s
  double turn_rate = 0.0;        // heading change, rad/s
  double sway = 0.03;            // pelvis roll amplitude, rad
  double phase = 0.0;            // initial cycle phase, rad
  std::size_t frames = 196;
  double fps = kDefaultFps;
  double noise_deg = 1.0;        // per-joint constant rotation offset bound

  void validate() const {
    if (!(frequency > 0.0)) throw ConfigError("gait frequency must be positive");
    const double lim = std::numbers::pi / 2.0;
    for (const double a : {stride_amplitude, arm_swing, sway}) {
      if (std::abs(a) > lim) throw ConfigError("gait amplitude exceeds pi/2");
    }
    if (fps != kDefaultFps) throw ConfigError("gait fps must be 60");
    if (!(speed >= 0.0)) throw ConfigError("gait speed must be non-negative");
    if (!(noise_deg >= 0.0 && noise_deg <= 1.0)) {
      throw ConfigError("gait noise must lie in [0, 1] degrees");
    }
  }
};

// Height of the stance ankle above the ground plane (y = 0); puts the
// level foot joints roughly on the floor.
inline constexpr double kAnkleHeight = 0.06;

namespace detail {

inline Mat3<double> rot_x(double a) {
  return axisangle_to_matrix<double>(Vec3<double>::UnitX(), a);
}
inline Mat3<double> rot_y(double a) {
  return axisangle_to_matrix<double>(Vec3<double>::UnitY(), a);
}
inline Mat3<double> rot_z(double a) {
  return axisangle_to_matrix<double>(Vec3<double>::UnitZ(), a);
}

inline double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

inline double frac(double x) { return x - std::floor(x); }

// Hip and knee angles for a leg at cycle position s in [0, 1): stance for
// s < 0.5 (leg straight, ankle sliding back under the hip at constant
// speed), swing afterwards (knee lifts while the hip swings forward).
struct LegPose {
  double hip = 0.0;
  double knee = 0.0;
  bool stance = false;
};

// Rest hip-to-ankle vector in the sagittal plane: `drop` below the hip and
// `reach` forward. Stance is centered under the hip so both ends of a step
// sit at the same height; at very short steps the center moves back to the
// rest position, making a zero step length the rest pose.
struct LegGeometry {
  double drop = 0.78;
  double reach = 0.0;

  // Hip flexion placing the ankle x ahead of the stance center.
  [[nodiscard]] double hip_for(double x, double half_step) const {
    const double len = std::hypot(drop, reach);
    const double rest_weight =
        reach == 0.0 ? 0.0 : std::max(0.0, 1.0 - half_step / std::abs(reach));
    return std::asin(std::clamp((x + rest_weight * reach) / len, -1.0, 1.0)) -
           std::asin(reach / len);
  }
};

inline LegPose leg_pose(double s, double half_step, const LegGeometry& leg, double knee_lift) {
  LegPose p;
  if (s < 0.5) {
    const double u = s / 0.5;
    p.hip = leg.hip_for(half_step * (1.0 - 2.0 * u), half_step);
    p.stance = true;
  } else {
    const double u = (s - 0.5) / 0.5;
    const double back = leg.hip_for(-half_step, half_step);
    const double front = leg.hip_for(half_step, half_step);
    p.hip = back + (front - back) * smoothstep(u);
    p.knee = knee_lift * std::sin(std::numbers::pi * u);
  }
  return p;
}

} // namespace detail

// Walking motion: legs alternate stance and swing half-cycles, the right
// leg half a cycle behind the left; arms are held out to the side and swing
// forward and back against the same-side leg.
// The root follows the planted ankle, so stance feet do not slide, and its
// height keeps the lower ankle at kAnkleHeight.
inline MotionClip generate_gait(const SkeletonTree& tree, const GaitParams& g,
                                std::uint64_t seed) {
  g.validate();
  using detail::rot_x;
  using detail::rot_y;
  using detail::rot_z;
  const std::size_t n = g.frames;
  const std::size_t nj = tree.joint_count();

  Rng rng(mix_seed(seed, 0x6a17));
  std::vector<Mat3<double>> noise(nj, Mat3<double>::Identity());
  if (g.noise_deg > 0.0) {
    for (auto& m : noise) {
      Vec3<double> axis;
      do {
        axis = Vec3<double>(rng.normal(), rng.normal(), rng.normal());
      } while (axis.norm() < 1e-6);
      const double angle = rng.uniform(0.0, g.noise_deg) * std::numbers::pi / 180.0;
      m = axisangle_to_matrix<double>(axis.normalized(), angle);
    }
  }

  const Vec3<double> shank = tree.offset[joint::kLeftKnee] + tree.offset[joint::kLeftAnkle];
  const detail::LegGeometry leg{-shank.y(), shank.z()};
  // Each stance half-cycle the ankle travels one step length, speed / (2 f).
  const double half_step = g.speed / (2.0 * g.frequency) / 2.0;

  std::vector<Mat3<double>> local(n * nj, Mat3<double>::Identity());
  std::vector<int> stance_ankle(n);
  for (std::size_t f = 0; f < n; ++f) {
    const double t = static_cast<double>(f) / g.fps;
    const double cycle = g.frequency * t + g.phase / (2.0 * std::numbers::pi);
    const double s_left = detail::frac(cycle);
    const double s_right = detail::frac(cycle + 0.5);
    const auto left = detail::leg_pose(s_left, half_step, leg, g.stride_amplitude);
    const auto right = detail::leg_pose(s_right, half_step, leg, g.stride_amplitude);
    stance_ankle[f] = left.stance ? joint::kLeftAnkle : joint::kRightAnkle;

    Mat3<double>* L = &local[f * nj];
    L[joint::kPelvis] = rot_y(g.turn_rate * t) *
                        rot_z(g.sway * std::sin(2.0 * std::numbers::pi * cycle));
    // Flexion about +x moves the foot backward, hence the sign flips.
    L[joint::kLeftHip] = rot_x(-left.hip);
    L[joint::kLeftKnee] = rot_x(left.knee);
    L[joint::kLeftAnkle] = rot_x(left.hip - left.knee);
    L[joint::kRightHip] = rot_x(-right.hip);
    L[joint::kRightKnee] = rot_x(right.knee);
    L[joint::kRightAnkle] = rot_x(right.hip - right.knee);

    // A leg is furthest forward when its stance begins (s = 0).
    const double arm_left = -g.arm_swing * std::cos(2.0 * std::numbers::pi * s_left);
    const double arm_right = -g.arm_swing * std::cos(2.0 * std::numbers::pi * s_right);
    L[joint::kLeftShoulder] = rot_y(-arm_left);
    L[joint::kRightShoulder] = rot_y(arm_right);
    L[joint::kLeftElbow] = rot_y(-0.5 * g.arm_swing * (1.0 + std::sin(2.0 * std::numbers::pi * s_left)));
    L[joint::kRightElbow] = rot_y(0.5 * g.arm_swing * (1.0 + std::sin(2.0 * std::numbers::pi * s_right)));
    for (std::size_t j = 0; j < nj; ++j) L[j] = L[j] * noise[j];
  }

  // Storage is float; place the root using the rotations that will be stored.
  MotionClip clip;
  clip.fps = g.fps;
  clip.motion = encode_motion<float, double>(local);
  const auto stored = decode_motion<float, double>(clip.motion);
  const std::vector<Vec3<double>> origin(n, Vec3<double>::Zero());
  const auto rel = forward_kinematics<double>(tree, stored, origin);

  std::vector<Vec3<double>> root(n, Vec3<double>::Zero());
  for (std::size_t f = 0; f < n; ++f) {
    const auto a = static_cast<std::size_t>(stance_ankle[f]);
    if (f > 0 && stance_ankle[f] == stance_ankle[f - 1]) {
      root[f] = root[f - 1] + (rel.pos(f - 1, a) - rel.pos(f, a));
    } else if (f > 0) {
      const double heading = g.turn_rate * static_cast<double>(f) / g.fps;
      root[f] = root[f - 1] + (g.speed / g.fps) *
                                  Vec3<double>(std::sin(heading), 0.0, std::cos(heading));
    }
    const double lowest = std::min(rel.pos(f, joint::kLeftAnkle).y(),
                                   rel.pos(f, joint::kRightAnkle).y());
    root[f].y() = kAnkleHeight - lowest;
  }
  clip.root = from_vec3(root);
  const auto placed = to_vec3(clip.root);
  const auto fk = forward_kinematics<double>(tree, stored, placed);
  std::vector<Vec3<double>> head(n);
  for (std::size_t f = 0; f < n; ++f) head[f] = fk.pos(f, static_cast<std::size_t>(tree.head));
  clip.head = from_vec3(head);
  return clip;
}

// ---------------------------------------------------------------------------
// Datasets

struct GaitRanges {
  GaitParams lo{0.8, 0.3, 0.1, 0.6, -0.3, 0.0, 0.0, 240, kDefaultFps, 0.0};
  GaitParams hi{1.2, 0.8, 0.5, 1.6, 0.3, 0.06, 2.0 * std::numbers::pi, 240, kDefaultFps, 1.0};
};

struct Dataset {
  std::vector<MotionClip> clips;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline GaitParams sample_gait(const GaitRanges& r, Rng& rng) {
  GaitParams g;
  auto pick = [&](double a, double b) { return a == b ? a : rng.uniform(a, b); };
  g.frequency = pick(r.lo.frequency, r.hi.frequency);
  g.stride_amplitude = pick(r.lo.stride_amplitude, r.hi.stride_amplitude);
  g.arm_swing = pick(r.lo.arm_swing, r.hi.arm_swing);
  g.speed = pick(r.lo.speed, r.hi.speed);
  g.turn_rate = pick(r.lo.turn_rate, r.hi.turn_rate);
  g.sway = pick(r.lo.sway, r.hi.sway);
  g.phase = pick(r.lo.phase, r.hi.phase);
  g.noise_deg = pick(r.lo.noise_deg, r.hi.noise_deg);
  g.frames = r.lo.frames + (r.hi.frames > r.lo.frames
                                ? rng.index(r.hi.frames - r.lo.frames + 1)
                                : 0);
  g.fps = kDefaultFps;
  return g;
}

// Test split: the max(1, count / 10) clips with the smallest seeded hash.
inline void split_dataset(Dataset& d, std::uint64_t seed) {
  const std::size_t count = d.clips.size();
  std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
  for (std::size_t i = 0; i < count; ++i) ranked.emplace_back(mix_seed(seed, 0x5017 + i), i);
  std::sort(ranked.begin(), ranked.end());
  const std::size_t n_test = count < 2 ? 0 : std::max<std::size_t>(1, count / 10);
  std::vector<bool> is_test(count, false);
  for (std::size_t k = 0; k < n_test; ++k) is_test[ranked[k].second] = true;
  d.train.clear();
  d.test.clear();
  for (std::size_t i = 0; i < count; ++i) (is_test[i] ? d.test : d.train).push_back(i);
}

inline Dataset make_dataset(const SkeletonTree& tree, std::size_t count,
                            const GaitRanges& ranges, std::uint64_t seed) {
  if (count < 2) {
    throw ConfigError("make_dataset: need at least 2 sequences");
  }
  Dataset d;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    const GaitParams g = sample_gait(ranges, rng);
    MotionClip clip = generate_gait(tree, g, mix_seed(seed, 0x10000 + i));
    std::ostringstream name;
    name << "seq" << std::setw(4) << std::setfill('0') << i;
    clip.name = name.str();
    d.clips.push_back(std::move(clip));
  }
  split_dataset(d, seed);
  return d;
}

// ---------------------------------------------------------------------------
// Clip <-> file

inline MseqFile clip_to_mseq(const MotionClip& clip) {
  MseqFile f;
  f.fps = static_cast<std::uint32_t>(std::lround(clip.fps));
  f.motion = clip.motion;
  f.tracks.push_back({"ROOT", clip.root});
  f.tracks.push_back({"HEAD", clip.head});
  return f;
}

// Files without a HEAD track get one from FK when a skeleton is supplied.
inline MotionClip mseq_to_clip(const MseqFile& f, const std::string& name,
                               const SkeletonTree* tree = nullptr) {
  if (f.motion.cols() != kMotionWidth) {
    throw DimensionError("motion file has " + std::to_string(f.motion.cols()) +
                         " channels, expected 132");
  }
  MotionClip c;
  c.name = name;
  c.fps = f.fps;
  c.motion = f.motion;
  const MseqTrack* root = f.find("ROOT");
  if (root == nullptr || root->data.cols() != 3) {
    throw FormatError("motion file " + name + " lacks a 3-channel ROOT track");
  }
  c.root = root->data;
  if (const MseqTrack* head = f.find("HEAD"); head != nullptr && head->data.cols() == 3) {
    c.head = head->data;
  } else if (tree != nullptr) {
    const auto fk = forward_kinematics<double>(*tree, decode_motion<float, double>(c.motion),
                                               to_vec3(c.root));
    std::vector<Vec3<double>> h(c.frames());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = fk.pos(i, static_cast<std::size_t>(tree->head));
    c.head = from_vec3(h);
  } else {
    throw FormatError("motion file " + name + " lacks a HEAD track");
  }
  return c;
}

// Line-oriented index: "<path> <frames> <train|test>", '#' comments.
struct ManifestEntry {
  std::string path;
  std::size_t frames = 0;
  std::string split;
};

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  out << "# path frames split\n";
  for (const auto& e : entries) out << e.path << ' ' << e.frames << ' ' << e.split << '\n';
}

inline std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.path >> e.frames >> e.split) || (e.split != "train" && e.split != "test")) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": expected '<path> <frames> <train|test>'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

// Writes every clip as <dir>/<name>.mseq plus <dir>/manifest.txt.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  std::vector<bool> is_test(d.clips.size(), false);
  for (const auto i : d.test) is_test[i] = true;
  for (std::size_t i = 0; i < d.clips.size(); ++i) {
    const std::string file = d.clips[i].name + ".mseq";
    save_mseq((dir / file).string(), clip_to_mseq(d.clips[i]));
    entries.push_back({file, d.clips[i].frames(), is_test[i] ? "test" : "train"});
  }
  std::ofstream out(dir / "manifest.txt");
  write_manifest(out, entries);
  if (!out) throw std::runtime_error("failed writing manifest in " + dir.string());
}

// Paths in the manifest are relative to its directory.
inline Dataset load_dataset(const std::filesystem::path& dir,
                            const SkeletonTree* tree = nullptr) {
  const auto manifest = dir / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) {
    throw std::runtime_error("cannot open dataset manifest " + manifest.string());
  }
  Dataset d;
  for (const auto& e : read_manifest(in)) {
    const std::filesystem::path p = std::filesystem::path(e.path).is_absolute()
                                        ? std::filesystem::path(e.path)
                                        : dir / e.path;
    MotionClip c = mseq_to_clip(load_mseq(p.string()), p.stem().string(), tree);
    if (c.frames() != e.frames) {
      throw FormatError("manifest frame count for " + e.path + " does not match the file");
    }
    (e.split == "test" ? d.test : d.train).push_back(d.clips.size());
    d.clips.push_back(std::move(c));
  }
  return d;
}

} // namespace agrol
