#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "agrol/errors.hpp"
#include "agrol/rotations.hpp"

namespace agrol {

inline constexpr std::size_t kNumJoints = 22;
inline constexpr int kNoParent = -1;

// SMPL body-joint ordering (hands and face excluded).
inline const std::array<const char*, kNumJoints> kSmplJointNames = {
    "pelvis",         "left_hip",       "right_hip",   "spine1",
    "left_knee",      "right_knee",     "spine2",      "left_ankle",
    "right_ankle",    "spine3",         "left_foot",   "right_foot",
    "neck",           "left_collar",    "right_collar", "head",
    "left_shoulder",  "right_shoulder", "left_elbow",  "right_elbow",
    "left_wrist",     "right_wrist"};

inline constexpr std::array<int, kNumJoints> kSmplParents = {
    kNoParent, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};

namespace joint {
inline constexpr int kPelvis = 0;
inline constexpr int kLeftHip = 1;
inline constexpr int kRightHip = 2;
inline constexpr int kSpine1 = 3;
inline constexpr int kLeftKnee = 4;
inline constexpr int kRightKnee = 5;
inline constexpr int kSpine2 = 6;
inline constexpr int kLeftAnkle = 7;
inline constexpr int kRightAnkle = 8;
inline constexpr int kSpine3 = 9;
inline constexpr int kLeftFoot = 10;
inline constexpr int kRightFoot = 11;
inline constexpr int kNeck = 12;
inline constexpr int kLeftCollar = 13;
inline constexpr int kRightCollar = 14;
inline constexpr int kHead = 15;
inline constexpr int kLeftShoulder = 16;
inline constexpr int kRightShoulder = 17;
inline constexpr int kLeftElbow = 18;
inline constexpr int kRightElbow = 19;
inline constexpr int kLeftWrist = 20;
inline constexpr int kRightWrist = 21;
} // namespace joint

// Kinematic tree in topological order. Offsets are rest-pose bone vectors
// from the parent joint, in meters (y up, x to the body's left, z forward).
struct SkeletonTree {
  std::vector<std::string> names;
  std::vector<int> parent;
  std::vector<Vec3<double>> offset;

  int root = 0;
  int head = joint::kHead;
  std::array<int, 2> hands = {joint::kLeftWrist, joint::kRightWrist};
  std::vector<int> lower;
  std::vector<int> upper;
  std::vector<int> feet;

  [[nodiscard]] std::size_t joint_count() const { return parent.size(); }

  // Throws TopologyError unless parent[j] < j for every non-root joint and
  // joint 0 is the single root.
  void validate() const {
    if (parent.empty()) {
      throw TopologyError("skeleton has no joints");
    }
    if (names.size() != parent.size() || offset.size() != parent.size()) {
      throw TopologyError("skeleton arrays have inconsistent lengths");
    }
    if (parent[0] != kNoParent) {
      throw TopologyError("joint 0 must be the root");
    }
    for (std::size_t j = 1; j < parent.size(); ++j) {
      if (parent[j] < 0 || parent[j] >= static_cast<int>(j)) {
        throw TopologyError("joint " + names[j] +
                            " breaks topological order (parent must precede it)");
      }
    }
    for (const auto& o : offset) {
      if (!o.allFinite()) {
        throw TopologyError("skeleton offset is not finite");
      }
    }
    auto in_range = [&](int j) {
      return j >= 0 && j < static_cast<int>(parent.size());
    };
    if (!in_range(head) || !in_range(hands[0]) || !in_range(hands[1])) {
      throw TopologyError("skeleton group index out of range");
    }
  }
};

// Builds a 22-joint SMPL-ordered tree and fills the standard joint groups.
inline SkeletonTree make_smpl_skeleton(std::span<const Vec3<double>> offsets) {
  if (offsets.size() != kNumJoints) {
    throw TopologyError("SMPL skeleton needs exactly 22 offsets");
  }
  SkeletonTree tree;
  tree.names.assign(kSmplJointNames.begin(), kSmplJointNames.end());
  tree.parent.assign(kSmplParents.begin(), kSmplParents.end());
  tree.offset.assign(offsets.begin(), offsets.end());
  tree.lower = {joint::kLeftHip,    joint::kRightHip,    joint::kLeftKnee,
                joint::kRightKnee,  joint::kLeftAnkle,   joint::kRightAnkle,
                joint::kLeftFoot,   joint::kRightFoot};
  for (int j = 1; j < static_cast<int>(kNumJoints); ++j) {
    if (std::find(tree.lower.begin(), tree.lower.end(), j) == tree.lower.end()) {
      tree.upper.push_back(j);
    }
  }
  tree.feet = {joint::kLeftAnkle, joint::kRightAnkle, joint::kLeftFoot,
               joint::kRightFoot};
  tree.validate();
  return tree;
}

// Fixed humanoid, about 1.7 m tall, with SMPL joint ordering.
inline SkeletonTree default_test_skeleton() {
  const std::array<Vec3<double>, kNumJoints> offsets = {
      Vec3<double>(0.0, 0.0, 0.0),       // pelvis
      Vec3<double>(0.06, -0.09, 0.0),    // left_hip
      Vec3<double>(-0.06, -0.09, 0.0),   // right_hip
      Vec3<double>(0.0, 0.11, -0.02),    // spine1
      Vec3<double>(0.04, -0.38, 0.0),    // left_knee
      Vec3<double>(-0.04, -0.38, 0.0),   // right_knee
      Vec3<double>(0.0, 0.13, 0.01),     // spine2
      Vec3<double>(-0.01, -0.40, -0.04), // left_ankle
      Vec3<double>(0.01, -0.40, -0.04),  // right_ankle
      Vec3<double>(0.0, 0.05, 0.0),      // spine3
      Vec3<double>(0.03, -0.06, 0.12),   // left_foot
      Vec3<double>(-0.03, -0.06, 0.12),  // right_foot
      Vec3<double>(0.0, 0.21, -0.03),    // neck
      Vec3<double>(0.08, 0.12, -0.02),   // left_collar
      Vec3<double>(-0.08, 0.12, -0.02),  // right_collar
      Vec3<double>(0.0, 0.09, 0.05),     // head
      Vec3<double>(0.11, 0.04, -0.01),   // left_shoulder
      Vec3<double>(-0.11, 0.04, -0.01),  // right_shoulder
      Vec3<double>(0.26, 0.0, -0.02),    // left_elbow
      Vec3<double>(-0.26, 0.0, -0.02),   // right_elbow
      Vec3<double>(0.25, 0.01, 0.0),     // left_wrist
      Vec3<double>(-0.25, 0.01, 0.0),    // right_wrist
  };
  return make_smpl_skeleton(offsets);
}

// Text format, one joint per line in SMPL order:
//   <name> = <parent name | none> <x> <y> <z>
// Blank lines and lines starting with '#' are ignored.
inline SkeletonTree parse_skeleton(std::istream& in) {
  std::vector<std::string> names;
  std::vector<Vec3<double>> offsets;
  std::map<std::string, int> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("skeleton line " + std::to_string(line_no) + ": missing '='");
    }
    std::istringstream key(line.substr(0, eq));
    std::istringstream value(line.substr(eq + 1));
    std::string name;
    std::string parent_name;
    Vec3<double> o;
    key >> name;
    if (!(value >> parent_name >> o.x() >> o.y() >> o.z())) {
      throw ConfigError("skeleton line " + std::to_string(line_no) +
                        ": expected '<parent> <x> <y> <z>'");
    }
    const std::size_t j = names.size();
    if (j >= kNumJoints || name != kSmplJointNames[j]) {
      throw TopologyError("skeleton line " + std::to_string(line_no) +
                          ": expected joint '" +
                          (j < kNumJoints ? kSmplJointNames[j] : "<end>") + "'");
    }
    const int expected_parent = kSmplParents[j];
    const bool parent_ok =
        expected_parent == kNoParent
            ? parent_name == "none"
            : (index.count(parent_name) && index[parent_name] == expected_parent);
    if (!parent_ok) {
      throw TopologyError("skeleton line " + std::to_string(line_no) +
                          ": wrong parent '" + parent_name + "' for " + name);
    }
    index[name] = static_cast<int>(j);
    names.push_back(name);
    offsets.push_back(o);
  }
  if (names.size() != kNumJoints) {
    throw TopologyError("skeleton file lists " + std::to_string(names.size()) +
                        " joints, expected 22");
  }
  return make_smpl_skeleton(offsets);
}

inline SkeletonTree load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open skeleton file " + path);
  }
  return parse_skeleton(in);
}

inline void write_skeleton(std::ostream& out, const SkeletonTree& tree) {
  out << "# name = parent x y z (meters)\n";
  for (std::size_t j = 0; j < tree.joint_count(); ++j) {
    const int p = tree.parent[j];
    out << tree.names[j] << " = " << (p == kNoParent ? "none" : tree.names[p])
        << ' ' << tree.offset[j].x() << ' ' << tree.offset[j].y() << ' '
        << tree.offset[j].z() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Forward kinematics. Per-frame arrays are frame-major: index = f * J + j.

template <typename T>
struct FkResult {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<Mat3<T>> global_rot;
  std::vector<Vec3<T>> global_pos;

  const Vec3<T>& pos(std::size_t f, std::size_t j) const {
    return global_pos[f * joints + j];
  }
  const Mat3<T>& rot(std::size_t f, std::size_t j) const {
    return global_rot[f * joints + j];
  }
};

template <typename T>
FkResult<T> forward_kinematics(const SkeletonTree& tree,
                               std::span<const Mat3<T>> local_rots,
                               std::span<const Vec3<T>> root_trans) {
  tree.validate();
  const std::size_t nj = tree.joint_count();
  const std::size_t frames = root_trans.size();
  if (local_rots.size() != frames * nj) {
    throw DimensionError("forward_kinematics: expected frames*joints rotations");
  }
  FkResult<T> fk;
  fk.frames = frames;
  fk.joints = nj;
  fk.global_rot.resize(frames * nj);
  fk.global_pos.resize(frames * nj);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t base = f * nj;
    fk.global_rot[base] = local_rots[base];
    fk.global_pos[base] = root_trans[f];
    for (std::size_t j = 1; j < nj; ++j) {
      const std::size_t p = base + static_cast<std::size_t>(tree.parent[j]);
      fk.global_rot[base + j] = fk.global_rot[p] * local_rots[base + j];
      fk.global_pos[base + j] =
          fk.global_pos[p] + fk.global_rot[p] * tree.offset[j].template cast<T>();
    }
  }
  return fk;
}

template <typename T>
struct FkGrads {
  std::vector<Mat3<T>> d_local;
  std::vector<Vec3<T>> d_root_trans;
};

// Backpropagates dL/d(global_pos) through FK.
template <typename T>
FkGrads<T> forward_kinematics_backward(const SkeletonTree& tree,
                                       std::span<const Mat3<T>> local_rots,
                                       const FkResult<T>& fk,
                                       std::span<const Vec3<T>> d_pos) {
  const std::size_t nj = tree.joint_count();
  const std::size_t frames = fk.frames;
  if (d_pos.size() != frames * nj || local_rots.size() != frames * nj) {
    throw DimensionError("forward_kinematics_backward: size mismatch");
  }
  FkGrads<T> g;
  g.d_local.assign(frames * nj, Mat3<T>::Zero());
  g.d_root_trans.assign(frames, Vec3<T>::Zero());
  std::vector<Mat3<T>> d_grot(nj);
  std::vector<Vec3<T>> d_gpos(nj);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t base = f * nj;
    for (std::size_t j = 0; j < nj; ++j) {
      d_grot[j].setZero();
      d_gpos[j] = d_pos[base + j];
    }
    for (std::size_t j = nj - 1; j >= 1; --j) {
      const auto p = static_cast<std::size_t>(tree.parent[j]);
      d_gpos[p] += d_gpos[j];
      d_grot[p] += d_gpos[j] * tree.offset[j].template cast<T>().transpose();
      d_grot[p] += d_grot[j] * local_rots[base + j].transpose();
      g.d_local[base + j] = fk.global_rot[base + p].transpose() * d_grot[j];
    }
    g.d_local[base] = d_grot[0];
    g.d_root_trans[f] = d_gpos[0];
  }
  return g;
}

// Places the character so its FK head lands on the tracked head position:
// run FK at the origin, then translate by (tracked head - FK head).
template <typename T>
std::vector<Vec3<T>> recover_root_translation(const SkeletonTree& tree,
                                              std::span<const Mat3<T>> local_rots,
                                              std::span<const Vec3<T>> head_pos) {
  const std::vector<Vec3<T>> zero(head_pos.size(), Vec3<T>::Zero());
  const FkResult<T> fk = forward_kinematics<T>(tree, local_rots, zero);
  std::vector<Vec3<T>> out(head_pos.size());
  for (std::size_t f = 0; f < head_pos.size(); ++f) {
    out[f] = head_pos[f] - fk.pos(f, static_cast<std::size_t>(tree.head));
  }
  return out;
}

} // namespace agrol
