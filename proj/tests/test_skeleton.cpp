#include <numbers>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "agrol/random.hpp"
#include "agrol/skeleton.hpp"
#include "oracles.hpp"

namespace agrol {
namespace {

using M = Mat3<double>;
using V = Vec3<double>;

M random_rotation(Rng& rng) {
  const V axis = V(rng.normal(), rng.normal(), rng.normal()).normalized();
  return axisangle_to_matrix<double>(axis, rng.uniform(-3.0, 3.0));
}

std::vector<M> random_pose(Rng& rng, std::size_t frames, std::size_t joints = kNumJoints) {
  std::vector<M> rots(frames * joints);
  for (auto& r : rots) r = random_rotation(rng);
  return rots;
}

SkeletonTree chain(std::size_t n) {
  SkeletonTree t;
  for (std::size_t j = 0; j < n; ++j) {
    t.names.push_back("j" + std::to_string(j));
    t.parent.push_back(static_cast<int>(j) - 1);
    t.offset.push_back(j == 0 ? V::Zero() : V(0.1 * j, 1.0, -0.2 * j));
  }
  t.head = static_cast<int>(n - 1);
  t.hands = {0, 0};
  return t;
}

TEST(Skeleton, DefaultTreeStructure) {
  const SkeletonTree t = default_test_skeleton();
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.joint_count(), 22u);
  EXPECT_EQ(t.head, 15);
  EXPECT_EQ(t.hands[0], 20);
  EXPECT_EQ(t.hands[1], 21);
  std::multiset<int> all(t.upper.begin(), t.upper.end());
  all.insert(t.lower.begin(), t.lower.end());
  all.insert(t.root);
  EXPECT_EQ(all.size(), 22u);
  for (int j = 0; j < 22; ++j) EXPECT_EQ(all.count(j), 1u) << j;
  const std::set<int> lower(t.lower.begin(), t.lower.end());
  EXPECT_EQ(lower, (std::set<int>{1, 2, 4, 5, 7, 8, 10, 11}));
}

TEST(Skeleton, HeadHeightAndStature) {
  const SkeletonTree t = default_test_skeleton();
  const std::vector<M> rots(22, M::Identity());
  const std::vector<V> root(1, V::Zero());
  const auto fk = forward_kinematics<double>(t, rots, root);
  double min_y = 0;
  for (std::size_t j = 0; j < 22; ++j) min_y = std::min(min_y, fk.pos(0, j).y());
  const double head_height = fk.pos(0, 15).y() - min_y;
  EXPECT_NEAR(head_height, 1.5, 0.2);
}

TEST(Skeleton, BadTopologyThrows) {
  SkeletonTree t = chain(3);
  t.parent[1] = 2;
  EXPECT_THROW(t.validate(), TopologyError);
  SkeletonTree two_roots = chain(3);
  two_roots.parent[2] = -1;
  EXPECT_THROW(two_roots.validate(), TopologyError);
  SkeletonTree nan_offset = chain(3);
  nan_offset.offset[1].x() = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(nan_offset.validate(), TopologyError);
  const std::vector<M> rots(3, M::Identity());
  const std::vector<V> root(1, V::Zero());
  EXPECT_THROW(forward_kinematics<double>(t, rots, root), TopologyError);
}

TEST(Skeleton, TextFileRoundTrip) {
  const SkeletonTree t = default_test_skeleton();
  std::stringstream ss;
  write_skeleton(ss, t);
  const SkeletonTree back = parse_skeleton(ss);
  for (std::size_t j = 0; j < 22; ++j) {
    EXPECT_EQ(back.parent[j], t.parent[j]);
    EXPECT_LT((back.offset[j] - t.offset[j]).norm(), 1e-9);
  }
  std::istringstream bad("pelvis = none 0 0 0\nleft_hip = head 0 0 0\n");
  EXPECT_THROW(parse_skeleton(bad), TopologyError);
  std::istringstream short_file("pelvis = none 0 0 0\n");
  EXPECT_THROW(parse_skeleton(short_file), TopologyError);
}

TEST(ForwardKinematics, IdentityPoseIsPrefixSum) {
  const SkeletonTree t = default_test_skeleton();
  const std::vector<M> rots(22, M::Identity());
  const std::vector<V> root(1, V::Zero());
  const auto fk = forward_kinematics<double>(t, rots, root);
  for (std::size_t j = 0; j < 22; ++j) {
    V expected = V::Zero();
    for (int k = static_cast<int>(j); k != kNoParent; k = t.parent[k]) expected += t.offset[k];
    EXPECT_LT((fk.pos(0, j) - expected).norm(), 1e-12);
  }
}

TEST(ForwardKinematics, TwoJointQuarterTurn) {
  SkeletonTree t = chain(2);
  t.offset[1] = V(0, 1, 0);
  const std::vector<M> rots = {axisangle_to_matrix<double>(V::UnitZ(), std::numbers::pi / 2),
                               M::Identity()};
  const std::vector<V> root(1, V::Zero());
  const auto fk = forward_kinematics<double>(t, rots, root);
  EXPECT_LT((fk.pos(0, 1) - V(-1, 0, 0)).norm(), 1e-12);
}

TEST(ForwardKinematics, ShortChainsMatchHandOracle) {
  Rng rng(3);
  for (std::size_t n = 1; n <= 4; ++n) {
    const SkeletonTree t = chain(n);
    const auto rots = random_pose(rng, 1, n);
    const std::vector<V> root = {V(0.3, -0.2, 1.1)};
    const auto fk = forward_kinematics<double>(t, rots, root);
    M g = rots[0];
    V p = root[0];
    EXPECT_LT((fk.pos(0, 0) - p).norm(), 1e-12);
    for (std::size_t j = 1; j < n; ++j) {
      p = p + g * t.offset[j];
      g = g * rots[j];
      EXPECT_LT((fk.pos(0, j) - p).norm(), 1e-6);
      EXPECT_LT((fk.rot(0, j) - g).norm(), 1e-6);
    }
  }
}

TEST(ForwardKinematics, TranslationAndRotationEquivariance) {
  const SkeletonTree t = default_test_skeleton();
  Rng rng(4);
  const auto rots = random_pose(rng, 3);
  const std::vector<V> root = {V(0, 0.9, 0), V(0.1, 0.9, 0), V(0.2, 0.95, 0.1)};
  const auto fk = forward_kinematics<double>(t, rots, root);

  const V shift(1.5, -0.25, 3.0);
  std::vector<V> shifted = root;
  for (auto& r : shifted) r += shift;
  const auto fk_shift = forward_kinematics<double>(t, rots, shifted);

  const M q = random_rotation(rng);
  auto rotated_rots = rots;
  std::vector<V> rotated_root = root;
  for (std::size_t f = 0; f < 3; ++f) {
    rotated_rots[f * 22] = q * rots[f * 22];
    rotated_root[f] = q * root[f];
  }
  const auto fk_rot = forward_kinematics<double>(t, rotated_rots, rotated_root);
  for (std::size_t f = 0; f < 3; ++f) {
    for (std::size_t j = 0; j < 22; ++j) {
      EXPECT_LT((fk_shift.pos(f, j) - (fk.pos(f, j) + shift)).norm(), 1e-12);
      EXPECT_LT((fk_rot.pos(f, j) - q * fk.pos(f, j)).norm(), 1e-5);
    }
  }
}

TEST(ForwardKinematics, BackwardMatchesFiniteDifferences) {
  const SkeletonTree t = default_test_skeleton();
  Rng rng(5);
  const std::size_t frames = 2;
  const auto base = random_pose(rng, frames);
  // Perturb rotation matrix entries directly (the map is linear in each).
  Tensor2<double> flat(frames * 22, 9);
  for (std::size_t i = 0; i < base.size(); ++i)
    for (int k = 0; k < 9; ++k) flat(i, k) = base[i](k / 3, k % 3);
  Tensor2<double> root(frames, 3);
  for (auto& v : root.span()) v = rng.normal();
  Tensor2<double> w(frames * 22, 3);
  for (auto& v : w.span()) v = rng.normal();
  auto unpack = [&] {
    std::vector<M> rots(frames * 22);
    for (std::size_t i = 0; i < rots.size(); ++i)
      for (int k = 0; k < 9; ++k) rots[i](k / 3, k % 3) = flat(i, k);
    std::vector<V> tr(frames);
    for (std::size_t f = 0; f < frames; ++f) tr[f] = V(root(f, 0), root(f, 1), root(f, 2));
    return std::pair(rots, tr);
  };
  auto loss = [&] {
    const auto [rots, tr] = unpack();
    const auto fk = forward_kinematics<double>(t, rots, tr);
    double acc = 0;
    for (std::size_t i = 0; i < fk.global_pos.size(); ++i)
      acc += fk.global_pos[i].dot(V(w(i, 0), w(i, 1), w(i, 2)));
    return acc;
  };
  const auto [rots, tr] = unpack();
  const auto fk = forward_kinematics<double>(t, rots, tr);
  std::vector<V> d_pos(frames * 22);
  for (std::size_t i = 0; i < d_pos.size(); ++i) d_pos[i] = V(w(i, 0), w(i, 1), w(i, 2));
  const auto g = forward_kinematics_backward<double>(t, rots, fk, d_pos);
  std::vector<double> analytic_rot;
  for (const auto& m : g.d_local)
    for (int k = 0; k < 9; ++k) analytic_rot.push_back(m(k / 3, k % 3));
  std::vector<double> analytic_root;
  for (const auto& v : g.d_root_trans)
    for (int k = 0; k < 3; ++k) analytic_root.push_back(v[k]);
  EXPECT_LT(testing::relative_error(testing::finite_difference(flat, loss), analytic_rot), 1e-6);
  EXPECT_LT(testing::relative_error(testing::finite_difference(root, loss), analytic_root), 1e-6);
}

TEST(RootRecovery, ReproducesHeadTrajectory) {
  const SkeletonTree t = default_test_skeleton();
  Rng rng(6);
  const std::size_t frames = 20;
  const auto rots = random_pose(rng, frames);
  std::vector<V> head(frames);
  for (auto& h : head) h = V(rng.normal(), 1.6 + 0.1 * rng.normal(), rng.normal());
  const auto trans = recover_root_translation<double>(t, rots, head);
  const auto fk = forward_kinematics<double>(t, rots, trans);
  for (std::size_t f = 0; f < frames; ++f) {
    EXPECT_LT((fk.pos(f, 15) - head[f]).norm(), 1e-6);
  }
}

TEST(RootRecovery, SimpleCases) {
  const SkeletonTree t = default_test_skeleton();
  const std::vector<M> rots(22, M::Identity());
  const std::vector<V> zero(1, V::Zero());
  const V h0 = forward_kinematics<double>(t, rots, zero).pos(0, 15);
  const std::vector<V> same = {h0};
  EXPECT_LT(recover_root_translation<double>(t, rots, same)[0].norm(), 1e-12);
  const std::vector<V> moved = {h0 + V(1, 2, 3)};
  EXPECT_LT((recover_root_translation<double>(t, rots, moved)[0] - V(1, 2, 3)).norm(), 1e-12);
}

} // namespace
} // namespace agrol
