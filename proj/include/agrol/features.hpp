#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "agrol/errors.hpp"
#include "agrol/numerics.hpp"
#include "agrol/random.hpp"
#include "agrol/rotations.hpp"
#include "agrol/skeleton.hpp"

namespace agrol {

inline constexpr std::size_t kRot6DWidth = 6;
inline constexpr std::size_t kMotionWidth = kNumJoints * kRot6DWidth; // 132
inline constexpr std::size_t kTrackedJoints = 3;
inline constexpr std::size_t kChannelsPerTracker = 18;
inline constexpr std::size_t kSparseWidth =
    kTrackedJoints * kChannelsPerTracker; // 54
inline constexpr double kDefaultFps = 60.0;

// Offsets of each field inside one tracker's 18-channel group.
namespace sparse_field {
inline constexpr std::size_t kRotation = 0;
inline constexpr std::size_t kRotationVelocity = 6;
inline constexpr std::size_t kPosition = 12;
inline constexpr std::size_t kLinearVelocity = 15;
} // namespace sparse_field

// Tracked joints in channel order: head, left hand, right hand.
inline std::array<int, kTrackedJoints> tracked_joints(const SkeletonTree& tree) {
  return {tree.head, tree.hands[0], tree.hands[1]};
}

using Trajectory = std::vector<Vec3<double>>;

// Decodes an N x 132 motion array into N*22 local rotation matrices.
template <typename T, typename U = T>
std::vector<Mat3<U>> decode_motion(const Tensor2<T>& motion) {
  if (motion.cols() != kMotionWidth) {
    throw DimensionError("decode_motion: motion width must be 132");
  }
  std::vector<Mat3<U>> rots;
  rots.reserve(motion.rows() * kNumJoints);
  for (std::size_t f = 0; f < motion.rows(); ++f) {
    const auto row = motion.row(f);
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      Rot6D<U> r;
      for (std::size_t k = 0; k < kRot6DWidth; ++k) {
        r[k] = static_cast<U>(row[j * kRot6DWidth + k]);
      }
      rots.push_back(rot6d_to_matrix<U>(r));
    }
  }
  return rots;
}

template <typename T, typename U>
Tensor2<T> encode_motion(std::span<const Mat3<U>> rots) {
  if (rots.size() % kNumJoints != 0) {
    throw DimensionError("encode_motion: rotation count not a multiple of 22");
  }
  const std::size_t frames = rots.size() / kNumJoints;
  Tensor2<T> motion(frames, kMotionWidth);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const Rot6D<U> r = matrix_to_rot6d(rots[f * kNumJoints + j]);
      for (std::size_t k = 0; k < kRot6DWidth; ++k) {
        motion(f, j * kRot6DWidth + k) = static_cast<T>(r[k]);
      }
    }
  }
  return motion;
}

// Per frame, for head / left hand / right hand: global orientation (6D),
// orientation velocity (6D of prev^T * cur), global position, and linear
// velocity (m/s). Frame 0 velocities are the identity encoding and zero.
template <typename T>
Tensor2<T> build_sparse_input(const SkeletonTree& tree, const Tensor2<T>& motion,
                              std::span<const Vec3<double>> root_trans,
                              double fps = kDefaultFps) {
  if (!(fps > 0.0)) {
    throw std::invalid_argument("build_sparse_input: fps must be positive");
  }
  if (root_trans.size() != motion.rows()) {
    throw DimensionError("build_sparse_input: root translation length != frames");
  }
  const auto local = decode_motion<T, double>(motion);
  const FkResult<double> fk =
      forward_kinematics<double>(tree, local, root_trans);
  const auto trackers = tracked_joints(tree);
  const std::size_t frames = motion.rows();
  Tensor2<T> out(frames, kSparseWidth);
  const Rot6D<double> ident = identity_rot6d<double>();
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < kTrackedJoints; ++k) {
      const auto j = static_cast<std::size_t>(trackers[k]);
      const std::size_t base = k * kChannelsPerTracker;
      const Rot6D<double> rot = matrix_to_rot6d(fk.rot(f, j));
      const Rot6D<double> rot_vel =
          f == 0 ? ident
                 : matrix_to_rot6d(frame_delta(fk.rot(f - 1, j), fk.rot(f, j)));
      const Vec3<double>& pos = fk.pos(f, j);
      const Vec3<double> vel =
          f == 0 ? Vec3<double>::Zero() : Vec3<double>((pos - fk.pos(f - 1, j)) * fps);
      for (std::size_t c = 0; c < 6; ++c) {
        out(f, base + sparse_field::kRotation + c) = static_cast<T>(rot[c]);
        out(f, base + sparse_field::kRotationVelocity + c) =
            static_cast<T>(rot_vel[c]);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        out(f, base + sparse_field::kPosition + c) = static_cast<T>(pos[c]);
        out(f, base + sparse_field::kLinearVelocity + c) = static_cast<T>(vel[c]);
      }
    }
  }
  return out;
}

// Shifts the horizontal (x, z) position channels of all trackers so the
// head starts above the origin. Velocities and orientations are untouched.
template <typename T>
Tensor2<T> recenter_sparse_input(const Tensor2<T>& sparse) {
  if (sparse.cols() != kSparseWidth) {
    throw DimensionError("recenter_sparse_input: width must be 54");
  }
  Tensor2<T> out = sparse;
  if (sparse.rows() == 0) {
    return out;
  }
  const T dx = sparse(0, sparse_field::kPosition + 0);
  const T dz = sparse(0, sparse_field::kPosition + 2);
  for (std::size_t f = 0; f < out.rows(); ++f) {
    for (std::size_t k = 0; k < kTrackedJoints; ++k) {
      const std::size_t base = k * kChannelsPerTracker + sparse_field::kPosition;
      out(f, base + 0) -= dx;
      out(f, base + 2) -= dz;
    }
  }
  return out;
}

// Chunk start offsets: 0, stride, 2*stride, ... with the final chunk moved
// back to end exactly at the last frame.
inline std::vector<std::size_t> window_offsets(std::size_t length, std::size_t n,
                                               std::size_t stride) {
  if (n == 0 || stride == 0) {
    throw std::invalid_argument("window_offsets: N and stride must be positive");
  }
  if (length < n) {
    throw LengthError("window: sequence has " + std::to_string(length) +
                      " frames, fewer than N = " + std::to_string(n));
  }
  std::vector<std::size_t> offsets;
  std::size_t start = 0;
  while (start + n < length) {
    offsets.push_back(start);
    start += stride;
  }
  offsets.push_back(length - n);
  return offsets;
}

template <typename T>
Tensor2<T> slice_rows(const Tensor2<T>& src, std::size_t begin, std::size_t count) {
  if (begin + count > src.rows()) {
    throw DimensionError("slice_rows: range exceeds the array");
  }
  std::vector<T> data(src.data() + begin * src.cols(),
                      src.data() + (begin + count) * src.cols());
  return Tensor2<T>(count, src.cols(), std::move(data));
}

template <typename T>
std::vector<Tensor2<T>> window(const Tensor2<T>& seq, std::size_t n,
                               std::size_t stride) {
  std::vector<Tensor2<T>> chunks;
  for (const std::size_t off : window_offsets(seq.rows(), n, stride)) {
    chunks.push_back(slice_rows(seq, off, n));
  }
  return chunks;
}

// Writes chunks back at their offsets in order; later chunks overwrite the
// frames they share with earlier ones.
template <typename T>
Tensor2<T> stitch(std::span<const Tensor2<T>> chunks,
                  std::span<const std::size_t> offsets, std::size_t total) {
  if (chunks.size() != offsets.size()) {
    throw DimensionError("stitch: chunk and offset counts differ");
  }
  const std::size_t width = chunks.empty() ? 0 : chunks.front().cols();
  Tensor2<T> out(total, width);
  std::vector<bool> covered(total, false);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const Tensor2<T>& c = chunks[i];
    if (c.cols() != width || offsets[i] + c.rows() > total) {
      throw DimensionError("stitch: chunk does not fit the output");
    }
    std::copy(c.data(), c.data() + c.size(), out.data() + offsets[i] * width);
    std::fill_n(covered.begin() + static_cast<std::ptrdiff_t>(offsets[i]), c.rows(),
                true);
  }
  const auto gap = std::find(covered.begin(), covered.end(), false);
  if (gap != covered.end()) {
    throw CoverageError("stitch: frame " +
                        std::to_string(gap - covered.begin()) +
                        " is not covered by any chunk");
  }
  return out;
}

template <typename T>
Tensor2<T> stitch(const std::vector<Tensor2<T>>& chunks,
                  const std::vector<std::size_t>& offsets, std::size_t total) {
  return stitch(std::span<const Tensor2<T>>(chunks),
                std::span<const std::size_t>(offsets), total);
}

// Zeroes floor(fraction * N) distinct frames, chosen uniformly without
// replacement from a generator seeded with `seed`.
template <typename T>
Tensor2<T> mask_tracking_loss(const Tensor2<T>& sparse, double fraction,
                              std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("mask_tracking_loss: fraction must be in [0, 1]");
  }
  const std::size_t frames = sparse.rows();
  const auto count =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(frames)));
  Tensor2<T> out = sparse;
  if (count == 0) {
    return out;
  }
  std::vector<std::size_t> order(frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` entries are the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(frames - i);
    std::swap(order[i], order[j]);
  }
  for (std::size_t i = 0; i < count; ++i) {
    auto row = out.row(order[i]);
    std::fill(row.begin(), row.end(), T(0));
  }
  return out;
}

} // namespace agrol
