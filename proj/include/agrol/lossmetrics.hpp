#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrol/errors.hpp"
#include "agrol/features.hpp"
#include "agrol/numerics.hpp"
#include "agrol/rotations.hpp"
#include "agrol/skeleton.hpp"

namespace agrol {

inline constexpr double kContactSpeedThreshold = 0.01; // m/s

// Per frame, one flag per foot joint (tree.feet order): 1 while the
// ground-truth joint is in contact (speed below the threshold).
struct FootContactMask {
  std::size_t frames = 0;
  std::vector<int> joints;
  std::vector<std::uint8_t> flags; // frames x joints.size()

  [[nodiscard]] bool at(std::size_t f, std::size_t k) const {
    return flags[f * joints.size() + k] != 0;
  }
  [[nodiscard]] std::size_t active() const {
    std::size_t n = 0;
    for (const auto v : flags) n += v;
    return n;
  }
};

struct LossWeights {
  double pos = 0.0;
  double vel = 0.0;
  double foot = 0.0;

  [[nodiscard]] bool any() const { return pos > 0.0 || vel > 0.0 || foot > 0.0; }
};

struct GeometricTerms {
  double pos = 0.0;
  double vel = 0.0;
  double foot = 0.0;
};

namespace detail {

template <typename T>
FkResult<double> motion_fk(const SkeletonTree& tree, const Tensor2<T>& motion,
                           std::span<const Vec3<double>> root_trans,
                           std::vector<Mat3<double>>* local_out = nullptr) {
  if (root_trans.size() != motion.rows()) {
    throw DimensionError("root translation length does not match motion frames");
  }
  auto local = decode_motion<T, double>(motion);
  FkResult<double> fk = forward_kinematics<double>(tree, local, root_trans);
  if (local_out) *local_out = std::move(local);
  return fk;
}

inline void require_same_frames(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DimensionError("ground truth and prediction have different lengths");
  }
}

} // namespace detail

inline FootContactMask foot_contact_mask_from_fk(const SkeletonTree& tree,
                                                 const FkResult<double>& fk,
                                                 double speed_threshold, double fps) {
  if (fk.frames < 2) {
    throw LengthError("foot_contact_mask: need at least 2 frames");
  }
  FootContactMask mask;
  mask.frames = fk.frames;
  mask.joints = tree.feet;
  const std::size_t nf = mask.joints.size();
  mask.flags.assign(fk.frames * nf, 0);
  for (std::size_t f = 1; f < fk.frames; ++f) {
    for (std::size_t k = 0; k < nf; ++k) {
      const auto j = static_cast<std::size_t>(mask.joints[k]);
      const double speed = (fk.pos(f, j) - fk.pos(f - 1, j)).norm() * fps;
      mask.flags[f * nf + k] = speed < speed_threshold ? 1 : 0;
    }
  }
  for (std::size_t k = 0; k < nf; ++k) mask.flags[k] = mask.flags[nf + k];
  return mask;
}

template <typename T>
FootContactMask foot_contact_mask(const SkeletonTree& tree, const Tensor2<T>& y,
                                  std::span<const Vec3<double>> root_trans,
                                  double speed_threshold = kContactSpeedThreshold,
                                  double fps = kDefaultFps) {
  return foot_contact_mask_from_fk(tree, detail::motion_fk(tree, y, root_trans),
                                   speed_threshold, fps);
}

// Computes the weighted geometric losses between FK(y) and FK(x0_hat), both
// placed with the ground-truth root translation. When `d_x0_hat` is given,
// grad_scale * d(w.pos L_pos + w.vel L_vel + w.foot L_foot)/d(x0_hat) is
// added to it. Terms with zero weight are still reported.
//   L_pos  = mean over frames and joints of |p_hat - p|^2
//   L_vel  = mean over N-1 deltas and joints of |dp_hat - dp|^2
//   L_foot = mean of |p_hat - p|^2 over (frame, foot) pairs in contact
template <typename T>
GeometricTerms geometric_losses(const SkeletonTree& tree, const Tensor2<T>& y,
                                const Tensor2<T>& x0_hat,
                                std::span<const Vec3<double>> root_trans,
                                const FootContactMask* mask = nullptr,
                                const LossWeights& weights = {},
                                Tensor2<T>* d_x0_hat = nullptr,
                                double grad_scale = 1.0) {
  detail::require_same_frames(y.rows(), x0_hat.rows());
  const std::size_t frames = y.rows();
  const std::size_t nj = tree.joint_count();
  const FkResult<double> gt = detail::motion_fk(tree, y, root_trans);
  std::vector<Mat3<double>> local;
  const FkResult<double> pr = detail::motion_fk(tree, x0_hat, root_trans, &local);

  GeometricTerms terms;
  std::vector<Vec3<double>> d_pos;
  const bool want_grad = d_x0_hat != nullptr;
  if (want_grad) d_pos.assign(frames * nj, Vec3<double>::Zero());

  const double inv_pos = 1.0 / static_cast<double>(frames * nj);
  for (std::size_t i = 0; i < frames * nj; ++i) {
    const Vec3<double> e = pr.global_pos[i] - gt.global_pos[i];
    terms.pos += e.squaredNorm();
    if (want_grad) d_pos[i] += (2.0 * weights.pos * inv_pos) * e;
  }
  terms.pos *= inv_pos;

  if (frames >= 2) {
    const double inv_vel = 1.0 / static_cast<double>((frames - 1) * nj);
    for (std::size_t f = 0; f + 1 < frames; ++f) {
      for (std::size_t j = 0; j < nj; ++j) {
        const Vec3<double> e = (pr.pos(f + 1, j) - pr.pos(f, j)) -
                               (gt.pos(f + 1, j) - gt.pos(f, j));
        terms.vel += e.squaredNorm();
        if (want_grad) {
          const Vec3<double> g = (2.0 * weights.vel * inv_vel) * e;
          d_pos[(f + 1) * nj + j] += g;
          d_pos[f * nj + j] -= g;
        }
      }
    }
    terms.vel *= inv_vel;
  }

  if (mask != nullptr) {
    if (mask->frames != frames) {
      throw DimensionError("foot contact mask length does not match motion");
    }
    const std::size_t active = mask->active();
    if (active > 0) {
      const double inv_foot = 1.0 / static_cast<double>(active);
      for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t k = 0; k < mask->joints.size(); ++k) {
          if (!mask->at(f, k)) continue;
          const std::size_t i = f * nj + static_cast<std::size_t>(mask->joints[k]);
          const Vec3<double> e = pr.global_pos[i] - gt.global_pos[i];
          terms.foot += e.squaredNorm();
          if (want_grad) d_pos[i] += (2.0 * weights.foot * inv_foot) * e;
        }
      }
      terms.foot *= inv_foot;
    }
  }

  if (want_grad) {
    if (!d_x0_hat->same_shape(x0_hat)) {
      throw DimensionError("geometric_losses: gradient buffer shape mismatch");
    }
    const FkGrads<double> g = forward_kinematics_backward<double>(tree, local, pr, d_pos);
    std::array<double, 6> r{};
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t j = 0; j < nj; ++j) {
        for (std::size_t k = 0; k < kRot6DWidth; ++k) {
          r[k] = static_cast<double>(x0_hat(f, j * kRot6DWidth + k));
        }
        const Rot6D<double> dr = rot6d_to_matrix_backward<double>(
            std::span<const double, 6>(r), g.d_local[f * nj + j]);
        for (std::size_t k = 0; k < kRot6DWidth; ++k) {
          (*d_x0_hat)(f, j * kRot6DWidth + k) += static_cast<T>(grad_scale * dr[k]);
        }
      }
    }
  }
  return terms;
}

template <typename T>
double loss_pos(const SkeletonTree& tree, const Tensor2<T>& y, const Tensor2<T>& x0_hat,
                std::span<const Vec3<double>> root_trans) {
  return geometric_losses(tree, y, x0_hat, root_trans).pos;
}

template <typename T>
double loss_vel(const SkeletonTree& tree, const Tensor2<T>& y, const Tensor2<T>& x0_hat,
                std::span<const Vec3<double>> root_trans) {
  if (y.rows() < 2) {
    throw LengthError("loss_vel: need at least 2 frames");
  }
  return geometric_losses(tree, y, x0_hat, root_trans).vel;
}

template <typename T>
double loss_foot(const SkeletonTree& tree, const Tensor2<T>& y, const Tensor2<T>& x0_hat,
                 std::span<const Vec3<double>> root_trans, const FootContactMask& mask) {
  return geometric_losses(tree, y, x0_hat, root_trans, &mask).foot;
}

// ---------------------------------------------------------------------------
// Evaluation metrics

struct MetricReport {
  double mpjre = 0;        // degrees
  double mpjpe = 0;        // cm
  double mpjve = 0;        // cm/s
  double hand_pe = 0;      // cm
  double upper_pe = 0;     // cm
  double lower_pe = 0;     // cm
  double root_pe = 0;      // cm
  double jitter = 0;       // 10^2 m/s^3
  double upper_jitter = 0; // 10^2 m/s^3
  double lower_jitter = 0; // 10^2 m/s^3

  static constexpr std::array<const char*, 10> kFieldNames = {
      "mpjre",   "mpjpe",   "mpjve",  "hand_pe",      "upper_pe",
      "lower_pe", "root_pe", "jitter", "upper_jitter", "lower_jitter"};

  [[nodiscard]] std::array<double, 10> values() const {
    return {mpjre, mpjpe, mpjve, hand_pe, upper_pe,
            lower_pe, root_pe, jitter, upper_jitter, lower_jitter};
  }

  static MetricReport from_values(const std::array<double, 10>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream out;
    out << std::setprecision(6) << std::fixed;
    const auto v = values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      out << kFieldNames[i] << " = " << v[i] << '\n';
    }
    return out.str();
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    const auto v = values();
    for (std::size_t i = 0; i < v.size(); ++i) j[kFieldNames[i]] = v[i];
    return j;
  }

  static MetricReport from_json(const nlohmann::json& j) {
    std::array<double, 10> v{};
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = j.at(kFieldNames[i]).get<double>();
    return from_values(v);
  }
};

// Field-wise mean.
inline MetricReport average_reports(std::span<const MetricReport> reports) {
  std::array<double, 10> acc{};
  for (const auto& r : reports) {
    const auto v = r.values();
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  if (!reports.empty()) {
    for (auto& a : acc) a /= static_cast<double>(reports.size());
  }
  return MetricReport::from_values(acc);
}

namespace detail {

inline double mean_position_error(const FkResult<double>& gt, const FkResult<double>& pr,
                                  std::span<const int> joints) {
  double acc = 0.0;
  for (std::size_t f = 0; f < gt.frames; ++f) {
    for (const int j : joints) {
      acc += (pr.pos(f, j) - gt.pos(f, j)).norm();
    }
  }
  return acc / static_cast<double>(gt.frames * joints.size());
}

// Mean over frames 0..N-4 and `joints` of |third difference| * fps^3.
inline double mean_jerk(const FkResult<double>& fk, std::span<const int> joints, double fps) {
  const double scale = fps * fps * fps;
  double acc = 0.0;
  for (std::size_t f = 0; f + 3 < fk.frames; ++f) {
    for (const int j : joints) {
      const Vec3<double> d3 = fk.pos(f + 3, j) - 3.0 * fk.pos(f + 2, j) +
                              3.0 * fk.pos(f + 1, j) - fk.pos(f, j);
      acc += d3.norm() * scale;
    }
  }
  return acc / static_cast<double>((fk.frames - 3) * joints.size());
}

inline MetricReport metrics_from_fk(const SkeletonTree& tree,
                                    std::span<const Mat3<double>> gt_local,
                                    std::span<const Mat3<double>> pr_local,
                                    const FkResult<double>& gt, const FkResult<double>& pr,
                                    double fps) {
  if (gt.frames < 4) {
    throw LengthError("evaluate: jitter needs at least 4 frames");
  }
  const std::size_t nj = tree.joint_count();
  std::vector<int> all(nj);
  for (std::size_t j = 0; j < nj; ++j) all[j] = static_cast<int>(j);
  const std::array<int, 1> root = {tree.root};
  const std::array<int, 2> hands = tree.hands;
  constexpr double kCm = 100.0;

  MetricReport r;
  double rot = 0.0;
  for (std::size_t i = 0; i < gt_local.size(); ++i) {
    rot += geodesic_deg(gt_local[i], pr_local[i]);
  }
  r.mpjre = rot / static_cast<double>(gt_local.size());
  r.mpjpe = kCm * mean_position_error(gt, pr, all);
  r.root_pe = kCm * mean_position_error(gt, pr, root);
  r.hand_pe = kCm * mean_position_error(gt, pr, hands);
  r.upper_pe = kCm * mean_position_error(gt, pr, tree.upper);
  r.lower_pe = kCm * mean_position_error(gt, pr, tree.lower);

  double vel = 0.0;
  for (std::size_t f = 1; f < gt.frames; ++f) {
    for (std::size_t j = 0; j < nj; ++j) {
      const Vec3<double> e = (pr.pos(f, j) - pr.pos(f - 1, j)) -
                             (gt.pos(f, j) - gt.pos(f - 1, j));
      vel += e.norm() * fps;
    }
  }
  r.mpjve = kCm * vel / static_cast<double>((gt.frames - 1) * nj);

  // Reported in units of 10^2 m/s^3.
  r.jitter = mean_jerk(pr, all, fps) / 100.0;
  r.upper_jitter = mean_jerk(pr, tree.upper, fps) / 100.0;
  r.lower_jitter = mean_jerk(pr, tree.lower, fps) / 100.0;
  return r;
}

} // namespace detail

// Evaluates a prediction whose global placement is given explicitly.
template <typename T>
MetricReport evaluate_with_root(const SkeletonTree& tree, const Tensor2<T>& gt_motion,
                                std::span<const Vec3<double>> gt_root,
                                const Tensor2<T>& pred_motion,
                                std::span<const Vec3<double>> pred_root,
                                double fps = kDefaultFps) {
  detail::require_same_frames(gt_motion.rows(), pred_motion.rows());
  std::vector<Mat3<double>> gt_local;
  std::vector<Mat3<double>> pr_local;
  const auto gt = detail::motion_fk(tree, gt_motion, gt_root, &gt_local);
  const auto pr = detail::motion_fk(tree, pred_motion, pred_root, &pr_local);
  return detail::metrics_from_fk(tree, gt_local, pr_local, gt, pr, fps);
}

// Standard protocol: the prediction is placed by anchoring its head to the
// tracked head trajectory. An empty `head` uses the ground-truth FK head.
template <typename T>
MetricReport evaluate(const SkeletonTree& tree, const Tensor2<T>& gt_motion,
                      std::span<const Vec3<double>> gt_root,
                      std::span<const Vec3<double>> head,
                      const Tensor2<T>& pred_motion, double fps = kDefaultFps) {
  detail::require_same_frames(gt_motion.rows(), pred_motion.rows());
  std::vector<Mat3<double>> gt_local;
  const auto gt = detail::motion_fk(tree, gt_motion, gt_root, &gt_local);
  std::vector<Vec3<double>> head_traj(head.begin(), head.end());
  if (head_traj.empty()) {
    for (std::size_t f = 0; f < gt.frames; ++f) {
      head_traj.push_back(gt.pos(f, static_cast<std::size_t>(tree.head)));
    }
  }
  if (head_traj.size() != gt.frames) {
    throw DimensionError("evaluate: head trajectory length does not match motion");
  }
  const auto pr_local = decode_motion<T, double>(pred_motion);
  const auto pred_root = recover_root_translation<double>(tree, pr_local, head_traj);
  const auto pr = forward_kinematics<double>(tree, pr_local, pred_root);
  return detail::metrics_from_fk(tree, gt_local, pr_local, gt, pr, fps);
}

} // namespace agrol
