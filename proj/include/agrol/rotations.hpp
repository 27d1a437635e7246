#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "agrol/errors.hpp"

namespace agrol {

template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

// First two columns of a rotation matrix, (a1x a1y a1z a2x a2y a2z).
template <typename T>
using Rot6D = std::array<T, 6>;

inline constexpr double kDegeneracyTolerance = 1e-8;

template <typename T>
constexpr Rot6D<T> identity_rot6d() {
  return {T(1), T(0), T(0), T(0), T(1), T(0)};
}

// Gram-Schmidt decode. Throws DegeneracyError when a1 vanishes or a2 is
// parallel to a1.
template <typename T>
Mat3<T> rot6d_to_matrix(std::span<const T, 6> r) {
  const Vec3<T> a1(r[0], r[1], r[2]);
  const Vec3<T> a2(r[3], r[4], r[5]);
  const T n1 = a1.norm();
  if (!(n1 > T(kDegeneracyTolerance))) {
    throw DegeneracyError("rot6d_to_matrix: first column has zero length");
  }
  const Vec3<T> b1 = a1 / n1;
  const Vec3<T> u = a2 - b1.dot(a2) * b1;
  const T n2 = u.norm();
  if (!(n2 > T(kDegeneracyTolerance))) {
    throw DegeneracyError("rot6d_to_matrix: columns are parallel or zero");
  }
  const Vec3<T> b2 = u / n2;
  Mat3<T> out;
  out.col(0) = b1;
  out.col(1) = b2;
  out.col(2) = b1.cross(b2);
  return out;
}

template <typename T>
Mat3<T> rot6d_to_matrix(const Rot6D<T>& r) {
  return rot6d_to_matrix<T>(std::span<const T, 6>(r));
}

// Vector-Jacobian product of rot6d_to_matrix: given dL/dR, returns dL/dr.
template <typename T>
Rot6D<T> rot6d_to_matrix_backward(std::span<const T, 6> r, const Mat3<T>& d_rot) {
  const Vec3<T> a1(r[0], r[1], r[2]);
  const Vec3<T> a2(r[3], r[4], r[5]);
  const T n1 = a1.norm();
  const Vec3<T> b1 = a1 / n1;
  const Vec3<T> u = a2 - b1.dot(a2) * b1;
  const T n2 = u.norm();
  const Vec3<T> b2 = u / n2;

  const Vec3<T> g3 = d_rot.col(2);
  Vec3<T> g1 = d_rot.col(0) + b2.cross(g3);
  const Vec3<T> g2 = d_rot.col(1) + g3.cross(b1);

  const Vec3<T> gu = (g2 - b2 * b2.dot(g2)) / n2;
  const Vec3<T> ga2 = gu - b1 * b1.dot(gu);
  g1 -= b1.dot(a2) * gu + a2 * b1.dot(gu);
  const Vec3<T> ga1 = (g1 - b1 * b1.dot(g1)) / n1;
  return {ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]};
}

template <typename T>
Rot6D<T> matrix_to_rot6d(const Mat3<T>& m) {
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

// Rodrigues formula. The axis must already be unit length (within 1e-6).
template <typename T>
Mat3<T> axisangle_to_matrix(const Vec3<T>& axis, T angle) {
  if (std::abs(axis.norm() - T(1)) > T(1e-6)) {
    throw NormalizationError("axisangle_to_matrix: axis is not unit length");
  }
  Mat3<T> k;
  k << T(0), -axis.z(), axis.y(), axis.z(), T(0), -axis.x(), -axis.y(),
      axis.x(), T(0);
  return Mat3<T>::Identity() + std::sin(angle) * k +
         (T(1) - std::cos(angle)) * (k * k);
}

// Geodesic angle between two rotations, in degrees, within [0, 180].
template <typename T>
T geodesic_deg(const Mat3<T>& ra, const Mat3<T>& rb) {
  const T c = ((ra.transpose() * rb).trace() - T(1)) / T(2);
  return std::acos(std::clamp(c, T(-1), T(1))) * T(180) /
         std::numbers::pi_v<T>;
}

// Rotation taking the previous frame's orientation to the current one,
// expressed in the previous frame: prev^T * cur.
template <typename T>
Mat3<T> frame_delta(const Mat3<T>& prev, const Mat3<T>& cur) {
  return prev.transpose() * cur;
}

template <typename T>
bool is_rotation(const Mat3<T>& m, T tol = T(1e-5)) {
  return (m.transpose() * m - Mat3<T>::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(m.determinant() - T(1)) <= tol;
}

} // namespace agrol
