#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace ppf_attitude {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

inline constexpr double kAntiSymmetryTolerance = 1e-9;
inline constexpr double kOrthonormalityTolerance = 1e-9;
/// Below this rotation angle (rad) exp_so3 switches to its Taylor branch.
inline constexpr double kExpSeriesThreshold = 1e-6;

/// Maps v to the anti-symmetric matrix with skew(v) * w == v.cross(w).
inline Matrix3 skew(const Vector3& v) {
  Matrix3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// Inverse of skew. Rejects inputs that are not anti-symmetric.
inline Vector3 vex(const Matrix3& x) {
  if ((x + x.transpose()).norm() > kAntiSymmetryTolerance) {
    throw Error(ErrorCode::NotAntiSymmetric, "vex() needs an anti-symmetric matrix");
  }
  return {x(2, 1), x(0, 2), x(1, 0)};
}

/// Anti-symmetric part (Y - Y^T) / 2.
inline Matrix3 anti_symmetric_part(const Matrix3& y) {
  return 0.5 * (y - y.transpose());
}

/// vex of the anti-symmetric part. Defined for any 3x3 matrix; this is the
/// error vector every filter correction is built from.
inline Vector3 vex_anti_symmetric(const Matrix3& y) {
  return {0.5 * (y(2, 1) - y(1, 2)), 0.5 * (y(0, 2) - y(2, 0)), 0.5 * (y(1, 0) - y(0, 1))};
}

/// (1/4) Tr{I - Y}. For rotations this is the normalized Euclidean distance
/// to the identity and lies in [0, 1]; see normalized_distance().
inline double quarter_trace_gap(const Matrix3& y) {
  return 0.25 * (3.0 - y.trace());
}

/// A 3x3 orthonormal matrix with determinant +1.
class RotationMatrix {
 public:
  RotationMatrix() : m_(Matrix3::Identity()) {}

  /// Validates orthonormality and determinant at 1e-9.
  explicit RotationMatrix(const Matrix3& m) : m_(m) {
    if (!m.allFinite() ||
        (m.transpose() * m - Matrix3::Identity()).norm() > kOrthonormalityTolerance ||
        std::abs(m.determinant() - 1.0) > kOrthonormalityTolerance) {
      throw Error(ErrorCode::NotOrthonormal, "matrix is not a proper rotation");
    }
  }

  static RotationMatrix identity() { return {}; }

  /// Skips validation. Callers guarantee the product of rotations or a
  /// closed-form construction; drift is repaired by project_to_so3().
  static RotationMatrix unchecked(const Matrix3& m) {
    RotationMatrix r;
    r.m_ = m;
    return r;
  }

  const Matrix3& matrix() const { return m_; }
  double operator()(int row, int col) const { return m_(row, col); }

  RotationMatrix transpose() const { return unchecked(m_.transpose()); }
  RotationMatrix operator*(const RotationMatrix& other) const { return unchecked(m_ * other.m_); }
  Vector3 operator*(const Vector3& v) const { return m_ * v; }

  /// Frobenius norm of R^T R - I.
  double orthonormality_error() const { return (m_.transpose() * m_ - Matrix3::Identity()).norm(); }

 private:
  Matrix3 m_;
};

/// Normalized Euclidean distance to the identity, (1/4) Tr{I - R}, clamped
/// to [0, 1] against roundoff.
inline double normalized_distance(const RotationMatrix& r) {
  return std::clamp(quarter_trace_gap(r.matrix()), 0.0, 1.0);
}

/// Rotation angle of R in [0, pi].
inline double rotation_angle(const RotationMatrix& r) {
  const Vector3 s = vex_anti_symmetric(r.matrix());
  const double c = 0.5 * (r.matrix().trace() - 1.0);
  return std::atan2(s.norm(), c);
}

/// Exact integration of a constant body rate over dt: exp(skew(omega * dt)).
inline RotationMatrix exp_so3(const Vector3& omega, double dt) {
  const Vector3 u = omega * dt;
  const double angle = u.norm();
  const Matrix3 k = skew(u);
  if (angle < kExpSeriesThreshold) {
    return RotationMatrix::unchecked(Matrix3::Identity() + k + 0.5 * k * k);
  }
  const Matrix3 x = k / angle;
  return RotationMatrix::unchecked(Matrix3::Identity() + std::sin(angle) * x +
                                   (1.0 - std::cos(angle)) * x * x);
}

/// Nearest rotation in the Frobenius norm (orthogonal polar factor with a
/// determinant correction).
inline RotationMatrix project_to_so3(const Matrix3& m) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::SingularInput, "non-finite matrix");
  }
  Eigen::JacobiSVD<Matrix3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector3& s = svd.singularValues();
  if (s(2) <= 1e-12 * std::max(1.0, s(0))) {
    throw Error(ErrorCode::SingularInput, "cannot project a rank-deficient matrix onto SO(3)");
  }
  const Matrix3& u = svd.matrixU();
  const Matrix3& v = svd.matrixV();
  Vector3 d(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  return RotationMatrix::unchecked(u * d.asDiagonal() * v.transpose());
}

}  // namespace ppf_attitude
