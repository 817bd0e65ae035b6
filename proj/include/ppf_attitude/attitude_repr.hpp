#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>

#include "error.hpp"
#include "so3.hpp"

namespace ppf_attitude {

using Vector4 = Eigen::Vector4d;

inline constexpr double kUnitTolerance = 1e-9;

struct AngleAxis {
  double angle = 0.0;          // rad
  Vector3 axis = Vector3::UnitZ();  // unit norm
};

/// I + sin(theta) [u]x + (1 - cos(theta)) [u]x^2
inline RotationMatrix angle_axis_to_rotation(const AngleAxis& aa) {
  if (std::abs(aa.axis.norm() - 1.0) > kUnitTolerance) {
    throw Error(ErrorCode::NonUnitAxis, "rotation axis must have unit norm");
  }
  const Matrix3 k = skew(aa.axis);
  return RotationMatrix::unchecked(Matrix3::Identity() + std::sin(aa.angle) * k +
                                   (1.0 - std::cos(aa.angle)) * k * k);
}

/// Rodriguez (Gibbs) vector rho = tan(theta / 2) u. Half-turns have no
/// finite representation.
class RodriguezVector {
 public:
  explicit RodriguezVector(const Vector3& rho) : rho_(rho) {
    if (!rho.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "Rodriguez vector must be finite");
    }
  }

  static RodriguezVector from_angle_axis(const AngleAxis& aa) {
    if (std::abs(aa.axis.norm() - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::NonUnitAxis, "rotation axis must have unit norm");
    }
    const double wrapped = std::remainder(aa.angle, 2.0 * std::numbers::pi);
    if (std::abs(std::abs(wrapped) - std::numbers::pi) < 1e-6) {
      throw Error(ErrorCode::HalfTurn, "half-turn has no Rodriguez vector");
    }
    return RodriguezVector(std::tan(0.5 * wrapped) * aa.axis);
  }

  const Vector3& vector() const { return rho_; }

 private:
  Vector3 rho_;
};

/// ((1 - |rho|^2) I + 2 rho rho^T + 2 [rho]x) / (1 + |rho|^2)
inline RotationMatrix rodriguez_to_rotation(const RodriguezVector& r) {
  const Vector3& rho = r.vector();
  const double n2 = rho.squaredNorm();
  return RotationMatrix::unchecked(((1.0 - n2) * Matrix3::Identity() + 2.0 * rho * rho.transpose() +
                                    2.0 * skew(rho)) /
                                   (1.0 + n2));
}

/// Unit quaternion [q0, q] on S^3, stored with q0 >= 0.
class UnitQuaternion {
 public:
  UnitQuaternion() : w_(1.0), v_(Vector3::Zero()) {}

  UnitQuaternion(double w, const Vector3& v) : w_(w), v_(v) {
    const double n2 = w * w + v.squaredNorm();
    if (!std::isfinite(n2) || std::abs(n2 - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::NonUnitQuaternion, "quaternion must have unit norm");
    }
    canonicalize();
  }

  /// Normalizes an arbitrary nonzero 4-vector [q0, q1, q2, q3].
  static UnitQuaternion normalized(const Vector4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::NonUnitQuaternion, "cannot normalize a zero quaternion");
    }
    UnitQuaternion out;
    out.w_ = q(0) / n;
    out.v_ = q.tail<3>() / n;
    out.canonicalize();
    return out;
  }

  static UnitQuaternion identity() { return {}; }

  double w() const { return w_; }
  const Vector3& vec() const { return v_; }
  Vector4 coeffs() const { return {w_, v_.x(), v_.y(), v_.z()}; }

 private:
  void canonicalize() {
    if (w_ < 0.0) {
      w_ = -w_;
      v_ = -v_;
    }
  }

  double w_;
  Vector3 v_;
};

/// Raw product of two 4-vectors in [q0, q] layout (no normalization).
inline Vector4 quaternion_product(const Vector4& a, const Vector4& b) {
  const double a0 = a(0);
  const double b0 = b(0);
  const Vector3 av = a.tail<3>();
  const Vector3 bv = b.tail<3>();
  Vector4 out;
  out(0) = a0 * b0 - av.dot(bv);
  out.tail<3>() = a0 * bv + b0 * av + av.cross(bv);
  return out;
}

inline UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  return UnitQuaternion::normalized(quaternion_product(a.coeffs(), b.coeffs()));
}

inline UnitQuaternion quat_inv(const UnitQuaternion& q) {
  return UnitQuaternion::normalized(Vector4(q.w(), -q.vec().x(), -q.vec().y(), -q.vec().z()));
}

/// (q0^2 - |q|^2) I + 2 q q^T + 2 q0 [q]x
inline RotationMatrix quat_to_rotation(const UnitQuaternion& q) {
  const double w = q.w();
  const Vector3& v = q.vec();
  return RotationMatrix::unchecked((w * w - v.squaredNorm()) * Matrix3::Identity() +
                                   2.0 * v * v.transpose() + 2.0 * w * skew(v));
}

/// Shepperd's method: branch on the largest of q0^2, q1^2, q2^2, q3^2.
inline UnitQuaternion rotation_to_quat(const RotationMatrix& rot) {
  const Matrix3& r = rot.matrix();
  const double tr = r.trace();
  Vector4 q;
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 - r(0, 0) + r(1, 1) - r(2, 2));
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 - r(0, 0) - r(1, 1) + r(2, 2));
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  return UnitQuaternion::normalized(q);
}

/// Vector part of Q^-1 (.) [0, v] (.) Q, i.e. R_Q^T v.
inline Vector3 rotate_to_body(const UnitQuaternion& q, const Vector3& v) {
  const Vector4 qc = q.coeffs();
  const Vector4 qi(qc(0), -qc(1), -qc(2), -qc(3));
  const Vector4 pure(0.0, v.x(), v.y(), v.z());
  return quaternion_product(quaternion_product(qi, pure), qc).tail<3>();
}

/// Intrinsic Z-Y-X angles: R = Rz(yaw) Ry(pitch) Rx(roll).
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  bool gimbal_lock = false;
};

inline EulerAngles rotation_to_euler(const RotationMatrix& rot) {
  const Matrix3& r = rot.matrix();
  EulerAngles e;
  const double sp = std::clamp(-r(2, 0), -1.0, 1.0);
  e.pitch = std::asin(sp);
  if (std::abs(std::abs(e.pitch) - std::numbers::pi / 2.0) < 1e-6) {
    // Only roll -/+ yaw is observable; yaw is pinned to zero.
    e.gimbal_lock = true;
    e.yaw = 0.0;
    e.roll = sp > 0.0 ? std::atan2(r(0, 1), r(1, 1)) : std::atan2(-r(0, 1), r(1, 1));
  } else {
    e.roll = std::atan2(r(2, 1), r(2, 2));
    e.yaw = std::atan2(r(1, 0), r(0, 0));
  }
  return e;
}

inline RotationMatrix euler_to_rotation(const EulerAngles& e) {
  const Matrix3 rz = exp_so3(Vector3::UnitZ() * e.yaw, 1.0).matrix();
  const Matrix3 ry = exp_so3(Vector3::UnitY() * e.pitch, 1.0).matrix();
  const Matrix3 rx = exp_so3(Vector3::UnitX() * e.roll, 1.0).matrix();
  return RotationMatrix::unchecked(rz * ry * rx);
}

}  // namespace ppf_attitude
