#pragma once

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "attitude_repr.hpp"
#include "error.hpp"
#include "so3.hpp"

namespace ppf_attitude {

inline constexpr double kCollinearTolerance = 1e-6;
inline constexpr double kTotalWeight = 3.0;

/// A unit reference direction in the inertial frame paired with its unit
/// measurement in the body frame and a confidence weight.
struct VectorObservation {
  Vector3 ref_inertial = Vector3::UnitX();
  Vector3 meas_body = Vector3::UnitX();
  double weight = 1.0;

  VectorObservation() = default;

  VectorObservation(const Vector3& ref, const Vector3& meas, double w)
      : ref_inertial(ref), meas_body(meas), weight(w) {
    if (std::abs(ref.norm() - 1.0) > kUnitTolerance || std::abs(meas.norm() - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::NonUnitVector, "observation vectors must be unit length");
    }
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::InvalidWeight, "observation weight must be non-negative");
    }
  }

  /// Normalizes both vectors before construction.
  static VectorObservation from_raw(const Vector3& ref, const Vector3& meas, double w) {
    if (ref.norm() < 1e-9 || meas.norm() < 1e-9) {
      throw Error(ErrorCode::DegenerateVector, "cannot normalize a zero vector");
    }
    return {ref.normalized(), meas.normalized(), w};
  }
};

/// Ordered observations with weights rescaled to sum to 3 and at least one
/// non-collinear pair in both frames.
class ObservationSet {
 public:
  explicit ObservationSet(std::vector<VectorObservation> obs) : obs_(std::move(obs)) {
    if (obs_.size() < 2) {
      throw Error(ErrorCode::Collinear, "need at least two observations");
    }
    double total = 0.0;
    for (const auto& o : obs_) total += o.weight;
    if (!(total > 0.0)) {
      throw Error(ErrorCode::InvalidWeight, "observation weights sum to zero");
    }
    if (std::abs(total - kTotalWeight) > 1e-9) {
      renormalized_ = true;
      for (auto& o : obs_) o.weight *= kTotalWeight / total;
    }
    if (!has_noncollinear_pair()) {
      throw Error(ErrorCode::Collinear, "all observation pairs are collinear");
    }
  }

  std::span<const VectorObservation> observations() const { return obs_; }
  std::size_t size() const { return obs_.size(); }
  const VectorObservation& operator[](std::size_t i) const { return obs_[i]; }

  /// True when the weights had to be rescaled to sum to 3.
  bool renormalized() const { return renormalized_; }

 private:
  bool has_noncollinear_pair() const {
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      for (std::size_t j = i + 1; j < obs_.size(); ++j) {
        if (obs_[i].ref_inertial.cross(obs_[j].ref_inertial).norm() > kCollinearTolerance &&
            obs_[i].meas_body.cross(obs_[j].meas_body).norm() > kCollinearTolerance) {
          return true;
        }
      }
    }
    return false;
  }

  std::vector<VectorObservation> obs_;
  bool renormalized_ = false;
};

/// Appends the normalized cross product of a two-vector set on both frames
/// with the given weight; the result is re-weighted to sum to 3.
inline ObservationSet augment_with_cross(std::span<const VectorObservation> pair, double cross_weight) {
  if (pair.size() != 2) {
    throw Error(ErrorCode::InvalidArgument, "cross augmentation needs exactly two observations");
  }
  const Vector3 ref = pair[0].ref_inertial.cross(pair[1].ref_inertial);
  const Vector3 meas = pair[0].meas_body.cross(pair[1].meas_body);
  if (ref.norm() < kCollinearTolerance || meas.norm() < kCollinearTolerance) {
    throw Error(ErrorCode::Collinear, "observation pair is collinear");
  }
  std::vector<VectorObservation> out(pair.begin(), pair.end());
  out.emplace_back(ref.normalized(), meas.normalized(), cross_weight);
  return ObservationSet(std::move(out));
}

inline ObservationSet augment_with_cross(const ObservationSet& set, double cross_weight) {
  return augment_with_cross(set.observations(), cross_weight);
}

/// M^B = sum s_i v_i^B (v_i^B)^T
inline Matrix3 body_weighted_outer(const ObservationSet& set) {
  Matrix3 m = Matrix3::Zero();
  for (const auto& o : set.observations()) m += o.weight * o.meas_body * o.meas_body.transpose();
  return m;
}

/// M^I = sum s_i v_i^I (v_i^I)^T
inline Matrix3 inertial_weighted_outer(const ObservationSet& set) {
  Matrix3 m = Matrix3::Zero();
  for (const auto& o : set.observations()) m += o.weight * o.ref_inertial * o.ref_inertial.transpose();
  return m;
}

struct ComplementMatrix {
  Matrix3 m_bar;      // Tr{M} I - M
  double lambda_min;  // smallest eigenvalue of m_bar
};

inline ComplementMatrix complement_and_min_eigenvalue(const Matrix3& m) {
  ComplementMatrix out;
  out.m_bar = m.trace() * Matrix3::Identity() - m;
  Eigen::SelfAdjointEigenSolver<Matrix3> eig(out.m_bar, Eigen::EigenvaluesOnly);
  out.lambda_min = eig.eigenvalues()(0);
  if (!(out.lambda_min > 1e-9)) {
    throw Error(ErrorCode::RankDeficient, "Tr{M} I - M is not positive definite");
  }
  return out;
}

/// B = sum s_i v_i^I (v_i^B)^T; the Wahba gain is Tr{R^T B}.
inline Matrix3 attitude_profile_matrix(const ObservationSet& set) {
  Matrix3 b = Matrix3::Zero();
  for (const auto& o : set.observations()) b += o.weight * o.ref_inertial * o.meas_body.transpose();
  return b;
}

/// Rotation minimizing sum s_i |v_i^B - R^T v_i^I|^2 via the SVD of B.
inline RotationMatrix solve_wahba_svd(const ObservationSet& set) {
  const Matrix3 b = attitude_profile_matrix(set);
  Eigen::JacobiSVD<Matrix3> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(1) < 1e-9) {
    throw Error(ErrorCode::Degenerate, "attitude profile matrix has rank < 2");
  }
  const Matrix3& u = svd.matrixU();
  const Matrix3& v = svd.matrixV();
  const double d = u.determinant() * v.determinant() < 0.0 ? -1.0 : 1.0;
  return RotationMatrix::unchecked(u * Vector3(1.0, 1.0, d).asDiagonal() * v.transpose());
}

/// Davenport q-method: the quaternion maximizing Tr{R_Q^T B} is the dominant
/// eigenvector of the symmetric 4x4 matrix K built from B.
inline UnitQuaternion solve_wahba_davenport(const ObservationSet& set) {
  const Matrix3 b = attitude_profile_matrix(set);
  Eigen::JacobiSVD<Matrix3> svd(b);
  if (svd.singularValues()(1) < 1e-9) {
    throw Error(ErrorCode::Degenerate, "attitude profile matrix has rank < 2");
  }
  const double sigma = b.trace();
  const Vector3 z(b(1, 2) - b(2, 1), b(2, 0) - b(0, 2), b(0, 1) - b(1, 0));
  Eigen::Matrix4d k;
  k(0, 0) = sigma;
  k.block<1, 3>(0, 1) = -z.transpose();
  k.block<3, 1>(1, 0) = -z;
  k.block<3, 3>(1, 1) = b + b.transpose() - sigma * Matrix3::Identity();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(k);
  return UnitQuaternion::normalized(eig.eigenvectors().col(3));
}

/// Predicted body vectors R_hat^T v_i^I.
inline std::vector<Vector3> predict_body_vectors(const ObservationSet& set, const RotationMatrix& estimate) {
  std::vector<Vector3> out;
  out.reserve(set.size());
  for (const auto& o : set.observations()) out.push_back(estimate.matrix().transpose() * o.ref_inertial);
  return out;
}

/// sum (s_i / 2) v_hat_i x v_i. Equals vex_anti_symmetric(M^B R~) for
/// noise-free measurements.
inline Vector3 measured_error_vector(const ObservationSet& set, std::span<const Vector3> predicted) {
  Vector3 acc = Vector3::Zero();
  for (std::size_t i = 0; i < set.size(); ++i) {
    acc += 0.5 * set[i].weight * predicted[i].cross(set[i].meas_body);
  }
  return acc;
}

/// (1/4) sum s_i (1 - v_hat_i . v_i), clamped at zero. Equals the
/// normalized distance of M^B R~ for noise-free measurements.
inline double measured_distance(const ObservationSet& set, std::span<const Vector3> predicted) {
  double acc = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    acc += set[i].weight * (1.0 - predicted[i].dot(set[i].meas_body));
  }
  return std::max(0.0, 0.25 * acc);
}

/// 3x3 inverse through the adjugate; rejects condition numbers above 1e9.
inline Matrix3 checked_inverse(const Matrix3& m) {
  Matrix3 adj;
  adj.row(0) = m.col(1).cross(m.col(2)).transpose();
  adj.row(1) = m.col(2).cross(m.col(0)).transpose();
  adj.row(2) = m.col(0).cross(m.col(1)).transpose();
  const double det = m.col(0).dot(m.col(1).cross(m.col(2)));
  if (det == 0.0 || !std::isfinite(det)) {
    throw Error(ErrorCode::RankDeficient, "matrix is singular");
  }
  const Matrix3 inv = adj / det;
  if (m.norm() * inv.norm() > 1e9) {
    throw Error(ErrorCode::RankDeficient, "matrix is ill-conditioned");
  }
  return inv;
}

/// Tr{(sum s_i v_i v_i^T)^-1 sum s_i v_i v_hat_i^T}. Equals Tr{R~} for
/// noise-free measurements.
inline double measured_trace(const ObservationSet& set, std::span<const Vector3> predicted) {
  Matrix3 cross_outer = Matrix3::Zero();
  for (std::size_t i = 0; i < set.size(); ++i) {
    cross_outer += set[i].weight * set[i].meas_body * predicted[i].transpose();
  }
  return (checked_inverse(body_weighted_outer(set)) * cross_outer).trace();
}

inline Vector3 measured_error_vector(const ObservationSet& set, const RotationMatrix& estimate) {
  return measured_error_vector(set, predict_body_vectors(set, estimate));
}

inline double measured_distance(const ObservationSet& set, const RotationMatrix& estimate) {
  return measured_distance(set, predict_body_vectors(set, estimate));
}

inline double measured_trace(const ObservationSet& set, const RotationMatrix& estimate) {
  return measured_trace(set, predict_body_vectors(set, estimate));
}

}  // namespace ppf_attitude
