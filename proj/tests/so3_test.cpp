#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ppf_attitude;
using testing_support::Sampler;

namespace {

void expect_matrix_near(const Matrix3& a, const Matrix3& b, double tol) {
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), tol) << "a=\n" << a << "\nb=\n" << b;
}

}  // namespace

TEST(Skew, KnownMatrix) {
  Matrix3 expected;
  expected << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  EXPECT_EQ(skew(Vector3(1, 2, 3)), expected);
  EXPECT_EQ(skew(Vector3::Zero()), Matrix3::Zero());
  EXPECT_EQ(skew(Vector3::UnitX()) * Vector3::UnitY(), Vector3::UnitZ());
}

TEST(Skew, CrossProductAndVexInverse) {
  Sampler rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Vector3 v = rng.vec(10.0);
    const Vector3 w = rng.vec(10.0);
    EXPECT_EQ(vex(skew(v)), v);
    EXPECT_LE((skew(v) * w - v.cross(w)).norm(), 1e-14 * std::max(1.0, v.norm() * w.norm()));
  }
}

TEST(Vex, Examples) {
  EXPECT_EQ(vex(skew(Vector3(1, 2, 3))), Vector3(1, 2, 3));
  EXPECT_EQ(vex(Matrix3::Zero()), Vector3::Zero());
  try {
    vex(Matrix3::Identity());
    FAIL() << "expected NotAntiSymmetric";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotAntiSymmetric);
  }
}

TEST(AntiSymmetricPart, Examples) {
  Sampler rng(2);
  const Matrix3 s = rng.symmetric();
  EXPECT_LE(anti_symmetric_part(s).norm(), 1e-15);
  const Matrix3 a = skew(rng.vec());
  EXPECT_EQ(anti_symmetric_part(a), a);
  Matrix3 y = Matrix3::Zero();
  y(0, 1) = 1.0;
  Matrix3 expected = Matrix3::Zero();
  expected(0, 1) = 0.5;
  expected(1, 0) = -0.5;
  EXPECT_EQ(anti_symmetric_part(y), expected);
  const Matrix3 general = rng.mat();
  const Matrix3 p = anti_symmetric_part(general);
  EXPECT_EQ(p, -p.transpose());
}

TEST(ErrorVector, Examples) {
  for (double theta : {0.1, 1.0, 2.5, -0.7}) {
    const Matrix3 rz = Eigen::AngleAxisd(theta, Vector3::UnitZ()).toRotationMatrix();
    const Vector3 u = vex_anti_symmetric(rz);
    EXPECT_NEAR(u.x(), 0.0, 1e-15);
    EXPECT_NEAR(u.y(), 0.0, 1e-15);
    EXPECT_NEAR(u.z(), std::sin(theta), 1e-15);
  }
  EXPECT_EQ(vex_anti_symmetric(Matrix3::Identity()), Vector3::Zero());
  const Vector3 v(0.3, -2.0, 5.0);
  EXPECT_LE((vex_anti_symmetric(skew(v)) - v).norm(), 1e-15);
  Sampler rng(3);
  const Matrix3 y = rng.mat();
  EXPECT_EQ(vex_anti_symmetric(y), vex(anti_symmetric_part(y)));
}

TEST(NormalizedDistance, Examples) {
  EXPECT_EQ(normalized_distance(RotationMatrix::identity()), 0.0);
  EXPECT_EQ(normalized_distance(RotationMatrix(Vector3(1, -1, -1).asDiagonal().toDenseMatrix())), 1.0);
  // 178 degrees: (1 - cos)/2 = sin^2(89 deg)
  const Matrix3 r = Eigen::AngleAxisd(178.0 * std::numbers::pi / 180.0, Vector3(4, 1, 5).normalized())
                        .toRotationMatrix();
  const double expected = std::pow(std::sin(89.0 * std::numbers::pi / 180.0), 2);
  EXPECT_NEAR(normalized_distance(RotationMatrix(r)), expected, 1e-14);
  EXPECT_NEAR(normalized_distance(RotationMatrix(r)), 0.9997, 5e-5);
}

TEST(NormalizedDistance, ClampedToUnitInterval) {
  Matrix3 almost = Matrix3::Identity();
  almost(0, 0) += 1e-16;
  almost(1, 1) += 1e-16;
  almost(2, 2) += 1e-16;
  EXPECT_GE(normalized_distance(RotationMatrix::unchecked(almost)), 0.0);
  EXPECT_LE(normalized_distance(RotationMatrix::unchecked(-almost)), 1.0);
}

TEST(ExpMap, Examples) {
  Matrix3 quarter;
  quarter << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  expect_matrix_near(exp_so3(Vector3(0, 0, std::numbers::pi / 2), 1.0).matrix(), quarter, 1e-15);
  EXPECT_EQ(exp_so3(Vector3::Zero(), 1.0).matrix(), Matrix3::Identity());
  expect_matrix_near(exp_so3(Vector3(std::numbers::pi, 0, 0), 1.0).matrix(),
                     Vector3(1, -1, -1).asDiagonal().toDenseMatrix(), 1e-15);
}

TEST(ExpMap, MatchesEigenAngleAxisOnBothBranches) {
  Sampler rng(4);
  for (int i = 0; i < 2000; ++i) {
    const double scale = i % 2 == 0 ? 3.0 : 1e-7;
    const Vector3 w = rng.vec(scale);
    const double dt = rng.uniform(0.0, 1.0);
    const Vector3 u = w * dt;
    const Matrix3 oracle =
        u.norm() > 0 ? Eigen::AngleAxisd(u.norm(), u.normalized()).toRotationMatrix() : Matrix3::Identity();
    expect_matrix_near(exp_so3(w, dt).matrix(), oracle, 1e-14);
  }
}

TEST(ExpMap, ProducesRotationsAndInverts) {
  Sampler rng(5);
  for (int i = 0; i < 10000; ++i) {
    const Vector3 w = rng.vec(5.0);
    const double dt = rng.uniform(0.0, 2.0);
    const RotationMatrix r = exp_so3(w, dt);
    EXPECT_NO_THROW(RotationMatrix{r.matrix()});
    expect_matrix_near((r * exp_so3(-w, dt)).matrix(), Matrix3::Identity(), 1e-12);
  }
}

TEST(ExpMap, SeriesBranchIsContinuousAtThreshold) {
  const Vector3 axis = Vector3(1, 2, -1).normalized();
  const Matrix3 below = exp_so3(axis * (kExpSeriesThreshold * (1 - 1e-9)), 1.0).matrix();
  const Matrix3 above = exp_so3(axis * (kExpSeriesThreshold * (1 + 1e-9)), 1.0).matrix();
  expect_matrix_near(below, above, 1e-14);
}

TEST(Projection, Examples) {
  Sampler rng(6);
  const RotationMatrix r = rng.rotation();
  expect_matrix_near(project_to_so3(r.matrix()).matrix(), r.matrix(), 1e-12);
  expect_matrix_near(project_to_so3(1.001 * Matrix3::Identity()).matrix(), Matrix3::Identity(), 1e-15);
  Matrix3 rank2 = Matrix3::Identity();
  rank2(2, 2) = 0.0;
  try {
    project_to_so3(rank2);
    FAIL() << "expected SingularInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularInput);
  }
}

TEST(Projection, RepairsDriftAndReflections) {
  Sampler rng(7);
  for (int i = 0; i < 500; ++i) {
    const RotationMatrix r = rng.rotation();
    const Matrix3 noisy = r.matrix() + rng.mat(1e-4);
    const RotationMatrix p = project_to_so3(noisy);
    EXPECT_LE(p.orthonormality_error(), 1e-13);
    EXPECT_NEAR(p.matrix().determinant(), 1.0, 1e-13);
    // Polar factor is the Frobenius-nearest rotation; compare with a nearby one.
    const RotationMatrix other = p * exp_so3(rng.unit(), 1e-3);
    EXPECT_LE((p.matrix() - noisy).norm(), (other.matrix() - noisy).norm());
  }
  const Matrix3 reflection = Vector3(1, 1, -1).asDiagonal();
  EXPECT_NEAR(project_to_so3(reflection).matrix().determinant(), 1.0, 1e-15);
}

TEST(RotationMatrixType, ValidatesInvariants) {
  EXPECT_NO_THROW(RotationMatrix(Matrix3::Identity()));
  try {
    RotationMatrix(2.0 * Matrix3::Identity());
    FAIL() << "expected NotOrthonormal";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotOrthonormal);
  }
  EXPECT_THROW(RotationMatrix(Vector3(1, 1, -1).asDiagonal().toDenseMatrix()), Error);
  Matrix3 slightly_off = Matrix3::Identity();
  slightly_off(0, 1) = 1e-11;
  EXPECT_NO_THROW(RotationMatrix{slightly_off});
}

TEST(RotationMatrixType, AngleMatchesEigen) {
  Sampler rng(8);
  for (int i = 0; i < 1000; ++i) {
    const RotationMatrix r = rng.rotation();
    EXPECT_NEAR(rotation_angle(r), Eigen::AngleAxisd(r.matrix()).angle(), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Algebraic identities on random inputs.

TEST(Identities, CrossOfCross) {
  Sampler rng(10);
  for (int i = 0; i < 10000; ++i) {
    const Vector3 a = rng.vec();
    const Vector3 b = rng.vec();
    expect_matrix_near(skew(a.cross(b)), b * a.transpose() - a * b.transpose(), 1e-13);
  }
}

TEST(Identities, SkewConjugation) {
  Sampler rng(11);
  for (int i = 0; i < 10000; ++i) {
    const RotationMatrix r = exp_so3(rng.vec(4.0), 1.0);
    const Vector3 a = rng.vec();
    expect_matrix_near(skew(r * a), r.matrix() * skew(a) * r.matrix().transpose(), 1e-12);
  }
}

TEST(Identities, SkewSquared) {
  Sampler rng(12);
  for (int i = 0; i < 10000; ++i) {
    const Vector3 a = rng.vec();
    expect_matrix_near(skew(a) * skew(a), -a.squaredNorm() * Matrix3::Identity() + a * a.transpose(), 1e-13);
  }
}

TEST(Identities, TraceRelations) {
  Sampler rng(13);
  for (int i = 0; i < 10000; ++i) {
    const Matrix3 a = rng.mat();
    const Matrix3 b = rng.symmetric();
    const Matrix3 c = rng.mat();
    const Vector3 alpha = rng.vec();
    EXPECT_NEAR((a * c - c * a).trace(), 0.0, 1e-12);
    EXPECT_NEAR((b * skew(alpha)).trace(), 0.0, 1e-12);
    EXPECT_NEAR((a * skew(alpha)).trace(), -2.0 * vex_anti_symmetric(a).dot(alpha), 1e-12);
  }
}

TEST(Identities, SymmetricAnticommutator) {
  Sampler rng(14);
  for (int i = 0; i < 10000; ++i) {
    const Matrix3 b = rng.symmetric();
    const Vector3 a = rng.vec();
    expect_matrix_near(b * skew(a) + skew(a) * b, b.trace() * skew(a) - skew(b * a), 1e-12);
  }
}

TEST(Identities, ErrorVectorNormAndDistance) {
  Sampler rng(15);
  for (int i = 0; i < 10000; ++i) {
    const RotationMatrix r = rng.rotation();
    const double d = normalized_distance(r);
    EXPECT_NEAR(vex_anti_symmetric(r.matrix()).squaredNorm(), 4.0 * (1.0 - d) * d, 1e-12);
  }
}
