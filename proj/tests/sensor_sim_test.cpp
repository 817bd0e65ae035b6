#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ppf_attitude;

namespace {

template <typename F>
void expect_code(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(OmegaProfileType, ReferenceExamples) {
  const OmegaProfile p = OmegaProfile::reference();
  const Vector3 w0 = p(0.0);
  EXPECT_EQ(w0.x(), 0.0);
  EXPECT_NEAR(w0.y(), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(w0.z(), 0.4, 1e-15);
  const double t = 2.5;
  const Vector3 w = p(t);
  EXPECT_NEAR(w.x(), std::sin(0.4 * t), 1e-15);
  EXPECT_NEAR(w.y(), std::sin(0.7 * t + std::numbers::pi / 4), 1e-15);
  EXPECT_NEAR(w.z(), 0.4 * std::cos(0.3 * t), 1e-15);
  EXPECT_EQ(OmegaProfile::constant(Vector3(1, 2, 3))(7.0), Vector3(1, 2, 3));
}

TEST(Truth, ConstantRateMatchesClosedForm) {
  const Vector3 rate(0.3, -0.2, 0.5);
  const OmegaProfile p = OmegaProfile::constant(rate);
  TruthState s;
  s.omega = p(0.0);
  for (int k = 0; k < 2000; ++k) s = truth_step(s, p, 1e-3);
  EXPECT_NEAR(s.t, 2.0, 1e-12);
  const Matrix3 exact = Eigen::AngleAxisd(2.0 * rate.norm(), rate.normalized()).toRotationMatrix();
  EXPECT_LE((s.attitude.matrix() - exact).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(s.omega, rate);
  expect_code(ErrorCode::InvalidArgument, [&] { truth_step(s, p, 0.0); });
}

TEST(Truth, StaysOnRotationGroup) {
  const OmegaProfile p = OmegaProfile::reference();
  TruthState s;
  s.omega = p(0.0);
  for (int k = 0; k < 30000; ++k) s = truth_step(s, p, 1e-3);
  EXPECT_LT(s.attitude.orthonormality_error(), 1e-10);
}

TEST(Rng, Determinism) {
  RngStream a(123);
  RngStream b(123);
  RngStream c(124);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.gaussian();
    EXPECT_EQ(x, b.gaussian());
    differs |= x != c.gaussian();
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(RngStream::derive_seed(10, 0), 10u);
  EXPECT_NE(RngStream::derive_seed(10, 1), RngStream::derive_seed(10, 2));
}

TEST(Gyro, NoiseFreeIsRatePlusBias) {
  RngStream rng(1);
  GyroModel m;
  m.bias = Vector3(0.1, -0.1, 0.1);
  EXPECT_EQ(gyro_measure(Vector3(1, 2, 3), m, 1e-3, rng), Vector3(1.1, 1.9, 3.1));
  m.noise_std = Vector3(-1, 0, 0);
  expect_code(ErrorCode::InvalidArgument, [&] { gyro_measure(Vector3::Zero(), m, 1e-3, rng); });
}

TEST(Gyro, SampleMomentsMatchModel) {
  RngStream rng(7);
  GyroModel m;
  m.bias = Vector3(0.1, -0.1, 0.1);
  m.noise_std = Vector3(0.3, 0.3, 0.3);
  const int n = 1000000;
  Vector3 sum = Vector3::Zero();
  Vector3 sq = Vector3::Zero();
  for (int i = 0; i < n; ++i) {
    const Vector3 x = gyro_measure(Vector3::Zero(), m, 1e-3, rng);
    sum += x;
    sq += x.cwiseProduct(x);
  }
  const Vector3 mean = sum / n;
  const Vector3 var = sq / n - mean.cwiseProduct(mean);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(mean(i), m.bias(i), 0.002);
    EXPECT_NEAR(std::sqrt(var(i)), 0.3, 0.003);
  }
}

TEST(Gyro, EulerMaruyamaScalesWithStep) {
  GyroModel m;
  m.noise_std = Vector3::Constant(0.3);
  m.mode = NoiseMode::EulerMaruyama;
  GyroModel sampled = m;
  sampled.mode = NoiseMode::Sampled;
  RngStream a(5);
  RngStream b(5);
  for (int i = 0; i < 100; ++i) {
    const Vector3 em = gyro_measure(Vector3::Zero(), m, 0.01, a);
    const Vector3 s = gyro_measure(Vector3::Zero(), sampled, 0.01, b);
    EXPECT_LE((em - 10.0 * s).norm(), 1e-12);
  }
}

TEST(VectorSensor, NoiseFreeAndUnitLength) {
  testing_support::Sampler s(60);
  RngStream rng(2);
  VectorSensorModel m;
  m.ref_inertial = Vector3(2, -2, 2);
  m.weight = 1.4;
  for (int i = 0; i < 1000; ++i) {
    const RotationMatrix r = s.rotation();
    const VectorObservation o = vector_measure(r, m, rng);
    EXPECT_NEAR(o.ref_inertial.norm(), 1.0, 1e-15);
    EXPECT_LE((o.meas_body - r.matrix().transpose() * Vector3(1, -1, 1).normalized()).norm(), 1e-14);
    EXPECT_EQ(o.weight, 1.4);
  }
  m.noise_std = 0.12;
  m.bias = Vector3(0, 0, 0.1);
  for (int i = 0; i < 1000; ++i) EXPECT_NEAR(vector_measure(s.rotation(), m, rng).meas_body.norm(), 1.0, 1e-15);
}

TEST(VectorSensor, Degenerate) {
  RngStream rng(3);
  VectorSensorModel m;
  m.ref_inertial = Vector3::Zero();
  expect_code(ErrorCode::DegenerateVector, [&] { vector_measure(RotationMatrix::identity(), m, rng); });
  m.ref_inertial = Vector3::UnitZ();
  m.bias = Vector3(0, 0, -1);
  expect_code(ErrorCode::DegenerateVector, [&] { vector_measure(RotationMatrix::identity(), m, rng); });
}
