#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "error.hpp"
#include "so3.hpp"
#include "wahba.hpp"

namespace ppf_attitude {

/**
 * Seeded Gaussian source. mt19937_64 is fully specified by the standard and
 * the normal draws use our own Box-Muller transform (std::normal_distribution
 * is implementation-defined), so a seed gives the same stream everywhere.
 */
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform in (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  Vector3 gaussian3(const Vector3& std_dev) {
    const double x = gaussian();
    const double y = gaussian();
    const double z = gaussian();
    return {x * std_dev.x(), y * std_dev.y(), z * std_dev.z()};
  }

  /// Seed for the i-th independent stream derived from a base seed.
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) { return base ^ index; }

 private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Per-axis rate a sin(f t + p) + c.
struct OmegaProfile {
  Vector3 amplitude{1.0, 1.0, 0.4};
  Vector3 frequency{0.4, 0.7, 0.3};
  Vector3 phase{0.0, std::numbers::pi / 4.0, std::numbers::pi / 2.0};
  Vector3 offset = Vector3::Zero();

  /// [sin(0.4 t), sin(0.7 t + pi/4), 0.4 cos(0.3 t)] rad/s
  static OmegaProfile reference() { return {}; }

  static OmegaProfile constant(const Vector3& rate) {
    return {Vector3::Zero(), Vector3::Zero(), Vector3::Zero(), rate};
  }

  Vector3 operator()(double t) const {
    Vector3 out;
    for (int i = 0; i < 3; ++i) out(i) = amplitude(i) * std::sin(frequency(i) * t + phase(i)) + offset(i);
    return out;
  }
};

struct TruthState {
  double t = 0.0;
  RotationMatrix attitude;
  Vector3 omega = Vector3::Zero();
};

/// Advances the true attitude with the rate held at Omega(t) over the step.
inline TruthState truth_step(const TruthState& s, const OmegaProfile& profile, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  TruthState next;
  next.t = s.t + dt;
  next.attitude = s.attitude * exp_so3(profile(s.t), dt);
  next.omega = profile(next.t);
  return next;
}

enum class NoiseMode {
  /// Each sample carries Gaussian noise with the configured std.
  Sampled,
  /// std / sqrt(dt): increments of a Brownian motion with intensity std.
  EulerMaruyama,
};

struct GyroModel {
  Vector3 bias = Vector3::Zero();       // rad/s
  Vector3 noise_std = Vector3::Zero();  // rad/s, per axis
  NoiseMode mode = NoiseMode::Sampled;
};

/// Omega_m = Omega + b + n
inline Vector3 gyro_measure(const Vector3& omega_true, const GyroModel& model, double dt, RngStream& rng) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  if ((model.noise_std.array() < 0.0).any()) throw Error(ErrorCode::InvalidArgument, "noise std must be >= 0");
  const double scale = model.mode == NoiseMode::EulerMaruyama ? 1.0 / std::sqrt(dt) : 1.0;
  return omega_true + model.bias + rng.gaussian3(scale * model.noise_std);
}

struct VectorSensorModel {
  Vector3 ref_inertial = Vector3::UnitZ();  // normalized at use
  Vector3 bias = Vector3::Zero();
  double noise_std = 0.0;
  double weight = 1.0;
};

/// v^B = R^T v^I + b + n, then both vectors are normalized.
inline VectorObservation vector_measure(const RotationMatrix& r, const VectorSensorModel& model, RngStream& rng) {
  const double ref_norm = model.ref_inertial.norm();
  if (ref_norm < 1e-9) throw Error(ErrorCode::DegenerateVector, "reference vector is zero");
  const Vector3 ref = model.ref_inertial / ref_norm;
  const Vector3 raw = r.matrix().transpose() * ref + model.bias + rng.gaussian3(Vector3::Constant(model.noise_std));
  if (raw.norm() < 1e-9) throw Error(ErrorCode::DegenerateVector, "measured vector vanished");
  return {ref, raw.normalized(), model.weight};
}

}  // namespace ppf_attitude
