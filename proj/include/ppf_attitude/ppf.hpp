#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

#include "error.hpp"

namespace ppf_attitude {

/**
 * Exponentially decaying performance envelope
 *
 *   xi(t) = (xi0 - xi_inf) exp(-decay t) + xi_inf
 *
 * and the shape constants of the error transformation. Only the symmetric
 * case delta_upper == delta_lower is supported.
 */
struct PpfConfig {
  double xi0 = 1.2;
  double xi_inf = 0.04;
  double decay = 4.0;  // 1/s
  double delta_upper = 1.2;
  double delta_lower = 1.2;

  void validate() const {
    if (!(xi0 > xi_inf && xi_inf > 0.0)) {
      throw Error(ErrorCode::InvalidPpfConfig, "need xi0 > xi_inf > 0");
    }
    if (!(decay > 0.0)) {
      throw Error(ErrorCode::InvalidPpfConfig, "decay rate must be positive");
    }
    if (!(delta_upper > 0.0) || delta_upper != delta_lower) {
      throw Error(ErrorCode::InvalidPpfConfig, "delta_upper and delta_lower must be equal and positive");
    }
    if (xi0 > delta_upper) {
      throw Error(ErrorCode::InvalidPpfConfig, "xi0 must not exceed delta");
    }
  }
};

/// Envelope value and its time derivative at time t.
struct PpfSample {
  double t = 0.0;
  double xi = 0.0;
  double xi_dot = 0.0;
};

inline PpfSample performance_bound(double t, const PpfConfig& cfg) {
  const double decay = std::exp(-cfg.decay * t);
  return {t, (cfg.xi0 - cfg.xi_inf) * decay + cfg.xi_inf, -cfg.decay * (cfg.xi0 - cfg.xi_inf) * decay};
}

/// Relative guard band below delta_upper at which the transformation is
/// treated as breached.
inline constexpr double kEnvelopeGuard = 1e-9;

/// E = (1/2) ln((delta_lower + d/xi) / (delta_upper - d/xi))
inline double transformed_error(double dist, double xi, const PpfConfig& cfg) {
  if (!(dist >= 0.0) || !(xi > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "transformed error needs dist >= 0 and xi > 0");
  }
  const double ratio = dist / xi;
  if (ratio > cfg.delta_upper * (1.0 - kEnvelopeGuard)) {
    throw Error(ErrorCode::EnvelopeViolated, "error left the prescribed envelope");
  }
  return 0.5 * std::log((cfg.delta_lower + ratio) / (cfg.delta_upper - ratio));
}

/// xi (delta_upper e^E - delta_lower e^-E) / (e^E + e^-E)
inline double inverse_transformed_error(double e, double xi, const PpfConfig& cfg) {
  // Written with e^{-2|E|} so large |E| saturates instead of overflowing.
  const double a = std::exp(-2.0 * std::abs(e));
  const double z = e >= 0.0 ? (cfg.delta_upper - cfg.delta_lower * a) / (1.0 + a)
                            : (cfg.delta_upper * a - cfg.delta_lower) / (a + 1.0);
  return xi * z;
}

/// Gain attached to every correction term, from the transformed error:
/// (e^{2E} + e^{-2E} + 2) / (8 xi delta_upper).
inline double error_gain(double e, double xi, const PpfConfig& cfg) {
  return (std::exp(2.0 * e) + std::exp(-2.0 * e) + 2.0) / (8.0 * xi * cfg.delta_upper);
}

/// The same gain written in terms of the distance:
/// (1 / 4 xi) (1 / (delta_lower + d/xi) + 1 / (delta_upper - d/xi)).
inline double error_gain_from_distance(double dist, double xi, const PpfConfig& cfg) {
  const double ratio = dist / xi;
  return (1.0 / (cfg.delta_lower + ratio) + 1.0 / (cfg.delta_upper - ratio)) / (4.0 * xi);
}

struct EnvelopeReport {
  bool pass = true;
  std::optional<std::size_t> first_breach;
};

/// First index at or after `start` where dist >= xi.
inline EnvelopeReport envelope_check(std::span<const double> dist, std::span<const double> xi,
                                     std::size_t start = 0) {
  if (dist.size() != xi.size()) {
    throw Error(ErrorCode::InvalidArgument, "distance and envelope series differ in length");
  }
  for (std::size_t k = start; k < dist.size(); ++k) {
    if (!(dist[k] < xi[k])) return {false, k};
  }
  return {};
}

}  // namespace ppf_attitude
