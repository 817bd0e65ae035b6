#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "attitude_repr.hpp"
#include "error.hpp"
#include "ppf.hpp"
#include "so3.hpp"
#include "wahba.hpp"

namespace ppf_attitude {

/// Minimum allowed value of the denominators 1 - d, E + 1, 1 + J and |q0|.
/// Reaching it means the error sits on (or next to) the 180 degree set,
/// which the filters cannot leave.
inline constexpr double kUnstableSetGuard = 1e-6;

struct EstimatorGains {
  double gamma_bias = 1.0;   // bias adaptation
  double gamma_sigma = 0.1;  // noise-bound adaptation
  double k_w = 3.0;          // correction gain

  void validate() const {
    if (!(gamma_bias > 0.0 && gamma_sigma > 0.0 && k_w > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "estimator gains must be positive");
    }
  }
};

struct FilterState {
  RotationMatrix attitude;
  Vector3 bias = Vector3::Zero();   // rad/s
  Vector3 sigma = Vector3::Zero();  // estimate of the gyro noise covariance bound
};

struct QuatFilterState {
  UnitQuaternion attitude;
  Vector3 bias = Vector3::Zero();
  Vector3 sigma = Vector3::Zero();
};

/// Diagnostics of one evaluation of the correction laws.
struct CorrectionTerms {
  Vector3 w = Vector3::Zero();             // correction added to the rate, rad/s
  Vector3 error_vector = Vector3::Zero();  // vex of the anti-symmetric error part
  double transformed_error = 0.0;
  double gain = 0.0;  // mu
  double dist = 0.0;  // distance the filter itself sees
};

struct Derivatives {
  Vector3 omega_eff = Vector3::Zero();  // Omega_m - b_hat - W
  Vector3 bias_rate = Vector3::Zero();
  Vector3 sigma_rate = Vector3::Zero();
  CorrectionTerms terms;
};

struct QuatDerivatives : Derivatives {
  Vector4 q_dot = Vector4::Zero();
};

/// How the discrete steppers read the update laws.
enum class DiscreteMode {
  /// Forward-Euler discretization of the continuous laws (default).
  Consistent,
  /// The printed discrete semi-direct laws: an (E + 1) factor in the k_w
  /// term of W and an extra E factor in the sigma update.
  PaperLiteral,
};

struct StepOptions {
  bool clamp_sigma = false;
};

namespace detail {

struct LawInputs {
  Vector3 error_vector;
  double dist;
  double transformed_error;
  double gain;
  double second_coeff;  // coefficient of error_vector in the second W term
  double sigma_scale = 1.0;
};

inline Derivatives assemble(const Vector3& omega_m, const Vector3& bias, const Vector3& sigma,
                            const LawInputs& in, const EstimatorGains& gains) {
  const double e = in.transformed_error;
  const double mu = in.gain;
  if (e + 1.0 < kUnstableSetGuard) {
    throw Error(ErrorCode::NearUnstableSet, "E + 1 below guard");
  }
  const Vector3 diag_sigma = in.error_vector.cwiseProduct(sigma);
  const Vector3 diag_err = in.error_vector.cwiseProduct(in.error_vector);
  const double exp_e = std::exp(e);

  Derivatives d;
  d.terms.w = 2.0 * (e + 2.0) / (e + 1.0) * mu * diag_sigma + in.second_coeff * in.error_vector;
  d.terms.error_vector = in.error_vector;
  d.terms.transformed_error = e;
  d.terms.gain = mu;
  d.terms.dist = in.dist;
  d.bias_rate = gains.gamma_bias * (e + 1.0) * exp_e * mu * in.error_vector;
  d.sigma_rate = in.sigma_scale * gains.gamma_sigma * (e + 2.0) * exp_e * mu * mu * diag_err;
  d.omega_eff = omega_m - bias - d.terms.w;
  return d;
}

inline LawInputs semi_direct_inputs(const Matrix3& error_rotation, const PpfSample& env,
                                    const PpfConfig& cfg, const EstimatorGains& gains, bool literal) {
  const double dist = std::clamp(quarter_trace_gap(error_rotation), 0.0, 1.0);
  if (1.0 - dist < kUnstableSetGuard) {
    throw Error(ErrorCode::NearUnstableSet, "attitude error is a half-turn");
  }
  const double e = transformed_error(dist, env.xi, cfg);
  const double mu = error_gain(e, env.xi, cfg);
  const double kw_term = literal ? gains.k_w * mu * (e + 1.0) : gains.k_w * e * mu;
  LawInputs in;
  in.error_vector = vex_anti_symmetric(error_rotation);
  in.dist = dist;
  in.transformed_error = e;
  in.gain = mu;
  in.second_coeff = 2.0 * (kw_term - env.xi_dot / (4.0 * env.xi)) / (1.0 - dist);
  in.sigma_scale = literal ? e : 1.0;
  return in;
}

inline LawInputs direct_inputs(const ObservationSet& obs, std::span<const Vector3> predicted,
                               const PpfSample& env, const PpfConfig& cfg, const EstimatorGains& gains) {
  const double j = measured_trace(obs, predicted);
  if (1.0 + j < kUnstableSetGuard) {
    throw Error(ErrorCode::NearUnstableSet, "1 + J below guard");
  }
  const double lambda = complement_and_min_eigenvalue(body_weighted_outer(obs)).lambda_min;
  const double dist = measured_distance(obs, predicted);
  const double e = transformed_error(dist, env.xi, cfg);
  const double mu = error_gain(e, env.xi, cfg);
  LawInputs in;
  in.error_vector = measured_error_vector(obs, predicted);
  in.dist = dist;
  in.transformed_error = e;
  in.gain = mu;
  in.second_coeff = 4.0 / lambda * (gains.k_w * mu * e - env.xi_dot / env.xi) / (1.0 + j);
  return in;
}

/// (1/2) [[0, -g^T], [g, -[g]x]] q
inline Vector4 quaternion_rate(const Vector4& q, const Vector3& rate) {
  return 0.5 * quaternion_product(q, Vector4(0.0, rate.x(), rate.y(), rate.z()));
}

/// Envelope sampled at step k with the backward-difference slope
/// (xi[k] - xi[k-1]) / dt; xi[-1] comes from the same closed form.
inline PpfSample discrete_bound(long k, double dt, const PpfConfig& cfg) {
  const double t = static_cast<double>(k) * dt;
  const PpfSample now = performance_bound(t, cfg);
  const PpfSample prev = performance_bound(t - dt, cfg);
  return {t, now.xi, (now.xi - prev.xi) / dt};
}

}  // namespace detail

/// Semi-direct filter: the error is taken against a reconstructed attitude
/// R_y, R~ = R_y^T R_hat.
inline Derivatives semi_direct_derivatives(const FilterState& state, const Vector3& omega_m,
                                           const RotationMatrix& reconstructed, const PpfSample& env,
                                           const PpfConfig& cfg, const EstimatorGains& gains) {
  const Matrix3 error_rotation = reconstructed.matrix().transpose() * state.attitude.matrix();
  return detail::assemble(omega_m, state.bias, state.sigma,
                          detail::semi_direct_inputs(error_rotation, env, cfg, gains, false), gains);
}

/// Direct filter: consumes the vector observations without reconstructing
/// the attitude. `obs` must have rank 3 (use augment_with_cross for pairs).
inline Derivatives direct_derivatives(const FilterState& state, const Vector3& omega_m, const ObservationSet& obs,
                                      const PpfSample& env, const PpfConfig& cfg, const EstimatorGains& gains) {
  const auto predicted = predict_body_vectors(obs, state.attitude);
  return detail::assemble(omega_m, state.bias, state.sigma, detail::direct_inputs(obs, predicted, env, cfg, gains),
                          gains);
}

/**
 * Quaternion form of the semi-direct filter. With Q~ = Q_y^-1 (.) Q_hat the
 * distance is 1 - q0~^2 and the error vector is 2 q0~ q~, which makes every
 * law identical to the matrix form:
 *
 *   W = 4 q0~ (E+2)/(E+1) mu diag(q~) sigma_hat + 4 (k_w E mu - xi_dot / 4 xi) / q0~ q~
 */
inline QuatDerivatives quat_semi_direct_derivatives(const QuatFilterState& state, const Vector3& omega_m,
                                                    const UnitQuaternion& reconstructed, const PpfSample& env,
                                                    const PpfConfig& cfg, const EstimatorGains& gains) {
  const Vector4 qe = quaternion_product(quat_inv(reconstructed).coeffs(), state.attitude.coeffs());
  const double q0 = qe(0);
  const Vector3 qv = qe.tail<3>();
  if (std::abs(q0) < kUnstableSetGuard) {
    throw Error(ErrorCode::NearUnstableSet, "quaternion error has zero scalar part");
  }
  const double dist = std::clamp(1.0 - q0 * q0, 0.0, 1.0);
  const double e = transformed_error(dist, env.xi, cfg);
  const double mu = error_gain(e, env.xi, cfg);
  if (e + 1.0 < kUnstableSetGuard) {
    throw Error(ErrorCode::NearUnstableSet, "E + 1 below guard");
  }
  const double exp_e = std::exp(e);

  QuatDerivatives d;
  d.terms.w = 4.0 * q0 * (e + 2.0) / (e + 1.0) * mu * qv.cwiseProduct(state.sigma) +
              4.0 * (gains.k_w * e * mu - env.xi_dot / (4.0 * env.xi)) / q0 * qv;
  d.terms.error_vector = 2.0 * q0 * qv;
  d.terms.transformed_error = e;
  d.terms.gain = mu;
  d.terms.dist = dist;
  d.bias_rate = 2.0 * gains.gamma_bias * (e + 1.0) * exp_e * mu * q0 * qv;
  d.sigma_rate = 4.0 * gains.gamma_sigma * (e + 2.0) * exp_e * mu * mu * q0 * q0 * qv.cwiseProduct(qv);
  d.omega_eff = omega_m - state.bias - d.terms.w;
  d.q_dot = detail::quaternion_rate(state.attitude.coeffs(), d.omega_eff);
  return d;
}

/// Quaternion form of the direct filter; predicted body vectors come from
/// Q_hat^-1 (.) [0, v^I] (.) Q_hat.
inline QuatDerivatives quat_direct_derivatives(const QuatFilterState& state, const Vector3& omega_m,
                                               const ObservationSet& obs, const PpfSample& env, const PpfConfig& cfg,
                                               const EstimatorGains& gains) {
  std::vector<Vector3> predicted;
  predicted.reserve(obs.size());
  for (const auto& o : obs.observations()) predicted.push_back(rotate_to_body(state.attitude, o.ref_inertial));
  QuatDerivatives d;
  static_cast<Derivatives&>(d) = detail::assemble(omega_m, state.bias, state.sigma,
                                                  detail::direct_inputs(obs, predicted, env, cfg, gains), gains);
  d.q_dot = detail::quaternion_rate(state.attitude.coeffs(), d.omega_eff);
  return d;
}

/// One explicit step: R_hat exp([omega_eff]x dt) for the attitude, Euler for
/// the bias and sigma estimates.
inline FilterState step_continuous(const FilterState& state, const Derivatives& d, double dt,
                                   const StepOptions& opts = {}) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  FilterState next;
  next.attitude = state.attitude * exp_so3(d.omega_eff, dt);
  next.bias = state.bias + dt * d.bias_rate;
  next.sigma = state.sigma + dt * d.sigma_rate;
  if (opts.clamp_sigma) next.sigma = next.sigma.cwiseMax(0.0);
  return next;
}

/// Exact quaternion propagation for the constant rate omega_eff over dt,
/// followed by renormalization.
inline QuatFilterState step_continuous(const QuatFilterState& state, const Derivatives& d, double dt,
                                       const StepOptions& opts = {}) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  const Vector3 u = d.omega_eff * dt;
  const double half = 0.5 * u.norm();
  Vector4 delta;
  if (half < 0.5 * kExpSeriesThreshold) {
    delta << 1.0 - 0.5 * half * half, 0.5 * u;
  } else {
    delta << std::cos(half), std::sin(half) / (2.0 * half) * u;
  }
  QuatFilterState next;
  next.attitude = UnitQuaternion::normalized(quaternion_product(state.attitude.coeffs(), delta));
  next.bias = state.bias + dt * d.bias_rate;
  next.sigma = state.sigma + dt * d.sigma_rate;
  if (opts.clamp_sigma) next.sigma = next.sigma.cwiseMax(0.0);
  return next;
}

/**
 * Classical four-stage Runge-Kutta step. `eval(state, t)` returns the
 * derivatives at a trial state; measurements are held constant inside the
 * step, only the envelope time moves. The attitude stages are pushed along
 * the group with the exponential map and the final update uses the weighted
 * mean of the four rates.
 */
template <typename State, typename Eval>
State step_rk4(const State& state, double t, double dt, Eval&& eval, const StepOptions& opts = {},
               Derivatives* first_stage = nullptr) {
  const Derivatives k1 = eval(state, t);
  if (first_stage != nullptr) *first_stage = k1;
  const Derivatives k2 = eval(step_continuous(state, k1, 0.5 * dt, opts), t + 0.5 * dt);
  const Derivatives k3 = eval(step_continuous(state, k2, 0.5 * dt, opts), t + 0.5 * dt);
  const Derivatives k4 = eval(step_continuous(state, k3, dt, opts), t + dt);
  Derivatives mean;
  mean.omega_eff = (k1.omega_eff + 2.0 * k2.omega_eff + 2.0 * k3.omega_eff + k4.omega_eff) / 6.0;
  mean.bias_rate = (k1.bias_rate + 2.0 * k2.bias_rate + 2.0 * k3.bias_rate + k4.bias_rate) / 6.0;
  mean.sigma_rate = (k1.sigma_rate + 2.0 * k2.sigma_rate + 2.0 * k3.sigma_rate + k4.sigma_rate) / 6.0;
  return step_continuous(state, mean, dt, opts);
}

template <typename State>
struct DiscreteStep {
  State state;
  Derivatives derivatives;  // evaluated at sample k
};

/// Discrete semi-direct filter at sample k (t = k dt).
inline DiscreteStep<FilterState> step_discrete_semi_direct(const FilterState& state, const Vector3& omega_m,
                                                           const RotationMatrix& reconstructed, long k, double dt,
                                                           const PpfConfig& cfg, const EstimatorGains& gains,
                                                           DiscreteMode mode = DiscreteMode::Consistent,
                                                           const StepOptions& opts = {}) {
  const PpfSample env = detail::discrete_bound(k, dt, cfg);
  const Matrix3 error_rotation = reconstructed.matrix().transpose() * state.attitude.matrix();
  const Derivatives d = detail::assemble(
      omega_m, state.bias, state.sigma,
      detail::semi_direct_inputs(error_rotation, env, cfg, gains, mode == DiscreteMode::PaperLiteral), gains);
  return {step_continuous(state, d, dt, opts), d};
}

/// Discrete direct filter at sample k. Both modes run the same laws: the
/// printed discrete direct filter already matches the continuous one apart
/// from the finite-difference envelope slope.
inline DiscreteStep<FilterState> step_discrete_direct(const FilterState& state, const Vector3& omega_m,
                                                      const ObservationSet& obs, long k, double dt,
                                                      const PpfConfig& cfg, const EstimatorGains& gains,
                                                      [[maybe_unused]] DiscreteMode mode = DiscreteMode::Consistent,
                                                      const StepOptions& opts = {}) {
  const PpfSample env = detail::discrete_bound(k, dt, cfg);
  const Derivatives d = direct_derivatives(state, omega_m, obs, env, cfg, gains);
  return {step_continuous(state, d, dt, opts), d};
}

}  // namespace ppf_attitude
