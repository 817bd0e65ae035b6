#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "attitude_repr.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "ppf.hpp"
#include "sensor_sim.hpp"
#include "so3.hpp"
#include "wahba.hpp"

namespace ppf_attitude {

enum class EstimatorKind { SemiDirect, Direct };
enum class EstimatorSelection { SemiDirect, Direct, Both };
enum class FilterForm { Continuous, Discrete, Quaternion };
enum class Integrator { Euler, Rk4 };

/// An attitude given either as angle (degrees) + axis, or as a matrix that
/// is projected onto SO(3) (printed matrices are rounded).
struct AttitudeSpec {
  std::optional<double> angle_deg;
  Vector3 axis = Vector3::UnitZ();
  std::optional<Matrix3> matrix;

  static AttitudeSpec identity() { return {0.0, Vector3::UnitZ(), std::nullopt}; }
  static AttitudeSpec from_angle_axis(double deg, const Vector3& axis) { return {deg, axis, std::nullopt}; }
  static AttitudeSpec from_matrix(const Matrix3& m) { return {std::nullopt, Vector3::UnitZ(), m}; }

  RotationMatrix resolve() const {
    if (matrix) return project_to_so3(*matrix);
    if (axis.norm() < 1e-12) throw Error(ErrorCode::ConfigInvalid, "rotation axis is zero");
    return angle_axis_to_rotation({angle_deg.value_or(0.0) * std::numbers::pi / 180.0, axis.normalized()});
  }
};

struct ExperimentConfig {
  double duration = 30.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  EstimatorSelection estimators = EstimatorSelection::Both;
  FilterForm form = FilterForm::Continuous;
  Integrator integrator = Integrator::Euler;
  DiscreteMode discrete_mode = DiscreteMode::Consistent;
  PpfConfig ppf;
  EstimatorGains gains;
  GyroModel gyro;
  std::vector<VectorSensorModel> sensors;
  double cross_weight = 0.2;  // weight of the synthesized third vector for two-sensor setups
  OmegaProfile omega = OmegaProfile::reference();
  AttitudeSpec initial_attitude = AttitudeSpec::identity();
  AttitudeSpec initial_estimate = AttitudeSpec::identity();
  Vector3 initial_bias = Vector3::Zero();
  Vector3 initial_sigma = Vector3::Zero();
  int projection_interval = 1000;  // steps between SO(3) re-projections, 0 = never
  bool clamp_sigma = false;
  double window_start = 1.0;
  std::optional<double> window_end;  // defaults to duration
  bool strict = true;
  int runs = 1;
  int threads = 1;

  double summary_window_end() const { return window_end.value_or(duration); }

  std::vector<EstimatorKind> kinds() const {
    switch (estimators) {
      case EstimatorSelection::SemiDirect: return {EstimatorKind::SemiDirect};
      case EstimatorSelection::Direct: return {EstimatorKind::Direct};
      case EstimatorSelection::Both: break;
    }
    return {EstimatorKind::SemiDirect, EstimatorKind::Direct};
  }

  long steps() const { return static_cast<long>(std::floor(duration / dt + 1e-9)); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, msg); };
    if (!(duration > 0.0)) fail("duration must be positive");
    if (!(dt > 0.0) || dt > duration) fail("dt must be in (0, duration]");
    if (sensors.size() < 2) fail("at least two vector sensors are required");
    if (runs < 1) fail("runs must be >= 1");
    if (threads < 1) fail("threads must be >= 1");
    if (projection_interval < 0) fail("projection_interval must be >= 0");
    if (!(window_start >= 0.0) || !(summary_window_end() <= duration) || !(window_start <= summary_window_end())) {
      fail("summary window must lie within [0, duration]");
    }
    try {
      ppf.validate();
      gains.validate();
    } catch (const Error& e) {
      fail(e.what());
    }
    const double d0 = normalized_distance(initial_attitude.resolve().transpose() * initial_estimate.resolve());
    if (!(ppf.xi0 > d0)) fail("xi0 must exceed the initial attitude error");
  }

  /// Continuous-form simulation study: large initial error, biased and
  /// noisy gyro plus two biased vector sensors.
  static ExperimentConfig reference() {
    ExperimentConfig c;
    c.gyro.bias = Vector3(0.1, -0.1, 0.1);
    c.gyro.noise_std = Vector3::Constant(0.3);
    VectorSensorModel s1;
    s1.ref_inertial = Vector3(1.0, -1.0, 1.0) / std::sqrt(3.0);
    s1.bias = Vector3(-0.1, 0.1, 0.05);
    s1.noise_std = 0.12;
    s1.weight = 1.4;
    VectorSensorModel s2;
    s2.ref_inertial = Vector3(0.0, 0.0, 1.0);
    s2.bias = Vector3(0.0, 0.0, 0.1);
    s2.noise_std = 0.12;
    s2.weight = 1.4;
    c.sensors = {s1, s2};
    c.initial_estimate = AttitudeSpec::from_angle_axis(178.0, Vector3(4.0, 1.0, 5.0));
    return c;
  }

  /// Discrete-form study: dt = 0.01 with its own printed initial estimate.
  static ExperimentConfig reference_discrete() {
    ExperimentConfig c = reference();
    c.dt = 0.01;
    c.form = FilterForm::Discrete;
    Matrix3 m;
    m << -0.8959, -0.1209, 0.4275,
         0.3824, -0.6998, 0.6034,
         0.2262, 0.7041, 0.6731;
    c.initial_estimate = AttitudeSpec::from_matrix(m);
    return c;
  }
};

// ---------------------------------------------------------------------------
// JSON schema

namespace detail {

inline nlohmann::json vec_json(const Vector3& v) { return {v.x(), v.y(), v.z()}; }

inline Vector3 vec_from(const nlohmann::json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::ConfigInvalid, std::string(key) + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  std::set<std::string> allowed(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw Error(ErrorCode::ConfigInvalid, std::string("unknown key '") + it.key() + "' in " + where);
    }
  }
}

template <typename Enum>
struct EnumNames;

template <>
struct EnumNames<EstimatorSelection> {
  static constexpr std::pair<EstimatorSelection, const char*> table[] = {
      {EstimatorSelection::SemiDirect, "semi"}, {EstimatorSelection::Direct, "direct"}, {EstimatorSelection::Both, "both"}};
};
template <>
struct EnumNames<FilterForm> {
  static constexpr std::pair<FilterForm, const char*> table[] = {
      {FilterForm::Continuous, "cont"}, {FilterForm::Discrete, "disc"}, {FilterForm::Quaternion, "quat"}};
};
template <>
struct EnumNames<Integrator> {
  static constexpr std::pair<Integrator, const char*> table[] = {{Integrator::Euler, "euler"}, {Integrator::Rk4, "rk4"}};
};
template <>
struct EnumNames<DiscreteMode> {
  static constexpr std::pair<DiscreteMode, const char*> table[] = {{DiscreteMode::Consistent, "consistent"},
                                                                   {DiscreteMode::PaperLiteral, "paper-literal"}};
};
template <>
struct EnumNames<NoiseMode> {
  static constexpr std::pair<NoiseMode, const char*> table[] = {{NoiseMode::Sampled, "sampled"},
                                                                {NoiseMode::EulerMaruyama, "euler-maruyama"}};
};
template <>
struct EnumNames<EstimatorKind> {
  static constexpr std::pair<EstimatorKind, const char*> table[] = {{EstimatorKind::SemiDirect, "semi"},
                                                                    {EstimatorKind::Direct, "direct"}};
};

}  // namespace detail

template <typename Enum>
std::string enum_name(Enum e) {
  for (const auto& [value, name] : detail::EnumNames<Enum>::table) {
    if (value == e) return name;
  }
  return "?";
}

template <typename Enum>
Enum parse_enum(const std::string& s) {
  std::string choices;
  for (const auto& [value, name] : detail::EnumNames<Enum>::table) {
    if (s == name) return value;
    choices += choices.empty() ? name : std::string("|") + name;
  }
  throw Error(ErrorCode::ConfigInvalid, "'" + s + "' is not one of " + choices);
}

inline nlohmann::json attitude_to_json(const AttitudeSpec& a) {
  if (a.matrix) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({(*a.matrix)(r, 0), (*a.matrix)(r, 1), (*a.matrix)(r, 2)});
    return {{"matrix", rows}};
  }
  return {{"angle_deg", a.angle_deg.value_or(0.0)}, {"axis", detail::vec_json(a.axis)}};
}

inline AttitudeSpec attitude_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"angle_deg", "axis", "matrix"}, "attitude");
  if (j.contains("matrix")) {
    const auto& rows = j.at("matrix");
    if (!rows.is_array() || rows.size() != 3) throw Error(ErrorCode::ConfigInvalid, "matrix: expected 3 rows");
    Matrix3 m;
    for (int r = 0; r < 3; ++r) m.row(r) = detail::vec_from(rows[r], "matrix row").transpose();
    return AttitudeSpec::from_matrix(m);
  }
  return AttitudeSpec::from_angle_axis(j.value("angle_deg", 0.0),
                                       j.contains("axis") ? detail::vec_from(j.at("axis"), "axis") : Vector3::UnitZ());
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json sensors = nlohmann::json::array();
  for (const auto& s : c.sensors) {
    sensors.push_back({{"ref", detail::vec_json(s.ref_inertial)},
                       {"bias", detail::vec_json(s.bias)},
                       {"noise_std", s.noise_std},
                       {"weight", s.weight}});
  }
  nlohmann::json j = {
      {"duration", c.duration},
      {"dt", c.dt},
      {"seed", c.seed},
      {"estimator", enum_name(c.estimators)},
      {"form", enum_name(c.form)},
      {"integrator", enum_name(c.integrator)},
      {"discrete_mode", enum_name(c.discrete_mode)},
      {"ppf",
       {{"xi0", c.ppf.xi0},
        {"xi_inf", c.ppf.xi_inf},
        {"decay", c.ppf.decay},
        {"delta_upper", c.ppf.delta_upper},
        {"delta_lower", c.ppf.delta_lower}}},
      {"gains", {{"gamma_bias", c.gains.gamma_bias}, {"gamma_sigma", c.gains.gamma_sigma}, {"k_w", c.gains.k_w}}},
      {"gyro",
       {{"bias", detail::vec_json(c.gyro.bias)},
        {"noise_std", detail::vec_json(c.gyro.noise_std)},
        {"noise_mode", enum_name(c.gyro.mode)}}},
      {"sensors", sensors},
      {"cross_weight", c.cross_weight},
      {"omega",
       {{"amplitude", detail::vec_json(c.omega.amplitude)},
        {"frequency", detail::vec_json(c.omega.frequency)},
        {"phase", detail::vec_json(c.omega.phase)},
        {"offset", detail::vec_json(c.omega.offset)}}},
      {"initial",
       {{"attitude", attitude_to_json(c.initial_attitude)},
        {"estimate", attitude_to_json(c.initial_estimate)},
        {"bias", detail::vec_json(c.initial_bias)},
        {"sigma", detail::vec_json(c.initial_sigma)}}},
      {"projection_interval", c.projection_interval},
      {"clamp_sigma", c.clamp_sigma},
      {"summary_window", {c.window_start, c.summary_window_end()}},
      {"strict", c.strict},
      {"runs", c.runs},
      {"threads", c.threads},
  };
  return j;
}

/// Missing keys keep the values of the reference configuration.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::vec_from;
  ExperimentConfig c = ExperimentConfig::reference();
  try {
    detail::reject_unknown(j,
                           {"duration", "dt", "seed", "estimator", "form", "integrator", "discrete_mode", "ppf", "gains",
                            "gyro", "sensors", "cross_weight", "omega", "initial", "projection_interval",
                            "clamp_sigma", "summary_window", "strict", "runs", "threads"},
                           "config");
    c.duration = j.value("duration", c.duration);
    c.dt = j.value("dt", c.dt);
    c.seed = j.value("seed", c.seed);
    if (j.contains("estimator")) c.estimators = parse_enum<EstimatorSelection>(j.at("estimator").get<std::string>());
    if (j.contains("form")) c.form = parse_enum<FilterForm>(j.at("form").get<std::string>());
    if (j.contains("integrator")) c.integrator = parse_enum<Integrator>(j.at("integrator").get<std::string>());
    if (j.contains("discrete_mode")) {
      c.discrete_mode = parse_enum<DiscreteMode>(j.at("discrete_mode").get<std::string>());
    }
    if (j.contains("ppf")) {
      const auto& p = j.at("ppf");
      detail::reject_unknown(p, {"xi0", "xi_inf", "decay", "delta_upper", "delta_lower"}, "ppf");
      c.ppf.xi0 = p.value("xi0", c.ppf.xi0);
      c.ppf.xi_inf = p.value("xi_inf", c.ppf.xi_inf);
      c.ppf.decay = p.value("decay", c.ppf.decay);
      c.ppf.delta_upper = p.value("delta_upper", c.ppf.delta_upper);
      c.ppf.delta_lower = p.value("delta_lower", c.ppf.delta_lower);
    }
    if (j.contains("gains")) {
      const auto& g = j.at("gains");
      detail::reject_unknown(g, {"gamma_bias", "gamma_sigma", "k_w"}, "gains");
      c.gains.gamma_bias = g.value("gamma_bias", c.gains.gamma_bias);
      c.gains.gamma_sigma = g.value("gamma_sigma", c.gains.gamma_sigma);
      c.gains.k_w = g.value("k_w", c.gains.k_w);
    }
    if (j.contains("gyro")) {
      const auto& g = j.at("gyro");
      detail::reject_unknown(g, {"bias", "noise_std", "noise_mode"}, "gyro");
      if (g.contains("bias")) c.gyro.bias = vec_from(g.at("bias"), "gyro.bias");
      if (g.contains("noise_std")) {
        const auto& n = g.at("noise_std");
        c.gyro.noise_std = n.is_number() ? Vector3::Constant(n.get<double>()) : vec_from(n, "gyro.noise_std");
      }
      if (g.contains("noise_mode")) c.gyro.mode = parse_enum<NoiseMode>(g.at("noise_mode").get<std::string>());
    }
    if (j.contains("sensors")) {
      c.sensors.clear();
      for (const auto& s : j.at("sensors")) {
        detail::reject_unknown(s, {"ref", "bias", "noise_std", "weight"}, "sensor");
        VectorSensorModel m;
        m.ref_inertial = vec_from(s.at("ref"), "sensor.ref");
        if (s.contains("bias")) m.bias = vec_from(s.at("bias"), "sensor.bias");
        m.noise_std = s.value("noise_std", 0.0);
        m.weight = s.value("weight", 1.0);
        c.sensors.push_back(m);
      }
    }
    c.cross_weight = j.value("cross_weight", c.cross_weight);
    if (j.contains("omega")) {
      const auto& o = j.at("omega");
      detail::reject_unknown(o, {"amplitude", "frequency", "phase", "offset"}, "omega");
      if (o.contains("amplitude")) c.omega.amplitude = vec_from(o.at("amplitude"), "omega.amplitude");
      if (o.contains("frequency")) c.omega.frequency = vec_from(o.at("frequency"), "omega.frequency");
      if (o.contains("phase")) c.omega.phase = vec_from(o.at("phase"), "omega.phase");
      if (o.contains("offset")) c.omega.offset = vec_from(o.at("offset"), "omega.offset");
    }
    if (j.contains("initial")) {
      const auto& i = j.at("initial");
      detail::reject_unknown(i, {"attitude", "estimate", "bias", "sigma"}, "initial");
      if (i.contains("attitude")) c.initial_attitude = attitude_from_json(i.at("attitude"));
      if (i.contains("estimate")) c.initial_estimate = attitude_from_json(i.at("estimate"));
      if (i.contains("bias")) c.initial_bias = vec_from(i.at("bias"), "initial.bias");
      if (i.contains("sigma")) c.initial_sigma = vec_from(i.at("sigma"), "initial.sigma");
    }
    c.projection_interval = j.value("projection_interval", c.projection_interval);
    c.clamp_sigma = j.value("clamp_sigma", c.clamp_sigma);
    if (j.contains("summary_window")) {
      const auto& w = j.at("summary_window");
      if (!w.is_array() || w.size() != 2) throw Error(ErrorCode::ConfigInvalid, "summary_window: expected [start, end]");
      c.window_start = w[0].get<double>();
      c.window_end = w[1].get<double>();
    }
    c.strict = j.value("strict", c.strict);
    c.runs = j.value("runs", c.runs);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Records

struct TrajectoryRow {
  double t = 0.0;
  double dist = 0.0;  // true normalized distance |R^T R_hat|_I
  double xi = 0.0;
  double transformed_error = 0.0;
  double gain = 0.0;
  EulerAngles euler_true;
  EulerAngles euler_est;
  Vector3 bias = Vector3::Zero();
  Vector3 sigma = Vector3::Zero();
  double w_norm = 0.0;
};

struct TrajectoryRecord {
  std::vector<TrajectoryRow> rows;
};

struct SummaryStats {
  double mean = 0.0;
  double std_dev = 0.0;  // population
  double window_start = 0.0;
  double window_end = 0.0;
  std::size_t samples = 0;
  bool envelope_pass = true;
  std::optional<std::size_t> first_breach_index;
  std::optional<double> first_breach_time;
  double final_dist = 0.0;
  bool completed = true;
  std::string error;
};

/// Raised in strict mode when a run leaves the envelope or hits a filter
/// singularity; carries the step index and filter tag.
class StepError : public Error {
 public:
  StepError(ErrorCode code, const std::string& tag, long step, const std::string& what)
      : Error(code, tag + " at step " + std::to_string(step) + ": " + what), tag_(tag), step_(step) {}

  const std::string& tag() const { return tag_; }
  long step() const { return step_; }

 private:
  std::string tag_;
  long step_;
};

/// Mean and population std of dist over rows with t in [start, end], plus
/// the envelope verdict for every row after the first.
inline SummaryStats summarize(const TrajectoryRecord& record, double start, double end) {
  SummaryStats s;
  s.window_start = start;
  s.window_end = end;
  const double slack = 1e-9;
  double sum = 0.0;
  for (const auto& r : record.rows) {
    if (r.t >= start - slack && r.t <= end + slack) {
      sum += r.dist;
      ++s.samples;
    }
  }
  if (s.samples == 0) throw Error(ErrorCode::EmptyWindow, "no samples inside the summary window");
  s.mean = sum / static_cast<double>(s.samples);
  double sq = 0.0;
  for (const auto& r : record.rows) {
    if (r.t >= start - slack && r.t <= end + slack) sq += (r.dist - s.mean) * (r.dist - s.mean);
  }
  s.std_dev = std::sqrt(sq / static_cast<double>(s.samples));

  std::vector<double> dist;
  std::vector<double> xi;
  dist.reserve(record.rows.size());
  xi.reserve(record.rows.size());
  for (const auto& r : record.rows) {
    dist.push_back(r.dist);
    xi.push_back(r.xi);
  }
  const EnvelopeReport env = envelope_check(dist, xi, 1);
  s.envelope_pass = env.pass;
  if (env.first_breach) {
    s.first_breach_index = *env.first_breach;
    s.first_breach_time = record.rows[*env.first_breach].t;
  }
  s.final_dist = record.rows.back().dist;
  return s;
}

struct FilterRun {
  std::string tag;  // e.g. "semi_cont"
  EstimatorKind kind = EstimatorKind::SemiDirect;
  TrajectoryRecord record;
  SummaryStats summary;
};

struct ExperimentResult {
  std::vector<FilterRun> filters;

  const FilterRun& at(EstimatorKind kind) const {
    for (const auto& f : filters) {
      if (f.kind == kind) return f;
    }
    throw Error(ErrorCode::InvalidArgument, "estimator was not part of the experiment");
  }

  bool envelope_pass() const {
    return std::all_of(filters.begin(), filters.end(),
                       [](const FilterRun& f) { return f.summary.completed && f.summary.envelope_pass; });
  }
};

inline std::string filter_tag(EstimatorKind kind, FilterForm form) { return enum_name(kind) + "_" + enum_name(form); }

// ---------------------------------------------------------------------------
// Experiment loop

namespace detail {

struct StepInputs {
  Vector3 omega_m;
  const ObservationSet* obs = nullptr;
  std::optional<RotationMatrix> r_y;
  std::optional<UnitQuaternion> q_y;
};

/// One estimator of a given kind and form driven sample by sample.
class FilterRunner {
 public:
  FilterRunner(EstimatorKind kind, const ExperimentConfig& cfg)
      : kind_(kind), cfg_(cfg), tag_(filter_tag(kind, cfg.form)) {
    mat_.attitude = cfg.initial_estimate.resolve();
    mat_.bias = cfg.initial_bias;
    mat_.sigma = cfg.initial_sigma;
    quat_.attitude = rotation_to_quat(mat_.attitude);
    quat_.bias = cfg.initial_bias;
    quat_.sigma = cfg.initial_sigma;
  }

  const std::string& tag() const { return tag_; }
  EstimatorKind kind() const { return kind_; }

  RotationMatrix attitude() const {
    return cfg_.form == FilterForm::Quaternion ? quat_to_rotation(quat_.attitude) : mat_.attitude;
  }
  Vector3 bias() const { return cfg_.form == FilterForm::Quaternion ? quat_.bias : mat_.bias; }
  Vector3 sigma() const { return cfg_.form == FilterForm::Quaternion ? quat_.sigma : mat_.sigma; }

  void project() {
    if (cfg_.form != FilterForm::Quaternion) mat_.attitude = project_to_so3(mat_.attitude.matrix());
  }

  /// Evaluates the laws at sample k; advances the state when `advance`.
  Derivatives evaluate(const StepInputs& in, long k, bool advance) {
    const double dt = cfg_.dt;
    const double t = static_cast<double>(k) * dt;
    const StepOptions opts{cfg_.clamp_sigma};
    switch (cfg_.form) {
      case FilterForm::Discrete: {
        auto step = kind_ == EstimatorKind::SemiDirect
                        ? step_discrete_semi_direct(mat_, in.omega_m, *in.r_y, k, dt, cfg_.ppf, cfg_.gains,
                                                    cfg_.discrete_mode, opts)
                        : step_discrete_direct(mat_, in.omega_m, *in.obs, k, dt, cfg_.ppf, cfg_.gains,
                                               cfg_.discrete_mode, opts);
        if (advance) mat_ = step.state;
        return step.derivatives;
      }
      case FilterForm::Continuous: {
        auto eval = [&](const FilterState& s, double time) {
          const PpfSample env = performance_bound(time, cfg_.ppf);
          return kind_ == EstimatorKind::SemiDirect
                     ? semi_direct_derivatives(s, in.omega_m, *in.r_y, env, cfg_.ppf, cfg_.gains)
                     : direct_derivatives(s, in.omega_m, *in.obs, env, cfg_.ppf, cfg_.gains);
        };
        return integrate(mat_, eval, t, dt, advance, opts);
      }
      case FilterForm::Quaternion: {
        auto eval = [&](const QuatFilterState& s, double time) -> Derivatives {
          const PpfSample env = performance_bound(time, cfg_.ppf);
          return kind_ == EstimatorKind::SemiDirect
                     ? quat_semi_direct_derivatives(s, in.omega_m, *in.q_y, env, cfg_.ppf, cfg_.gains)
                     : quat_direct_derivatives(s, in.omega_m, *in.obs, env, cfg_.ppf, cfg_.gains);
        };
        return integrate(quat_, eval, t, dt, advance, opts);
      }
    }
    return {};
  }

 private:
  template <typename State, typename Eval>
  Derivatives integrate(State& state, Eval& eval, double t, double dt, bool advance, const StepOptions& opts) {
    if (!advance) return eval(state, t);
    if (cfg_.integrator == Integrator::Rk4) {
      Derivatives first;
      state = step_rk4(state, t, dt, eval, opts, &first);
      return first;
    }
    const Derivatives d = eval(state, t);
    state = step_continuous(state, d, dt, opts);
    return d;
  }

  EstimatorKind kind_;
  const ExperimentConfig& cfg_;
  std::string tag_;
  FilterState mat_;
  QuatFilterState quat_;
};

inline ObservationSet build_observations(const std::vector<VectorObservation>& raw, double cross_weight) {
  if (raw.size() == 2) return augment_with_cross(raw, cross_weight);
  return ObservationSet(raw);
}

}  // namespace detail

/**
 * Simulates truth and sensors at the configured step and drives every
 * selected estimator from the same measurement stream. In strict mode an
 * envelope breach (t > 0) or a filter singularity throws StepError; in
 * explore mode breaches are recorded and a failing filter stops early.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed);
  const long n = cfg.steps();

  std::vector<detail::FilterRunner> filters;
  for (EstimatorKind kind : cfg.kinds()) filters.emplace_back(kind, cfg);
  std::vector<FilterRun> out(filters.size());
  std::vector<bool> alive(filters.size(), true);
  for (std::size_t i = 0; i < filters.size(); ++i) {
    out[i].tag = filters[i].tag();
    out[i].kind = filters[i].kind();
    out[i].record.rows.reserve(static_cast<std::size_t>(n) + 1);
  }

  bool need_svd = false;
  bool need_quest = false;
  for (const auto& f : filters) {
    if (f.kind() == EstimatorKind::SemiDirect) {
      (cfg.form == FilterForm::Quaternion ? need_quest : need_svd) = true;
    }
  }

  TruthState truth;
  truth.attitude = cfg.initial_attitude.resolve();
  truth.omega = cfg.omega(0.0);

  std::vector<VectorObservation> raw(cfg.sensors.size());
  for (long k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    detail::StepInputs in;
    in.omega_m = gyro_measure(truth.omega, cfg.gyro, cfg.dt, rng);
    for (std::size_t s = 0; s < cfg.sensors.size(); ++s) raw[s] = vector_measure(truth.attitude, cfg.sensors[s], rng);
    const ObservationSet obs = detail::build_observations(raw, cfg.cross_weight);
    in.obs = &obs;
    if (need_svd) in.r_y = solve_wahba_svd(obs);
    if (need_quest) in.q_y = solve_wahba_davenport(obs);
    const PpfSample env = performance_bound(t, cfg.ppf);
    const EulerAngles euler_true = rotation_to_euler(truth.attitude);

    for (std::size_t i = 0; i < filters.size(); ++i) {
      if (!alive[i]) continue;
      auto& f = filters[i];
      TrajectoryRow row;
      row.t = t;
      row.xi = env.xi;
      row.euler_true = euler_true;
      const RotationMatrix est = f.attitude();
      row.dist = normalized_distance(truth.attitude.transpose() * est);
      row.euler_est = rotation_to_euler(est);
      row.bias = f.bias();
      row.sigma = f.sigma();
      try {
        const Derivatives d = f.evaluate(in, k, k < n);
        row.transformed_error = d.terms.transformed_error;
        row.gain = d.terms.gain;
        row.w_norm = d.terms.w.norm();
      } catch (const Error& e) {
        if (cfg.strict) throw StepError(e.code(), f.tag(), k, e.what());
        out[i].record.rows.push_back(row);
        out[i].summary.completed = false;
        out[i].summary.error = std::string(e.what()) + " (step " + std::to_string(k) + ")";
        alive[i] = false;
        continue;
      }
      if (cfg.strict && k > 0 && !(row.dist < row.xi)) {
        throw StepError(ErrorCode::EnvelopeViolated, f.tag(), k, "attitude error left the envelope");
      }
      out[i].record.rows.push_back(row);
    }

    if (k < n) {
      truth = truth_step(truth, cfg.omega, cfg.dt);
      if (cfg.projection_interval > 0 && (k + 1) % cfg.projection_interval == 0) {
        truth.attitude = project_to_so3(truth.attitude.matrix());
        for (auto& f : filters) f.project();
      }
    }
  }

  for (auto& f : out) {
    const bool completed = f.summary.completed;
    const std::string error = f.summary.error;
    try {
      f.summary = summarize(f.record, cfg.window_start, cfg.summary_window_end());
    } catch (const Error&) {
      // A filter that stopped before the window opens has no statistics.
      f.summary = SummaryStats{};
      f.summary.envelope_pass = false;
      f.summary.final_dist = f.record.rows.empty() ? 1.0 : f.record.rows.back().dist;
    }
    f.summary.completed = completed;
    f.summary.error = error;
    if (!completed) f.summary.envelope_pass = false;
  }
  return {std::move(out)};
}

struct EnsembleStats {
  std::string tag;
  std::vector<SummaryStats> runs;  // indexed by run
  double mean_of_means = 0.0;
  double std_of_means = 0.0;  // population
  double pass_rate = 0.0;
};

struct MonteCarloResult {
  std::vector<std::uint64_t> seeds;
  std::vector<EnsembleStats> filters;

  const EnsembleStats& at(const std::string& tag) const {
    for (const auto& f : filters) {
      if (f.tag == tag) return f;
    }
    throw Error(ErrorCode::InvalidArgument, "no ensemble for " + tag);
  }
};

/**
 * Independent runs with seeds derived from cfg.seed. A run that throws is
 * recorded as failed (with its run index in the error text) instead of
 * aborting the ensemble. Runs are spread over cfg.threads workers; results
 * are stored by run index so the output does not depend on scheduling.
 */
inline MonteCarloResult run_monte_carlo(const ExperimentConfig& cfg, int n_runs) {
  cfg.validate();
  if (n_runs < 1) throw Error(ErrorCode::ConfigInvalid, "need at least one run");
  const auto kinds = cfg.kinds();
  MonteCarloResult result;
  result.seeds.resize(static_cast<std::size_t>(n_runs));
  std::vector<std::vector<SummaryStats>> per_run(static_cast<std::size_t>(n_runs));

  auto run_one = [&](int r) {
    ExperimentConfig c = cfg;
    c.seed = RngStream::derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    result.seeds[static_cast<std::size_t>(r)] = c.seed;
    auto& slot = per_run[static_cast<std::size_t>(r)];
    try {
      const ExperimentResult res = run_experiment(c);
      for (const auto& f : res.filters) slot.push_back(f.summary);
    } catch (const Error& e) {
      slot.assign(kinds.size(), SummaryStats{});
      for (auto& s : slot) {
        s.completed = false;
        s.envelope_pass = false;
        s.error = "run " + std::to_string(r) + ": " + e.what();
      }
    }
  };

  const int workers = std::min(cfg.threads, n_runs);
  if (workers <= 1) {
    for (int r = 0; r < n_runs; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int r = next++; r < n_runs; r = next++) run_one(r);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (std::size_t i = 0; i < kinds.size(); ++i) {
    EnsembleStats e;
    e.tag = filter_tag(kinds[i], cfg.form);
    double sum = 0.0;
    std::size_t ok = 0;
    std::size_t passed = 0;
    for (const auto& slot : per_run) {
      e.runs.push_back(slot[i]);
      if (slot[i].completed) {
        sum += slot[i].mean;
        ++ok;
      }
      if (slot[i].completed && slot[i].envelope_pass) ++passed;
    }
    e.mean_of_means = ok > 0 ? sum / static_cast<double>(ok) : 0.0;
    double sq = 0.0;
    for (const auto& s : e.runs) {
      if (s.completed) sq += (s.mean - e.mean_of_means) * (s.mean - e.mean_of_means);
    }
    e.std_of_means = ok > 0 ? std::sqrt(sq / static_cast<double>(ok)) : 0.0;
    e.pass_rate = static_cast<double>(passed) / static_cast<double>(n_runs);
    result.filters.push_back(std::move(e));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Output files

inline constexpr const char* kCsvHeader =
    "t,dist,xi,E,mu,phi_true,theta_true,psi_true,phi_est,theta_est,psi_est,"
    "bhat_x,bhat_y,bhat_z,sigmahat_x,sigmahat_y,sigmahat_z,w_norm";

namespace detail {

/// Shortest text that reads back to the same double.
inline void append_number(std::string& line, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  line.append(buf, res.ptr);
}

}  // namespace detail

inline void write_csv(const TrajectoryRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << kCsvHeader << '\n';
  std::string line;
  for (const auto& r : record.rows) {
    line.clear();
    const double values[] = {r.t,
                             r.dist,
                             r.xi,
                             r.transformed_error,
                             r.gain,
                             r.euler_true.roll,
                             r.euler_true.pitch,
                             r.euler_true.yaw,
                             r.euler_est.roll,
                             r.euler_est.pitch,
                             r.euler_est.yaw,
                             r.bias.x(),
                             r.bias.y(),
                             r.bias.z(),
                             r.sigma.x(),
                             r.sigma.y(),
                             r.sigma.z(),
                             r.w_norm};
    for (std::size_t i = 0; i < std::size(values); ++i) {
      if (i > 0) line.push_back(',');
      detail::append_number(line, values[i]);
    }
    line.push_back('\n');
    out << line;
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

inline TrajectoryRecord read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw Error(ErrorCode::IoError, path.string() + ": unexpected header");
  }
  TrajectoryRecord record;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double v[18];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int i = 0; i < 18; ++i) {
      const auto res = std::from_chars(p, end, v[i]);
      if (res.ec != std::errc{}) throw Error(ErrorCode::IoError, path.string() + ": malformed row");
      p = res.ptr;
      if (i < 17) {
        if (p == end || *p != ',') throw Error(ErrorCode::IoError, path.string() + ": malformed row");
        ++p;
      }
    }
    TrajectoryRow r;
    r.t = v[0];
    r.dist = v[1];
    r.xi = v[2];
    r.transformed_error = v[3];
    r.gain = v[4];
    r.euler_true = {v[5], v[6], v[7], false};
    r.euler_est = {v[8], v[9], v[10], false};
    r.bias = {v[11], v[12], v[13]};
    r.sigma = {v[14], v[15], v[16]};
    r.w_norm = v[17];
    record.rows.push_back(r);
  }
  return record;
}

inline nlohmann::json summary_to_json(const SummaryStats& s) {
  nlohmann::json j = {{"mean", s.mean},
                      {"std", s.std_dev},
                      {"window_start", s.window_start},
                      {"window_end", s.window_end},
                      {"samples", s.samples},
                      {"envelope_pass", s.envelope_pass},
                      {"final_dist", s.final_dist},
                      {"completed", s.completed}};
  j["first_breach_index"] = s.first_breach_index ? nlohmann::json(*s.first_breach_index) : nlohmann::json(nullptr);
  j["first_breach_time"] = s.first_breach_time ? nlohmann::json(*s.first_breach_time) : nlohmann::json(nullptr);
  j["error"] = s.error;
  return j;
}

inline nlohmann::json ensemble_to_json(const EnsembleStats& e) {
  nlohmann::json means = nlohmann::json::array();
  nlohmann::json passes = nlohmann::json::array();
  for (const auto& r : e.runs) {
    means.push_back(r.completed ? nlohmann::json(r.mean) : nlohmann::json(nullptr));
    passes.push_back(r.completed && r.envelope_pass);
  }
  return {{"runs", e.runs.size()},
          {"mean_of_means", e.mean_of_means},
          {"std_of_means", e.std_of_means},
          {"pass_rate", e.pass_rate},
          {"run_means", means},
          {"run_envelope_pass", passes}};
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace ppf_attitude
