#pragma once

// Surrogate Earth-imaging spacecraft: four flight modes, a hidden continuous
// state advanced in 3-minute decision steps, and labels over p0..p4.
//
// This is a desk-scale stand-in for a full astrodynamics simulator. The laws
// are simple first-order updates with truncated-Gaussian noise:
//   charging   charge += c_charge*sun - c_idle; wheels creep up; the body
//              slews towards the sun, so pointing error grows.
//   dumping    wheel -= c_dump; charge -= c_dump_use; thrusters disturb the
//              attitude rate and error.
//   imaging    pointing error and rate decay towards the target; wheels
//              accumulate momentum; charge -= c_img. Switching between the
//              two imaging modes re-slews by a fixed offset.
// Wheel speeds above 0.8 leak into the attitude rate.

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "abstraction.hpp"
#include "ltl.hpp"
#include "rng.hpp"

namespace ltlshield {

enum class Mode : int { Charging = 0, MomentumDumping = 1, ImagingA = 2, ImagingB = 3 };

inline constexpr int kNumModes = 4;

inline const std::vector<std::string>& mode_names()
{
  static const std::vector<std::string> names{"charging", "momentum_dumping", "imaging_a", "imaging_b"};
  return names;
}

inline bool is_imaging(Mode m) { return m == Mode::ImagingA || m == Mode::ImagingB; }

/// Labels of the spacecraft: p0 imaging success (either mode), p1 low charge,
/// p2 high wheel speed, p3 / p4 imaging success in mode A / B.
inline const PropositionTable& spacecraft_table()
{
  static const PropositionTable table({"p0", "p1", "p2", "p3", "p4"});
  return table;
}

struct SpacecraftState {
  double attitude_error = 0.0;  // rad
  double attitude_rate = 0.0;   // rad/s
  double wheel_speed = 0.0;     // fraction of maximum
  double charge = 1.0;          // fraction of capacity
  bool sun = true;
  bool target_access = false;
  Mode mode = Mode::Charging;
  double phase = 0.0;          // minutes into the orbit
  double window_offset = 0.0;  // shift of the access windows, fraction of an orbit
};

struct AccessWindow {
  double start;  // orbit fraction
  double end;
};

struct EnvParams {
  double orbit_period = 271.0;  // minutes
  double step_minutes = 3.0;
  double sunlit_fraction = 0.62;
  std::vector<AccessWindow> windows{{0.08, 0.16}, {0.55, 0.63}};
  bool randomize_windows = false;

  double charge_rate = 0.035;
  double idle_drain = 0.003;
  double imaging_drain = 0.012;
  double dump_drain = 0.01;
  double charge_noise = 0.001;

  double imaging_wheel = 0.04;
  double charging_wheel = 0.001;
  double dump_amount = 0.25;
  double wheel_noise = 0.004;

  double pointing_decay = 0.15;
  double pointing_noise = 0.0005;
  double mode_switch_slew = 0.08;
  double sun_pointing_error = 0.4;
  double dump_pointing_kick = 0.02;

  double rate_decay = 0.3;
  double rate_noise = 0.0003;
  double charging_rate = 0.0015;
  double dump_rate_kick = 0.004;
  double saturation_coupling = 0.02;

  // Episode start distribution.
  std::array<double, 2> init_charge{0.45, 0.9};
  std::array<double, 2> init_wheel{0.05, 0.55};
  std::array<double, 2> init_rate{0.0, 0.002};
  std::array<double, 2> init_attitude_error{0.0, 0.5};

  void check() const
  {
    if (!(orbit_period > 0.0 && step_minutes > 0.0)) throw std::invalid_argument("orbit period and step must be positive");
    for (double s : {charge_noise, wheel_noise, pointing_noise, rate_noise})
      if (s < 0.0) throw std::invalid_argument("noise scales must be nonnegative");
  }
};

inline bool in_access_window(double phase_minutes, double offset, const EnvParams& params)
{
  const double f = std::fmod(phase_minutes / params.orbit_period, 1.0);
  for (const auto& w : params.windows) {
    double rel = std::fmod(f - offset + 1.0, 1.0);
    if (rel >= w.start && rel < w.end) return true;
  }
  return false;
}

inline void update_indicators(SpacecraftState& x, const EnvParams& params)
{
  x.sun = std::fmod(x.phase / params.orbit_period, 1.0) < params.sunlit_fraction;
  x.target_access = in_access_window(x.phase, x.window_offset, params);
}

/// Leaving the safe operating domain.
inline bool is_failure(const SpacecraftState& x)
{
  return x.charge <= 0.0 || x.wheel_speed >= 1.0 || x.attitude_rate > 0.01;
}

/// One decision step in mode `a`.
inline SpacecraftState env_step(const SpacecraftState& x, Mode a, const EnvParams& params, Rng& rng)
{
  SpacecraftState y = x;
  const double sun = x.sun ? 1.0 : 0.0;
  switch (a) {
    case Mode::Charging:
      y.charge += params.charge_rate * sun - params.idle_drain + truncated_normal(rng, params.charge_noise);
      y.wheel_speed += params.charging_wheel + truncated_normal(rng, params.wheel_noise * 0.5);
      y.attitude_error = 0.5 * x.attitude_error + 0.5 * params.sun_pointing_error +
                         std::abs(truncated_normal(rng, params.pointing_noise * 10.0));
      y.attitude_rate = 0.5 * x.attitude_rate + params.charging_rate * (0.5 + uniform01(rng));
      break;
    case Mode::MomentumDumping:
      y.wheel_speed = x.wheel_speed - params.dump_amount + truncated_normal(rng, params.wheel_noise);
      y.charge -= params.dump_drain + std::abs(truncated_normal(rng, params.charge_noise));
      y.attitude_error = x.attitude_error + params.dump_pointing_kick + std::abs(truncated_normal(rng, params.pointing_noise));
      y.attitude_rate = 0.5 * x.attitude_rate + params.dump_rate_kick * (0.5 + uniform01(rng));
      break;
    case Mode::ImagingA:
    case Mode::ImagingB: {
      double err = x.attitude_error;
      if (is_imaging(x.mode) && x.mode != a) err += params.mode_switch_slew;
      y.attitude_error = params.pointing_decay * err + std::abs(truncated_normal(rng, params.pointing_noise));
      y.attitude_rate = params.rate_decay * x.attitude_rate + std::abs(truncated_normal(rng, params.rate_noise));
      y.wheel_speed += params.imaging_wheel + truncated_normal(rng, params.wheel_noise);
      y.charge -= params.imaging_drain + std::abs(truncated_normal(rng, params.charge_noise));
      break;
    }
  }
  if (y.wheel_speed > 0.8) y.attitude_rate += params.saturation_coupling * (y.wheel_speed - 0.8);
  y.wheel_speed = std::max(0.0, y.wheel_speed);
  y.charge = std::min(1.0, y.charge);
  y.attitude_error = std::max(0.0, y.attitude_error);
  y.attitude_rate = std::max(0.0, y.attitude_rate);
  y.mode = a;
  y.phase = std::fmod(x.phase + params.step_minutes, params.orbit_period);
  update_indicators(y, params);
  return y;
}

inline constexpr std::size_t kObservationSize = 10;
using Observation = std::array<double, kObservationSize>;

struct Observed {
  Observation observation;
  Assignment labels;
};

inline bool pointing_ok(const SpacecraftState& x)
{
  return x.attitude_error < 0.008 && x.attitude_rate < 0.002 && x.target_access;
}

/// Observation (attitude error, rate, wheel, charge, sun, access, mode
/// one-hot) and labels over p0..p4.
inline Observed observe_and_label(const SpacecraftState& x)
{
  Observed out{};
  out.observation = {x.attitude_error, x.attitude_rate, x.wheel_speed, x.charge, x.sun ? 1.0 : 0.0,
                     x.target_access ? 1.0 : 0.0, 0.0, 0.0, 0.0, 0.0};
  out.observation[6 + static_cast<std::size_t>(x.mode)] = 1.0;
  Assignment l;
  const bool imaged = pointing_ok(x) && is_imaging(x.mode);
  if (imaged) l = l.with(0);
  if (x.charge < 0.2) l = l.with(1);
  if (x.wheel_speed > 0.8) l = l.with(2);
  if (imaged && x.mode == Mode::ImagingA) l = l.with(3);
  if (imaged && x.mode == Mode::ImagingB) l = l.with(4);
  out.labels = l;
  return out;
}

/// Restriction of a p0..p4 label to the safety table (p1, p2).
inline Assignment safety_label(Assignment full)
{
  Assignment a;
  if (full.has(1)) a = a.with(0);
  if (full.has(2)) a = a.with(1);
  return a;
}

namespace detail {

inline double uniform_in(Rng& rng, double lo, double hi, bool open_below)
{
  for (;;) {
    const double u = uniform01(rng);
    const double x = open_below ? hi - u * (hi - lo) : lo + u * (hi - lo);
    if (x != (open_below ? lo : hi)) return x;
  }
}

}  // namespace detail

/// Hidden state with (rate, wheel, charge) uniform in `cell` and everything
/// else uniform over its full range.
inline SpacecraftState sample_in_cell(const Cell& cell, const EnvParams& params, Rng& rng)
{
  SpacecraftState x;
  x.attitude_rate = detail::uniform_in(rng, cell.lower[0], cell.upper[0], false);
  x.wheel_speed = detail::uniform_in(rng, cell.lower[1], cell.upper[1], true);
  x.charge = detail::uniform_in(rng, cell.lower[2], cell.upper[2], false);
  if (x.charge <= 0.0) x.charge = std::nextafter(0.0, 1.0);
  x.attitude_error = uniform(rng, 0.0, params.init_attitude_error[1]);
  x.phase = uniform(rng, 0.0, params.orbit_period);
  x.window_offset = uniform01(rng);
  x.mode = static_cast<Mode>(uniform_int(rng, 0, kNumModes - 1));
  update_indicators(x, params);
  return x;
}

inline SpacecraftState initial_state(const EnvParams& params, Rng& rng)
{
  SpacecraftState x;
  x.charge = uniform(rng, params.init_charge[0], params.init_charge[1]);
  x.wheel_speed = uniform(rng, params.init_wheel[0], params.init_wheel[1]);
  x.attitude_rate = uniform(rng, params.init_rate[0], params.init_rate[1]);
  x.attitude_error = uniform(rng, params.init_attitude_error[0], params.init_attitude_error[1]);
  x.mode = Mode::Charging;
  x.phase = 0.0;
  x.window_offset = params.randomize_windows ? uniform01(rng) : 0.0;
  update_indicators(x, params);
  return x;
}

/// Adapter for `estimate_transitions`.
class SpacecraftSimulator {
 public:
  using State = SpacecraftState;

  explicit SpacecraftSimulator(EnvParams params) : params_(std::move(params)) { params_.check(); }

  State sample_in_cell(const Cell& cell, Rng& rng) const { return ltlshield::sample_in_cell(cell, params_, rng); }
  State step(const State& x, int a, Rng& rng) const { return env_step(x, static_cast<Mode>(a), params_, rng); }
  std::optional<std::vector<double>> abstract(const State& x) const
  {
    if (is_failure(x)) return std::nullopt;
    return std::vector<double>{x.attitude_rate, x.wheel_speed, x.charge};
  }
  std::vector<std::string> action_names() const { return mode_names(); }
  const EnvParams& params() const noexcept { return params_; }

 private:
  EnvParams params_;
};

inline nlohmann::json to_json(const EnvParams& p)
{
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : p.windows) windows.push_back({w.start, w.end});
  return {{"orbit_period", p.orbit_period},
          {"step_minutes", p.step_minutes},
          {"sunlit_fraction", p.sunlit_fraction},
          {"windows", windows},
          {"randomize_windows", p.randomize_windows},
          {"charge_rate", p.charge_rate},
          {"idle_drain", p.idle_drain},
          {"imaging_drain", p.imaging_drain},
          {"dump_drain", p.dump_drain},
          {"charge_noise", p.charge_noise},
          {"imaging_wheel", p.imaging_wheel},
          {"charging_wheel", p.charging_wheel},
          {"dump_amount", p.dump_amount},
          {"wheel_noise", p.wheel_noise},
          {"pointing_decay", p.pointing_decay},
          {"pointing_noise", p.pointing_noise},
          {"mode_switch_slew", p.mode_switch_slew},
          {"sun_pointing_error", p.sun_pointing_error},
          {"dump_pointing_kick", p.dump_pointing_kick},
          {"rate_decay", p.rate_decay},
          {"rate_noise", p.rate_noise},
          {"charging_rate", p.charging_rate},
          {"dump_rate_kick", p.dump_rate_kick},
          {"saturation_coupling", p.saturation_coupling},
          {"init_charge", p.init_charge},
          {"init_wheel", p.init_wheel},
          {"init_rate", p.init_rate},
          {"init_attitude_error", p.init_attitude_error}};
}

/// Missing keys keep the values already in `base`.
inline EnvParams env_params_from_json(const nlohmann::json& j, EnvParams base = {})
{
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("orbit_period", base.orbit_period);
  get("step_minutes", base.step_minutes);
  get("sunlit_fraction", base.sunlit_fraction);
  if (j.contains("windows")) {
    base.windows.clear();
    for (const auto& w : j.at("windows")) base.windows.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
  }
  get("randomize_windows", base.randomize_windows);
  get("charge_rate", base.charge_rate);
  get("idle_drain", base.idle_drain);
  get("imaging_drain", base.imaging_drain);
  get("dump_drain", base.dump_drain);
  get("charge_noise", base.charge_noise);
  get("imaging_wheel", base.imaging_wheel);
  get("charging_wheel", base.charging_wheel);
  get("dump_amount", base.dump_amount);
  get("wheel_noise", base.wheel_noise);
  get("pointing_decay", base.pointing_decay);
  get("pointing_noise", base.pointing_noise);
  get("mode_switch_slew", base.mode_switch_slew);
  get("sun_pointing_error", base.sun_pointing_error);
  get("dump_pointing_kick", base.dump_pointing_kick);
  get("rate_decay", base.rate_decay);
  get("rate_noise", base.rate_noise);
  get("charging_rate", base.charging_rate);
  get("dump_rate_kick", base.dump_rate_kick);
  get("saturation_coupling", base.saturation_coupling);
  get("init_charge", base.init_charge);
  get("init_wheel", base.init_wheel);
  get("init_rate", base.init_rate);
  get("init_attitude_error", base.init_attitude_error);
  base.check();
  return base;
}

}  // namespace ltlshield
