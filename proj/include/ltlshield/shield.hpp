#pragma once

// Probabilistic shields over the product of a safety MDP with the automaton of
// the negated safety formula. Final product states are the unsafe ones.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdp.hpp"

namespace ltlshield {

enum class ShieldKind { OneStep, TwoStep, QOptimal };

inline const char* to_string(ShieldKind k)
{
  switch (k) {
    case ShieldKind::OneStep: return "one";
    case ShieldKind::TwoStep: return "two";
    default: return "q";
  }
}

inline ShieldKind shield_kind_from_string(const std::string& s)
{
  if (s == "one" || s == "one_step") return ShieldKind::OneStep;
  if (s == "two" || s == "two_step") return ShieldKind::TwoStep;
  if (s == "q" || s == "q_optimal") return ShieldKind::QOptimal;
  throw std::invalid_argument("unknown shield kind '" + s + "'");
}

class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ShieldConfig {
  double threshold = 0.05;
  ShieldKind kind = ShieldKind::OneStep;
  /// Number of steps (counting the shielded action) for QOptimal; nullopt means unbounded.
  std::optional<int> horizon;
  double vi_tolerance = 1e-9;
  int vi_max_iters = 100'000;

  void check() const
  {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("shield threshold must lie in (0, 1)");
    if (horizon && *horizon < 1) throw std::invalid_argument("shield horizon must be at least 1");
  }
};

struct Shield {
  ShieldKind kind = ShieldKind::OneStep;
  double threshold = 0.05;
  std::optional<int> horizon;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<std::vector<int>> allowed;
  std::vector<int> fallback;
  /// S_f for OneStep and QOptimal, the fixed point U for TwoStep.
  std::vector<bool> unsafe;
  /// Per (s, a) score that `allowed` thresholds: unsafe mass, or the Q-value.
  std::vector<double> risk;
  /// Minimal probability of reaching S_f within horizon-1 steps (QOptimal only).
  std::vector<double> values;
  int iterations = 0;

  double risk_of(int s, int a) const { return risk.at(static_cast<std::size_t>(s) * num_actions + static_cast<std::size_t>(a)); }

  bool allows(int s, int a) const
  {
    const auto& set = allowed.at(static_cast<std::size_t>(s));
    return std::find(set.begin(), set.end(), a) != set.end();
  }
};

namespace detail {

inline double mass_into(const ProductMdp& pm, int s, int a, const std::vector<bool>& target)
{
  double mass = 0.0;
  for (const auto& t : pm.transitions(s, a))
    if (target[static_cast<std::size_t>(t.target)]) mass += t.probability;
  return mass;
}

inline double expected_value(const ProductMdp& pm, int s, int a, const std::vector<double>& v)
{
  double e = 0.0;
  for (const auto& t : pm.transitions(s, a)) e += t.probability * v[static_cast<std::size_t>(t.target)];
  return e;
}

inline int argmin_action(std::size_t num_actions, const auto& score)
{
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < num_actions; ++a) {
    const double v = score(static_cast<int>(a));
    if (v < best_score) {
      best_score = v;
      best = static_cast<int>(a);
    }
  }
  return best;
}

// States already in S_f cannot leave it (acceptance is absorbing), so their
// fallback ranks actions as if the violation monitor had restarted in q.
inline int restart_state(const ProductMdp& pm, int s)
{
  return pm.state(pm.mdp_state(s), pm.dfa().initial());
}

inline Shield empty_shield(const ProductMdp& pm, const ShieldConfig& cfg)
{
  cfg.check();
  Shield sh;
  sh.kind = cfg.kind;
  sh.threshold = cfg.threshold;
  sh.horizon = cfg.horizon;
  sh.num_states = pm.num_states();
  sh.num_actions = pm.num_actions();
  sh.allowed.assign(sh.num_states, {});
  sh.fallback.assign(sh.num_states, 0);
  sh.risk.assign(sh.num_states * sh.num_actions, 0.0);
  return sh;
}

}  // namespace detail

/// Allowed: actions whose one-step mass into S_f is strictly below p.
inline Shield one_step(const ProductMdp& pm, ShieldConfig cfg)
{
  cfg.kind = ShieldKind::OneStep;
  Shield sh = detail::empty_shield(pm, cfg);
  sh.unsafe = pm.final_states();
  const std::size_t k = pm.num_actions();
  for (std::size_t s = 0; s < pm.num_states(); ++s)
    for (std::size_t a = 0; a < k; ++a) {
      const double mass = detail::mass_into(pm, static_cast<int>(s), static_cast<int>(a), sh.unsafe);
      sh.risk[s * k + a] = mass;
      if (mass < cfg.threshold) sh.allowed[s].push_back(static_cast<int>(a));
    }
  for (std::size_t s = 0; s < pm.num_states(); ++s) {
    const int from = sh.unsafe[s] ? detail::restart_state(pm, static_cast<int>(s)) : static_cast<int>(s);
    sh.fallback[s] = detail::argmin_action(k, [&](int a) { return detail::mass_into(pm, from, a, sh.unsafe); });
  }
  sh.iterations = 1;
  return sh;
}

/// Grow U from S_f with every state that has no action keeping the mass into
/// U below p, until nothing changes.
inline Shield two_step(const ProductMdp& pm, ShieldConfig cfg)
{
  cfg.kind = ShieldKind::TwoStep;
  Shield sh = detail::empty_shield(pm, cfg);
  const std::size_t n = pm.num_states();
  const std::size_t k = pm.num_actions();
  std::vector<bool> unsafe = pm.final_states();
  for (;;) {
    ++sh.iterations;
    bool grew = false;
    std::vector<bool> next = unsafe;
    for (std::size_t s = 0; s < n; ++s) {
      sh.allowed[s].clear();
      for (std::size_t a = 0; a < k; ++a) {
        const double mass = detail::mass_into(pm, static_cast<int>(s), static_cast<int>(a), unsafe);
        sh.risk[s * k + a] = mass;
        if (mass < cfg.threshold) sh.allowed[s].push_back(static_cast<int>(a));
      }
      if (sh.allowed[s].empty() && !next[s]) {
        next[s] = true;
        grew = true;
      }
    }
    unsafe = std::move(next);
    if (!grew) break;
  }
  sh.unsafe = unsafe;
  for (std::size_t s = 0; s < n; ++s) {
    const int from = pm.is_final(static_cast<int>(s)) ? detail::restart_state(pm, static_cast<int>(s))
                                                       : static_cast<int>(s);
    sh.fallback[s] = detail::argmin_action(k, [&](int a) { return detail::mass_into(pm, from, a, unsafe); });
  }
  return sh;
}

/// Minimal probability of reaching S_f within `steps` steps, per state.
inline std::vector<double> min_reach_values(const ProductMdp& pm, std::optional<int> steps, double tolerance,
                                            int max_iters, int* iterations = nullptr)
{
  const std::size_t n = pm.num_states();
  const std::size_t k = pm.num_actions();
  std::vector<double> v(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) v[s] = pm.is_final(static_cast<int>(s)) ? 1.0 : 0.0;
  int it = 0;
  for (;;) {
    if (steps && it >= *steps) break;
    if (!steps && it >= max_iters) throw NonConvergence("value iteration exceeded " + std::to_string(max_iters) + " iterations");
    std::vector<double> next(n);
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (pm.is_final(static_cast<int>(s))) {
        next[s] = 1.0;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < k; ++a)
        best = std::min(best, detail::expected_value(pm, static_cast<int>(s), static_cast<int>(a), v));
      next[s] = best;
      delta = std::max(delta, std::abs(best - v[s]));
    }
    v = std::move(next);
    ++it;
    if (!steps && delta < tolerance) break;
  }
  if (iterations) *iterations = it;
  return v;
}

/// Allowed: actions whose probability of reaching S_f within the horizon,
/// continuing optimally afterwards, is strictly below p.
inline Shield q_optimal(const ProductMdp& pm, ShieldConfig cfg)
{
  cfg.kind = ShieldKind::QOptimal;
  Shield sh = detail::empty_shield(pm, cfg);
  const std::size_t n = pm.num_states();
  const std::size_t k = pm.num_actions();
  std::optional<int> backups;
  if (cfg.horizon) backups = *cfg.horizon - 1;
  sh.values = min_reach_values(pm, backups, cfg.vi_tolerance, cfg.vi_max_iters, &sh.iterations);
  sh.unsafe = pm.final_states();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a = 0; a < k; ++a) {
      const double q = detail::expected_value(pm, static_cast<int>(s), static_cast<int>(a), sh.values);
      sh.risk[s * k + a] = q;
      if (q < cfg.threshold) sh.allowed[s].push_back(static_cast<int>(a));
    }
  for (std::size_t s = 0; s < n; ++s) {
    const int from = sh.unsafe[s] ? detail::restart_state(pm, static_cast<int>(s)) : static_cast<int>(s);
    sh.fallback[s] = detail::argmin_action(k, [&](int a) { return detail::expected_value(pm, from, a, sh.values); });
  }
  return sh;
}

inline Shield synthesize(const ProductMdp& pm, const ShieldConfig& cfg)
{
  switch (cfg.kind) {
    case ShieldKind::OneStep: return one_step(pm, cfg);
    case ShieldKind::TwoStep: return two_step(pm, cfg);
    default: return q_optimal(pm, cfg);
  }
}

struct FilterResult {
  int action;
  bool intervened;
};

/// Post-posed filter: keep an allowed proposal, otherwise substitute the
/// allowed action with the lowest risk, or the fallback when none is allowed.
inline FilterResult filter(const Shield& sh, int s, int proposed)
{
  const auto& set = sh.allowed.at(static_cast<std::size_t>(s));
  if (std::find(set.begin(), set.end(), proposed) != set.end()) return {proposed, false};
  if (set.empty()) return {sh.fallback.at(static_cast<std::size_t>(s)), true};
  int best = set.front();
  for (int a : set)
    if (sh.risk_of(s, a) < sh.risk_of(s, best)) best = a;
  return {best, true};
}

inline nlohmann::json to_json(const Shield& sh)
{
  nlohmann::json j;
  j["kind"] = to_string(sh.kind);
  j["p"] = sh.threshold;
  if (sh.horizon) j["horizon"] = *sh.horizon;
  j["num_actions"] = sh.num_actions;
  j["allowed"] = sh.allowed;
  j["fallback"] = sh.fallback;
  std::vector<int> unsafe;
  for (std::size_t s = 0; s < sh.unsafe.size(); ++s)
    if (sh.unsafe[s]) unsafe.push_back(static_cast<int>(s));
  j["unsafe"] = unsafe;
  j["risk"] = sh.risk;
  if (!sh.values.empty()) j["values"] = sh.values;
  j["iterations"] = sh.iterations;
  return j;
}

inline Shield shield_from_json(const nlohmann::json& j)
{
  Shield sh;
  sh.kind = shield_kind_from_string(j.at("kind").get<std::string>());
  sh.threshold = j.at("p").get<double>();
  if (j.contains("horizon")) sh.horizon = j.at("horizon").get<int>();
  sh.allowed = j.at("allowed").get<std::vector<std::vector<int>>>();
  sh.fallback = j.at("fallback").get<std::vector<int>>();
  sh.num_states = sh.allowed.size();
  sh.num_actions = j.at("num_actions").get<std::size_t>();
  sh.unsafe.assign(sh.num_states, false);
  for (int s : j.value("unsafe", std::vector<int>{})) sh.unsafe.at(static_cast<std::size_t>(s)) = true;
  sh.risk = j.value("risk", std::vector<double>(sh.num_states * sh.num_actions, 0.0));
  sh.values = j.value("values", std::vector<double>{});
  sh.iterations = j.value("iterations", 0);
  return sh;
}

}  // namespace ltlshield
