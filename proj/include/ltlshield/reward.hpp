#pragma once

// Automaton-based reward: reward and discount are functions of the DFA
// transition taken, with accept-reset and sink-termination episode events.

#include <span>
#include <stdexcept>
#include <string>

#include "dfa.hpp"

namespace ltlshield {

enum class RewardMode {
  Modified,  ///< accept, sink, progress and idle cases
  Original,  ///< no bonus for moving between non-final states
};

struct RewardConfig {
  double gamma = 0.99;
  double gamma_t = 0.95;
  double gamma_f = 0.9;
  RewardMode mode = RewardMode::Modified;

  void check() const
  {
    for (double g : {gamma, gamma_t, gamma_f})
      if (!(g > 0.0 && g < 1.0)) throw std::invalid_argument("discount factors must lie in (0, 1)");
  }
};

enum class EpisodeEvent { None, AcceptReset, SinkTerminate };

inline const char* to_string(EpisodeEvent e)
{
  switch (e) {
    case EpisodeEvent::AcceptReset: return "accept";
    case EpisodeEvent::SinkTerminate: return "sink";
    default: return "none";
  }
}

struct RewardStep {
  double reward = 0.0;
  double discount = 1.0;
  EpisodeEvent event = EpisodeEvent::None;
};

/// Cases are tried in order: final, sink, state change, otherwise.
inline RewardStep step_reward(int z, int z_next, const Dfa& d, const RewardConfig& cfg)
{
  if (d.is_accepting(z_next)) return {1.0 - cfg.gamma_f, cfg.gamma_f, EpisodeEvent::AcceptReset};
  // The discount on sink entry only matters for bootstrapping; the episode ends.
  if (d.is_sink(z_next)) return {-1.0, cfg.gamma_t, EpisodeEvent::SinkTerminate};
  if (z != z_next) {
    if (cfg.mode == RewardMode::Original) return {0.0, cfg.gamma, EpisodeEvent::None};
    return {1.0 - cfg.gamma_t, cfg.gamma_t, EpisodeEvent::None};
  }
  return {0.0, cfg.gamma, EpisodeEvent::None};
}

/// sum_i r_i * prod_{j<i} g_j
inline double cumulative_value(std::span<const RewardStep> steps)
{
  double total = 0.0;
  double weight = 1.0;
  for (const auto& s : steps) {
    total += s.reward * weight;
    weight *= s.discount;
  }
  return total;
}

struct Advance {
  int next;
  RewardStep step;
};

/// One automaton move with accept-reset: on acceptance the automaton restarts
/// from its initial state.
inline Advance advance(int z, Assignment symbol, const Dfa& d, const RewardConfig& cfg)
{
  const int raw = d.step(z, symbol);
  const RewardStep r = step_reward(z, raw, d, cfg);
  return {r.event == EpisodeEvent::AcceptReset ? d.initial() : raw, r};
}

}  // namespace ltlshield
