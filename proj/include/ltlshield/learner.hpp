#pragma once

// Tabular Q-learning over (discrete observation, automaton state) with the
// automaton reward, an optional post-posed shield, and greedy evaluation.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "abstraction.hpp"
#include "dfa.hpp"
#include "mdp.hpp"
#include "reward.hpp"
#include "rng.hpp"
#include "shield.hpp"
#include "spacecraft.hpp"

namespace ltlshield {

// --- environments ----------------------------------------------------------

/// What the learner needs from an environment. Observations are already
/// discrete; `safety_cell` / `safety_label` place a state in the safety MDP
/// the shield was built on.
template <class E>
concept LearningEnv = requires(const E& env, const typename E::State& x, int a, Rng& rng) {
  typename E::State;
  { env.reset(rng) } -> std::same_as<typename E::State>;
  { env.step(x, a, rng) } -> std::same_as<typename E::State>;
  { env.observe(x) } -> std::convertible_to<std::size_t>;
  { env.labels(x) } -> std::same_as<Assignment>;
  { env.failed(x) } -> std::convertible_to<bool>;
  { env.num_actions() } -> std::convertible_to<std::size_t>;
  { env.num_observations() } -> std::convertible_to<std::size_t>;
  { env.safety_cell(x) } -> std::convertible_to<std::size_t>;
  { env.safety_label(x) } -> std::same_as<Assignment>;
  { env.record(x) } -> std::convertible_to<nlohmann::json>;
};

/// Bins for the spacecraft observation: attitude error (3), the partition
/// bins for rate and wheel speed plus an overflow bin each, the partition
/// bins for charge, sun (2), access (2) and mode (4).
class Discretizer {
 public:
  Discretizer() : Discretizer(PartitionSpec{}) {}
  explicit Discretizer(const PartitionSpec& spec, std::vector<double> error_edges = {0.008, 0.05})
      : rate_{"rate", spec.rate_edges, false},
        wheel_{"wheel", spec.wheel_edges, true},
        charge_{"charge", spec.charge_edges, false},
        error_edges_(std::move(error_edges))
  {
    dims_ = {error_edges_.size() + 1, rate_.bins() + 1, wheel_.bins() + 1, charge_.bins(), 2, 2, kNumModes};
  }

  std::size_t capacity() const noexcept
  {
    std::size_t n = 1;
    for (auto d : dims_) n *= d;
    return n;
  }

  const std::array<std::size_t, 7>& dims() const noexcept { return dims_; }

  std::array<std::size_t, 7> bins(const Observation& o) const
  {
    std::array<std::size_t, 7> b{};
    b[0] = static_cast<std::size_t>(std::upper_bound(error_edges_.begin(), error_edges_.end(), o[0]) - error_edges_.begin());
    b[1] = bounded(rate_, o[1]);
    b[2] = bounded(wheel_, o[2]);
    b[3] = charge_.locate(std::clamp(o[3], charge_.edges.front(), charge_.edges.back())).value_or(0);
    b[4] = o[4] > 0.5 ? 1 : 0;
    b[5] = o[5] > 0.5 ? 1 : 0;
    b[6] = 0;
    for (std::size_t m = 0; m < static_cast<std::size_t>(kNumModes); ++m)
      if (o[6 + m] > 0.5) b[6] = m;
    return b;
  }

  std::size_t index(const Observation& o) const
  {
    const auto b = bins(o);
    std::size_t idx = 0;
    for (std::size_t d = 0; d < dims_.size(); ++d) idx = idx * dims_[d] + b[d];
    return idx;
  }

 private:
  // Values above the axis go to the extra bin, values below to bin 0.
  static std::size_t bounded(const Axis& ax, double x)
  {
    if (x > ax.edges.back()) return ax.bins();
    return ax.locate(std::max(x, ax.edges.front())).value_or(0);
  }

  Axis rate_, wheel_, charge_;
  std::vector<double> error_edges_;
  std::array<std::size_t, 7> dims_{};
};

inline std::size_t discretize(const Discretizer& d, const Observation& o) { return d.index(o); }

/// The spacecraft environment as seen by the learner.
class SpacecraftTask {
 public:
  using State = SpacecraftState;

  SpacecraftTask(EnvParams params, const PartitionSpec& partition = {})
      : params_(std::move(params)), disc_(partition), cells_(make_partition(partition))
  {
    params_.check();
  }

  State reset(Rng& rng) const { return initial_state(params_, rng); }
  State step(const State& x, int a, Rng& rng) const { return env_step(x, static_cast<Mode>(a), params_, rng); }
  std::size_t observe(const State& x) const { return disc_.index(observe_and_label(x).observation); }
  Assignment labels(const State& x) const { return observe_and_label(x).labels; }
  bool failed(const State& x) const { return is_failure(x); }
  std::size_t num_actions() const noexcept { return kNumModes; }
  std::size_t num_observations() const noexcept { return disc_.capacity(); }
  std::size_t safety_cell(const State& x) const
  {
    const std::array<double, 3> p{x.attitude_rate, x.wheel_speed, x.charge};
    return cells_.locate_or_exit(p);
  }
  Assignment safety_label(const State& x) const { return ltlshield::safety_label(labels(x)); }

  nlohmann::json record(const State& x) const
  {
    const auto o = observe_and_label(x);
    return {{"mode", mode_names()[static_cast<std::size_t>(x.mode)]},
            {"observation", o.observation},
            {"labels", spacecraft_table().names_of(o.labels)},
            {"phase", x.phase}};
  }

  const EnvParams& params() const noexcept { return params_; }
  const Discretizer& discretizer() const noexcept { return disc_; }
  const CellTable& cells() const noexcept { return cells_; }

 private:
  EnvParams params_;
  Discretizer disc_;
  CellTable cells_;
};

// --- Q table ---------------------------------------------------------------

class QTable {
 public:
  QTable() = default;
  QTable(std::size_t num_observations, std::size_t num_dfa_states, std::size_t num_actions, double initial = 0.0)
      : obs_(num_observations), dfa_(num_dfa_states), actions_(num_actions), q_(obs_ * dfa_ * actions_, initial)
  {
  }

  std::size_t num_observations() const noexcept { return obs_; }
  std::size_t num_dfa_states() const noexcept { return dfa_; }
  std::size_t num_actions() const noexcept { return actions_; }

  /// Row index of (o, z).
  std::size_t state(std::size_t o, int z) const { return o * dfa_ + static_cast<std::size_t>(z); }

  double& at(std::size_t o, int z, int a) { return q_.at(state(o, z) * actions_ + static_cast<std::size_t>(a)); }
  double at(std::size_t o, int z, int a) const { return q_.at(state(o, z) * actions_ + static_cast<std::size_t>(a)); }

  int greedy(std::size_t o, int z) const
  {
    const std::size_t base = state(o, z) * actions_;
    int best = 0;
    for (std::size_t a = 1; a < actions_; ++a)
      if (q_[base + a] > q_[base + static_cast<std::size_t>(best)]) best = static_cast<int>(a);
    return best;
  }

  /// Greedy with uniformly random tie-breaking.
  int greedy(std::size_t o, int z, Rng& rng) const
  {
    const std::size_t base = state(o, z) * actions_;
    const double best = q_[base + static_cast<std::size_t>(greedy(o, z))];
    int ties = 0;
    for (std::size_t a = 0; a < actions_; ++a) ties += q_[base + a] == best;
    int pick = ties > 1 ? uniform_int(rng, 0, ties - 1) : 0;
    for (std::size_t a = 0; a < actions_; ++a)
      if (q_[base + a] == best && pick-- == 0) return static_cast<int>(a);
    return greedy(o, z);
  }

  double max(std::size_t o, int z) const { return at(o, z, greedy(o, z)); }

  const std::vector<double>& values() const noexcept { return q_; }
  std::vector<double>& values() noexcept { return q_; }

  bool operator==(const QTable&) const = default;

 private:
  std::size_t obs_ = 0, dfa_ = 0, actions_ = 0;
  std::vector<double> q_;
};

/// A trained policy: its Q table and the automaton it tracks while acting.
struct Policy {
  QTable q;
  Dfa dfa;
};

inline nlohmann::json to_json(const Policy& p)
{
  nlohmann::json values = nlohmann::json::object();
  const std::size_t k = p.q.num_actions();
  const std::size_t rows = p.q.num_observations() * p.q.num_dfa_states();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto first = p.q.values().begin() + static_cast<std::ptrdiff_t>(r * k);
    if (std::all_of(first, first + static_cast<std::ptrdiff_t>(k), [](double v) { return v == 0.0; })) continue;
    values[std::to_string(r)] = std::vector<double>(first, first + static_cast<std::ptrdiff_t>(k));
  }
  return {{"num_observations", p.q.num_observations()},
          {"num_dfa_states", p.q.num_dfa_states()},
          {"num_actions", k},
          {"dfa", to_json(p.dfa)},
          {"values", values}};
}

inline Policy policy_from_json(const nlohmann::json& j)
{
  Policy p;
  p.dfa = dfa_from_json(j.at("dfa"));
  p.q = QTable(j.at("num_observations").get<std::size_t>(), j.at("num_dfa_states").get<std::size_t>(),
               j.at("num_actions").get<std::size_t>());
  const std::size_t k = p.q.num_actions();
  for (const auto& [key, row] : j.at("values").items()) {
    const std::size_t r = std::stoull(key);
    const auto v = row.get<std::vector<double>>();
    if (v.size() != k || r >= p.q.num_observations() * p.q.num_dfa_states()) throw std::runtime_error("bad policy row " + key);
    std::copy(v.begin(), v.end(), p.q.values().begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  return p;
}

// --- shield at runtime -----------------------------------------------------

/// A shield plus the violation monitor whose states it was synthesized over.
struct DeployedShield {
  Shield shield;
  Dfa monitor;

  int product_state(std::size_t cell, int z) const
  {
    return static_cast<int>(cell * monitor.num_states()) + z;
  }
};

// --- training --------------------------------------------------------------

struct LearnerConfig {
  double alpha = 0.1;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  /// Episodes over which epsilon decays linearly; 0 means all of them.
  std::size_t epsilon_decay_episodes = 0;
  std::size_t episodes = 5000;
  std::size_t episode_length = 100;
  std::uint64_t seed = 1;
  RewardConfig reward;
  /// Update the proposed action instead of the executed one.
  bool update_proposed = false;
  /// Value of entries never updated.
  double initial_value = 0.0;
  /// Break ties between equally valued actions at random while training.
  bool random_ties = true;

  void check() const
  {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
    for (double e : {epsilon_start, epsilon_end})
      if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
    if (episode_length == 0) throw std::invalid_argument("episode length must be positive");
    reward.check();
  }

  double epsilon(std::size_t episode) const
  {
    const std::size_t span = epsilon_decay_episodes == 0 ? episodes : epsilon_decay_episodes;
    if (span <= 1) return epsilon_end;
    if (episode + 1 >= span) return epsilon_end;
    const double t = static_cast<double>(episode) / static_cast<double>(span - 1);
    return epsilon_start + (epsilon_end - epsilon_start) * t;
  }
};

enum class Terminal { Length, Sink, Failure };

inline const char* to_string(Terminal t)
{
  switch (t) {
    case Terminal::Sink: return "sink";
    case Terminal::Failure: return "failure";
    default: return "length";
  }
}

struct EpisodeLog {
  std::size_t episode = 0;
  double value = 0.0;  // V_F
  Terminal terminal = Terminal::Length;
  std::size_t steps = 0;
  std::size_t accepts = 0;
  std::size_t interventions = 0;
};

struct TrainingResult {
  Policy policy;
  std::vector<EpisodeLog> log;

  double mean_value() const
  {
    if (log.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : log) s += e.value;
    return s / static_cast<double>(log.size());
  }
};

inline void write_training_csv(std::ostream& out, const std::vector<EpisodeLog>& log)
{
  out << "episode,value,terminal,steps,accepts,interventions\n";
  for (const auto& e : log)
    out << e.episode << ',' << e.value << ',' << to_string(e.terminal) << ',' << e.steps << ',' << e.accepts << ','
        << e.interventions << '\n';
}

namespace detail {

// Monitor state of the shield after entering x.
template <LearningEnv Env>
struct ShieldTrack {
  const DeployedShield* sh = nullptr;
  int z = 0;

  void start(const Env& env, const typename Env::State& x)
  {
    if (sh) z = sh->monitor.step(sh->monitor.initial(), env.safety_label(x));
  }
  void move(const Env& env, const typename Env::State& x)
  {
    if (sh) z = sh->monitor.step(z, env.safety_label(x));
  }
  FilterResult apply(const Env& env, const typename Env::State& x, int proposed) const
  {
    if (!sh) return {proposed, false};
    return filter(sh->shield, sh->product_state(env.safety_cell(x), z), proposed);
  }
};

}  // namespace detail

/// Q-learning with the automaton reward. `dfa` is the training automaton.
template <LearningEnv Env>
TrainingResult train(const Env& env, const Dfa& dfa, const LearnerConfig& cfg, const DeployedShield* shield = nullptr)
{
  cfg.check();
  TrainingResult result;
  result.policy.dfa = dfa;
  result.policy.q = QTable(env.num_observations(), dfa.num_states(), env.num_actions(), cfg.initial_value);
  QTable& q = result.policy.q;
  Rng explore = make_rng(cfg.seed, "training");
  const int k = static_cast<int>(env.num_actions());
  result.log.reserve(cfg.episodes);

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    Rng rng = make_rng(cfg.seed, "training-env", ep);
    const double eps = cfg.epsilon(ep);
    EpisodeLog log;
    log.episode = ep;

    auto x = env.reset(rng);
    detail::ShieldTrack<Env> track{shield};
    track.start(env, x);
    const Advance init = advance(dfa.initial(), env.labels(x), dfa, cfg.reward);
    int z = init.next;
    if (init.step.event == EpisodeEvent::SinkTerminate) {
      log.terminal = Terminal::Sink;
      result.log.push_back(log);
      continue;
    }
    double weight = 1.0;
    for (std::size_t t = 0; t < cfg.episode_length; ++t) {
      const std::size_t o = env.observe(x);
      int proposed = 0;
      if (eps > 0.0 && uniform01(explore) < eps)
        proposed = uniform_int(explore, 0, k - 1);
      else
        proposed = cfg.random_ties ? q.greedy(o, z, explore) : q.greedy(o, z);
      const FilterResult f = track.apply(env, x, proposed);
      if (f.intervened) ++log.interventions;

      const auto y = env.step(x, f.action, rng);
      const Advance adv = advance(z, env.labels(y), dfa, cfg.reward);
      const bool failed = env.failed(y);
      const bool terminal = failed || adv.step.event == EpisodeEvent::SinkTerminate;
      double target = adv.step.reward;
      if (!terminal) target += adv.step.discount * q.max(env.observe(y), adv.next);
      double& cell = q.at(o, z, cfg.update_proposed ? proposed : f.action);
      cell += cfg.alpha * (target - cell);

      log.value += weight * adv.step.reward;
      weight *= adv.step.discount;
      if (adv.step.event == EpisodeEvent::AcceptReset) ++log.accepts;
      log.steps = t + 1;
      track.move(env, y);
      x = y;
      z = adv.next;
      if (adv.step.event == EpisodeEvent::SinkTerminate) {
        log.terminal = Terminal::Sink;
        break;
      }
      if (failed) {
        log.terminal = Terminal::Failure;
        break;
      }
    }
    result.log.push_back(log);
  }
  return result;
}

// --- evaluation ------------------------------------------------------------

struct EpisodeResult {
  std::size_t episode = 0;
  bool sat_liveness = false;
  std::optional<std::size_t> first_liveness;
  bool violated_safety = false;
  std::optional<std::size_t> first_violation;
  bool failure = false;
  std::size_t steps = 0;
  std::size_t interventions = 0;
  double value = 0.0;  // V_F along the policy's automaton
};

struct Metrics {
  std::size_t episodes = 0;
  double sat_pct = 0.0;
  double violate_pct = 0.0;
  double failure_pct = 0.0;
  /// Mean interventions over episodes that did / did not satisfy the liveness spec.
  double interventions_sat = 0.0;
  double interventions_unsat = 0.0;
  double mean_value = 0.0;
};

inline Metrics aggregate(const std::vector<EpisodeResult>& eps)
{
  Metrics m;
  m.episodes = eps.size();
  if (eps.empty()) return m;
  std::size_t sat = 0, viol = 0, fail = 0;
  double isat = 0.0, iunsat = 0.0, value = 0.0;
  for (const auto& e : eps) {
    sat += e.sat_liveness;
    viol += e.violated_safety;
    fail += e.failure;
    (e.sat_liveness ? isat : iunsat) += static_cast<double>(e.interventions);
    value += e.value;
  }
  const double n = static_cast<double>(eps.size());
  m.sat_pct = 100.0 * static_cast<double>(sat) / n;
  m.violate_pct = 100.0 * static_cast<double>(viol) / n;
  m.failure_pct = 100.0 * static_cast<double>(fail) / n;
  m.interventions_sat = sat ? isat / static_cast<double>(sat) : 0.0;
  m.interventions_unsat = sat < eps.size() ? iunsat / static_cast<double>(eps.size() - sat) : 0.0;
  m.mean_value = value / n;
  return m;
}

struct EvaluationConfig {
  std::size_t episodes = 1000;
  std::size_t episode_length = 100;
  std::uint64_t seed = 1;
  RewardConfig reward;
  /// Number of leading episodes whose step records are kept.
  std::size_t keep_trajectories = 0;
  unsigned threads = 1;
};

struct Evaluation {
  Metrics metrics;
  std::vector<EpisodeResult> episodes;
  /// trajectories[i] holds one JSON record per step of episode i.
  std::vector<std::vector<nlohmann::json>> trajectories;
};

/// Greedy rollouts. Liveness is judged by first acceptance of `liveness`,
/// safety by `violation` (the automaton of the negated safety formula); both
/// read the full label trace. Episodes stop early only on failure.
template <LearningEnv Env>
Evaluation evaluate(const Policy& policy, const Env& env, const Dfa& liveness, const Dfa& violation,
                    const DeployedShield* shield, const EvaluationConfig& cfg)
{
  Evaluation out;
  out.episodes.resize(cfg.episodes);
  out.trajectories.resize(std::min(cfg.keep_trajectories, cfg.episodes));
  const Dfa& dfa = policy.dfa;

  auto run = [&](std::size_t ep) {
    Rng rng = make_rng(cfg.seed, "evaluation", ep);
    EpisodeResult res;
    res.episode = ep;
    std::vector<nlohmann::json>* traj = ep < out.trajectories.size() ? &out.trajectories[ep] : nullptr;
    std::vector<Assignment> trace;
    trace.reserve(cfg.episode_length + 1);

    auto x = env.reset(rng);
    trace.push_back(env.labels(x));
    detail::ShieldTrack<Env> track{shield};
    track.start(env, x);
    int z = advance(dfa.initial(), trace.back(), dfa, cfg.reward).next;
    double weight = 1.0;
    bool ended = dfa.is_sink(z);
    if (traj) {
      auto rec = env.record(x);
      rec["step"] = 0;
      rec["dfa_state"] = z;
      rec["reward"] = 0.0;
      rec["intervened"] = false;
      traj->push_back(std::move(rec));
    }
    for (std::size_t t = 0; t < cfg.episode_length && !res.failure; ++t) {
      const int proposed = policy.q.greedy(env.observe(x), z);
      const FilterResult f = track.apply(env, x, proposed);
      if (f.intervened) ++res.interventions;
      x = env.step(x, f.action, rng);
      trace.push_back(env.labels(x));
      track.move(env, x);
      const Advance adv = advance(z, trace.back(), dfa, cfg.reward);
      if (!ended) {
        res.value += weight * adv.step.reward;
        weight *= adv.step.discount;
        ended = adv.step.event == EpisodeEvent::SinkTerminate;
      }
      z = adv.next;
      res.failure = env.failed(x);
      res.steps = t + 1;
      if (traj) {
        auto rec = env.record(x);
        rec["step"] = t + 1;
        rec["dfa_state"] = z;
        rec["reward"] = adv.step.reward;
        rec["intervened"] = f.intervened;
        rec["proposed"] = proposed;
        rec["action"] = f.action;
        traj->push_back(std::move(rec));
      }
    }
    const TraceCheck check = check_trace(trace, liveness, violation);
    res.sat_liveness = check.sat_liveness;
    res.first_liveness = check.first_liveness;
    res.violated_safety = check.violated_safety;
    res.first_violation = check.first_violation;
    out.episodes[ep] = res;
  };

  const unsigned threads = std::max(1U, std::min<unsigned>(cfg.threads, static_cast<unsigned>(std::max<std::size_t>(cfg.episodes, 1))));
  if (threads == 1) {
    for (std::size_t ep = 0; ep < cfg.episodes; ++ep) run(ep);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t ep = w; ep < cfg.episodes; ep += threads) run(ep);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  out.metrics = aggregate(out.episodes);
  return out;
}

inline nlohmann::json to_json(const EpisodeResult& e)
{
  nlohmann::json j{{"episode", e.episode},         {"sat_liveness", e.sat_liveness},
                   {"violated_safety", e.violated_safety}, {"failure", e.failure},
                   {"steps", e.steps},             {"interventions", e.interventions},
                   {"value", e.value}};
  j["first_liveness"] = e.first_liveness ? nlohmann::json(*e.first_liveness) : nlohmann::json();
  j["first_violation"] = e.first_violation ? nlohmann::json(*e.first_violation) : nlohmann::json();
  return j;
}

}  // namespace ltlshield
