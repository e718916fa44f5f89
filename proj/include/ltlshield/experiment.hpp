#pragma once

// Experiment driver: config file, run matrix, pipeline stages and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "abstraction.hpp"
#include "dfa.hpp"
#include "learner.hpp"
#include "ltl.hpp"
#include "mdp.hpp"
#include "reward.hpp"
#include "rng.hpp"
#include "shield.hpp"
#include "spacecraft.hpp"

namespace ltlshield {

/// Error raised by a pipeline stage; `stage()` names it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage))
  {
  }
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class MissingRun : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { Simple, Complex };
enum class TrainingSpec { LivenessOnly, LivenessAndSafety };

inline const char* to_string(Task t) { return t == Task::Simple ? "simple" : "complex"; }
inline const char* to_string(TrainingSpec s)
{
  return s == TrainingSpec::LivenessOnly ? "liveness_only" : "liveness_and_safety";
}

inline Task task_from_string(const std::string& s)
{
  if (s == "simple") return Task::Simple;
  if (s == "complex") return Task::Complex;
  throw std::invalid_argument("unknown task '" + s + "'");
}

inline TrainingSpec training_spec_from_string(const std::string& s)
{
  if (s == "liveness_only") return TrainingSpec::LivenessOnly;
  if (s == "liveness_and_safety") return TrainingSpec::LivenessAndSafety;
  throw std::invalid_argument("unknown training spec '" + s + "'");
}

/// Shield option of a run: nullopt means no shield.
using ShieldOption = std::optional<ShieldKind>;

inline std::string shield_option_name(const ShieldOption& s) { return s ? to_string(*s) : "none"; }

inline ShieldOption shield_option_from_string(const std::string& s)
{
  if (s == "none") return std::nullopt;
  return shield_kind_from_string(s);
}

struct ExperimentConfig {
  Task task = Task::Simple;
  std::uint64_t seed = 1;
  std::string liveness = "F p0";
  std::string safety = "G !(p1 | p2)";
  std::vector<TrainingSpec> training_specs{TrainingSpec::LivenessOnly, TrainingSpec::LivenessAndSafety};
  std::vector<ShieldOption> shields{std::nullopt};
  std::vector<bool> shield_in_training{false};
  /// Zero means the task default (100 simple, 90 complex).
  std::size_t episode_length = 0;

  ShieldConfig shield;
  PartitionSpec partition;
  AbstractionConfig abstraction;
  LearnerConfig learner;
  /// Fraction of training episodes over which epsilon decays.
  double epsilon_decay_fraction = 1.0;
  RewardConfig reward;
  EvaluationConfig evaluation;
  EnvParams env;

  std::size_t effective_episode_length() const
  {
    if (episode_length) return episode_length;
    return task == Task::Simple ? 100 : 90;
  }

  bool needs_shields() const
  {
    for (const auto& s : shields)
      if (s) return true;
    return false;
  }
};

// --- config (de)serialization ----------------------------------------------

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field)
{
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c)
{
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["seed"] = c.seed;
  j["liveness"] = c.liveness;
  j["safety"] = c.safety;
  j["training_specs"] = nlohmann::json::array();
  for (auto s : c.training_specs) j["training_specs"].push_back(to_string(s));
  j["shields"] = nlohmann::json::array();
  for (const auto& s : c.shields) j["shields"].push_back(shield_option_name(s));
  j["shield_in_training"] = nlohmann::json::array();
  for (bool b : c.shield_in_training) j["shield_in_training"].push_back(b);
  j["episode_length"] = c.effective_episode_length();
  j["shield"] = {{"p", c.shield.threshold},
                 {"horizon", c.shield.horizon ? nlohmann::json(*c.shield.horizon) : nlohmann::json()},
                 {"vi_tolerance", c.shield.vi_tolerance},
                 {"vi_max_iters", c.shield.vi_max_iters}};
  j["partition"] = {{"rate_edges", c.partition.rate_edges},
                    {"wheel_edges", c.partition.wheel_edges},
                    {"charge_edges", c.partition.charge_edges}};
  j["abstraction"] = {{"samples_per_cell", c.abstraction.samples_per_cell}, {"threads", c.abstraction.threads}};
  j["learner"] = {{"alpha", c.learner.alpha},
                  {"epsilon_start", c.learner.epsilon_start},
                  {"epsilon_end", c.learner.epsilon_end},
                  {"epsilon_decay_fraction", c.epsilon_decay_fraction},
                  {"episodes", c.learner.episodes},
                  {"initial_value", c.learner.initial_value},
                  {"update_proposed", c.learner.update_proposed},
                  {"random_ties", c.learner.random_ties}};
  j["reward"] = {{"gamma", c.reward.gamma},
                 {"gamma_t", c.reward.gamma_t},
                 {"gamma_f", c.reward.gamma_f},
                 {"mode", c.reward.mode == RewardMode::Original ? "original" : "modified"}};
  j["evaluation"] = {{"episodes", c.evaluation.episodes},
                     {"keep_trajectories", c.evaluation.keep_trajectories},
                     {"threads", c.evaluation.threads}};
  j["env"] = to_json(c.env);
  return j;
}

/// Missing keys take their defaults; the task picks the default liveness
/// formula and access-window randomization.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j)
{
  ExperimentConfig c;
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  if (c.task == Task::Complex) {
    c.liveness = "F(p3 & X F(p4 & X F(p3 & X F(p4 & X F p3))))";
    c.env.randomize_windows = true;
  }
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "liveness", c.liveness);
  detail::read_field(j, "safety", c.safety);
  if (j.contains("training_specs")) {
    c.training_specs.clear();
    for (const auto& s : j.at("training_specs")) c.training_specs.push_back(training_spec_from_string(s.get<std::string>()));
  }
  if (j.contains("shields")) {
    c.shields.clear();
    for (const auto& s : j.at("shields")) c.shields.push_back(shield_option_from_string(s.get<std::string>()));
  }
  if (j.contains("shield_in_training")) {
    c.shield_in_training.clear();
    for (const auto& b : j.at("shield_in_training")) c.shield_in_training.push_back(b.get<bool>());
  }
  detail::read_field(j, "episode_length", c.episode_length);
  if (j.contains("shield")) {
    const auto& s = j.at("shield");
    detail::read_field(s, "p", c.shield.threshold);
    if (s.contains("horizon") && !s.at("horizon").is_null()) c.shield.horizon = s.at("horizon").get<int>();
    detail::read_field(s, "vi_tolerance", c.shield.vi_tolerance);
    detail::read_field(s, "vi_max_iters", c.shield.vi_max_iters);
  }
  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    detail::read_field(p, "rate_edges", c.partition.rate_edges);
    detail::read_field(p, "wheel_edges", c.partition.wheel_edges);
    detail::read_field(p, "charge_edges", c.partition.charge_edges);
  }
  if (j.contains("abstraction")) {
    const auto& a = j.at("abstraction");
    detail::read_field(a, "samples_per_cell", c.abstraction.samples_per_cell);
    detail::read_field(a, "threads", c.abstraction.threads);
  }
  if (j.contains("learner")) {
    const auto& l = j.at("learner");
    detail::read_field(l, "alpha", c.learner.alpha);
    detail::read_field(l, "epsilon_start", c.learner.epsilon_start);
    detail::read_field(l, "epsilon_end", c.learner.epsilon_end);
    detail::read_field(l, "epsilon_decay_fraction", c.epsilon_decay_fraction);
    detail::read_field(l, "episodes", c.learner.episodes);
    detail::read_field(l, "initial_value", c.learner.initial_value);
    detail::read_field(l, "update_proposed", c.learner.update_proposed);
    detail::read_field(l, "random_ties", c.learner.random_ties);
  }
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    detail::read_field(r, "gamma", c.reward.gamma);
    detail::read_field(r, "gamma_t", c.reward.gamma_t);
    detail::read_field(r, "gamma_f", c.reward.gamma_f);
    if (r.contains("mode")) {
      const auto m = r.at("mode").get<std::string>();
      if (m != "modified" && m != "original") throw std::invalid_argument("unknown reward mode '" + m + "'");
      c.reward.mode = m == "original" ? RewardMode::Original : RewardMode::Modified;
    }
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    detail::read_field(e, "episodes", c.evaluation.episodes);
    detail::read_field(e, "keep_trajectories", c.evaluation.keep_trajectories);
    detail::read_field(e, "threads", c.evaluation.threads);
  }
  if (j.contains("env")) c.env = env_params_from_json(j.at("env"), c.env);
  if (!(c.epsilon_decay_fraction > 0.0 && c.epsilon_decay_fraction <= 1.0))
    throw std::invalid_argument("epsilon_decay_fraction must lie in (0, 1]");
  c.shield.check();
  c.reward.check();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path)
{
  return experiment_config_from_json(read_json_file(path));
}

// --- compiled specifications -----------------------------------------------

struct TaskAutomata {
  Dfa liveness;        // over p0..p4
  Dfa task;            // liveness & safety, over p0..p4
  Dfa violation;       // negated safety, over p0..p4
  Dfa monitor;         // negated safety, over the safety atoms

  const Dfa& training(TrainingSpec s) const { return s == TrainingSpec::LivenessOnly ? liveness : task; }
};

inline TaskAutomata compile_automata(const std::string& liveness, const std::string& safety)
{
  const auto& table = spacecraft_table();
  const PropositionTable safety_table(safety_atoms());
  const Formula l = parse(liveness, table);
  const Formula s = parse(safety, table);
  if (classify(s) != FragmentClass::Safe) throw FragmentError("safety formula is not in the safe fragment");
  TaskAutomata a;
  a.liveness = compile(l, table);
  a.task = compile_task(l, s, table);
  a.violation = compile(negate(s), table);
  a.monitor = compile(negate(parse(safety, safety_table)), safety_table);
  return a;
}

// --- run matrix ------------------------------------------------------------

struct PolicySpec {
  TrainingSpec spec;
  ShieldOption training_shield;  // set only when trained with the shield in the loop

  std::string name() const
  {
    std::string n = std::string(to_string(spec)) + "__" + (training_shield ? std::string("shielded_") + to_string(*training_shield) : "unshielded");
    return n;
  }
};

struct DeploymentSpec {
  std::size_t policy;  // index into the policy list
  ShieldOption shield;
};

struct RunMatrix {
  std::vector<PolicySpec> policies;
  std::vector<DeploymentSpec> deployments;
};

/// Unshielded-trained policies are deployed under every shield option;
/// shield-trained ones only under the shield they were trained with.
inline RunMatrix expand_matrix(const ExperimentConfig& c)
{
  RunMatrix m;
  for (auto spec : c.training_specs)
    for (bool tin : c.shield_in_training) {
      if (!tin) {
        m.policies.push_back({spec, std::nullopt});
        const std::size_t p = m.policies.size() - 1;
        for (const auto& sh : c.shields) m.deployments.push_back({p, sh});
      } else {
        for (const auto& sh : c.shields) {
          if (!sh) continue;
          m.policies.push_back({spec, sh});
          m.deployments.push_back({m.policies.size() - 1, sh});
        }
      }
    }
  return m;
}

// --- results ---------------------------------------------------------------

struct MetricsRow {
  std::string task;
  std::string shield;
  bool trained_with_shield = false;
  std::string spec;
  double avg_value = 0.0;  // training average V_F
  Metrics metrics;

  std::string name() const
  {
    return spec + "__" + (trained_with_shield ? "shielded" : "unshielded") + "__deploy_" + shield;
  }
};

inline std::string format_fixed(double x, int digits = 6)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

inline const char* metrics_csv_header()
{
  return "task,shield,trained_with_shield,spec,avg_value,sat_pct,violate_pct,failure_pct,interventions_sat,"
         "interventions_unsat,deploy_value,episodes";
}

inline std::string metrics_csv_line(const MetricsRow& r)
{
  std::ostringstream o;
  o << r.task << ',' << r.shield << ',' << (r.trained_with_shield ? "yes" : "no") << ',' << r.spec << ','
    << format_fixed(r.avg_value) << ',' << format_fixed(r.metrics.sat_pct, 2) << ','
    << format_fixed(r.metrics.violate_pct, 2) << ',' << format_fixed(r.metrics.failure_pct, 2) << ','
    << format_fixed(r.metrics.interventions_sat, 3) << ',' << format_fixed(r.metrics.interventions_unsat, 3) << ','
    << format_fixed(r.metrics.mean_value) << ',' << r.metrics.episodes;
  return o.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows)
{
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << metrics_csv_header() << '\n';
  for (const auto& r : rows) out << metrics_csv_line(r) << '\n';
}

struct PolicyResult {
  PolicySpec spec;
  TrainingResult training;
};

struct PipelineResult {
  ExperimentConfig config;
  std::optional<FiniteMdp> mdp;
  std::map<ShieldKind, DeployedShield> shields;
  std::vector<PolicyResult> policies;
  std::vector<MetricsRow> rows;
  /// Per row: evaluation episodes and kept trajectories.
  std::vector<Evaluation> evaluations;
};

// --- stages ----------------------------------------------------------------

inline FiniteMdp run_abstraction(const ExperimentConfig& c)
{
  AbstractionConfig ac = c.abstraction;
  ac.seed = derive_seed(c.seed, "abstraction");
  return estimate_transitions(SpacecraftSimulator(c.env), make_partition(c.partition), ac);
}

inline DeployedShield run_shield(const FiniteMdp& mdp, const Dfa& monitor, ShieldKind kind, const ShieldConfig& base)
{
  ShieldConfig sc = base;
  sc.kind = kind;
  if (kind != ShieldKind::QOptimal) sc.horizon.reset();
  return DeployedShield{synthesize(product(mdp, monitor), sc), monitor};
}

inline LearnerConfig learner_config(const ExperimentConfig& c)
{
  LearnerConfig lc = c.learner;
  lc.episode_length = c.effective_episode_length();
  lc.seed = derive_seed(c.seed, "training");
  lc.reward = c.reward;
  lc.epsilon_decay_episodes =
      std::max<std::size_t>(1, static_cast<std::size_t>(c.epsilon_decay_fraction * static_cast<double>(lc.episodes)));
  return lc;
}

inline EvaluationConfig evaluation_config(const ExperimentConfig& c)
{
  EvaluationConfig ec = c.evaluation;
  ec.episode_length = c.effective_episode_length();
  ec.seed = derive_seed(c.seed, "evaluation");
  ec.reward = c.reward;
  return ec;
}

/// Runs every stage in memory. Nothing is written.
inline PipelineResult run_pipeline(const ExperimentConfig& c)
{
  PipelineResult out;
  out.config = c;
  TaskAutomata automata;
  try {
    automata = compile_automata(c.liveness, c.safety);
  } catch (const std::exception& e) {
    throw StageError("compile", e.what());
  }
  const SpacecraftTask env(c.env, c.partition);

  if (c.needs_shields()) {
    try {
      out.mdp = run_abstraction(c);
    } catch (const std::exception& e) {
      throw StageError("abstraction", e.what());
    }
    try {
      for (const auto& s : c.shields)
        if (s && !out.shields.count(*s)) out.shields.emplace(*s, run_shield(*out.mdp, automata.monitor, *s, c.shield));
    } catch (const std::exception& e) {
      throw StageError("shield", e.what());
    }
  }

  const RunMatrix matrix = expand_matrix(c);
  const LearnerConfig lc = learner_config(c);
  try {
    for (const auto& p : matrix.policies) {
      const DeployedShield* sh = p.training_shield ? &out.shields.at(*p.training_shield) : nullptr;
      out.policies.push_back({p, train(env, automata.training(p.spec), lc, sh)});
    }
  } catch (const std::exception& e) {
    throw StageError("training", e.what());
  }

  const EvaluationConfig ec = evaluation_config(c);
  try {
    for (const auto& d : matrix.deployments) {
      const auto& pol = out.policies[d.policy];
      const DeployedShield* sh = d.shield ? &out.shields.at(*d.shield) : nullptr;
      Evaluation ev = evaluate(pol.training.policy, env, automata.liveness, automata.violation, sh, ec);
      MetricsRow row;
      row.task = to_string(c.task);
      row.shield = shield_option_name(d.shield);
      row.trained_with_shield = pol.spec.training_shield.has_value();
      row.spec = to_string(pol.spec.spec);
      row.avg_value = pol.training.mean_value();
      row.metrics = ev.metrics;
      out.rows.push_back(row);
      out.evaluations.push_back(std::move(ev));
    }
  } catch (const std::exception& e) {
    throw StageError("evaluation", e.what());
  }
  return out;
}

/// Writes the run directory: config.json, mdp.json, mdp_report.json,
/// shield_<kind>.json, policy_<name>.json, train_log_<name>.csv, metrics.csv,
/// episodes.jsonl and trajectories.jsonl.
inline void write_run(const std::string& dir, const PipelineResult& r)
{
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  write_json_file((root / "config.json").string(), to_json(r.config));
  if (r.mdp) {
    write_json_file((root / "mdp.json").string(), to_json(*r.mdp));
    AbstractionConfig ac = r.config.abstraction;
    write_json_file((root / "mdp_report.json").string(), to_json(abstraction_report(*r.mdp, ac)));
  }
  for (const auto& [kind, sh] : r.shields)
    write_json_file((root / (std::string("shield_") + to_string(kind) + ".json")).string(), to_json(sh.shield));
  for (const auto& p : r.policies) {
    write_json_file((root / ("policy_" + p.spec.name() + ".json")).string(), to_json(p.training.policy));
    std::ofstream log(root / ("train_log_" + p.spec.name() + ".csv"));
    write_training_csv(log, p.training.log);
  }
  write_metrics_csv((root / "metrics.csv").string(), r.rows);
  std::ofstream episodes(root / "episodes.jsonl");
  std::ofstream trajectories(root / "trajectories.jsonl");
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& ev = r.evaluations[i];
    for (const auto& e : ev.episodes) {
      auto j = to_json(e);
      j["row"] = r.rows[i].name();
      episodes << j.dump() << '\n';
    }
    for (std::size_t k = 0; k < ev.trajectories.size(); ++k)
      for (const auto& step : ev.trajectories[k]) {
        auto j = step;
        j["row"] = r.rows[i].name();
        j["episode"] = k;
        trajectories << j.dump() << '\n';
      }
  }
}

// --- report ----------------------------------------------------------------

/// Merges metrics.csv of several run directories (prefixed with a run
/// column) and extracts per-step mode / wheel speed / access series from
/// their trajectories into `out_dir`.
inline void write_report(const std::vector<std::string>& runs, const std::string& out_dir)
{
  namespace fs = std::filesystem;
  if (runs.empty()) throw MissingRun("no run directories given");
  for (const auto& r : runs)
    if (!fs::exists(fs::path(r) / "metrics.csv")) throw MissingRun("no metrics.csv in '" + r + "'");
  fs::create_directories(out_dir);
  std::ofstream merged(fs::path(out_dir) / "comparison.csv");
  std::ofstream series(fs::path(out_dir) / "timeseries.csv");
  merged << "run," << metrics_csv_header() << '\n';
  series << "run,row,episode,step,mode,wheel_speed,charge,target_access,intervened\n";
  for (const auto& r : runs) {
    const std::string name = fs::path(r).filename().string();
    std::ifstream in(fs::path(r) / "metrics.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) merged << name << ',' << line << '\n';
    std::ifstream traj(fs::path(r) / "trajectories.jsonl");
    while (std::getline(traj, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const auto& o = j.at("observation");
      series << name << ',' << j.at("row").get<std::string>() << ',' << j.at("episode").get<std::size_t>() << ','
             << j.at("step").get<std::size_t>() << ',' << j.at("mode").get<std::string>() << ','
             << format_fixed(o.at(2).get<double>()) << ',' << format_fixed(o.at(3).get<double>()) << ','
             << o.at(5).get<double>() << ',' << (j.at("intervened").get<bool>() ? 1 : 0) << '\n';
    }
  }
}

}  // namespace ltlshield
