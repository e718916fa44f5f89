// Command-line front end: compile, abstract, shield, train, evaluate,
// pipeline, report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ltlshield/experiment.hpp>

namespace fs = std::filesystem;
using namespace ltlshield;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

ExperimentConfig load_config(const Globals& g)
{
  ExperimentConfig c = g.config.empty() ? experiment_config_from_json(nlohmann::json::object()) : load_experiment_config(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::vector<std::string> split_atoms(const std::string& s)
{
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void print_dfa(const Dfa& d)
{
  std::cout << "states: " << d.num_states() << "\ninitial: " << d.initial() << "\naccepting:";
  for (std::size_t z = 0; z < d.num_states(); ++z)
    if (d.is_accepting(static_cast<int>(z))) std::cout << ' ' << z;
  std::cout << "\nsinks:";
  for (std::size_t z = 0; z < d.num_states(); ++z)
    if (d.is_sink(static_cast<int>(z))) std::cout << ' ' << z;
  std::cout << '\n';
}

int cmd_compile(const std::string& spec_file, const std::string& safety_file, const std::string& atoms,
                const std::string& out)
{
  const PropositionTable table(split_atoms(atoms));
  const Formula f = parse(read_spec_file(spec_file), table);
  const FragmentClass cls = classify(f);
  std::cout << "fragment: " << to_string(cls) << '\n';
  Dfa d;
  if (!safety_file.empty()) {
    d = compile_task(f, parse(read_spec_file(safety_file), table), table);
    std::cout << "compiled: liveness & safety\n";
  } else if (cls == FragmentClass::CoSafe) {
    d = compile(f, table);
  } else if (cls == FragmentClass::Safe) {
    d = compile(negate(f), table);
    std::cout << "compiled: negation (violation monitor)\n";
  } else {
    throw FragmentError("formula is neither safe nor co-safe");
  }
  print_dfa(d);
  if (!out.empty()) write_json_file(out, to_json(d));
  return 0;
}

int cmd_abstract(const Globals& g, const std::string& cells, std::optional<std::size_t> samples)
{
  ExperimentConfig c = load_config(g);
  if (!cells.empty()) {
    const auto j = read_json_file(cells);
    if (j.contains("rate_edges")) c.partition.rate_edges = j.at("rate_edges").get<std::vector<double>>();
    if (j.contains("wheel_edges")) c.partition.wheel_edges = j.at("wheel_edges").get<std::vector<double>>();
    if (j.contains("charge_edges")) c.partition.charge_edges = j.at("charge_edges").get<std::vector<double>>();
  }
  if (samples) c.abstraction.samples_per_cell = *samples;
  const FiniteMdp m = run_abstraction(c);
  fs::create_directories(g.out);
  write_json_file((fs::path(g.out) / "mdp.json").string(), to_json(m));
  const auto report = abstraction_report(m, c.abstraction);
  write_json_file((fs::path(g.out) / "mdp_report.json").string(), to_json(report));
  std::cout << "states: " << m.num_states() << "\nactions: " << m.num_actions()
            << "\ndeterministic rows: " << report.deterministic_rows << '\n';
  return 0;
}

int cmd_shield(const std::string& mdp_file, const std::string& spec_file, const std::string& kind, double p,
               std::optional<int> horizon, const std::string& out)
{
  const FiniteMdp m = mdp_from_json(read_json_file(mdp_file));
  const PropositionTable table(m.atoms());
  const Formula s = parse(read_spec_file(spec_file), table);
  if (classify(s) != FragmentClass::Safe) throw FragmentError("shield specification must be a safe formula");
  ShieldConfig sc;
  sc.kind = shield_kind_from_string(kind);
  sc.threshold = p;
  sc.horizon = horizon;
  const Shield sh = synthesize(product(m, compile(negate(s), table)), sc);
  std::size_t allowed = 0, empty = 0;
  for (const auto& a : sh.allowed) {
    allowed += a.size();
    empty += a.empty();
  }
  std::cout << "product states: " << sh.num_states << "\nallowed pairs: " << allowed << "\nstates without allowed action: " << empty
            << "\niterations: " << sh.iterations << '\n';
  write_json_file(out, to_json(sh));
  return 0;
}

TaskAutomata automata_for(const ExperimentConfig& c) { return compile_automata(c.liveness, c.safety); }

std::optional<DeployedShield> load_shield(const std::string& file, const TaskAutomata& a)
{
  if (file.empty()) return std::nullopt;
  return DeployedShield{shield_from_json(read_json_file(file)), a.monitor};
}

int cmd_train(const Globals& g, const std::string& spec, const std::string& shield_file)
{
  const ExperimentConfig c = load_config(g);
  const TaskAutomata a = automata_for(c);
  const auto sh = load_shield(shield_file, a);
  const SpacecraftTask env(c.env, c.partition);
  const TrainingResult r = train(env, a.training(training_spec_from_string(spec)), learner_config(c), sh ? &*sh : nullptr);
  fs::create_directories(g.out);
  write_json_file((fs::path(g.out) / "policy.json").string(), to_json(r.policy));
  std::ofstream log(fs::path(g.out) / "train_log.csv");
  write_training_csv(log, r.log);
  std::cout << "episodes: " << r.log.size() << "\naverage value: " << r.mean_value() << '\n';
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& policy_file, const std::string& shield_file)
{
  const ExperimentConfig c = load_config(g);
  const TaskAutomata a = automata_for(c);
  const auto sh = load_shield(shield_file, a);
  const SpacecraftTask env(c.env, c.partition);
  const Policy policy = policy_from_json(read_json_file(policy_file));
  const Evaluation ev = evaluate(policy, env, a.liveness, a.violation, sh ? &*sh : nullptr, evaluation_config(c));
  fs::create_directories(g.out);
  MetricsRow row;
  row.task = to_string(c.task);
  row.shield = sh ? to_string(sh->shield.kind) : "none";
  row.spec = policy.dfa.num_states() == a.liveness.num_states() ? "liveness_only" : "liveness_and_safety";
  row.metrics = ev.metrics;
  write_metrics_csv((fs::path(g.out) / "metrics.csv").string(), {row});
  std::ofstream episodes(fs::path(g.out) / "episodes.jsonl");
  for (const auto& e : ev.episodes) episodes << to_json(e).dump() << '\n';
  std::ofstream traj(fs::path(g.out) / "trajectories.jsonl");
  for (std::size_t k = 0; k < ev.trajectories.size(); ++k)
    for (auto step : ev.trajectories[k]) {
      step["row"] = row.name();
      step["episode"] = k;
      traj << step.dump() << '\n';
    }
  std::cout << metrics_csv_header() << '\n' << metrics_csv_line(row) << '\n';
  return 0;
}

int cmd_pipeline(const Globals& g)
{
  const ExperimentConfig c = load_config(g);
  const PipelineResult r = run_pipeline(c);
  write_run(g.out, r);
  std::cout << metrics_csv_header() << '\n';
  for (const auto& row : r.rows) std::cout << metrics_csv_line(row) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"LTL specifications, probabilistic shields and shielded Q-learning for a spacecraft scheduling surrogate"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory or file");

  std::string spec_file, safety_file, atoms = "p0,p1,p2,p3,p4";
  auto* compile_cmd = app.add_subcommand("compile", "compile a spec file to a DFA");
  compile_cmd->add_option("spec", spec_file, "spec file")->required();
  compile_cmd->add_option("--with-safety", safety_file, "safety spec conjoined as a task");
  compile_cmd->add_option("--atoms", atoms, "comma-separated proposition table");
  std::string dfa_out;
  compile_cmd->add_option("-o,--dfa", dfa_out, "write the DFA as JSON");

  std::string cells;
  std::optional<std::size_t> samples;
  auto* abstract_cmd = app.add_subcommand("abstract", "estimate the safety MDP");
  abstract_cmd->add_option("--cells", cells, "partition edges (JSON)");
  abstract_cmd->add_option("--samples", samples, "samples per cell and action");

  std::string mdp_file, kind = "one", shield_out = "shield.json";
  double p = 0.05;
  std::optional<int> horizon;
  auto* shield_cmd = app.add_subcommand("shield", "synthesize a shield");
  shield_cmd->add_option("--mdp", mdp_file, "safety MDP (JSON)")->required();
  shield_cmd->add_option("--spec", spec_file, "safe LTL spec file")->required();
  shield_cmd->add_option("--kind", kind, "one, two or q")->check(CLI::IsMember({"one", "two", "q"}));
  shield_cmd->add_option("--p", p, "probability threshold");
  shield_cmd->add_option("--horizon", horizon, "Q-optimal horizon (omit for unbounded)");
  shield_cmd->add_option("-o,--shield-out", shield_out, "output file");

  std::string train_spec = "liveness_and_safety", shield_file;
  auto* train_cmd = app.add_subcommand("train", "train a policy");
  train_cmd->add_option("--spec", train_spec, "liveness_only or liveness_and_safety")
      ->check(CLI::IsMember({"liveness_only", "liveness_and_safety"}));
  train_cmd->add_option("--shield", shield_file, "shield in the loop (JSON)");

  std::string policy_file;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a policy");
  eval_cmd->add_option("--policy", policy_file, "policy (JSON)")->required();
  eval_cmd->add_option("--shield", shield_file, "deployed shield (JSON)");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "run the full experiment matrix");

  std::vector<std::string> runs;
  auto* report_cmd = app.add_subcommand("report", "merge run directories");
  report_cmd->add_option("runs", runs, "run directories");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*compile_cmd) return cmd_compile(spec_file, safety_file, atoms, dfa_out);
    if (*abstract_cmd) return cmd_abstract(g, cells, samples);
    if (*shield_cmd) return cmd_shield(mdp_file, spec_file, kind, p, horizon, shield_out);
    if (*train_cmd) return cmd_train(g, train_spec, shield_file);
    if (*eval_cmd) return cmd_evaluate(g, policy_file, shield_file);
    if (*pipeline_cmd) return cmd_pipeline(g);
    if (*report_cmd) {
      write_report(runs, g.out);
      std::cout << "report written to " << g.out << '\n';
      return 0;
    }
  } catch (const SyntaxError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
