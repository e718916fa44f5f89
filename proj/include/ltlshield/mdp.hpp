#pragma once

// Explicit finite MDPs with labels, their product with a DFA, and finite-trace
// checking of liveness/safety pairs.

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfa.hpp"
#include "ltl.hpp"

namespace ltlshield {

class MdpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AtomMismatch : public MdpError {
 public:
  using MdpError::MdpError;
};

struct Transition {
  int target;
  double probability;
  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Axis-aligned box an abstract state stands for; empty for states with no
/// geometric meaning.
struct StateInfo {
  std::string name;
  std::vector<double> lower;
  std::vector<double> upper;
  friend bool operator==(const StateInfo&, const StateInfo&) = default;
};

/// Finite MDP. Rows are stored per (state, action) and kept sorted by target;
/// an empty row marks a missing action.
class FiniteMdp {
 public:
  FiniteMdp() = default;
  FiniteMdp(std::size_t num_states, std::vector<std::string> action_names, std::vector<std::string> atoms)
      : num_states_(num_states),
        actions_(std::move(action_names)),
        atoms_(std::move(atoms)),
        rows_(num_states * actions_.size()),
        labels_(num_states),
        info_(num_states)
  {
  }

  std::size_t num_states() const noexcept { return num_states_; }
  std::size_t num_actions() const noexcept { return actions_.size(); }
  const std::vector<std::string>& action_names() const noexcept { return actions_; }
  const std::vector<std::string>& atoms() const noexcept { return atoms_; }

  const std::vector<Transition>& row(int q, int a) const { return rows_.at(index(q, a)); }

  /// Replace row (q, a); entries are sorted by target and duplicate targets merged.
  void set_row(int q, int a, std::vector<Transition> row)
  {
    std::sort(row.begin(), row.end(), [](const Transition& x, const Transition& y) { return x.target < y.target; });
    std::vector<Transition> merged;
    for (const auto& t : row) {
      if (!merged.empty() && merged.back().target == t.target) merged.back().probability += t.probability;
      else merged.push_back(t);
    }
    rows_.at(index(q, a)) = std::move(merged);
  }

  void add_transition(int q, int a, int target, double p)
  {
    auto r = row(q, a);
    r.push_back({target, p});
    set_row(q, a, std::move(r));
  }

  double probability(int q, int a, int target) const
  {
    for (const auto& t : row(q, a))
      if (t.target == target) return t.probability;
    return 0.0;
  }

  Assignment label(int q) const { return labels_.at(static_cast<std::size_t>(q)); }
  void set_label(int q, Assignment l) { labels_.at(static_cast<std::size_t>(q)) = l; }

  const StateInfo& info(int q) const { return info_.at(static_cast<std::size_t>(q)); }
  void set_info(int q, StateInfo info) { info_.at(static_cast<std::size_t>(q)) = std::move(info); }

  friend bool operator==(const FiniteMdp&, const FiniteMdp&) = default;

 private:
  std::size_t index(int q, int a) const
  {
    if (q < 0 || static_cast<std::size_t>(q) >= num_states_ || a < 0 || static_cast<std::size_t>(a) >= actions_.size())
      throw MdpError("state/action out of range: (" + std::to_string(q) + "," + std::to_string(a) + ")");
    return static_cast<std::size_t>(q) * actions_.size() + static_cast<std::size_t>(a);
  }

  std::size_t num_states_ = 0;
  std::vector<std::string> actions_;
  std::vector<std::string> atoms_;
  std::vector<std::vector<Transition>> rows_;
  std::vector<Assignment> labels_;
  std::vector<StateInfo> info_;
};

struct Defect {
  enum class Type { MissingAction, RowSum, ProbabilityRange, TargetRange, LabelRange };
  Type type;
  int state;
  int action;
  double value = 0.0;

  std::string describe() const
  {
    const std::string at = "(" + std::to_string(state) + "," + std::to_string(action) + ")";
    switch (type) {
      case Type::MissingAction: return "MissingActionError" + at;
      case Type::RowSum: return "RowSumError" + at + " sum=" + std::to_string(value);
      case Type::ProbabilityRange: return "ProbabilityRangeError" + at + " p=" + std::to_string(value);
      case Type::TargetRange: return "TargetRangeError" + at + " target=" + std::to_string(static_cast<long>(value));
      case Type::LabelRange: return "LabelRangeError(" + std::to_string(state) + ")";
    }
    return "?";
  }
};

inline constexpr double kRowSumTolerance = 1e-9;

/// All violated stochasticity/totality invariants; empty means valid.
inline std::vector<Defect> validate(const FiniteMdp& m)
{
  std::vector<Defect> out;
  const std::uint32_t label_mask =
      m.atoms().size() >= 32 ? 0xffffffffU : ((1U << m.atoms().size()) - 1U);
  for (std::size_t q = 0; q < m.num_states(); ++q) {
    if ((m.label(static_cast<int>(q)).bits & ~label_mask) != 0)
      out.push_back({Defect::Type::LabelRange, static_cast<int>(q), -1});
    for (std::size_t a = 0; a < m.num_actions(); ++a) {
      const auto& r = m.row(static_cast<int>(q), static_cast<int>(a));
      if (r.empty()) {
        out.push_back({Defect::Type::MissingAction, static_cast<int>(q), static_cast<int>(a)});
        continue;
      }
      double sum = 0.0;
      for (const auto& t : r) {
        if (t.target < 0 || static_cast<std::size_t>(t.target) >= m.num_states())
          out.push_back({Defect::Type::TargetRange, static_cast<int>(q), static_cast<int>(a),
                         static_cast<double>(t.target)});
        if (!(t.probability >= 0.0 && t.probability <= 1.0))
          out.push_back({Defect::Type::ProbabilityRange, static_cast<int>(q), static_cast<int>(a), t.probability});
        sum += t.probability;
      }
      if (std::abs(sum - 1.0) > kRowSumTolerance)
        out.push_back({Defect::Type::RowSum, static_cast<int>(q), static_cast<int>(a), sum});
    }
  }
  return out;
}

/// Product of an MDP with a DFA. Product state s = q * |Z| + z. Stepping into
/// q' moves the automaton on the label of q' (the state being entered).
class ProductMdp {
 public:
  ProductMdp(FiniteMdp base, Dfa dfa) : base_(std::move(base)), dfa_(std::move(dfa))
  {
    if (base_.atoms() != dfa_.atoms()) throw AtomMismatch("MDP and DFA use different proposition tables");
    final_.assign(num_states(), false);
    sink_.assign(num_states(), false);
    for (std::size_t s = 0; s < num_states(); ++s) {
      final_[s] = dfa_.is_accepting(dfa_state(static_cast<int>(s)));
      sink_[s] = dfa_.is_sink(dfa_state(static_cast<int>(s)));
    }
  }

  const FiniteMdp& base() const noexcept { return base_; }
  const Dfa& dfa() const noexcept { return dfa_; }

  std::size_t num_states() const noexcept { return base_.num_states() * dfa_.num_states(); }
  std::size_t num_actions() const noexcept { return base_.num_actions(); }

  int state(int q, int z) const { return q * static_cast<int>(dfa_.num_states()) + z; }
  int mdp_state(int s) const { return s / static_cast<int>(dfa_.num_states()); }
  int dfa_state(int s) const { return s % static_cast<int>(dfa_.num_states()); }

  /// Product state reached when the system starts in q.
  int initial_state(int q) const { return state(q, dfa_.step(dfa_.initial(), base_.label(q))); }

  /// Successors of (s, a), sorted by target.
  std::vector<Transition> transitions(int s, int a) const
  {
    const int q = mdp_state(s);
    const int z = dfa_state(s);
    std::vector<Transition> out;
    const auto& r = base_.row(q, a);
    out.reserve(r.size());
    for (const auto& t : r) out.push_back({state(t.target, dfa_.step(z, base_.label(t.target))), t.probability});
    return out;
  }

  double probability(int s, int a, int target) const
  {
    double p = 0.0;
    for (const auto& t : transitions(s, a))
      if (t.target == target) p += t.probability;
    return p;
  }

  bool is_final(int s) const { return final_.at(static_cast<std::size_t>(s)); }
  bool is_sink(int s) const { return sink_.at(static_cast<std::size_t>(s)); }
  const std::vector<bool>& final_states() const noexcept { return final_; }
  const std::vector<bool>& sink_states() const noexcept { return sink_; }

 private:
  FiniteMdp base_;
  Dfa dfa_;
  std::vector<bool> final_;
  std::vector<bool> sink_;
};

inline ProductMdp product(FiniteMdp m, Dfa d) { return ProductMdp(std::move(m), std::move(d)); }

struct TraceCheck {
  bool sat_liveness = false;
  std::optional<std::size_t> first_liveness;
  bool violated_safety = false;
  std::optional<std::size_t> first_violation;

  bool satisfied() const noexcept { return sat_liveness && !violated_safety; }
};

/// `liveness` is the DFA of the liveness formula, `violation` the DFA of the
/// negated safety formula.
inline TraceCheck check_trace(std::span<const Assignment> trace, const Dfa& liveness, const Dfa& violation)
{
  TraceCheck out;
  out.first_liveness = liveness.first_accept(trace);
  out.sat_liveness = out.first_liveness.has_value();
  out.first_violation = violation.first_accept(trace);
  out.violated_safety = out.first_violation.has_value();
  return out;
}

// --- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const FiniteMdp& m)
{
  nlohmann::json j;
  nlohmann::json meta = nlohmann::json::array();
  bool any_meta = false;
  for (std::size_t q = 0; q < m.num_states(); ++q) {
    const auto& info = m.info(static_cast<int>(q));
    nlohmann::json e = nlohmann::json::object();
    if (!info.name.empty()) e["name"] = info.name;
    if (!info.lower.empty()) {
      e["lower"] = info.lower;
      e["upper"] = info.upper;
    }
    any_meta = any_meta || !e.empty();
    meta.push_back(std::move(e));
  }
  j["states"] = {{"count", m.num_states()}};
  if (any_meta) j["states"]["metadata"] = std::move(meta);
  j["actions"] = m.action_names();
  j["atoms"] = m.atoms();
  nlohmann::json trans = nlohmann::json::array();
  for (std::size_t q = 0; q < m.num_states(); ++q)
    for (std::size_t a = 0; a < m.num_actions(); ++a)
      for (const auto& t : m.row(static_cast<int>(q), static_cast<int>(a)))
        trans.push_back({q, a, t.target, t.probability});
  j["transitions"] = std::move(trans);
  const PropositionTable table(m.atoms());
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t q = 0; q < m.num_states(); ++q)
    labels.push_back({q, table.names_of(m.label(static_cast<int>(q)))});
  j["labels"] = std::move(labels);
  return j;
}

inline FiniteMdp mdp_from_json(const nlohmann::json& j)
{
  const auto count = j.at("states").at("count").get<std::size_t>();
  auto atoms = j.value("atoms", std::vector<std::string>{});
  FiniteMdp m(count, j.at("actions").get<std::vector<std::string>>(), atoms);
  if (j.at("states").contains("metadata")) {
    const auto& meta = j.at("states").at("metadata");
    for (std::size_t q = 0; q < meta.size() && q < count; ++q) {
      StateInfo info;
      info.name = meta[q].value("name", std::string{});
      if (meta[q].contains("lower")) {
        info.lower = meta[q].at("lower").get<std::vector<double>>();
        info.upper = meta[q].at("upper").get<std::vector<double>>();
      }
      m.set_info(static_cast<int>(q), std::move(info));
    }
  }
  std::vector<std::vector<Transition>> rows(count * m.num_actions());
  for (const auto& t : j.at("transitions")) {
    const auto q = t.at(0).get<std::size_t>();
    const auto a = t.at(1).get<std::size_t>();
    if (q >= count || a >= m.num_actions()) throw MdpError("transition source out of range");
    rows[q * m.num_actions() + a].push_back({t.at(2).get<int>(), t.at(3).get<double>()});
  }
  for (std::size_t q = 0; q < count; ++q)
    for (std::size_t a = 0; a < m.num_actions(); ++a)
      m.set_row(static_cast<int>(q), static_cast<int>(a), std::move(rows[q * m.num_actions() + a]));
  const PropositionTable table(atoms);
  for (const auto& l : j.at("labels")) {
    const auto names = l.at(1).get<std::vector<std::string>>();
    m.set_label(l.at(0).get<int>(), table.assignment(names));
  }
  return m;
}

inline nlohmann::json read_json_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return nlohmann::json::parse(in);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j)
{
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

}  // namespace ltlshield
