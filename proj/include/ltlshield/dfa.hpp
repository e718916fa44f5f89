#pragma once

// Co-safe formula -> minimal DFA by formula progression.
//
// States are canonical progressed formulas plus one distinguished accepting
// state. Reading symbol s in state f moves to the accepting state when the
// trace read so far (ending in s) satisfies f, and to progress(f, s)
// otherwise. Acceptance is absorbing, so a run is accepting iff it visits an
// accepting state, i.e. iff some prefix of the trace satisfies the formula.

#include <algorithm>
#include <deque>
#include <iterator>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ltl.hpp"

namespace ltlshield {

class FragmentError : public LtlError {
 public:
  using LtlError::LtlError;
};

class StateExplosion : public LtlError {
 public:
  explicit StateExplosion(std::size_t cap)
      : LtlError("progression produced more than " + std::to_string(cap) + " states")
  {
  }
};

/// Truth of `f` at the last position of a trace, given the last symbol.
/// Strong next is false there; F, G and U collapse to their argument.
inline bool holds_at_last(const Formula& f, Assignment s)
{
  switch (f.kind()) {
    case Kind::True: return true;
    case Kind::False: return false;
    case Kind::Atom: return s.has(f.atom_index());
    case Kind::NotAtom: return !s.has(f.atom_index());
    case Kind::And:
      return std::all_of(f.children().begin(), f.children().end(),
                         [s](const Formula& c) { return holds_at_last(c, s); });
    case Kind::Or:
      return std::any_of(f.children().begin(), f.children().end(),
                         [s](const Formula& c) { return holds_at_last(c, s); });
    case Kind::Next: return false;
    case Kind::Eventually:
    case Kind::Globally: return holds_at_last(f.child(0), s);
    case Kind::Until: return holds_at_last(f.child(1), s);
  }
  return false;
}

/// What a non-empty remainder of the trace must satisfy after `s` is consumed.
inline Formula progress(const Formula& f, Assignment s)
{
  switch (f.kind()) {
    case Kind::True:
    case Kind::False: return f;
    case Kind::Atom: return s.has(f.atom_index()) ? Formula::tt() : Formula::ff();
    case Kind::NotAtom: return s.has(f.atom_index()) ? Formula::ff() : Formula::tt();
    case Kind::And:
    case Kind::Or: {
      std::vector<Formula> parts;
      parts.reserve(f.children().size());
      for (const auto& c : f.children()) parts.push_back(progress(c, s));
      return f.kind() == Kind::And ? Formula::conj(std::move(parts)) : Formula::disj(std::move(parts));
    }
    case Kind::Next: return f.child(0);
    case Kind::Eventually: return Formula::disj({progress(f.child(0), s), f});
    case Kind::Globally: return Formula::conj({progress(f.child(0), s), f});
    case Kind::Until:
      return Formula::disj({progress(f.child(1), s), Formula::conj({progress(f.child(0), s), f})});
  }
  return f;
}

namespace detail {

using Clause = std::vector<Formula>;  // sorted conjunction of temporal leaves

inline std::vector<Clause> dnf(const Formula& f, std::size_t limit)
{
  switch (f.kind()) {
    case Kind::True: return {Clause{}};
    case Kind::False: return {};
    case Kind::Or: {
      std::vector<Clause> out;
      for (const auto& c : f.children()) {
        auto part = dnf(c, limit);
        out.insert(out.end(), part.begin(), part.end());
        if (out.size() > limit) throw std::length_error("dnf");
      }
      return out;
    }
    case Kind::And: {
      std::vector<Clause> out{Clause{}};
      for (const auto& c : f.children()) {
        const auto part = dnf(c, limit);
        std::vector<Clause> next;
        for (const auto& x : out)
          for (const auto& y : part) {
            Clause z;
            std::set_union(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(z));
            next.push_back(std::move(z));
          }
        if (next.size() > limit) throw std::length_error("dnf");
        out = std::move(next);
      }
      return out;
    }
    default: return {Clause{f}};
  }
}

}  // namespace detail

/// Boolean normal form used for DFA states: absorbed DNF over temporal leaves.
/// Equivalent boolean shapes collapse to one state. Falls back to `f` when the
/// expansion gets too large.
inline Formula normalize(const Formula& f, std::size_t limit = 4096)
{
  if (f.kind() != Kind::And && f.kind() != Kind::Or) return f;
  std::vector<detail::Clause> clauses;
  try {
    clauses = detail::dnf(f, limit);
  } catch (const std::length_error&) {
    return f;
  }
  std::sort(clauses.begin(), clauses.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  std::vector<detail::Clause> kept;
  for (auto& c : clauses) {
    bool absorbed = false;
    for (const auto& k : kept)
      if (std::includes(c.begin(), c.end(), k.begin(), k.end())) {
        absorbed = true;
        break;
      }
    if (!absorbed) kept.push_back(std::move(c));
  }
  std::vector<Formula> parts;
  for (auto& c : kept) parts.push_back(Formula::conj(std::move(c)));
  return Formula::disj(std::move(parts));
}

class Dfa {
 public:
  Dfa() = default;
  Dfa(std::vector<std::string> atoms, int initial, std::vector<int> delta, std::vector<bool> accepting)
      : atoms_(std::move(atoms)), initial_(initial), delta_(std::move(delta)), accepting_(std::move(accepting))
  {
    if (atoms_.size() > static_cast<std::size_t>(kMaxAtoms)) throw LtlError("too many atoms for a DFA");
    const std::size_t n = accepting_.size();
    if (n == 0 || delta_.size() != n * alphabet_size()) throw LtlError("DFA transition table has wrong shape");
    if (initial_ < 0 || static_cast<std::size_t>(initial_) >= n) throw LtlError("DFA initial state out of range");
    for (int t : delta_)
      if (t < 0 || static_cast<std::size_t>(t) >= n) throw LtlError("DFA transition target out of range");
    sinks_.assign(n, false);
  }

  const std::vector<std::string>& atoms() const noexcept { return atoms_; }
  std::size_t num_states() const noexcept { return accepting_.size(); }
  std::size_t alphabet_size() const noexcept { return std::size_t{1} << atoms_.size(); }
  int initial() const noexcept { return initial_; }

  int step(int z, Assignment s) const
  {
    return delta_[static_cast<std::size_t>(z) * alphabet_size() + s.bits];
  }

  bool is_accepting(int z) const { return accepting_.at(static_cast<std::size_t>(z)); }
  bool is_sink(int z) const { return sinks_.at(static_cast<std::size_t>(z)); }
  const std::vector<bool>& accepting() const noexcept { return accepting_; }
  const std::vector<bool>& sinks() const noexcept { return sinks_; }
  const std::vector<int>& table() const noexcept { return delta_; }

  void set_sinks(std::vector<bool> sinks) { sinks_ = std::move(sinks); }

  /// Human-readable description of each state (progressed formula), if known.
  const std::vector<std::string>& state_names() const noexcept { return names_; }
  void set_state_names(std::vector<std::string> names) { names_ = std::move(names); }

  /// Index of the first trace position after which the run is accepting.
  std::optional<std::size_t> first_accept(std::span<const Assignment> trace) const
  {
    int z = initial_;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      z = step(z, trace[i]);
      if (is_accepting(z)) return i;
    }
    return std::nullopt;
  }

  bool accepts(std::span<const Assignment> trace) const { return first_accept(trace).has_value(); }

 private:
  std::vector<std::string> atoms_;
  int initial_ = 0;
  std::vector<int> delta_;
  std::vector<bool> accepting_;
  std::vector<bool> sinks_;
  std::vector<std::string> names_;
};

inline int dfa_step(const Dfa& d, int z, Assignment s) { return d.step(z, s); }

/// Non-accepting states that loop to themselves on every symbol.
inline std::vector<bool> identify_sinks(const Dfa& d)
{
  std::vector<bool> sinks(d.num_states(), false);
  for (std::size_t z = 0; z < d.num_states(); ++z) {
    if (d.is_accepting(static_cast<int>(z))) continue;
    bool loops = true;
    for (std::uint32_t s = 0; s < d.alphabet_size() && loops; ++s)
      loops = d.step(static_cast<int>(z), Assignment{s}) == static_cast<int>(z);
    sinks[z] = loops;
  }
  return sinks;
}

/// Moore partition refinement over the reachable part. States are renumbered
/// in breadth-first order from the initial state, which becomes state 0.
inline Dfa minimize(const Dfa& d)
{
  const std::size_t n = d.num_states();
  const std::size_t k = d.alphabet_size();

  std::vector<bool> reachable(n, false);
  std::deque<int> queue{d.initial()};
  reachable[static_cast<std::size_t>(d.initial())] = true;
  while (!queue.empty()) {
    const int z = queue.front();
    queue.pop_front();
    for (std::uint32_t s = 0; s < k; ++s) {
      const int t = d.step(z, Assignment{s});
      if (!reachable[static_cast<std::size_t>(t)]) {
        reachable[static_cast<std::size_t>(t)] = true;
        queue.push_back(t);
      }
    }
  }

  std::vector<int> block(n, -1);
  for (std::size_t z = 0; z < n; ++z)
    if (reachable[z]) block[z] = d.is_accepting(static_cast<int>(z)) ? 1 : 0;

  std::size_t num_blocks = 0;
  for (;;) {
    std::map<std::vector<int>, int> signatures;
    std::vector<int> next(n, -1);
    for (std::size_t z = 0; z < n; ++z) {
      if (!reachable[z]) continue;
      std::vector<int> sig;
      sig.reserve(k + 1);
      sig.push_back(block[z]);
      for (std::uint32_t s = 0; s < k; ++s)
        sig.push_back(block[static_cast<std::size_t>(d.step(static_cast<int>(z), Assignment{s}))]);
      auto [it, inserted] = signatures.emplace(std::move(sig), static_cast<int>(signatures.size()));
      next[z] = it->second;
    }
    const bool stable = signatures.size() == num_blocks;
    num_blocks = signatures.size();
    block = std::move(next);
    if (stable) break;
  }

  // BFS renumbering of blocks.
  std::vector<int> order(num_blocks, -1);
  std::vector<int> representative(num_blocks, -1);
  for (std::size_t z = 0; z < n; ++z)
    if (reachable[z] && representative[static_cast<std::size_t>(block[z])] < 0)
      representative[static_cast<std::size_t>(block[z])] = static_cast<int>(z);

  int next_id = 0;
  std::deque<int> bq{block[static_cast<std::size_t>(d.initial())]};
  order[static_cast<std::size_t>(bq.front())] = next_id++;
  std::vector<int> by_id{bq.front()};
  while (!bq.empty()) {
    const int b = bq.front();
    bq.pop_front();
    const int rep = representative[static_cast<std::size_t>(b)];
    for (std::uint32_t s = 0; s < k; ++s) {
      const int tb = block[static_cast<std::size_t>(d.step(rep, Assignment{s}))];
      if (order[static_cast<std::size_t>(tb)] < 0) {
        order[static_cast<std::size_t>(tb)] = next_id++;
        by_id.push_back(tb);
        bq.push_back(tb);
      }
    }
  }

  std::vector<int> delta(num_blocks * k);
  std::vector<bool> accepting(num_blocks);
  std::vector<std::string> names;
  for (std::size_t id = 0; id < num_blocks; ++id) {
    const int rep = representative[static_cast<std::size_t>(by_id[id])];
    accepting[id] = d.is_accepting(rep);
    for (std::uint32_t s = 0; s < k; ++s)
      delta[id * k + s] = order[static_cast<std::size_t>(block[static_cast<std::size_t>(d.step(rep, Assignment{s}))])];
    if (!d.state_names().empty()) names.push_back(d.state_names()[static_cast<std::size_t>(rep)]);
  }
  Dfa out(d.atoms(), 0, std::move(delta), std::move(accepting));
  out.set_state_names(std::move(names));
  out.set_sinks(identify_sinks(out));
  return out;
}

struct CompileOptions {
  std::size_t max_states = 10'000;
};

namespace detail {

inline Dfa build_by_progression(const Formula& f, const PropositionTable& table, const CompileOptions& opts)
{
  const std::size_t k = table.alphabet_size();
  std::unordered_map<Formula, int, Formula::Hasher> index;
  std::vector<Formula> states;
  // State 0 is the absorbing accept state.
  std::vector<int> delta(k, 0);
  std::vector<bool> accepting{true};
  std::vector<std::string> names{"accept"};

  auto intern = [&](const Formula& g) {
    auto [it, inserted] = index.emplace(g, static_cast<int>(states.size()) + 1);
    if (inserted) {
      if (states.size() + 1 > opts.max_states) throw StateExplosion(opts.max_states);
      states.push_back(g);
      delta.resize(delta.size() + k, -1);
      accepting.push_back(false);
      names.push_back(to_string(g, table));
    }
    return it->second;
  };

  const int initial = intern(normalize(f));
  for (std::size_t done = 0; done < states.size(); ++done) {
    const Formula current = states[done];
    const std::size_t row = (done + 1) * k;
    for (std::uint32_t s = 0; s < k; ++s) {
      const Assignment sym{s};
      delta[row + s] = holds_at_last(current, sym) ? 0 : intern(normalize(progress(current, sym)));
    }
  }

  Dfa raw(table.names(), initial, std::move(delta), std::move(accepting));
  raw.set_state_names(std::move(names));
  return raw;
}

}  // namespace detail

/// Minimal DFA accepting exactly the traces that satisfy the co-safe `f`.
inline Dfa compile(const Formula& f, const PropositionTable& table, const CompileOptions& opts = {})
{
  if (!is_co_safe(f)) throw FragmentError("formula is not co-safe: " + to_string(f, table));
  return minimize(detail::build_by_progression(f, table, opts));
}

/// Training automaton for a task `liveness & safety`: accepts a trace as soon
/// as a prefix satisfies the liveness part without having violated the safety
/// part; a violation leads to a rejecting sink.
inline Dfa compile_task(const Formula& liveness, const Formula& safety, const PropositionTable& table,
                        const CompileOptions& opts = {})
{
  if (!is_co_safe(liveness)) throw FragmentError("liveness part is not co-safe: " + to_string(liveness, table));
  if (!is_safe(safety)) throw FragmentError("safety part is not safe: " + to_string(safety, table));
  return minimize(detail::build_by_progression(conjoin(liveness, safety), table, opts));
}

inline nlohmann::json to_json(const Dfa& d)
{
  nlohmann::json j;
  j["atoms"] = d.atoms();
  j["z0"] = d.initial();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t z = 0; z < d.num_states(); ++z) {
    std::vector<int> row(d.table().begin() + static_cast<std::ptrdiff_t>(z * d.alphabet_size()),
                         d.table().begin() + static_cast<std::ptrdiff_t>((z + 1) * d.alphabet_size()));
    rows.push_back(row);
  }
  j["delta"] = rows;
  std::vector<int> acc, sinks;
  for (std::size_t z = 0; z < d.num_states(); ++z) {
    if (d.accepting()[z]) acc.push_back(static_cast<int>(z));
    if (d.sinks()[z]) sinks.push_back(static_cast<int>(z));
  }
  j["accepting"] = acc;
  j["sinks"] = sinks;
  if (!d.state_names().empty()) j["state_names"] = d.state_names();
  return j;
}

inline Dfa dfa_from_json(const nlohmann::json& j)
{
  auto atoms = j.at("atoms").get<std::vector<std::string>>();
  auto rows = j.at("delta").get<std::vector<std::vector<int>>>();
  std::vector<int> delta;
  for (const auto& r : rows) delta.insert(delta.end(), r.begin(), r.end());
  std::vector<bool> accepting(rows.size(), false);
  for (int z : j.at("accepting").get<std::vector<int>>()) accepting.at(static_cast<std::size_t>(z)) = true;
  Dfa d(std::move(atoms), j.at("z0").get<int>(), std::move(delta), std::move(accepting));
  std::vector<bool> sinks(d.num_states(), false);
  for (int z : j.at("sinks").get<std::vector<int>>()) sinks.at(static_cast<std::size_t>(z)) = true;
  d.set_sinks(std::move(sinks));
  if (j.contains("state_names")) d.set_state_names(j.at("state_names").get<std::vector<std::string>>());
  return d;
}

}  // namespace ltlshield
