#pragma once

// Independent reference implementations used by the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include <ltlshield/abstraction.hpp>
#include <ltlshield/ltl.hpp>
#include <ltlshield/mdp.hpp>

namespace oracle {

using ltlshield::Assignment;
using ltlshield::Syntax;
using Trace = std::vector<Assignment>;

// --- finite-trace semantics on raw syntax -----------------------------------

// Negation is read the way the library canonicalizes it: !X f is X !f.
inline bool holds(const Syntax& s, const Trace& w, std::size_t i, bool positive = true)
{
  using Op = Syntax::Op;
  const std::size_t n = w.size();
  switch (s.op) {
    case Op::True: return positive;
    case Op::False: return !positive;
    case Op::Atom: return w[i].has(s.atom) == positive;
    case Op::Not: return holds(s.args[0], w, i, !positive);
    case Op::And:
    case Op::Or: {
      const bool conj = (s.op == Op::And) == positive;
      for (const auto& a : s.args)
        if (holds(a, w, i, positive) != conj) return !conj;
      return conj;
    }
    case Op::Next: return i + 1 < n && holds(s.args[0], w, i + 1, positive);
    case Op::Eventually:
    case Op::Globally: {
      const bool exists = (s.op == Op::Eventually) == positive;
      for (std::size_t j = i; j < n; ++j) {
        const bool v = holds(s.args[0], w, j, positive);
        if (exists && v) return true;
        if (!exists && !v) return false;
      }
      return !exists;
    }
    case Op::Until: {
      if (positive) {
        for (std::size_t j = i; j < n; ++j) {
          if (holds(s.args[1], w, j, true)) return true;
          if (!holds(s.args[0], w, j, true)) return false;
        }
        return false;
      }
      // !(a U b) = (!b U (!a & !b)) | G !b
      for (std::size_t j = i; j < n; ++j) {
        if (!holds(s.args[1], w, j, false)) return false;
        if (holds(s.args[0], w, j, false)) return true;
      }
      return true;
    }
  }
  return false;
}

/// Some non-empty prefix satisfies s.
inline bool prefix_accepts(const Syntax& s, const Trace& w)
{
  for (std::size_t k = 1; k <= w.size(); ++k) {
    Trace p(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(k));
    if (holds(s, p, 0)) return true;
  }
  return false;
}

inline std::vector<Trace> all_traces(int atoms, std::size_t max_len)
{
  std::vector<Trace> out;
  const std::uint32_t sigma = 1U << atoms;
  std::vector<Trace> layer{Trace{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<Trace> next;
    for (const auto& t : layer)
      for (std::uint32_t a = 0; a < sigma; ++a) {
        Trace u = t;
        u.push_back(Assignment{a});
        next.push_back(u);
      }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

// Random syntax tree with depth <= depth over `atoms` atoms.
inline Syntax random_syntax(std::mt19937_64& rng, int depth, int atoms)
{
  using Op = Syntax::Op;
  std::uniform_int_distribution<int> pick(0, 9);
  const int r = depth <= 0 ? 0 : pick(rng);
  std::uniform_int_distribution<int> atom(0, atoms - 1);
  switch (r) {
    case 0:
    case 1: return Syntax::leaf(Op::Atom, atom(rng));
    case 2: return Syntax::unary(Op::Not, random_syntax(rng, depth - 1, atoms));
    case 3: return Syntax::binary(Op::And, random_syntax(rng, depth - 1, atoms), random_syntax(rng, depth - 1, atoms));
    case 4: return Syntax::binary(Op::Or, random_syntax(rng, depth - 1, atoms), random_syntax(rng, depth - 1, atoms));
    case 5: return Syntax::unary(Op::Next, random_syntax(rng, depth - 1, atoms));
    case 6:
    case 7: return Syntax::binary(Op::Until, random_syntax(rng, depth - 1, atoms), random_syntax(rng, depth - 1, atoms));
    case 8: return Syntax::unary(Op::Eventually, random_syntax(rng, depth - 1, atoms));
    default: return Syntax::unary(Op::Globally, random_syntax(rng, depth - 1, atoms));
  }
}

inline int syntax_depth(const Syntax& s)
{
  int d = 0;
  for (const auto& a : s.args) d = std::max(d, syntax_depth(a));
  return s.args.empty() ? 0 : d + 1;
}

// --- shields by exhaustive enumeration --------------------------------------

// Product over a DFA with states {0, 1}: 1 is accepting and absorbing, entered
// when the label of the entered state carries the single atom. States are
// numbered q * 2 + z.
struct SmallProduct {
  int num_q = 0;
  int num_a = 0;
  std::vector<std::vector<std::vector<double>>> p;  // p[q][a][q']
  std::vector<bool> bad;                           // label of q has the atom

  int n() const { return num_q * 2; }
  bool final(int s) const { return s % 2 == 1; }

  // Probability of moving from product state s to t under a.
  double step(int s, int a, int t) const
  {
    const int q = s / 2, z = s % 2, q2 = t / 2, z2 = t % 2;
    const int expect = (z == 1 || bad[static_cast<std::size_t>(q2)]) ? 1 : 0;
    return z2 == expect ? p[static_cast<std::size_t>(q)][static_cast<std::size_t>(a)][static_cast<std::size_t>(q2)] : 0.0;
  }

  double mass(int s, int a, const std::vector<bool>& set) const
  {
    double m = 0.0;
    for (int t = 0; t < n(); ++t)
      if (set[static_cast<std::size_t>(t)]) m += step(s, a, t);
    return m;
  }

  ltlshield::FiniteMdp to_mdp() const
  {
    std::vector<std::string> actions;
    for (int a = 0; a < num_a; ++a) actions.push_back("a" + std::to_string(a));
    ltlshield::FiniteMdp m(static_cast<std::size_t>(num_q), actions, {"bad"});
    for (int q = 0; q < num_q; ++q) {
      m.set_label(q, Assignment{bad[static_cast<std::size_t>(q)] ? 1U : 0U});
      for (int a = 0; a < num_a; ++a) {
        std::vector<ltlshield::Transition> row;
        for (int q2 = 0; q2 < num_q; ++q2) {
          const double x = p[static_cast<std::size_t>(q)][static_cast<std::size_t>(a)][static_cast<std::size_t>(q2)];
          if (x > 0.0) row.push_back({q2, x});
        }
        m.set_row(q, a, row);
      }
    }
    return m;
  }
};

inline ltlshield::Dfa reach_bad_dfa()
{
  return ltlshield::Dfa({"bad"}, 0, {0, 1, 1, 1}, {false, true});
}

inline SmallProduct random_product(std::mt19937_64& rng, int max_q, int max_a)
{
  SmallProduct sp;
  sp.num_q = std::uniform_int_distribution<int>(1, max_q)(rng);
  sp.num_a = std::uniform_int_distribution<int>(1, max_a)(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int q = 0; q < sp.num_q; ++q) sp.bad.push_back(u(rng) < 0.3);
  sp.p.assign(static_cast<std::size_t>(sp.num_q), {});
  for (int q = 0; q < sp.num_q; ++q)
    for (int a = 0; a < sp.num_a; ++a) {
      std::vector<double> row(static_cast<std::size_t>(sp.num_q), 0.0);
      double total = 0.0;
      for (auto& x : row) {
        // sparse rows with some tiny and some dominant entries
        const double r = u(rng);
        x = r < 0.4 ? 0.0 : (r < 0.6 ? 0.01 * u(rng) : u(rng));
        total += x;
      }
      if (total == 0.0) {
        row[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, sp.num_q - 1)(rng))] = 1.0;
        total = 1.0;
      }
      for (auto& x : row) x /= total;
      sp.p[static_cast<std::size_t>(q)].push_back(row);
    }
  return sp;
}

inline std::vector<std::vector<int>> one_step_allowed(const SmallProduct& sp, double p)
{
  std::vector<bool> fin(static_cast<std::size_t>(sp.n()));
  for (int s = 0; s < sp.n(); ++s) fin[static_cast<std::size_t>(s)] = sp.final(s);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(sp.n()));
  for (int s = 0; s < sp.n(); ++s)
    for (int a = 0; a < sp.num_a; ++a)
      if (sp.mass(s, a, fin) < p) out[static_cast<std::size_t>(s)].push_back(a);
  return out;
}

// Least set U containing the final states such that every state whose
// actions all put mass >= p into U is in U: intersection of all closed
// supersets, found by enumerating subsets.
inline std::vector<bool> two_step_unsafe(const SmallProduct& sp, double p)
{
  const int n = sp.n();
  std::vector<bool> best(static_cast<std::size_t>(n), true);
  for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
    std::vector<bool> set(static_cast<std::size_t>(n));
    bool ok = true;
    for (int s = 0; s < n; ++s) {
      set[static_cast<std::size_t>(s)] = (mask >> s) & 1U;
      if (sp.final(s) && !set[static_cast<std::size_t>(s)]) ok = false;
    }
    if (!ok) continue;
    for (int s = 0; s < n && ok; ++s) {
      if (set[static_cast<std::size_t>(s)]) continue;
      bool some_safe = false;
      for (int a = 0; a < sp.num_a; ++a)
        if (sp.mass(s, a, set) < p) some_safe = true;
      if (!some_safe) ok = false;
    }
    if (!ok) continue;
    for (int s = 0; s < n; ++s) best[static_cast<std::size_t>(s)] = best[static_cast<std::size_t>(s)] && set[static_cast<std::size_t>(s)];
  }
  return best;
}

inline std::vector<std::vector<int>> two_step_allowed(const SmallProduct& sp, double p)
{
  const auto u = two_step_unsafe(sp, p);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(sp.n()));
  for (int s = 0; s < sp.n(); ++s)
    for (int a = 0; a < sp.num_a; ++a)
      if (sp.mass(s, a, u) < p) out[static_cast<std::size_t>(s)].push_back(a);
  return out;
}

inline double reach_after(const SmallProduct& sp, int s, int a, int k);

// Minimal probability of hitting a final state within k steps, by expanding
// every path.
inline double min_reach(const SmallProduct& sp, int s, int k)
{
  if (sp.final(s)) return 1.0;
  if (k == 0) return 0.0;
  double best = 2.0;
  for (int a = 0; a < sp.num_a; ++a) best = std::min(best, reach_after(sp, s, a, k));
  return best;
}

// Probability of hitting a final state within k steps when the first action is a.
inline double reach_after(const SmallProduct& sp, int s, int a, int k)
{
  double total = 0.0;
  for (int t = 0; t < sp.n(); ++t) {
    const double x = sp.step(s, a, t);
    if (x > 0.0) total += x * min_reach(sp, t, k - 1);
  }
  return total;
}

// --- analytic-kernel simulator ----------------------------------------------

// One-dimensional drift-plus-uniform-noise kernel on [0, 1]:
// x' = x + drift[a] + U(-w, w); leaving [0, 1] is an exit.
struct AnalyticSim {
  using State = double;
  std::vector<double> drift{-0.07, 0.0, 0.11};
  double w = 0.06;

  State sample_in_cell(const ltlshield::Cell& c, ltlshield::Rng& rng) const
  {
    return ltlshield::uniform(rng, c.lower[0], c.upper[0]);
  }
  State step(const State& x, int a, ltlshield::Rng& rng) const
  {
    return x + drift[static_cast<std::size_t>(a)] + ltlshield::uniform(rng, -w, w);
  }
  std::optional<std::vector<double>> abstract(const State& x) const
  {
    if (x < 0.0 || x > 1.0) return std::nullopt;
    return std::vector<double>{x};
  }
  std::vector<std::string> action_names() const { return {"left", "stay", "right"}; }

  // P(X + N <= t) for X ~ U[a1, b1], N ~ U[a2, b2].
  static double sum_cdf(double t, double a1, double b1, double a2, double b2)
  {
    auto g = [](double u) { return u > 0.0 ? 0.5 * u * u : 0.0; };
    const double area = g(t - a1 - a2) - g(t - b1 - a2) - g(t - a1 - b2) + g(t - b1 - b2);
    return area / ((b1 - a1) * (b2 - a2));
  }

  double probability(double lo, double hi, int a, double tlo, double thi) const
  {
    const double d = drift[static_cast<std::size_t>(a)];
    return sum_cdf(thi, lo, hi, d - w, d + w) - sum_cdf(tlo, lo, hi, d - w, d + w);
  }
};

inline ltlshield::CellTable analytic_cells(int bins)
{
  ltlshield::Axis ax{"x", {}, false};
  for (int i = 0; i <= bins; ++i) ax.edges.push_back(static_cast<double>(i) / bins);
  return ltlshield::make_grid({ax}, {"edge"}, [](const ltlshield::Cell& c) {
    return Assignment{c.lower[0] == 0.0 ? 1U : 0U};
  });
}

// --- toy learning environment -----------------------------------------------

// Corridor 0..length-1. Action 0 moves left, 1 moves right, 2 jumps right by
// two but lands in the trap (label bit 1) with probability `slip`. Reaching
// the right end sets label bit 0. The trap is a failure.
struct Corridor {
  struct State {
    int pos = 0;
    bool trapped = false;
  };
  int length = 6;
  double slip = 0.3;

  State reset(ltlshield::Rng&) const { return {}; }
  State step(const State& x, int a, ltlshield::Rng& rng) const
  {
    State y = x;
    if (a == 0) y.pos = std::max(0, x.pos - 1);
    if (a == 1) y.pos = std::min(length - 1, x.pos + 1);
    if (a == 2) {
      y.pos = std::min(length - 1, x.pos + 2);
      if (ltlshield::uniform01(rng) < slip) y.trapped = true;
    }
    return y;
  }
  std::size_t observe(const State& x) const { return static_cast<std::size_t>(x.pos); }
  Assignment labels(const State& x) const
  {
    Assignment l;
    if (x.pos == length - 1) l = l.with(0);
    if (x.trapped) l = l.with(1);
    return l;
  }
  bool failed(const State& x) const { return x.trapped; }
  std::size_t num_actions() const { return 3; }
  std::size_t num_observations() const { return static_cast<std::size_t>(length); }
  // safety MDP: cell 0 = fine, cell 1 = trapped
  std::size_t safety_cell(const State& x) const { return x.trapped ? 1 : 0; }
  Assignment safety_label(const State& x) const { return Assignment{x.trapped ? 1U : 0U}; }
  nlohmann::json record(const State& x) const { return {{"pos", x.pos}, {"trapped", x.trapped}}; }

  // Safety MDP matching safety_cell / safety_label.
  ltlshield::FiniteMdp safety_mdp() const
  {
    ltlshield::FiniteMdp m(2, {"left", "right", "jump"}, {"trap"});
    m.set_label(1, Assignment{1U});
    m.set_row(0, 0, {{0, 1.0}});
    m.set_row(0, 1, {{0, 1.0}});
    m.set_row(0, 2, {{0, 1.0 - slip}, {1, slip}});
    for (int a = 0; a < 3; ++a) m.set_row(1, a, {{1, 1.0}});
    return m;
  }
};

}  // namespace oracle
