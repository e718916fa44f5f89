#pragma once

// Safety MDP by Monte Carlo: grid-partition the safe operating domain and
// estimate the cell-to-cell kernel of a simulator.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mdp.hpp"
#include "rng.hpp"

namespace ltlshield {

class AbstractionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RegionMisalignment : public AbstractionError {
 public:
  using AbstractionError::AbstractionError;
};

class SimulatorFailure : public AbstractionError {
 public:
  SimulatorFailure(int cell, int action, std::size_t sample, const std::string& what)
      : AbstractionError("simulator failed in cell " + std::to_string(cell) + ", action " + std::to_string(action) +
                         ", sample " + std::to_string(sample) + ": " + what),
        cell_(cell),
        action_(action),
        sample_(sample)
  {
  }
  int cell() const noexcept { return cell_; }
  int action() const noexcept { return action_; }
  std::size_t sample() const noexcept { return sample_; }

 private:
  int cell_;
  int action_;
  std::size_t sample_;
};

class EmptyModel : public AbstractionError {
 public:
  EmptyModel() : AbstractionError("empty model") {}
};

/// One partitioned dimension. Bins are [e_i, e_{i+1}) by default; with
/// `open_below` they are (e_i, e_{i+1}]. The outermost edges are always
/// included, so every value within the axis range falls into exactly one bin.
struct Axis {
  std::string name;
  std::vector<double> edges;
  bool open_below = false;

  std::size_t bins() const noexcept { return edges.empty() ? 0 : edges.size() - 1; }

  std::optional<std::size_t> locate(double x) const
  {
    if (edges.size() < 2 || !(x >= edges.front() && x <= edges.back())) return std::nullopt;
    if (!open_below) {
      auto it = std::upper_bound(edges.begin(), edges.end(), x);
      std::size_t i = static_cast<std::size_t>(it - edges.begin());
      return std::min(i == 0 ? 0 : i - 1, bins() - 1);
    }
    auto it = std::lower_bound(edges.begin(), edges.end(), x);
    std::size_t i = static_cast<std::size_t>(it - edges.begin());
    return i == 0 ? 0 : std::min(i - 1, bins() - 1);
  }
};

struct Cell {
  std::vector<double> lower;
  std::vector<double> upper;
  Assignment label;
};

/// Cells enumerated in row-major order over the axes (last axis fastest),
/// labeled over `atoms`. Index `exit_index()` is the extra out-of-domain cell.
struct CellTable {
  std::vector<Axis> axes;
  std::vector<Cell> cells;
  std::vector<std::string> atoms;

  std::size_t exit_index() const noexcept { return cells.size(); }

  std::optional<std::size_t> locate(std::span<const double> point) const
  {
    if (point.size() != axes.size()) return std::nullopt;
    std::size_t index = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) {
      auto bin = axes[d].locate(point[d]);
      if (!bin) return std::nullopt;
      index = index * axes[d].bins() + *bin;
    }
    return index;
  }

  /// Cell index, or the exit cell for points outside the domain.
  std::size_t locate_or_exit(std::span<const double> point) const { return locate(point).value_or(exit_index()); }

  Assignment exit_label() const { return Assignment{(1U << atoms.size()) - 1U}; }
};

/// Builds the cell list of an arbitrary grid. `labeler` maps a cell's bounds
/// to its label.
inline CellTable make_grid(std::vector<Axis> axes, std::vector<std::string> atoms,
                           const std::function<Assignment(const Cell&)>& labeler)
{
  CellTable t;
  t.axes = std::move(axes);
  t.atoms = std::move(atoms);
  std::size_t total = 1;
  for (const auto& ax : t.axes) {
    if (ax.edges.size() < 2) throw AbstractionError("axis '" + ax.name + "' needs at least two edges");
    for (std::size_t i = 1; i < ax.edges.size(); ++i)
      if (!(ax.edges[i] > ax.edges[i - 1])) throw AbstractionError("edges of axis '" + ax.name + "' must increase");
    total *= ax.bins();
  }
  t.cells.reserve(total);
  for (std::size_t c = 0; c < total; ++c) {
    Cell cell;
    cell.lower.resize(t.axes.size());
    cell.upper.resize(t.axes.size());
    std::size_t rest = c;
    for (std::size_t d = t.axes.size(); d-- > 0;) {
      const std::size_t bin = rest % t.axes[d].bins();
      rest /= t.axes[d].bins();
      cell.lower[d] = t.axes[d].edges[bin];
      cell.upper[d] = t.axes[d].edges[bin + 1];
    }
    cell.label = labeler(cell);
    t.cells.push_back(std::move(cell));
  }
  return t;
}

/// Partition of (attitude rate, wheel-speed fraction, stored-charge fraction).
struct PartitionSpec {
  std::vector<double> rate_edges{0.0, 0.002, 0.004, 0.007, 0.01};
  std::vector<double> wheel_edges{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> charge_edges{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  /// low-charge region: charge < charge_threshold
  double charge_threshold = 0.2;
  /// high-wheel-speed region: wheel > wheel_threshold
  double wheel_threshold = 0.8;
};

/// Safety propositions of the spacecraft partition, in table order.
inline const std::vector<std::string>& safety_atoms()
{
  static const std::vector<std::string> atoms{"p1", "p2"};
  return atoms;
}

inline CellTable make_partition(const PartitionSpec& spec)
{
  auto has_edge = [](const std::vector<double>& edges, double x) {
    return std::any_of(edges.begin(), edges.end(), [x](double e) { return std::abs(e - x) < 1e-12; });
  };
  if (!has_edge(spec.charge_edges, spec.charge_threshold))
    throw RegionMisalignment("charge threshold " + std::to_string(spec.charge_threshold) + " is not a bin edge");
  if (!has_edge(spec.wheel_edges, spec.wheel_threshold))
    throw RegionMisalignment("wheel threshold " + std::to_string(spec.wheel_threshold) + " is not a bin edge");
  std::vector<Axis> axes{{"rate", spec.rate_edges, false},
                         {"wheel", spec.wheel_edges, true},
                         {"charge", spec.charge_edges, false}};
  const double ct = spec.charge_threshold;
  const double wt = spec.wheel_threshold;
  return make_grid(std::move(axes), safety_atoms(), [ct, wt](const Cell& c) {
    Assignment a;
    if (c.upper[2] <= ct + 1e-12) a = a.with(0);
    if (c.lower[1] >= wt - 1e-12) a = a.with(1);
    return a;
  });
}

/// Simulator interface required by the estimator.
template <class S>
concept AbstractionSimulator = requires(const S& sim, const Cell& cell, const typename S::State& x, int a, Rng& rng) {
  typename S::State;
  { sim.sample_in_cell(cell, rng) } -> std::same_as<typename S::State>;
  { sim.step(x, a, rng) } -> std::same_as<typename S::State>;
  /// Abstraction coordinates of x, or nullopt when x left the domain.
  { sim.abstract(x) } -> std::same_as<std::optional<std::vector<double>>>;
  { sim.action_names() } -> std::convertible_to<std::vector<std::string>>;
};

struct AbstractionConfig {
  std::size_t samples_per_cell = 10'000;
  std::uint64_t seed = 1;
  /// 0 = hardware concurrency
  unsigned threads = 1;
};

/// Estimated safety MDP: states are the cells plus one absorbing exit cell
/// labeled with every safety atom. Each (cell, action) pair uses its own RNG
/// stream derived from (seed, cell, action), so the result does not depend on
/// the thread count.
template <AbstractionSimulator Sim>
FiniteMdp estimate_transitions(const Sim& sim, const CellTable& cells, const AbstractionConfig& cfg)
{
  if (cfg.samples_per_cell == 0) throw AbstractionError("samples_per_cell must be positive");
  const std::vector<std::string> actions = sim.action_names();
  const std::size_t m = cells.cells.size() + 1;
  const std::size_t k = actions.size();
  FiniteMdp mdp(m, actions, cells.atoms);

  std::vector<std::vector<Transition>> rows(cells.cells.size() * k);
  auto estimate = [&](std::size_t task) {
    const std::size_t q = task / k;
    const std::size_t a = task % k;
    Rng rng = make_rng(cfg.seed, "abstraction", q, a);
    std::vector<std::uint64_t> counts(m, 0);
    for (std::size_t i = 0; i < cfg.samples_per_cell; ++i) {
      try {
        const auto x = sim.sample_in_cell(cells.cells[q], rng);
        const auto y = sim.step(x, static_cast<int>(a), rng);
        const auto coords = sim.abstract(y);
        ++counts[coords ? cells.locate_or_exit(*coords) : cells.exit_index()];
      } catch (const SimulatorFailure&) {
        throw;
      } catch (const std::exception& e) {
        throw SimulatorFailure(static_cast<int>(q), static_cast<int>(a), i, e.what());
      }
    }
    std::vector<Transition> row;
    for (std::size_t t = 0; t < m; ++t)
      if (counts[t] > 0)
        row.push_back({static_cast<int>(t), static_cast<double>(counts[t]) / static_cast<double>(cfg.samples_per_cell)});
    rows[task] = std::move(row);
  };

  const std::size_t tasks = rows.size();
  unsigned threads = cfg.threads == 0 ? std::max(1U, std::thread::hardware_concurrency()) : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(tasks, 1)));
  if (threads <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) estimate(t);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t = w; t < tasks; t += threads) estimate(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (std::size_t q = 0; q < cells.cells.size(); ++q) {
    mdp.set_label(static_cast<int>(q), cells.cells[q].label);
    mdp.set_info(static_cast<int>(q), StateInfo{"cell" + std::to_string(q), cells.cells[q].lower, cells.cells[q].upper});
    for (std::size_t a = 0; a < k; ++a) mdp.set_row(static_cast<int>(q), static_cast<int>(a), std::move(rows[q * k + a]));
  }
  const int exit = static_cast<int>(cells.exit_index());
  mdp.set_label(exit, cells.exit_label());
  mdp.set_info(exit, StateInfo{"unsafe-exit", {}, {}});
  for (std::size_t a = 0; a < k; ++a) mdp.set_row(exit, static_cast<int>(a), {{exit, 1.0}});
  return mdp;
}

struct WilsonInterval {
  double lower;
  double upper;
  double half_width() const noexcept { return 0.5 * (upper - lower); }
};

/// 95% Wilson score interval for a proportion estimated from n samples.
inline WilsonInterval wilson_interval(double p_hat, std::size_t n, double z = 1.959963984540054)
{
  const double nn = static_cast<double>(n);
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p_hat + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p_hat * (1.0 - p_hat) / nn + z2 / (4.0 * nn * nn));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct RowReport {
  int state;
  int action;
  double entropy;  // nats
  bool deterministic;
  std::vector<int> targets;
  std::vector<double> half_widths;
};

struct AbstractionReport {
  std::size_t samples_per_cell = 0;
  std::size_t deterministic_rows = 0;
  std::vector<RowReport> rows;
};

inline AbstractionReport abstraction_report(const FiniteMdp& m, const AbstractionConfig& cfg)
{
  if (m.num_states() == 0 || m.num_actions() == 0) throw EmptyModel();
  AbstractionReport r;
  r.samples_per_cell = cfg.samples_per_cell;
  for (std::size_t q = 0; q < m.num_states(); ++q)
    for (std::size_t a = 0; a < m.num_actions(); ++a) {
      RowReport row{static_cast<int>(q), static_cast<int>(a), 0.0, false, {}, {}};
      const auto& entries = m.row(static_cast<int>(q), static_cast<int>(a));
      for (const auto& t : entries) {
        if (t.probability > 0.0) row.entropy -= t.probability * std::log(t.probability);
        row.targets.push_back(t.target);
        row.half_widths.push_back(wilson_interval(t.probability, cfg.samples_per_cell).half_width());
      }
      row.deterministic = entries.size() == 1;
      if (row.deterministic) ++r.deterministic_rows;
      r.rows.push_back(std::move(row));
    }
  return r;
}

inline nlohmann::json to_json(const AbstractionReport& r)
{
  nlohmann::json j;
  j["samples_per_cell"] = r.samples_per_cell;
  j["deterministic_rows"] = r.deterministic_rows;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"state", row.state},
                    {"action", row.action},
                    {"entropy", row.entropy},
                    {"targets", row.targets},
                    {"half_widths", row.half_widths}});
  j["rows"] = std::move(rows);
  return j;
}

}  // namespace ltlshield
