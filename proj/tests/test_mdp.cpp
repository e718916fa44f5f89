#include <gtest/gtest.h>

#include <ltlshield/mdp.hpp>

using namespace ltlshield;

namespace {

// q0 --a0--> q1 (0.25) | q0 (0.75); q0 --a1--> q2; q1, q2 loop. q2 is labeled bad.
FiniteMdp tiny()
{
  FiniteMdp m(3, {"a0", "a1"}, {"bad"});
  m.set_row(0, 0, {{1, 0.25}, {0, 0.75}});
  m.set_row(0, 1, {{2, 1.0}});
  for (int q = 1; q < 3; ++q)
    for (int a = 0; a < 2; ++a) m.set_row(q, a, {{q, 1.0}});
  m.set_label(2, Assignment{1});
  return m;
}

Dfa reach_bad() { return Dfa({"bad"}, 0, {0, 1, 1, 1}, {false, true}); }

}  // namespace

TEST(FiniteMdp, RowsAreSortedAndMerged)
{
  FiniteMdp m(3, {"a"}, {});
  m.set_row(0, 0, {{2, 0.5}, {1, 0.2}, {2, 0.3}});
  ASSERT_EQ(m.row(0, 0).size(), 2U);
  EXPECT_EQ(m.row(0, 0)[0].target, 1);
  EXPECT_DOUBLE_EQ(m.row(0, 0)[1].probability, 0.8);
  m.add_transition(1, 0, 0, 1.0);
  EXPECT_DOUBLE_EQ(m.probability(1, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.probability(1, 0, 2), 0.0);
  EXPECT_THROW(m.row(3, 0), MdpError);
  EXPECT_THROW(m.row(0, 1), MdpError);
}

TEST(FiniteMdp, ValidateReportsEveryDefect)
{
  FiniteMdp m(2, {"a", "b"}, {"x"});
  m.set_row(0, 0, {{0, 0.5}, {1, 0.4}});
  m.set_row(0, 1, {{5, 1.0}});
  m.set_row(1, 0, {{0, 1.2}, {1, -0.2}});
  m.set_label(1, Assignment{4});
  auto defects = validate(m);
  auto has = [&](Defect::Type t, int q, int a) {
    return std::any_of(defects.begin(), defects.end(),
                       [&](const Defect& d) { return d.type == t && d.state == q && d.action == a; });
  };
  EXPECT_TRUE(has(Defect::Type::RowSum, 0, 0));
  EXPECT_TRUE(has(Defect::Type::TargetRange, 0, 1));
  EXPECT_TRUE(has(Defect::Type::ProbabilityRange, 1, 0));
  EXPECT_TRUE(has(Defect::Type::MissingAction, 1, 1));
  EXPECT_TRUE(std::any_of(defects.begin(), defects.end(), [](const Defect& d) { return d.type == Defect::Type::LabelRange; }));
  EXPECT_TRUE(validate(tiny()).empty());
  EXPECT_NE(defects.front().describe().find("Error"), std::string::npos);
}

TEST(Product, IndexingAndLabelOfEnteredState)
{
  const ProductMdp pm = product(tiny(), reach_bad());
  EXPECT_EQ(pm.num_states(), 6U);
  EXPECT_EQ(pm.state(2, 1), 5);
  EXPECT_EQ(pm.mdp_state(5), 2);
  EXPECT_EQ(pm.dfa_state(5), 1);
  // stepping into q2 moves the automaton on q2's label
  const auto t = pm.transitions(pm.state(0, 0), 1);
  ASSERT_EQ(t.size(), 1U);
  EXPECT_EQ(t[0].target, pm.state(2, 1));
  EXPECT_DOUBLE_EQ(pm.probability(pm.state(0, 0), 0, pm.state(1, 0)), 0.25);
  EXPECT_TRUE(pm.is_final(pm.state(1, 1)));
  EXPECT_FALSE(pm.is_final(pm.state(2, 0)));
  // starting in q2 already reads its label
  EXPECT_EQ(pm.initial_state(2), pm.state(2, 1));
  EXPECT_EQ(pm.initial_state(0), pm.state(0, 0));
}

TEST(Product, RowsStayStochastic)
{
  const ProductMdp pm = product(tiny(), reach_bad());
  for (std::size_t s = 0; s < pm.num_states(); ++s)
    for (std::size_t a = 0; a < pm.num_actions(); ++a) {
      double sum = 0.0;
      for (const auto& t : pm.transitions(static_cast<int>(s), static_cast<int>(a))) sum += t.probability;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Product, AtomTablesMustMatch)
{
  EXPECT_THROW(product(tiny(), Dfa({"other"}, 0, {0, 1, 1, 1}, {false, true})), AtomMismatch);
}

TEST(TraceCheck, FirstIndices)
{
  const Dfa live({"bad"}, 0, {0, 1, 1, 1}, {false, true});
  const std::vector<Assignment> w{Assignment{0}, Assignment{0}, Assignment{1}};
  const TraceCheck c = check_trace(w, live, live);
  EXPECT_TRUE(c.sat_liveness);
  EXPECT_EQ(c.first_liveness, 2U);
  EXPECT_TRUE(c.violated_safety);
  EXPECT_FALSE(c.satisfied());
}

TEST(Json, RoundTrip)
{
  FiniteMdp m = tiny();
  m.set_info(0, StateInfo{"start", {0.0}, {1.0}});
  const FiniteMdp back = mdp_from_json(to_json(m));
  EXPECT_EQ(back, m);
  const auto j = to_json(m);
  EXPECT_EQ(j.at("states").at("count"), 3);
  EXPECT_EQ(j.at("transitions").size(), 7U);
}

TEST(Json, BadSourceIsRejected)
{
  auto j = to_json(tiny());
  j["transitions"].push_back({7, 0, 0, 1.0});
  EXPECT_THROW(mdp_from_json(j), MdpError);
}
