#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "topodef/evalkit.hpp"
#include "topodef/stats.hpp"

using namespace topodef;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Monte Carlo one-sided permutation p-value for mean(a) - mean(b).
double permutation_p(const std::vector<double>& a, const std::vector<double>& b, int rounds, std::uint64_t seed) {
  const double observed = mean(a) - mean(b);
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  std::mt19937_64 gen(seed);
  int hits = 0;
  for (int r = 0; r < rounds; ++r) {
    std::shuffle(pool.begin(), pool.end(), gen);
    const std::span<const double> all(pool);
    if (mean(all.first(a.size())) - mean(all.subspan(a.size())) >= observed) ++hits;
  }
  return static_cast<double>(hits) / rounds;
}

}  // namespace

TEST(Histogram, BinsAndDegenerateRange) {
  const std::vector<double> v = {0, 1, 2, 3, 4};
  const Histogram h = make_histogram(v, 4);
  EXPECT_EQ(h.edges, (std::vector<double>{0, 1, 2, 3, 4}));
  EXPECT_EQ(h.counts, (std::vector<int>{1, 1, 1, 2}));
  const Histogram d = make_histogram(std::vector<double>{-3, -3}, 10);
  EXPECT_EQ(d.edges, (std::vector<double>{-3.5, -2.5}));
  EXPECT_EQ(d.counts, (std::vector<int>{2}));
}

TEST(Summary, RejectsEmptyAndOrdersQuantiles) {
  EXPECT_THROW(summarize_returns({}, 0), std::invalid_argument);
  EXPECT_THROW(evaluate(UniformPolicy(), default_scenario2(), 0, 1), std::invalid_argument);
  const ReturnSummary s = summarize_returns({-5, -1, -3, -2, -4}, 9);
  EXPECT_EQ(s.median, -3);
  EXPECT_EQ(s.p25, -4);
  EXPECT_EQ(s.p75, -2);
  EXPECT_EQ(s.min, -5);
  EXPECT_EQ(s.max, -1);
  EXPECT_EQ(s.mean, -3);
  EXPECT_EQ(s.returns, (std::vector<double>{-5, -1, -3, -2, -4}));
}

TEST(Evaluate, RandomPolicyLosesAndIsReproducible) {
  const ReturnSummary a = evaluate(UniformPolicy(), default_scenario2(), 60, 5);
  const ReturnSummary b = evaluate(UniformPolicy(), default_scenario2(), 60, 5, 3);
  EXPECT_EQ(a, b);
  EXPECT_LT(a.mean, 0.0);
  EXPECT_LE(a.min, a.p25);
  EXPECT_LE(a.p25, a.median);
  EXPECT_LE(a.median, a.p75);
  EXPECT_LE(a.p75, a.max);
  int total = 0;
  for (int c : a.histogram.counts) total += c;
  EXPECT_EQ(total, 60);
  EXPECT_NE(a, evaluate(UniformPolicy(), default_scenario2(), 60, 6));
}

TEST(Evaluate, ParamsOverloadMatchesWrappedPolicy) {
  const PolicyParams p = init_policy(PolicySpec{}, 4);
  EXPECT_EQ(evaluate(p, default_scenario2(), 10, 2), evaluate(GatPolicy(p), default_scenario2(), 10, 2));
}

TEST(RtgTable, CountsAndExtremes) {
  const std::vector<std::vector<double>> rewards = {{-1, -1, -1}, {0, 0, 0}, {-1, 0, -10}};
  const RtgTable t = rtg_table(rewards, 5);
  EXPECT_EQ(t.horizon, 3);
  EXPECT_EQ(t.episodes, 3);
  for (const auto& row : t.counts) {
    int s = 0;
    for (int c : row) s += c;
    EXPECT_EQ(s, 3);
  }
  EXPECT_EQ(t.step_min, (std::vector<double>{-11, -10, -10}));
  EXPECT_EQ(t.step_max, (std::vector<double>{0, 0, 0}));
  EXPECT_DOUBLE_EQ(t.step_mean[0], (-3.0 - 11.0) / 3.0);
  EXPECT_EQ(t.edges.front(), -11);
  EXPECT_EQ(t.edges.back(), 0);

  const RtgTable z = rtg_table({{0, 0}, {0, 0}}, 4);
  EXPECT_EQ(z.counts, (std::vector<std::vector<int>>{{2}, {2}}));
  EXPECT_NE(rtg_csv(t).find("step,bin_lo,bin_hi,count\n"), std::string::npos);
  EXPECT_THROW(rtg_table({}, 3), std::invalid_argument);
}

TEST(RtgTable, FromPolicyRollouts) {
  const RtgTable t = rtg_histogram(UniformPolicy(), default_scenario2(), 20, 1, 10);
  EXPECT_EQ(t.horizon, 30);
  for (std::size_t s = 0; s + 1 < t.step_min.size(); ++s) EXPECT_LE(t.step_min[s], t.step_min[s + 1]);
}

TEST(CrossEval, ShapeAndOrder) {
  const auto p = std::make_shared<GatPolicy>(init_policy(PolicySpec{}, 1));
  const auto q = std::make_shared<GatPolicy>(init_policy(PolicySpec{}, 2));
  const std::vector<LabeledScenario> scenarios = {{"s2", default_scenario2()},
                                                  {"m1", make_variant(default_scenario2(), -1)},
                                                  {"p1", make_variant(default_scenario2(), 1)}};
  const auto cells = cross_eval({{"a", p}, {"b", q}}, scenarios, 4, 3);
  ASSERT_EQ(cells.size(), 9u);
  EXPECT_EQ(cells[0].policy, "a");
  EXPECT_EQ(cells[2].scenario, "p1");
  EXPECT_EQ(cells[3].policy, "b");
  EXPECT_EQ(cells[8].policy, "random");
  EXPECT_EQ(cells[4].summary, evaluate(*q, scenarios[1].scenario, 4, 3));
  EXPECT_EQ(cross_eval({{"a", p}}, scenarios, 2, 3, false).size(), 3u);
  EXPECT_THROW(cross_eval({{"a", p}, {"a", q}}, scenarios, 2, 3), std::invalid_argument);
}

TEST(Welch, DegenerateAndSeparated) {
  const std::vector<double> same = {1, 2, 3, 4};
  EXPECT_NEAR(welch_test(same, same).p_value, 0.5, 1e-12);
  const std::vector<double> c1(5, 2.0), c2(5, 1.0);
  EXPECT_EQ(welch_test(c1, c1).p_value, 0.5);
  EXPECT_EQ(welch_test(c1, c2).p_value, 0.0);
  EXPECT_EQ(welch_test(c2, c1).p_value, 1.0);
  const std::vector<double> hi = {10, 10.5, 9.5, 10.2, 9.8}, lo = {0, 0.5, -0.5, 0.2, -0.2};
  EXPECT_LT(welch_test(hi, lo).p_value, 1e-6);
  EXPECT_GT(welch_test(lo, hi).p_value, 1 - 1e-6);
}

TEST(Welch, HandComputedStatistic) {
  const std::vector<double> a = {1, 2, 3}, b = {2, 4, 6, 8};
  const WelchResult r = welch_test(a, b);
  const double sa = 1.0 / 3.0, sb = (20.0 / 3.0) / 4.0;
  EXPECT_NEAR(r.t, (2.0 - 5.0) / std::sqrt(sa + sb), 1e-12);
  EXPECT_NEAR(r.df, (sa + sb) * (sa + sb) / (sa * sa / 2 + sb * sb / 3), 1e-12);
}

TEST(Welch, AgreesWithPermutationOracle) {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> x(0.3, 1.0), y(0.0, 1.0);
  std::vector<double> a(60), b(60);
  for (auto& v : a) v = x(gen);
  for (auto& v : b) v = y(gen);
  EXPECT_NEAR(welch_test(a, b).p_value, permutation_p(a, b, 20000, 4), 0.02);
}

TEST(Stress, ZeroRateMatchesCleanRun) {
  const PolicyParams p = init_policy(PolicySpec{}, 6);
  const GatPolicy pol(p);
  const StressReport r = stress_dynamic_edges(pol, default_scenario2(), 0.0, 15, 8);
  EXPECT_EQ(r.clean, evaluate(pol, default_scenario2(), 15, 8));
  EXPECT_EQ(r.stressed.returns, r.clean.returns);
  EXPECT_EQ(r.injected_edges, 0u);
  EXPECT_EQ(r.degradation, 0.0);
}

TEST(Stress, FullRateInjectsEveryStep) {
  const GatPolicy pol(init_policy(PolicySpec{}, 6));
  const StressReport r = stress_dynamic_edges(pol, default_scenario2(), 1.0, 10, 8);
  EXPECT_EQ(r.forward_failures, 0);
  EXPECT_EQ(r.steps, 300u);
  EXPECT_EQ(r.injected_edges, 300u);
  EXPECT_EQ(r.steps_with_offlayout_edges, r.steps);
  EXPECT_EQ(r.stressed.episodes, 10);
  EXPECT_THROW(make_edge_injector(1.5), std::invalid_argument);
}

TEST(EdgeInfluence, ChangesStayInsideReceptiveField) {
  const PolicyParams p = init_policy(PolicySpec{}, 13);
  const auto obs = encode_graph(reset(default_scenario2(), 0));
  for (auto [from, to] : std::vector<std::pair<int, int>>{{0, 12}, {3, 9}, {12, 1}}) {
    const EdgeInfluence inf = edge_influence(p, obs, from, to);
    EXPECT_TRUE(inf.changed[static_cast<std::size_t>(to)]);
    for (int u = 0; u < obs.num_nodes(); ++u) {
      if (inf.changed[static_cast<std::size_t>(u)]) EXPECT_TRUE(inf.receptive[static_cast<std::size_t>(u)]) << u;
      if (inf.hops_from_edge[static_cast<std::size_t>(u)] > p.spec.num_layers - 1)
        EXPECT_FALSE(inf.changed[static_cast<std::size_t>(u)]) << u;
    }
  }
  EXPECT_THROW(edge_influence(p, obs, 2, 2), std::out_of_range);
}

TEST(Reports, CsvJsonAndDeterminism) {
  const auto p = std::make_shared<GatPolicy>(init_policy(PolicySpec{}, 1));
  const std::vector<LabeledScenario> scenarios = {{"s2", default_scenario2()}};
  const auto cells = cross_eval({{"a", p}}, scenarios, 5, 3);
  const std::string csv = report_csv(cells);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "policy,scenario,episodes,mean,median,p25,p75,min,max");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(report_from_json(nlohmann::json::parse(report_json(cells).dump())), cells);

  const fs::path dir = fs::temp_directory_path() / ("topodef_report_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  write_report_json(cells, dir / "a.json");
  write_report_json(cross_eval({{"a", p}}, scenarios, 5, 3), dir / "b.json");
  write_report_csv(cells, dir / "a.csv");
  EXPECT_EQ(read_file(dir / "a.json"), read_file(dir / "b.json"));
  EXPECT_EQ(read_file(dir / "a.csv"), csv);
  EXPECT_EQ(load_report_json(dir / "a.json"), cells);
  fs::remove_all(dir);
}
