#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "topodef/stats.hpp"
#include "topodef/train.hpp"

using namespace topodef;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const Topology> short_topology(int horizon) {
  Scenario s = default_scenario2();
  s.dynamics.horizon = horizon;
  return Topology::build(s);
}

TrainConfig small_config(int batch, int horizon) {
  TrainConfig cfg;
  cfg.episodes_per_batch = batch;
  cfg.horizon = horizon;
  cfg.iterations = 2;
  cfg.seed = 3;
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("topodef_train_" + tag + std::to_string(std::random_device{}()));
  fs::create_directories(p);
  return p;
}

void expect_grads_equal(const PolicyGrads& a, const PolicyGrads& b, double tol) {
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_NEAR(fa[i], fb[i], tol) << i;
}

}  // namespace

TEST(RewardsToGo, Examples) {
  const std::vector<double> r = {-1, 0, -10};
  EXPECT_EQ(rewards_to_go(r, 1.0), (std::vector<double>{-11, -10, -10}));
  EXPECT_EQ(rewards_to_go(r, 0.0), r);
  EXPECT_EQ(rewards_to_go(r, 0.5), (std::vector<double>{-3.5, -5, -10}));
  EXPECT_EQ(rewards_to_go(std::vector<double>(4, 0.0), 1.0), std::vector<double>(4, 0.0));
  EXPECT_TRUE(rewards_to_go(std::vector<double>{}, 1.0).empty());
}

TEST(NormalizeReturns, Cases) {
  EXPECT_EQ(normalize_returns(std::vector<double>(5, -3.0)), std::vector<double>(5, 0.0));
  const auto z = normalize_returns(std::vector<double>{-1, 1});
  EXPECT_NEAR(z[0], -1.0, 1e-7);
  EXPECT_NEAR(z[1], 1.0, 1e-7);

  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd(-20, 7);
  std::vector<double> v(1000);
  for (auto& x : v) x = nd(gen);
  const auto n = normalize_returns(v);
  EXPECT_NEAR(mean(n), 0.0, 1e-12);
  EXPECT_NEAR(stddev(n), 1.0, 1e-8);
}

TEST(NormalizeReturns, BatchAndPerTimestep) {
  std::vector<Trajectory> batch(2);
  batch[0].rewards = {-1, -1};
  batch[1].rewards = {-3, 0};
  TrainConfig cfg;
  const auto all = normalized_batch_returns(batch, cfg);
  EXPECT_EQ(batch[0].returns_to_go, (std::vector<double>{-2, -1}));
  EXPECT_EQ(batch[1].returns_to_go, (std::vector<double>{-3, 0}));
  const auto ref = normalize_returns(std::vector<double>{-2, -1, -3, 0});
  EXPECT_EQ(all[0][1], ref[1]);
  EXPECT_EQ(all[1][0], ref[2]);

  cfg.per_timestep_normalization = true;
  const auto per = normalized_batch_returns(batch, cfg);
  EXPECT_NEAR(per[0][0], 1.0, 1e-7);
  EXPECT_NEAR(per[1][0], -1.0, 1e-7);
  EXPECT_NEAR(per[0][1], -1.0, 1e-7);
  EXPECT_NEAR(per[1][1], 1.0, 1e-7);
}

TEST(CollectBatch, ShapesAndDeterminism) {
  const auto topo = short_topology(30);
  TrainConfig cfg = small_config(6, 30);
  const PolicyParams p = init_policy(cfg.policy, 0);
  const PolicyParams before = p;
  const auto a = collect_batch(p, topo, cfg, 0);
  ASSERT_EQ(a.size(), 6u);
  for (const auto& t : a) {
    EXPECT_EQ(t.length(), 30u);
    EXPECT_EQ(t.observations.size(), 30u);
    EXPECT_EQ(t.actions.size(), 30u);
    for (double r : t.rewards) EXPECT_LE(r, 0.0);
  }
  EXPECT_EQ(p, before);
  cfg.workers = 3;
  const auto b = collect_batch(p, topo, cfg, 0);
  for (std::size_t e = 0; e < a.size(); ++e) {
    EXPECT_EQ(a[e].actions, b[e].actions);
    EXPECT_EQ(a[e].rewards, b[e].rewards);
    EXPECT_EQ(a[e].seed, episode_seed(cfg.seed, 0, static_cast<int>(e)));
  }
  const auto c = collect_batch(p, topo, cfg, 1);
  EXPECT_NE(a[0].seed, c[0].seed);
}

TEST(RunEpisode, LogProbsMatchPolicy) {
  const auto topo = short_topology(5);
  const PolicyParams p = init_policy(PolicySpec{}, 2);
  EpisodeOptions opts;
  opts.keep_observations = true;
  const Trajectory t = run_episode(GatPolicy(p), topo, 11, opts);
  for (std::size_t i = 0; i < t.length(); ++i)
    EXPECT_EQ(t.log_probs[i], policy_forward(p, t.observations[i]).log_probs[t.actions[i]]);
  EXPECT_EQ(run_episode(GatPolicy(p), topo, 11).rewards, t.rewards);
}

TEST(PolicyGradient, ZeroAdvantageGivesZeroGradient) {
  const auto topo = short_topology(4);
  const TrainConfig cfg = small_config(3, 4);
  const PolicyParams p = init_policy(cfg.policy, 1);
  const auto batch = collect_batch(p, topo, cfg, 0);
  std::vector<std::vector<double>> zeros(3, std::vector<double>(4, 0.0));
  for (double g : policy_gradient(p, batch, zeros).flatten()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(surrogate_loss(p, batch, zeros), 0.0);
}

TEST(PolicyGradient, MatchesFiniteDifferences) {
  const auto topo = short_topology(3);
  TrainConfig cfg = small_config(2, 3);
  const PolicyParams p = init_policy(cfg.policy, 7);
  auto batch = collect_batch(p, topo, cfg, 0);
  batch.resize(1);
  const std::vector<std::vector<double>> adv = {{0.8, -1.3, 0.4}};
  const PolicyGrads g = policy_gradient(p, batch, adv);
  auto loss = [&](std::span<const double> flat) {
    PolicyParams q = p;
    q.assign(flat);
    return surrogate_loss(q, batch, adv);
  };
  EXPECT_LT(gat::finite_diff_check(loss, p.flatten(), g.flatten()).max_rel_error, 1e-6);
}

TEST(PolicyGradient, DuplicateEpisodesAverage) {
  const auto topo = short_topology(5);
  const TrainConfig cfg = small_config(2, 5);
  const PolicyParams p = init_policy(cfg.policy, 4);
  auto batch = collect_batch(p, topo, cfg, 0);
  batch.resize(1);
  const std::vector<std::vector<double>> adv = {{1.0, -0.5, 0.25, 2.0, -1.0}};
  const PolicyGrads one = policy_gradient(p, batch, adv);
  const std::vector<Trajectory> twice = {batch[0], batch[0]};
  const PolicyGrads two = policy_gradient(p, twice, {adv[0], adv[0]});
  expect_grads_equal(one, two, 1e-14);
}

TEST(PolicyGradient, WorkerCountInvariant) {
  const auto topo = short_topology(6);
  TrainConfig cfg = small_config(7, 6);
  const PolicyParams p = init_policy(cfg.policy, 4);
  auto batch = collect_batch(p, topo, cfg, 0);
  const auto adv = normalized_batch_returns(batch, cfg);
  EXPECT_EQ(policy_gradient(p, batch, adv, 1).flatten(), policy_gradient(p, batch, adv, 3).flatten());
}

TEST(Adam, ZeroGradientLeavesParams) {
  TrainConfig cfg;
  PolicyParams p = init_policy(cfg.policy, 0);
  const PolicyParams before = p;
  AdamState s = AdamState::zeros(cfg.policy);
  adam_step(p, PolicyParams::zeros(cfg.policy), s, cfg);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.t, 1);
}

TEST(Adam, HandComputedSteps) {
  TrainConfig cfg;
  PolicyParams p = PolicyParams::zeros(cfg.policy);
  AdamState s = AdamState::zeros(cfg.policy);
  PolicyGrads g = PolicyParams::zeros(cfg.policy);
  g.head_bias(0, 0) = 0.5;
  adam_step(p, g, s, cfg);
  EXPECT_NEAR(p.head_bias(0, 0), -0.01 * 0.5 / (0.5 + 1e-8), 1e-15);

  g.head_bias(0, 0) = -2.0;
  adam_step(p, g, s, cfg);
  const double m = 0.9 * 0.05 + 0.1 * -2.0;
  const double v = 0.999 * 0.00025 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81);
  const double vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.head_bias(0, 0), -0.01 * 0.5 / (0.5 + 1e-8) - 0.01 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
  EXPECT_EQ(p.head_bias(0, 1), 0.0);
}

TEST(Adam, NonFiniteGradientThrowsWithoutSideEffects) {
  TrainConfig cfg;
  PolicyParams p = init_policy(cfg.policy, 0);
  const PolicyParams before = p;
  AdamState s = AdamState::zeros(cfg.policy);
  PolicyGrads g = PolicyParams::zeros(cfg.policy);
  g.layers[1].W_t(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step(p, g, s, cfg), NonFiniteGradient);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.t, 0);
  g.layers[1].W_t(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(p, g, s, cfg), NonFiniteGradient);
}

TEST(Train, ZeroIterationsReturnsInitialParams) {
  TrainConfig cfg = small_config(4, 5);
  cfg.iterations = 0;
  const TrainResult r = train(cfg, default_scenario2());
  EXPECT_EQ(r.params, init_policy(cfg.policy, cfg.seed));
  EXPECT_TRUE(r.metrics.empty());
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.episodes_per_batch = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.gamma = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Train, RunsAreReproducibleAndWriteArtifacts) {
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  TrainConfig cfg = small_config(6, 8);
  cfg.iterations = 3;
  cfg.ckpt_every = 2;
  cfg.out_dir = a;
  const TrainResult ra = train(cfg, default_scenario2());
  cfg.out_dir = b;
  cfg.workers = 2;
  const TrainResult rb = train(cfg, default_scenario2());
  EXPECT_EQ(ra.params, rb.params);
  EXPECT_NE(ra.params, init_policy(cfg.policy, cfg.seed));
  ASSERT_EQ(ra.metrics.size(), 3u);
  EXPECT_EQ(read_file(a / "policy.json"), read_file(b / "policy.json"));
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  EXPECT_TRUE(fs::exists(a / "ckpt_2.json"));
  EXPECT_TRUE(fs::exists(a / "timing.csv"));
  EXPECT_EQ(read_file(a / "metrics.csv").substr(0, 60).find("iteration,mean_return,median_return,p25,p75,grad_norm"), 0u);
  EXPECT_EQ(load_checkpoint(a / "policy.json").params, ra.params);
  EXPECT_EQ(load_checkpoint(a / "policy.json").meta.iterations, 3);
  for (const auto& m : ra.metrics) {
    EXPECT_LE(m.p25, m.median_return);
    EXPECT_LE(m.median_return, m.p75);
    EXPECT_GE(m.grad_norm, 0.0);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(ParallelFor, VisitsEverySlotAndRethrows) {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](int i) { hit[static_cast<std::size_t>(i)] += 1; });
  EXPECT_EQ(hit, std::vector<int>(50, 1));
  EXPECT_THROW(parallel_for(10, 3, [](int i) {
                 if (i == 7) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}
