#include <gtest/gtest.h>

#include <set>

#include "topodef/netsim.hpp"

using namespace topodef;

namespace {

std::shared_ptr<const Topology> topo_with(Dynamics d) {
  Scenario s = default_scenario2();
  s.dynamics = d;
  return Topology::build(s);
}

int node(const SimState& st, const std::string& name) { return st.scenario().index_of(name); }

// Everything NotCompromised, including the entry host, so single penalty
// terms can be isolated.
SimState blank_state() {
  SimState st = reset(default_scenario2(), 0);
  for (auto& h : st.hosts) h.compromise = CompromiseLevel::NotCompromised;
  return st;
}

BlueAction random_action(Rng& rng, int n) {
  const std::size_t k = rng.below(static_cast<std::size_t>(10 * n + 2));
  if (k < 2) return {kGlobalNode, static_cast<int>(k)};
  return {static_cast<int>((k - 2) / 10), static_cast<int>((k - 2) % 10)};
}

}  // namespace

TEST(Reset, EntryPrivilegedOthersClean) {
  const SimState st = reset(default_scenario2(), 0);
  EXPECT_EQ(st.hosts[0].compromise, CompromiseLevel::Privileged);
  for (int i = 1; i < 13; ++i) {
    EXPECT_EQ(st.hosts[static_cast<std::size_t>(i)].compromise, CompromiseLevel::NotCompromised);
    EXPECT_TRUE(st.hosts[static_cast<std::size_t>(i)].connections.empty());
    EXPECT_TRUE(st.hosts[static_cast<std::size_t>(i)].decoys.empty());
  }
  EXPECT_EQ(st.step_index, 0);
  EXPECT_EQ(st.last_blue, LastBlue{});
  EXPECT_EQ(st.red.footholds.at(0), CompromiseLevel::Privileged);
}

TEST(Reset, SameSeedEqualStates) {
  EXPECT_EQ(reset(default_scenario2(), 7), reset(default_scenario2(), 7));
  EXPECT_FALSE(reset(default_scenario2(), 7) == reset(default_scenario2(), 8));
}

TEST(BlueStep, SleepOnFreshStateCostsOneUserBreach) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SimState st = reset(default_scenario2(), seed);
    const StepResult r = blue_step(st, BlueAction::sleep());
    EXPECT_EQ(r.outcome.reward, -0.1);
    ASSERT_EQ(r.outcome.events.size(), 1u);
    EXPECT_EQ(r.outcome.events[0].kind, EventKind::UserBreach);
    EXPECT_EQ(r.red_action, (RedAction{RedActionKind::Scan, 1}));
    EXPECT_EQ(st.step_index, 1);
  }
}

TEST(BlueStep, RestoreAlwaysPenalised) {
  SimState st = reset(default_scenario2(), 3);
  const StepResult r = blue_step(st, BlueAction::restore(node(st, "Op_Host1")));
  EXPECT_TRUE(r.blue_success);
  EXPECT_EQ(r.outcome.reward, -1.1);
  bool restore_event = false;
  for (const auto& e : r.outcome.events) restore_event |= e.kind == EventKind::Restore && e.amount == -1.0;
  EXPECT_TRUE(restore_event);
}

TEST(BlueStep, DeterministicSuccessor) {
  SimState a = reset(default_scenario2(), 11);
  SimState b = reset(default_scenario2(), 11);
  for (int i = 0; i < 30; ++i) {
    const BlueAction act = BlueAction::decoy(i % 13, static_cast<DecoyKind>(i % 7));
    const StepResult ra = blue_step(a, act);
    const StepResult rb = blue_step(b, act);
    EXPECT_EQ(ra.outcome.reward, rb.outcome.reward);
    EXPECT_EQ(a, b);
  }
  EXPECT_TRUE(a.done());
  EXPECT_THROW(blue_step(a, BlueAction::sleep()), std::logic_error);
}

TEST(BlueStep, InvalidNodeRejected) {
  SimState st = reset(default_scenario2(), 0);
  EXPECT_THROW(blue_step(st, BlueAction::analyse(13)), std::out_of_range);
  EXPECT_THROW(blue_step(st, BlueAction{-7, 0}), std::out_of_range);
  EXPECT_EQ(st.step_index, 0);
}

TEST(ApplyBlue, RemoveFailsOnPrivileged) {
  SimState st = reset(default_scenario2(), 0);
  const int e0 = node(st, "Enterprise0");
  st.hosts[static_cast<std::size_t>(e0)].compromise = CompromiseLevel::Privileged;
  st.hosts[static_cast<std::size_t>(e0)].connections.push_back({22, 0, 50000, true, true, ConnectionKind::Exploit, false});
  sync_footholds(st);
  const SimState before = st;
  EXPECT_FALSE(apply_blue(st, BlueAction::remove(e0)));
  EXPECT_EQ(st, before);
}

TEST(ApplyBlue, RemoveClearsUserAccess) {
  SimState st = reset(default_scenario2(), 0);
  auto& h = st.hosts[2];
  h.compromise = CompromiseLevel::UserAccess;
  h.connections.push_back({22, 0, 50000, true, true, ConnectionKind::Exploit, false});
  h.connections.push_back({22, 1, 50001, false, true, ConnectionKind::Benign, false});
  sync_footholds(st);
  EXPECT_TRUE(apply_blue(st, BlueAction::remove(2)));
  EXPECT_EQ(h.compromise, CompromiseLevel::NotCompromised);
  ASSERT_EQ(h.connections.size(), 1u);
  EXPECT_FALSE(h.connections[0].malicious);
  EXPECT_EQ(st.red.footholds.count(2), 0u);
}

TEST(ApplyBlue, RestoreKeepsEntryPrivileged) {
  SimState st = reset(default_scenario2(), 0);
  ASSERT_TRUE(apply_blue(st, BlueAction::decoy(0, DecoyKind::Apache)));
  st.hosts[0].malicious_file_present = true;
  EXPECT_EQ(st.hosts[0].open_ports, (std::vector<int>{22, 80}));
  EXPECT_TRUE(apply_blue(st, BlueAction::restore(0)));
  EXPECT_EQ(st.hosts[0].open_ports, std::vector<int>{22});
  EXPECT_TRUE(st.hosts[0].decoys.empty());
  EXPECT_FALSE(st.hosts[0].malicious_file_present);
  EXPECT_EQ(st.hosts[0].compromise, CompromiseLevel::Privileged);
}

TEST(ApplyBlue, DecoyPortConflictFails) {
  SimState st = reset(default_scenario2(), 0);
  const int e0 = node(st, "Enterprise0");
  EXPECT_FALSE(apply_blue(st, BlueAction::decoy(e0, DecoyKind::SvcHost)));
  EXPECT_TRUE(apply_blue(st, BlueAction::decoy(e0, DecoyKind::Tomcat)));
  EXPECT_FALSE(apply_blue(st, BlueAction::decoy(e0, DecoyKind::Tomcat)));
  EXPECT_EQ(st.hosts[static_cast<std::size_t>(e0)].open_ports, (std::vector<int>{22, 135, 443}));
}

TEST(ApplyBlue, AnalyseSurfacesFile) {
  SimState st = reset(default_scenario2(), 0);
  apply_blue(st, BlueAction::analyse(1));
  EXPECT_FALSE(st.hosts[1].malicious_file_analysed);
  st.hosts[1].malicious_file_present = true;
  apply_blue(st, BlueAction::analyse(1));
  EXPECT_TRUE(st.hosts[1].malicious_file_analysed);
}

TEST(ApplyBlue, SleepAndMonitorChangeNothing) {
  SimState st = reset(default_scenario2(), 0);
  const SimState before = st;
  EXPECT_TRUE(apply_blue(st, BlueAction::sleep()));
  EXPECT_TRUE(apply_blue(st, BlueAction::monitor()));
  EXPECT_EQ(st, before);
}

TEST(Meander, FreshStateScansFirstUserHost) {
  const SimState st = reset(default_scenario2(), 0);
  EXPECT_EQ(red_policy_meander(st), (RedAction{RedActionKind::Scan, 1}));
}

TEST(Meander, DiscoversAfterOwningUserSubnet) {
  SimState st = reset(default_scenario2(), 0);
  for (int i = 0; i < 5; ++i) st.hosts[static_cast<std::size_t>(i)].compromise = CompromiseLevel::Privileged;
  sync_footholds(st);
  EXPECT_EQ(red_policy_meander(st), (RedAction{RedActionKind::Discover, 1}));
}

TEST(Meander, ImpactWhenEverythingOwned) {
  SimState st = reset(default_scenario2(), 0);
  for (auto& h : st.hosts) h.compromise = CompromiseLevel::Privileged;
  std::fill(st.red.subnets_targeted.begin(), st.red.subnets_targeted.end(), 1);
  st.red.target_subnet = 2;
  sync_footholds(st);
  for (int i = 0; i < 3; ++i) {
    const RedAction ra = red_policy_meander(st);
    EXPECT_EQ(ra, (RedAction{RedActionKind::Impact, 12}));
    const RedResult rr = apply_red(st, ra);
    EXPECT_EQ(rr.impacted, 12);
  }
}

TEST(ApplyRed, ScanSpansSeveralPorts) {
  SimState st = reset(default_scenario2(), 0);
  apply_red(st, {RedActionKind::Scan, 1});
  const auto& c = st.hosts[1].connections;
  ASSERT_EQ(c.size(), 3u);
  std::set<int> ports;
  for (const auto& r : c) {
    ports.insert(r.local_port);
    EXPECT_TRUE(r.malicious);
    EXPECT_EQ(r.remote_host, 0);
  }
  EXPECT_GE(ports.size(), 2u);
  EXPECT_TRUE(st.hosts[1].scanned_by_red);
}

TEST(ApplyRed, ExploitIntoDecoyFails) {
  SimState st = reset(default_scenario2(), 0);
  auto& h = st.hosts[3];
  h.open_ports = {80};
  h.decoys = {{DecoyKind::Apache, 80}};
  h.scanned_by_red = true;
  const RedResult r = apply_red(st, {RedActionKind::Exploit, 3});
  EXPECT_FALSE(r.success);
  EXPECT_EQ(h.compromise, CompromiseLevel::NotCompromised);
  update_detection(st);
  ASSERT_EQ(h.connections.size(), 1u);
  EXPECT_TRUE(h.connections[0].malicious);
  EXPECT_TRUE(h.connections[0].detected);
  EXPECT_EQ(h.connections[0].remote_port, kExploitPayloadPort);
}

TEST(ApplyRed, ExploitRecordsThreeConnectionsOnOnePort) {
  SimState st = reset(topo_with({1.0, 0.0, 1.0, 30}), 0);
  const RedResult r = apply_red(st, {RedActionKind::Exploit, 2});
  EXPECT_TRUE(r.success);
  EXPECT_EQ(st.hosts[2].compromise, CompromiseLevel::UserAccess);
  const auto& c = st.hosts[2].connections;
  ASSERT_EQ(c.size(), 3u);
  for (const auto& x : c) EXPECT_EQ(x.local_port, c[0].local_port);
}

TEST(ApplyRed, EscalateLeavesFile) {
  SimState st = reset(default_scenario2(), 0);
  st.hosts[4].compromise = CompromiseLevel::UserAccess;
  EXPECT_TRUE(apply_red(st, {RedActionKind::Escalate, 4}).success);
  EXPECT_EQ(st.hosts[4].compromise, CompromiseLevel::Privileged);
  EXPECT_TRUE(st.hosts[4].malicious_file_present);
}

TEST(ApplyGreen, ProbabilityZeroAndOne) {
  SimState quiet = reset(topo_with({0.9, 0.0, 0.95, 30}), 1);
  const SimState before = quiet;
  apply_green(quiet);
  EXPECT_EQ(quiet, before);

  SimState busy = reset(topo_with({0.9, 1.0, 0.95, 30}), 1);
  std::vector<HostRuntime> hosts_before = busy.hosts;
  apply_green(busy);
  std::size_t added = 0;
  for (std::size_t i = 0; i < busy.hosts.size(); ++i) {
    added += busy.hosts[i].connections.size() - hosts_before[i].connections.size();
    for (const auto& c : busy.hosts[i].connections) EXPECT_FALSE(c.malicious);
    EXPECT_EQ(busy.hosts[i].compromise, hosts_before[i].compromise);
  }
  EXPECT_EQ(added, 1u);
}

TEST(Penalty, SingleTerms) {
  SimState st = blank_state();
  st.hosts[1].compromise = CompromiseLevel::UserAccess;
  EXPECT_EQ(compute_penalty(st, BlueAction::sleep(), {}).reward, -0.1);

  st = blank_state();
  st.hosts[6].compromise = CompromiseLevel::Privileged;
  EXPECT_EQ(compute_penalty(st, BlueAction::sleep(), {}).reward, -1.0);

  st = blank_state();
  st.hosts[6].compromise = CompromiseLevel::UserAccess;
  EXPECT_EQ(compute_penalty(st, BlueAction::sleep(), {}).reward, 0.0);

  st = blank_state();
  RedResult impact;
  impact.success = true;
  impact.impacted = 12;
  EXPECT_EQ(compute_penalty(st, BlueAction::sleep(), impact).reward, -10.0);

  st = blank_state();
  EXPECT_EQ(compute_penalty(st, BlueAction::restore(4), {}).reward, -1.0);
}

TEST(Penalty, Combinations) {
  SimState st = blank_state();
  st.hosts[6].compromise = CompromiseLevel::Privileged;
  const StepOutcome a = compute_penalty(st, BlueAction::restore(6), {});
  EXPECT_EQ(a.reward, -2.0);
  EXPECT_EQ(a.events.size(), 2u);

  st = blank_state();
  st.hosts[12].compromise = CompromiseLevel::Privileged;
  RedResult impact;
  impact.success = true;
  impact.impacted = 12;
  EXPECT_EQ(compute_penalty(st, BlueAction::sleep(), impact).reward, -11.0);

  st = blank_state();
  for (int i : {0, 1, 2}) st.hosts[static_cast<std::size_t>(i)].compromise = CompromiseLevel::UserAccess;
  for (int i : {5, 12}) st.hosts[static_cast<std::size_t>(i)].compromise = CompromiseLevel::Privileged;
  const StepOutcome c = compute_penalty(st, BlueAction::restore(3), impact);
  EXPECT_EQ(c.reward, -13.3);
  long tenths = 0;
  for (const auto& e : c.events) tenths += std::lround(e.amount * 10);
  EXPECT_EQ(tenths, -133);

  st = blank_state();
  for (int i = 0; i < 5; ++i) st.hosts[static_cast<std::size_t>(i)].compromise = CompromiseLevel::Privileged;
  EXPECT_EQ(compute_penalty(st, BlueAction::sleep(), {}).reward, -0.5);
}

TEST(Invariants, RandomPlayKeepsEntryAndRewardBounds) {
  const auto topo = Topology::build(default_scenario2());
  const double lower = -(0.1 * 5 + 1.0 * 8 + 11.0);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    SimState st = reset(topo, seed);
    Rng rng(seed + 1000);
    while (!st.done()) {
      const StepResult r = blue_step(st, random_action(rng, 13));
      ASSERT_LE(r.outcome.reward, 0.0);
      ASSERT_GE(r.outcome.reward, lower);
      ASSERT_EQ(st.hosts[0].compromise, CompromiseLevel::Privileged);
      double sum = 0.0;
      for (const auto& e : r.outcome.events) sum += e.amount;
      ASSERT_NEAR(sum, r.outcome.reward, 1e-12);
    }
  }
}

namespace {

// Steps before the first Impact when blue sleeps and every exploit lands:
// three actions per host that starts clean, one Discover per further subnet.
int closed_form_impact_step(const Topology& t) {
  int steps = 0;
  for (std::size_t s = 0; s < t.subnet_nodes.size(); ++s) {
    if (s > 0) ++steps;
    for (int n : t.subnet_nodes[s])
      if (n != t.entry) steps += 3;
  }
  return steps + 1;
}

int simulated_impact_step(std::shared_ptr<const Topology> t) {
  SimState st = reset(std::move(t), 0);
  while (!st.done()) {
    const StepResult r = blue_step(st, BlueAction::sleep());
    if (r.red_action.kind == RedActionKind::Impact) return st.step_index;
  }
  return -1;
}

}  // namespace

TEST(Invariants, SleepingBlueImpactStepHasClosedForm) {
  Scenario tiny;
  tiny.name = "tiny";
  tiny.subnets = {{"U", Importance::User, {"U0", "U1"}}, {"Op", Importance::Operational, {"Op_Server0"}}};
  tiny.hosts = {{"U0", "U", {22}, true, false}, {"U1", "U", {22}, false, false}, {"Op_Server0", "Op", {22}, false, false}};
  tiny.bridges = {{"U1", "Op_Server0"}};

  for (Scenario s : {tiny, default_scenario2(), make_variant(default_scenario2(), -2)}) {
    s.dynamics = {1.0, 0.0, 0.95, 200};
    const auto t = Topology::build(s);
    EXPECT_EQ(simulated_impact_step(t), closed_form_impact_step(*t)) << s.name;
  }
  EXPECT_EQ(closed_form_impact_step(*Topology::build(tiny)), 8);
}

TEST(Trace, ReproducibleFromSeedAndActions) {
  auto run = [](std::uint64_t seed) {
    SimState st = reset(default_scenario2(), seed);
    Rng rng(99);
    std::string log;
    while (!st.done()) {
      const BlueAction a = random_action(rng, 13);
      const StepResult r = blue_step(st, a);
      log += trace_record(st, a, r).dump() + "\n";
    }
    return log;
  };
  EXPECT_EQ(run(4), run(4));
  const auto rec = nlohmann::json::parse(run(4).substr(0, run(4).find('\n')));
  for (const char* key : {"step", "blue_action", "success", "reward", "events", "red_action"})
    EXPECT_TRUE(rec.contains(key)) << key;
}
