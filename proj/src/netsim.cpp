#include "topodef/netsim.hpp"

#include <algorithm>
#include <stdexcept>

namespace topodef {

namespace {

constexpr std::uint64_t kRedStream = 1;
constexpr std::uint64_t kGreenStream = 2;
constexpr std::uint64_t kDetectStream = 3;

// Well-known ports a scan probes when the host exposes fewer than three.
constexpr int kProbePorts[] = {21, 23, 80, 443, 3389, 8080};

int ephemeral_port(Rng& rng) { return 49152 + static_cast<int>(rng.below(16384)); }

HostRuntime base_runtime(const Topology& t, int node) {
  HostRuntime h;
  h.open_ports = t.base_ports[static_cast<std::size_t>(node)];
  return h;
}

bool is_transient(ConnectionKind k) { return k != ConnectionKind::Exploit; }

bool has_port(const HostRuntime& h, int port) {
  return std::binary_search(h.open_ports.begin(), h.open_ports.end(), port);
}

// Lowest-index foothold with a base-layout path to `target`, else the entry host.
int attacking_foothold(const SimState& st, int target) {
  const auto& t = *st.topology;
  for (const auto& [node, level] : st.red.footholds)
    if (node != target && t.is_base_edge(node, target)) return node;
  return t.entry;
}

}  // namespace

std::string_view to_string(CompromiseLevel c) {
  switch (c) {
    case CompromiseLevel::NotCompromised: return "NotCompromised";
    case CompromiseLevel::UserAccess: return "UserAccess";
    case CompromiseLevel::Privileged: return "Privileged";
  }
  return "?";
}

std::string_view to_string(RedActionKind k) {
  switch (k) {
    case RedActionKind::Sleep: return "Sleep";
    case RedActionKind::Scan: return "Scan";
    case RedActionKind::Exploit: return "Exploit";
    case RedActionKind::Escalate: return "Escalate";
    case RedActionKind::Discover: return "Discover";
    case RedActionKind::Impact: return "Impact";
  }
  return "?";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::UserBreach: return "UserBreach";
    case EventKind::ServerBreach: return "ServerBreach";
    case EventKind::Impact: return "Impact";
    case EventKind::Restore: return "Restore";
  }
  return "?";
}

std::string describe(const BlueAction& a, const Scenario& s) {
  if (a.is_global()) return a.index == static_cast<int>(GlobalAction::Monitor) ? "Monitor" : "Sleep";
  const std::string host = a.node >= 0 && a.node < s.node_count() ? s.hosts[static_cast<std::size_t>(a.node)].name
                                                                    : "#" + std::to_string(a.node);
  if (a.is(LocalAction::Analyse)) return "Analyse(" + host + ")";
  if (a.is(LocalAction::Remove)) return "Remove(" + host + ")";
  if (a.is(LocalAction::Restore)) return "Restore(" + host + ")";
  if (a.is_decoy()) return "Decoy" + std::string(to_string(a.decoy_kind())) + "(" + host + ")";
  return "Noop" + std::to_string(a.index) + "(" + host + ")";
}

bool operator==(const SimState& a, const SimState& b) {
  const bool same_topology = a.topology == b.topology ||
                             (a.topology && b.topology && a.topology->scenario == b.topology->scenario);
  return same_topology && a.hosts == b.hosts && a.red == b.red && a.step_index == b.step_index &&
         a.last_blue == b.last_blue && a.red_rng == b.red_rng && a.green_rng == b.green_rng &&
         a.detect_rng == b.detect_rng;
}

SimState reset(const Scenario& s, std::uint64_t seed) { return reset(Topology::build(s), seed); }

SimState reset(std::shared_ptr<const Topology> topology, std::uint64_t seed) {
  SimState st;
  const Topology& t = *topology;
  st.topology = std::move(topology);
  st.hosts.reserve(static_cast<std::size_t>(t.num_nodes));
  for (int i = 0; i < t.num_nodes; ++i) st.hosts.push_back(base_runtime(t, i));
  st.hosts[static_cast<std::size_t>(t.entry)].compromise = CompromiseLevel::Privileged;

  const int entry_subnet = t.node_subnet[static_cast<std::size_t>(t.entry)];
  st.red.discovered.assign(static_cast<std::size_t>(t.num_nodes), 0);
  for (int n : t.subnet_nodes[static_cast<std::size_t>(entry_subnet)]) st.red.discovered[static_cast<std::size_t>(n)] = 1;
  st.red.target_subnet = entry_subnet;
  st.red.subnets_targeted.assign(t.subnet_nodes.size(), 0);
  st.red.subnets_targeted[static_cast<std::size_t>(entry_subnet)] = 1;
  sync_footholds(st);

  st.red_rng = Rng(derive_seed(seed, {kRedStream}));
  st.green_rng = Rng(derive_seed(seed, {kGreenStream}));
  st.detect_rng = Rng(derive_seed(seed, {kDetectStream}));
  return st;
}

void sync_footholds(SimState& st) {
  st.red.footholds.clear();
  for (int i = 0; i < st.num_nodes(); ++i) {
    const auto c = st.hosts[static_cast<std::size_t>(i)].compromise;
    if (c != CompromiseLevel::NotCompromised) st.red.footholds.emplace(i, c);
  }
}

void check_action(const SimState& st, const BlueAction& a) {
  if (a.is_global()) {
    if (a.index < 0 || a.index >= kGlobalActions) throw std::out_of_range("global action index out of range");
    return;
  }
  if (a.node < 0 || a.node >= st.num_nodes())
    throw std::out_of_range("blue action on nonexistent node " + std::to_string(a.node));
  if (a.index < 0) throw std::out_of_range("local action index out of range");
}

void clear_transient(SimState& st) {
  for (auto& h : st.hosts)
    std::erase_if(h.connections, [](const ConnectionRecord& c) { return is_transient(c.kind); });
}

bool apply_blue(SimState& st, const BlueAction& a) {
  check_action(st, a);
  if (a.is_global()) return true;  // Sleep and Monitor; monitoring is always on

  const Topology& t = *st.topology;
  HostRuntime& h = st.hosts[static_cast<std::size_t>(a.node)];

  if (a.is(LocalAction::Analyse)) {
    h.malicious_file_analysed = h.malicious_file_present;
    return true;
  }
  if (a.is(LocalAction::Remove)) {
    if (h.compromise == CompromiseLevel::Privileged) return false;
    h.compromise = CompromiseLevel::NotCompromised;
    std::erase_if(h.connections, [](const ConnectionRecord& c) { return c.malicious; });
    sync_footholds(st);
    return true;
  }
  if (a.is(LocalAction::Restore)) {
    h = base_runtime(t, a.node);
    if (a.node == t.entry) h.compromise = CompromiseLevel::Privileged;
    sync_footholds(st);
    return true;
  }
  if (a.is_decoy()) {
    const int port = t.scenario.decoy_ports[static_cast<std::size_t>(a.decoy_kind())];
    if (has_port(h, port)) return false;
    h.open_ports.insert(std::upper_bound(h.open_ports.begin(), h.open_ports.end(), port), port);
    h.decoys.push_back({a.decoy_kind(), port});
    return true;
  }
  return true;  // reserved per-host column: no effect
}

void apply_green(SimState& st) {
  const Topology& t = *st.topology;
  if (!st.green_rng.bernoulli(t.scenario.dynamics.p_green)) return;
  std::vector<int> users;
  for (int i = 0; i < t.num_nodes; ++i)
    if (t.node_importance[static_cast<std::size_t>(i)] == Importance::User) users.push_back(i);
  if (users.empty()) return;
  const int user = users[st.green_rng.below(users.size())];
  std::vector<int> peers;
  for (int n : t.subnet_nodes[static_cast<std::size_t>(t.node_subnet[static_cast<std::size_t>(user)])])
    if (n != user) peers.push_back(n);
  if (peers.empty()) return;
  const int peer = peers[st.green_rng.below(peers.size())];
  HostRuntime& ph = st.hosts[static_cast<std::size_t>(peer)];
  const int port = ph.open_ports[st.green_rng.below(ph.open_ports.size())];
  ph.connections.push_back({port, user, ephemeral_port(st.green_rng), false, false, ConnectionKind::Benign, true});
}

RedAction red_policy_meander(const SimState& st) {
  const Topology& t = *st.topology;
  const auto& nodes = t.subnet_nodes[static_cast<std::size_t>(st.red.target_subnet)];
  auto level = [&](int n) { return st.hosts[static_cast<std::size_t>(n)].compromise; };

  for (int n : nodes)
    if (st.red.discovered[static_cast<std::size_t>(n)] && !st.hosts[static_cast<std::size_t>(n)].scanned_by_red &&
        level(n) == CompromiseLevel::NotCompromised)
      return {RedActionKind::Scan, n};
  for (int n : nodes)
    if (st.hosts[static_cast<std::size_t>(n)].scanned_by_red && level(n) == CompromiseLevel::NotCompromised)
      return {RedActionKind::Exploit, n};
  for (int n : nodes)
    if (level(n) == CompromiseLevel::UserAccess) return {RedActionKind::Escalate, n};

  const bool subnet_owned =
      std::all_of(nodes.begin(), nodes.end(), [&](int n) { return level(n) == CompromiseLevel::Privileged; });
  if (subnet_owned) {
    int next = -1;
    for (auto [a, b] : t.bridges) {
      for (auto [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
        if (level(from) != CompromiseLevel::Privileged) continue;
        const int s = t.node_subnet[static_cast<std::size_t>(to)];
        if (st.red.subnets_targeted[static_cast<std::size_t>(s)]) continue;
        if (next < 0 || s < next) next = s;
      }
    }
    if (next >= 0) return {RedActionKind::Discover, next};
  }
  if (t.impact_target >= 0 && level(t.impact_target) == CompromiseLevel::Privileged)
    return {RedActionKind::Impact, t.impact_target};
  return {RedActionKind::Sleep, -1};
}

RedResult apply_red(SimState& st, const RedAction& ra) {
  const Topology& t = *st.topology;
  RedResult result;
  switch (ra.kind) {
    case RedActionKind::Sleep:
      break;
    case RedActionKind::Scan: {
      HostRuntime& h = st.hosts[static_cast<std::size_t>(ra.target)];
      const int from = attacking_foothold(st, ra.target);
      std::vector<int> ports;
      for (int p : h.open_ports) {
        if (static_cast<int>(ports.size()) == kScanConnections) break;
        ports.push_back(p);
      }
      for (int p : kProbePorts) {
        if (static_cast<int>(ports.size()) == kScanConnections) break;
        if (std::find(ports.begin(), ports.end(), p) == ports.end()) ports.push_back(p);
      }
      for (int p : ports)
        h.connections.push_back({p, from, ephemeral_port(st.red_rng), true, false, ConnectionKind::Scan, true});
      h.scanned_by_red = true;
      result.success = true;
      break;
    }
    case RedActionKind::Exploit: {
      HostRuntime& h = st.hosts[static_cast<std::size_t>(ra.target)];
      const int from = attacking_foothold(st, ra.target);
      const int port = h.open_ports[st.red_rng.below(h.open_ports.size())];
      if (t.is_decoy_port(port) &&
          std::any_of(h.decoys.begin(), h.decoys.end(), [&](const DecoyService& d) { return d.port == port; })) {
        h.connections.push_back({port, from, kExploitPayloadPort, true, false, ConnectionKind::DecoyProbe, true});
        break;
      }
      if (st.red_rng.bernoulli(t.scenario.dynamics.p_exploit)) {
        h.compromise = CompromiseLevel::UserAccess;
        for (int k = 0; k < kExploitConnections; ++k)
          h.connections.push_back({port, from, ephemeral_port(st.red_rng), true, false, ConnectionKind::Exploit, true});
        result.success = true;
      }
      break;
    }
    case RedActionKind::Escalate: {
      HostRuntime& h = st.hosts[static_cast<std::size_t>(ra.target)];
      if (h.compromise == CompromiseLevel::UserAccess) {
        h.compromise = CompromiseLevel::Privileged;
        h.malicious_file_present = true;
        result.success = true;
      }
      break;
    }
    case RedActionKind::Discover: {
      for (int n : t.subnet_nodes[static_cast<std::size_t>(ra.target)]) st.red.discovered[static_cast<std::size_t>(n)] = 1;
      st.red.target_subnet = ra.target;
      st.red.subnets_targeted[static_cast<std::size_t>(ra.target)] = 1;
      result.success = true;
      break;
    }
    case RedActionKind::Impact: {
      if (ra.target == t.impact_target &&
          st.hosts[static_cast<std::size_t>(ra.target)].compromise == CompromiseLevel::Privileged) {
        result.success = true;
        result.impacted = ra.target;
      }
      break;
    }
  }
  sync_footholds(st);
  return result;
}

std::vector<DetectedConnection> update_detection(SimState& st) {
  const double p = st.scenario().dynamics.p_detect;
  std::vector<DetectedConnection> fresh;
  for (int i = 0; i < st.num_nodes(); ++i) {
    auto& h = st.hosts[static_cast<std::size_t>(i)];
    // One roll covers every exploit record created on this host this step.
    std::optional<bool> exploit_seen;
    for (auto& c : h.connections) {
      if (!c.pending) continue;
      c.pending = false;
      if (c.kind == ConnectionKind::Exploit) {
        if (!exploit_seen) exploit_seen = st.detect_rng.bernoulli(p);
        c.detected = *exploit_seen;
      } else {
        c.detected = true;
      }
      if (c.detected) fresh.push_back({i, c});
    }
  }
  return fresh;
}

StepOutcome compute_penalty(const SimState& st, const BlueAction& a, const RedResult& red) {
  const Topology& t = *st.topology;
  StepOutcome out;
  // Accumulate in tenths so sums of Table 1 amounts are exact.
  long tenths = 0;
  for (int i = 0; i < t.num_nodes; ++i) {
    const auto c = st.hosts[static_cast<std::size_t>(i)].compromise;
    if (t.node_importance[static_cast<std::size_t>(i)] == Importance::User) {
      if (c >= CompromiseLevel::UserAccess) {
        out.events.push_back({EventKind::UserBreach, i, kUserBreachPenalty});
        tenths -= 1;
      }
    } else if (c == CompromiseLevel::Privileged) {
      out.events.push_back({EventKind::ServerBreach, i, kServerBreachPenalty});
      tenths -= 10;
    }
  }
  if (red.impacted) {
    out.events.push_back({EventKind::Impact, *red.impacted, kImpactPenalty});
    tenths -= 100;
  }
  if (a.is(LocalAction::Restore)) {
    out.events.push_back({EventKind::Restore, a.node, kRestorePenalty});
    tenths -= 10;
  }
  out.reward = static_cast<double>(tenths) / 10.0;
  return out;
}

StepResult blue_step(SimState& st, const BlueAction& a) { return blue_step(st, a, red_policy_meander); }

StepResult blue_step(SimState& st, const BlueAction& a, const RedPolicy& red_policy) {
  if (st.done()) throw std::logic_error("episode already finished");
  check_action(st, a);

  StepResult r;
  clear_transient(st);
  r.blue_success = apply_blue(st, a);
  apply_green(st);
  r.red_action = red_policy(st);
  const RedResult red = apply_red(st, r.red_action);
  r.red_success = red.success;
  r.new_detections = update_detection(st);
  r.outcome = compute_penalty(st, a, red);

  ++st.step_index;
  st.last_blue = {a.node, a.index, r.blue_success};
  r.outcome.episode_done = st.done();
  return r;
}

void inject_connection(SimState& st, int from, int to, int local_port, int remote_port) {
  if (from < 0 || from >= st.num_nodes() || to < 0 || to >= st.num_nodes() || from == to)
    throw std::out_of_range("inject_connection: invalid endpoints");
  st.hosts[static_cast<std::size_t>(to)].connections.push_back(
      {local_port, from, remote_port, false, true, ConnectionKind::Injected, false});
}

nlohmann::json trace_record(const SimState& after, const BlueAction& a, const StepResult& r) {
  const Scenario& s = after.scenario();
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : r.outcome.events)
    events.push_back({{"kind", to_string(e.kind)}, {"node", e.node}, {"amount", e.amount}});
  std::string red = std::string(to_string(r.red_action.kind));
  if (r.red_action.kind == RedActionKind::Discover)
    red += "(" + s.subnets[static_cast<std::size_t>(r.red_action.target)].name + ")";
  else if (r.red_action.target >= 0)
    red += "(" + s.hosts[static_cast<std::size_t>(r.red_action.target)].name + ")";
  return {{"step", after.step_index - 1},
          {"blue_action", describe(a, s)},
          {"success", r.blue_success},
          {"reward", r.outcome.reward},
          {"events", std::move(events)},
          {"red_action", red}};
}

}  // namespace topodef
