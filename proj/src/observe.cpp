#include "topodef/observe.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace topodef {

using nlohmann::json;

GraphObservation encode_graph(const SimState& st) {
  const Topology& t = *st.topology;
  const int n = t.num_nodes;
  GraphObservation obs;
  obs.nodes.resize(static_cast<std::size_t>(n));
  obs.hosts.reserve(static_cast<std::size_t>(n));

  std::vector<int> counts(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    const HostRuntime& h = st.hosts[static_cast<std::size_t>(i)];
    obs.nodes[static_cast<std::size_t>(i)] = {static_cast<double>(t.node_subnet[static_cast<std::size_t>(i)]),
                                              static_cast<double>(h.open_ports.size()),
                                              h.malicious_file_analysed ? 1.0 : 0.0};
    obs.hosts.push_back(t.scenario.hosts[static_cast<std::size_t>(i)].name);
    for (const auto& c : h.connections)
      if (c.detected && c.remote_host != i) ++counts[static_cast<std::size_t>(c.remote_host) * n + i];
  }

  obs.edges.reserve(t.edges.size());
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) {
      const int c = counts[static_cast<std::size_t>(u) * n + v];
      if (t.is_base_edge(u, v) || c > 0) obs.edges.push_back({u, v, static_cast<double>(c)});
    }

  const LastBlue& lb = st.last_blue;
  obs.global = {static_cast<double>(lb.node == kGlobalNode ? n : lb.node), static_cast<double>(lb.index),
                lb.success ? 1.0 : 0.0};
  return obs;
}

json observation_to_json(const GraphObservation& obs) {
  json j;
  j["nodes"] = json::array();
  for (const auto& row : obs.nodes) j["nodes"].push_back(row);
  j["edges"] = json::array();
  for (const auto& e : obs.edges) j["edges"].push_back({{"src", e.source}, {"dst", e.target}, {"count", e.count}});
  j["global"] = obs.global;
  j["hosts"] = obs.hosts;
  return j;
}

GraphObservation observation_from_json(const json& j) {
  GraphObservation obs;
  for (const auto& row : j.at("nodes")) obs.nodes.push_back(row.get<std::array<double, kNodeFeatures>>());
  for (const auto& e : j.at("edges"))
    obs.edges.push_back({e.at("src").get<int>(), e.at("dst").get<int>(), e.at("count").get<double>()});
  obs.global = j.at("global").get<std::array<double, kGlobalFeatures>>();
  obs.hosts = j.at("hosts").get<std::vector<std::string>>();
  return obs;
}

std::string_view to_string(Activity a) {
  switch (a) {
    case Activity::None: return "None";
    case Activity::Scan: return "Scan";
    case Activity::Exploit: return "Exploit";
  }
  return "?";
}

std::string_view to_string(CompromisedView c) {
  switch (c) {
    case CompromisedView::No: return "No";
    case CompromisedView::Unknown: return "Unknown";
    case CompromisedView::User: return "User";
    case CompromisedView::Privileged: return "Privileged";
  }
  return "?";
}

void BlueHistory::record(const BlueAction& a) {
  if (a.is_global()) return;
  last_.at(static_cast<std::size_t>(a.node)) = a.index;
}

Activity classify_activity(std::span<const ConnectionRecord> detected, std::span<const int> malicious_remote_ports) {
  if (detected.empty()) return Activity::None;
  std::set<int> local_ports;
  for (const auto& c : detected) {
    if (std::find(malicious_remote_ports.begin(), malicious_remote_ports.end(), c.remote_port) !=
        malicious_remote_ports.end())
      return Activity::Exploit;
    local_ports.insert(c.local_port);
  }
  if (detected.size() > 2 && local_ports.size() == 1) return Activity::Exploit;
  // More than two connections over several local ports is a scan, and so is
  // any other anomaly that did not qualify as an exploit.
  return Activity::Scan;
}

CompromisedView classify_compromised(Activity activity, bool malicious_file_detected, std::optional<int> last_action) {
  if (malicious_file_detected) return CompromisedView::Privileged;
  if (activity == Activity::Exploit) return CompromisedView::User;
  if (last_action && *last_action == static_cast<int>(LocalAction::Remove)) return CompromisedView::Unknown;
  return CompromisedView::No;
}

std::vector<BlueTableRow> blue_table(const SimState& st, const BlueHistory& history) {
  const Topology& t = *st.topology;
  const Scenario& s = t.scenario;
  std::vector<int> malicious(s.decoy_ports.begin(), s.decoy_ports.end());
  malicious.insert(malicious.end(), s.malicious_remote_ports.begin(), s.malicious_remote_ports.end());

  std::vector<BlueTableRow> rows;
  rows.reserve(static_cast<std::size_t>(t.num_nodes));
  std::vector<int> position(s.subnets.size(), 0);
  std::vector<ConnectionRecord> detected;
  for (int i = 0; i < t.num_nodes; ++i) {
    const HostRuntime& h = st.hosts[static_cast<std::size_t>(i)];
    detected.clear();
    for (const auto& c : h.connections)
      if (c.detected) detected.push_back(c);

    const int si = t.node_subnet[static_cast<std::size_t>(i)];
    BlueTableRow row;
    row.subnet = s.subnets[static_cast<std::size_t>(si)].name;
    row.ip = "10.0." + std::to_string(si) + "." + std::to_string(++position[static_cast<std::size_t>(si)]);
    row.hostname = s.hosts[static_cast<std::size_t>(i)].name;
    row.activity = classify_activity(detected, malicious);
    const std::optional<int> last = i < history.size() ? history.last_action(i) : std::nullopt;
    row.compromised = classify_compromised(row.activity, h.malicious_file_analysed, last);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::uint8_t> bitvector(std::span<const BlueTableRow> rows) {
  std::vector<std::uint8_t> bits;
  bits.reserve(rows.size() * 4);
  for (const auto& r : rows) {
    switch (r.activity) {
      case Activity::None: bits.insert(bits.end(), {0, 0}); break;
      case Activity::Scan: bits.insert(bits.end(), {1, 0}); break;
      case Activity::Exploit: bits.insert(bits.end(), {1, 1}); break;
    }
    switch (r.compromised) {
      case CompromisedView::No: bits.insert(bits.end(), {0, 0}); break;
      case CompromisedView::Unknown: bits.insert(bits.end(), {1, 0}); break;
      case CompromisedView::User: bits.insert(bits.end(), {0, 1}); break;
      case CompromisedView::Privileged: bits.insert(bits.end(), {1, 1}); break;
    }
  }
  return bits;
}

std::string render_table(std::span<const BlueTableRow> rows) {
  const std::array<std::string, 5> header = {"Subnet", "IP", "Hostname", "Activity", "Compromised"};
  std::array<std::size_t, 5> width{};
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  std::vector<std::array<std::string, 5>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.subnet, r.ip, r.hostname, std::string(to_string(r.activity)), std::string(to_string(r.compromised))});
    for (std::size_t c = 0; c < 5; ++c) width[c] = std::max(width[c], cells.back()[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::array<std::string, 5>& v) {
    for (std::size_t c = 0; c < 5; ++c) {
      out << v[c];
      if (c + 1 < 5) out << std::string(width[c] - v[c].size() + 2, ' ');
    }
    out << '\n';
  };
  line(header);
  for (const auto& row : cells) line(row);
  return out.str();
}

}  // namespace topodef
