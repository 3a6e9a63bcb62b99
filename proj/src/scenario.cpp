#include "topodef/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace topodef {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kDecoyKinds> kDecoyNames = {
    "Apache", "Femitter", "HarakaSMTP", "Smss", "Sshd", "SvcHost", "Tomcat"};

bool valid_port(long long p) { return p >= 1 && p <= 65535; }

// Trailing decimal digits of a host name, or -1.
long long numeric_suffix(std::string_view name) {
  std::size_t i = name.size();
  while (i > 0 && name[i - 1] >= '0' && name[i - 1] <= '9') --i;
  if (i == name.size()) return -1;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(name.data() + i, name.data() + name.size(), v);
  if (ec != std::errc()) return -1;
  return v;
}

std::string idx_path(std::string_view base, std::size_t i) {
  return std::string(base) + "[" + std::to_string(i) + "]";
}

template <typename T>
T require(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ScenarioError(path, "wrong type");
  }
}

const json& require_key(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ScenarioError(path.empty() ? key : path + "." + key, "missing required field");
  return *it;
}

std::string join(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

// Puts hosts in node-index order and fills HostSpec::subnet.
void order_hosts(Scenario& s) {
  std::map<std::string, HostSpec> by_name;
  for (std::size_t i = 0; i < s.hosts.size(); ++i) {
    const auto& h = s.hosts[i];
    if (!by_name.emplace(h.name, h).second) throw ScenarioError(idx_path("hosts", i) + ".name", "duplicate host name '" + h.name + "'");
  }
  std::vector<HostSpec> ordered;
  std::set<std::string> seen;
  for (std::size_t si = 0; si < s.subnets.size(); ++si) {
    const auto& sub = s.subnets[si];
    for (std::size_t hi = 0; hi < sub.host_names.size(); ++hi) {
      const auto& hn = sub.host_names[hi];
      const std::string path = idx_path("subnets", si) + "." + idx_path("hosts", hi);
      if (!seen.insert(hn).second) throw ScenarioError(path, "duplicate host name '" + hn + "'");
      auto it = by_name.find(hn);
      if (it == by_name.end()) throw ScenarioError(path, "host '" + hn + "' has no entry in hosts");
      HostSpec h = it->second;
      h.subnet = sub.name;
      ordered.push_back(std::move(h));
    }
  }
  for (std::size_t i = 0; i < s.hosts.size(); ++i) {
    if (!seen.count(s.hosts[i].name))
      throw ScenarioError(idx_path("hosts", i) + ".name", "host '" + s.hosts[i].name + "' belongs to no subnet");
  }
  s.hosts = std::move(ordered);
}

}  // namespace

std::string_view to_string(Importance imp) {
  switch (imp) {
    case Importance::User: return "User";
    case Importance::Enterprise: return "Enterprise";
    case Importance::Operational: return "Operational";
  }
  return "?";
}

std::optional<Importance> importance_from_string(std::string_view s) {
  if (s == "User") return Importance::User;
  if (s == "Enterprise") return Importance::Enterprise;
  if (s == "Operational") return Importance::Operational;
  return std::nullopt;
}

std::string_view to_string(DecoyKind kind) { return kDecoyNames.at(static_cast<std::size_t>(kind)); }

std::optional<DecoyKind> decoy_kind_from_string(std::string_view s) {
  for (int i = 0; i < kDecoyKinds; ++i)
    if (kDecoyNames[static_cast<std::size_t>(i)] == s) return static_cast<DecoyKind>(i);
  return std::nullopt;
}

ScenarioError::ScenarioError(std::string path, const std::string& message)
    : std::runtime_error(path + ": " + message), path_(std::move(path)), message_(message) {}

int Scenario::index_of(std::string_view host) const {
  for (std::size_t i = 0; i < hosts.size(); ++i)
    if (hosts[i].name == host) return static_cast<int>(i);
  return -1;
}

int Scenario::subnet_index(std::string_view subnet) const {
  for (std::size_t i = 0; i < subnets.size(); ++i)
    if (subnets[i].name == subnet) return static_cast<int>(i);
  return -1;
}

void validate(const Scenario& s) {
  if (s.subnets.empty()) throw ScenarioError("subnets", "at least one subnet required");
  std::set<std::string> subnet_names;
  std::set<std::string> member_names;
  std::size_t members = 0;
  for (std::size_t i = 0; i < s.subnets.size(); ++i) {
    const auto& sub = s.subnets[i];
    if (sub.name.empty()) throw ScenarioError(idx_path("subnets", i) + ".name", "empty subnet name");
    if (!subnet_names.insert(sub.name).second)
      throw ScenarioError(idx_path("subnets", i) + ".name", "duplicate subnet name '" + sub.name + "'");
    if (sub.host_names.empty()) throw ScenarioError(idx_path("subnets", i) + ".hosts", "subnet has no hosts");
    for (std::size_t h = 0; h < sub.host_names.size(); ++h) {
      if (!member_names.insert(sub.host_names[h]).second)
        throw ScenarioError(idx_path("subnets", i) + "." + idx_path("hosts", h),
                            "duplicate host name '" + sub.host_names[h] + "'");
    }
    members += sub.host_names.size();
  }
  if (members != s.hosts.size()) throw ScenarioError("hosts", "every host must belong to exactly one subnet");

  int entries = 0;
  int node = 0;
  for (std::size_t si = 0; si < s.subnets.size(); ++si) {
    for (const auto& hn : s.subnets[si].host_names) {
      const auto& h = s.hosts[static_cast<std::size_t>(node)];
      const std::string path = idx_path("hosts", static_cast<std::size_t>(node));
      if (h.name != hn || h.subnet != s.subnets[si].name)
        throw ScenarioError(path, "hosts are not in subnet order");
      if (h.base_open_ports.empty()) throw ScenarioError(path + ".ports", "base_open_ports must be non-empty");
      for (std::size_t p = 0; p < h.base_open_ports.size(); ++p) {
        if (!valid_port(h.base_open_ports[p])) throw ScenarioError(idx_path(path + ".ports", p), "port out of range 1-65535");
        if (p > 0 && h.base_open_ports[p] <= h.base_open_ports[p - 1])
          throw ScenarioError(path + ".ports", "ports must be sorted and unique");
      }
      if (h.is_entry) {
        ++entries;
        if (s.subnets[si].importance != Importance::User)
          throw ScenarioError(path + ".entry", "entry host not in user subnet");
      }
      ++node;
    }
  }
  if (entries == 0) throw ScenarioError("hosts", "entry host missing");
  if (entries > 1) throw ScenarioError("hosts", "multiple entry hosts");
  if (s.node_count() < 3) throw ScenarioError("hosts", "scenario needs at least 3 hosts");

  for (std::size_t i = 0; i < s.bridges.size(); ++i) {
    const auto& b = s.bridges[i];
    const std::string path = idx_path("bridges", i);
    const int a = s.index_of(b.source);
    const int c = s.index_of(b.target);
    if (a < 0) throw ScenarioError(path + "[0]", "unknown host '" + b.source + "'");
    if (c < 0) throw ScenarioError(path + "[1]", "unknown host '" + b.target + "'");
    if (s.hosts[static_cast<std::size_t>(a)].subnet == s.hosts[static_cast<std::size_t>(c)].subnet)
      throw ScenarioError(path, "bridge within one subnet");
  }

  std::set<int> decoy_ports;
  for (int k = 0; k < kDecoyKinds; ++k) {
    const std::string path = "decoy_ports." + std::string(kDecoyNames[static_cast<std::size_t>(k)]);
    const int p = s.decoy_ports[static_cast<std::size_t>(k)];
    if (!valid_port(p)) throw ScenarioError(path, "port out of range 1-65535");
    if (!decoy_ports.insert(p).second) throw ScenarioError(path, "decoy ports must be distinct per kind");
  }
  for (std::size_t i = 0; i < s.malicious_remote_ports.size(); ++i)
    if (!valid_port(s.malicious_remote_ports[i]))
      throw ScenarioError(idx_path("malicious_remote_ports", i), "port out of range 1-65535");

  if (!s.impact_target.empty()) {
    const int t = s.index_of(s.impact_target);
    // An absent default target simply disables impact; an explicit one must exist.
    if (t >= 0 && s.subnets[static_cast<std::size_t>(s.subnet_index(s.hosts[static_cast<std::size_t>(t)].subnet))].importance !=
                      Importance::Operational)
      throw ScenarioError("impact_target", "impact target must be in an operational subnet");
  }

  const auto& d = s.dynamics;
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(d.p_exploit)) throw ScenarioError("dynamics.p_exploit", "probability outside [0,1]");
  if (!prob(d.p_green)) throw ScenarioError("dynamics.p_green", "probability outside [0,1]");
  if (!prob(d.p_detect)) throw ScenarioError("dynamics.p_detect", "probability outside [0,1]");
  if (d.horizon < 1) throw ScenarioError("dynamics.horizon", "horizon must be >= 1");
}

Scenario load_scenario(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError("$", std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ScenarioError("$", "document must be an object");

  static const std::set<std::string> known = {"name", "subnets", "hosts", "bridges", "decoy_ports",
                                              "malicious_remote_ports", "impact_target", "dynamics"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!known.count(it.key())) throw ScenarioError(it.key(), "unknown field");

  Scenario s;
  if (auto it = doc.find("name"); it != doc.end()) s.name = require<std::string>(*it, "name");

  const json& subnets = require_key(doc, "subnets", "");
  if (!subnets.is_array()) throw ScenarioError("subnets", "must be an array");
  for (std::size_t i = 0; i < subnets.size(); ++i) {
    const std::string path = idx_path("subnets", i);
    const json& js = subnets[i];
    if (!js.is_object()) throw ScenarioError(path, "must be an object");
    SubnetSpec sub;
    sub.name = require<std::string>(require_key(js, "name", path), join(path, "name"));
    const auto imp = importance_from_string(require<std::string>(require_key(js, "importance", path), join(path, "importance")));
    if (!imp) throw ScenarioError(join(path, "importance"), "expected User, Enterprise or Operational");
    sub.importance = *imp;
    const json& hn = require_key(js, "hosts", path);
    if (!hn.is_array()) throw ScenarioError(join(path, "hosts"), "must be an array");
    for (std::size_t h = 0; h < hn.size(); ++h)
      sub.host_names.push_back(require<std::string>(hn[h], join(path, "hosts") + "[" + std::to_string(h) + "]"));
    s.subnets.push_back(std::move(sub));
  }

  const json& hosts = require_key(doc, "hosts", "");
  if (!hosts.is_array()) throw ScenarioError("hosts", "must be an array");
  for (std::size_t i = 0; i < hosts.size(); ++i) {
    const std::string path = idx_path("hosts", i);
    const json& jh = hosts[i];
    if (!jh.is_object()) throw ScenarioError(path, "must be an object");
    HostSpec h;
    h.name = require<std::string>(require_key(jh, "name", path), join(path, "name"));
    const json& ports = require_key(jh, "ports", path);
    if (!ports.is_array()) throw ScenarioError(join(path, "ports"), "must be an array");
    for (std::size_t p = 0; p < ports.size(); ++p) {
      const auto v = require<long long>(ports[p], join(path, "ports") + "[" + std::to_string(p) + "]");
      if (!valid_port(v)) throw ScenarioError(join(path, "ports") + "[" + std::to_string(p) + "]", "port out of range 1-65535");
      h.base_open_ports.push_back(static_cast<int>(v));
    }
    std::sort(h.base_open_ports.begin(), h.base_open_ports.end());
    h.base_open_ports.erase(std::unique(h.base_open_ports.begin(), h.base_open_ports.end()), h.base_open_ports.end());
    if (auto it = jh.find("entry"); it != jh.end()) h.is_entry = require<bool>(*it, join(path, "entry"));
    if (auto it = jh.find("defender"); it != jh.end()) h.is_defender = require<bool>(*it, join(path, "defender"));
    s.hosts.push_back(std::move(h));
  }

  if (auto it = doc.find("bridges"); it != doc.end()) {
    if (!it->is_array()) throw ScenarioError("bridges", "must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& jb = (*it)[i];
      const std::string path = idx_path("bridges", i);
      if (!jb.is_array() || jb.size() != 2) throw ScenarioError(path, "must be a [source, target] pair");
      s.bridges.push_back({require<std::string>(jb[0], path + "[0]"), require<std::string>(jb[1], path + "[1]")});
    }
  }

  if (auto it = doc.find("decoy_ports"); it != doc.end()) {
    if (!it->is_object()) throw ScenarioError("decoy_ports", "must be an object");
    for (auto d = it->begin(); d != it->end(); ++d) {
      const std::string path = "decoy_ports." + d.key();
      const auto kind = decoy_kind_from_string(d.key());
      if (!kind) throw ScenarioError(path, "unknown decoy kind");
      const auto v = require<long long>(d.value(), path);
      if (!valid_port(v)) throw ScenarioError(path, "port out of range 1-65535");
      s.decoy_ports[static_cast<std::size_t>(*kind)] = static_cast<int>(v);
    }
  }

  if (auto it = doc.find("malicious_remote_ports"); it != doc.end()) {
    if (!it->is_array()) throw ScenarioError("malicious_remote_ports", "must be an array");
    s.malicious_remote_ports.clear();
    for (std::size_t i = 0; i < it->size(); ++i)
      s.malicious_remote_ports.push_back(static_cast<int>(require<long long>((*it)[i], idx_path("malicious_remote_ports", i))));
  }

  bool explicit_target = false;
  if (auto it = doc.find("impact_target"); it != doc.end()) {
    s.impact_target = require<std::string>(*it, "impact_target");
    explicit_target = true;
  }

  if (auto it = doc.find("dynamics"); it != doc.end()) {
    if (!it->is_object()) throw ScenarioError("dynamics", "must be an object");
    for (auto d = it->begin(); d != it->end(); ++d) {
      const std::string path = "dynamics." + d.key();
      if (d.key() == "p_exploit") s.dynamics.p_exploit = require<double>(d.value(), path);
      else if (d.key() == "p_green") s.dynamics.p_green = require<double>(d.value(), path);
      else if (d.key() == "p_detect") s.dynamics.p_detect = require<double>(d.value(), path);
      else if (d.key() == "horizon") s.dynamics.horizon = require<int>(d.value(), path);
      else throw ScenarioError(path, "unknown field");
    }
  }

  order_hosts(s);
  if (explicit_target && !s.impact_target.empty() && s.index_of(s.impact_target) < 0)
    throw ScenarioError("impact_target", "unknown host '" + s.impact_target + "'");
  validate(s);
  return s;
}

Scenario load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(path.string(), "cannot open scenario file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_scenario(buf.str());
}

json scenario_to_json(const Scenario& s) {
  json doc;
  doc["name"] = s.name;
  doc["subnets"] = json::array();
  for (const auto& sub : s.subnets)
    doc["subnets"].push_back({{"name", sub.name}, {"importance", to_string(sub.importance)}, {"hosts", sub.host_names}});
  doc["hosts"] = json::array();
  for (const auto& h : s.hosts) {
    json jh = {{"name", h.name}, {"ports", h.base_open_ports}};
    if (h.is_entry) jh["entry"] = true;
    if (h.is_defender) jh["defender"] = true;
    doc["hosts"].push_back(std::move(jh));
  }
  doc["bridges"] = json::array();
  for (const auto& b : s.bridges) doc["bridges"].push_back({b.source, b.target});
  doc["decoy_ports"] = json::object();
  for (int k = 0; k < kDecoyKinds; ++k)
    doc["decoy_ports"][std::string(kDecoyNames[static_cast<std::size_t>(k)])] = s.decoy_ports[static_cast<std::size_t>(k)];
  doc["malicious_remote_ports"] = s.malicious_remote_ports;
  doc["impact_target"] = s.impact_target;
  doc["dynamics"] = {{"p_exploit", s.dynamics.p_exploit},
                     {"p_green", s.dynamics.p_green},
                     {"p_detect", s.dynamics.p_detect},
                     {"horizon", s.dynamics.horizon}};
  return doc;
}

std::string dump_scenario(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

std::vector<std::pair<int, int>> base_edges(const Scenario& s) {
  std::vector<std::pair<int, int>> edges;
  int offset = 0;
  for (const auto& sub : s.subnets) {
    const int n = static_cast<int>(sub.host_names.size());
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v)
        if (u != v) edges.emplace_back(offset + u, offset + v);
    offset += n;
  }
  for (const auto& b : s.bridges) {
    const int a = s.index_of(b.source);
    const int c = s.index_of(b.target);
    if (a < 0 || c < 0 || a == c) continue;
    edges.emplace_back(a, c);
    edges.emplace_back(c, a);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

Scenario make_variant(const Scenario& s, int delta_users, std::uint64_t /*seed*/) {
  validate(s);
  Scenario out = s;
  const int entry = [&] {
    for (int i = 0; i < s.node_count(); ++i)
      if (s.hosts[static_cast<std::size_t>(i)].is_entry) return i;
    return -1;
  }();
  const int si = s.subnet_index(s.hosts[static_cast<std::size_t>(entry)].subnet);
  SubnetSpec& sub = out.subnets[static_cast<std::size_t>(si)];

  if (delta_users > 0) {
    long long next = -1;
    for (const auto& hn : sub.host_names) next = std::max(next, numeric_suffix(hn));
    ++next;
    for (int k = 0; k < delta_users; ++k) {
      std::string name;
      do {
        name = sub.name + std::to_string(next++);
      } while (out.index_of(name) >= 0);
      sub.host_names.push_back(name);
      HostSpec h;
      h.name = name;
      h.subnet = sub.name;
      h.base_open_ports = {kDefaultUserPort};
      out.hosts.push_back(std::move(h));
    }
  } else if (delta_users < 0) {
    const int remove = -delta_users;
    const int size = static_cast<int>(sub.host_names.size());
    if (remove >= size)
      throw ScenarioError("delta_users", "removal would delete the entry host or empty the user subnet");
    // Highest suffix first; position breaks ties so the order is total.
    std::vector<std::pair<long long, int>> candidates;
    for (int i = 0; i < size; ++i) {
      const auto& hn = sub.host_names[static_cast<std::size_t>(i)];
      if (hn == s.hosts[static_cast<std::size_t>(entry)].name) continue;
      candidates.emplace_back(numeric_suffix(hn), i);
    }
    std::sort(candidates.begin(), candidates.end(), std::greater<>());
    std::set<std::string> removed;
    for (int k = 0; k < remove; ++k)
      removed.insert(sub.host_names[static_cast<std::size_t>(candidates[static_cast<std::size_t>(k)].second)]);
    std::erase_if(sub.host_names, [&](const std::string& n) { return removed.count(n) > 0; });
    std::erase_if(out.hosts, [&](const HostSpec& h) { return removed.count(h.name) > 0; });
    std::erase_if(out.bridges, [&](const BridgeSpec& b) { return removed.count(b.source) || removed.count(b.target); });
  }
  if (delta_users != 0) {
    const std::string base = s.name.empty() ? "scenario" : s.name;
    out.name = base + (delta_users > 0 ? "_plus" : "_minus") + std::to_string(std::abs(delta_users));
  }
  order_hosts(out);
  validate(out);
  return out;
}

Scenario default_scenario2() {
  Scenario s;
  s.name = "scenario2";
  s.subnets = {
      {"User", Importance::User, {"User0", "User1", "User2", "User3", "User4"}},
      {"Enterprise", Importance::Enterprise, {"Enterprise0", "Enterprise1", "Enterprise2", "Defender"}},
      {"Operational", Importance::Operational, {"Op_Host0", "Op_Host1", "Op_Host2", "Op_Server0"}},
  };
  for (const auto& sub : s.subnets) {
    for (const auto& hn : sub.host_names) {
      HostSpec h;
      h.name = hn;
      h.subnet = sub.name;
      if (sub.importance == Importance::Enterprise && hn != "Defender")
        h.base_open_ports = {22, 135};
      else
        h.base_open_ports = {22};
      h.is_entry = hn == "User0";
      h.is_defender = hn == "Defender";
      s.hosts.push_back(std::move(h));
    }
  }
  s.bridges = {{"User1", "Enterprise1"},
               {"User2", "Enterprise1"},
               {"User3", "Enterprise0"},
               {"User4", "Enterprise0"},
               {"Enterprise2", "Op_Server0"}};
  validate(s);
  return s;
}

bool Topology::is_decoy_port(int port) const {
  return std::find(scenario.decoy_ports.begin(), scenario.decoy_ports.end(), port) != scenario.decoy_ports.end();
}

std::shared_ptr<const Topology> Topology::build(const Scenario& s) {
  validate(s);
  auto t = std::make_shared<Topology>();
  t->scenario = s;
  t->num_nodes = s.node_count();
  t->subnet_nodes.resize(s.subnets.size());
  for (int i = 0; i < t->num_nodes; ++i) {
    const auto& h = s.hosts[static_cast<std::size_t>(i)];
    const int si = s.subnet_index(h.subnet);
    t->node_subnet.push_back(si);
    t->node_importance.push_back(s.subnets[static_cast<std::size_t>(si)].importance);
    t->subnet_nodes[static_cast<std::size_t>(si)].push_back(i);
    t->base_ports.push_back(h.base_open_ports);
    if (h.is_entry) t->entry = i;
  }
  t->impact_target = s.impact_target.empty() ? -1 : s.index_of(s.impact_target);
  for (const auto& b : s.bridges) t->bridges.emplace_back(s.index_of(b.source), s.index_of(b.target));
  t->edges = base_edges(s);
  t->adjacent.assign(static_cast<std::size_t>(t->num_nodes) * t->num_nodes, 0);
  for (auto [u, v] : t->edges) t->adjacent[static_cast<std::size_t>(u) * t->num_nodes + v] = 1;
  return t;
}

}  // namespace topodef
