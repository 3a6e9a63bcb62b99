#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace topodef {

enum class Importance { User, Enterprise, Operational };

std::string_view to_string(Importance imp);
std::optional<Importance> importance_from_string(std::string_view s);

enum class DecoyKind : int { Apache, Femitter, HarakaSMTP, Smss, Sshd, SvcHost, Tomcat };
inline constexpr int kDecoyKinds = 7;

std::string_view to_string(DecoyKind kind);
std::optional<DecoyKind> decoy_kind_from_string(std::string_view s);

inline constexpr std::array<int, kDecoyKinds> kDefaultDecoyPorts = {80, 21, 25, 139, 2222, 135, 443};
inline constexpr int kDefaultUserPort = 22;

struct SubnetSpec {
  std::string name;
  Importance importance = Importance::User;
  std::vector<std::string> host_names;

  bool operator==(const SubnetSpec&) const = default;
};

struct HostSpec {
  std::string name;
  std::string subnet;
  std::vector<int> base_open_ports;  // sorted, unique
  bool is_entry = false;
  bool is_defender = false;

  bool operator==(const HostSpec&) const = default;
};

struct BridgeSpec {
  std::string source;
  std::string target;

  bool operator==(const BridgeSpec&) const = default;
};

/// Stochastic knobs of the simulator; the `dynamics` block of a scenario file.
struct Dynamics {
  double p_exploit = 0.9;
  double p_green = 0.1;
  double p_detect = 0.95;
  int horizon = 30;

  bool operator==(const Dynamics&) const = default;
};

/// Static network layout. `hosts` is kept in node-index order: subnet by
/// subnet, following each subnet's `host_names`.
struct Scenario {
  std::string name;
  std::vector<SubnetSpec> subnets;
  std::vector<HostSpec> hosts;
  std::vector<BridgeSpec> bridges;
  std::array<int, kDecoyKinds> decoy_ports = kDefaultDecoyPorts;
  std::vector<int> malicious_remote_ports = {4444};
  std::string impact_target = "Op_Server0";
  Dynamics dynamics;

  int node_count() const { return static_cast<int>(hosts.size()); }
  /// -1 when absent.
  int index_of(std::string_view host) const;
  int subnet_index(std::string_view subnet) const;

  bool operator==(const Scenario&) const = default;
};

/// Validation failure; `path()` names the offending field, e.g. "bridges[2]".
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::string path, const std::string& message);
  const std::string& path() const { return path_; }
  const std::string& message() const { return message_; }

 private:
  std::string path_;
  std::string message_;
};

Scenario load_scenario(std::string_view text);
Scenario load_scenario_file(const std::filesystem::path& path);

/// Checks every invariant; throws ScenarioError on the first violation.
void validate(const Scenario& s);

nlohmann::json scenario_to_json(const Scenario& s);
std::string dump_scenario(const Scenario& s);

/// All ordered intra-subnet pairs plus both directions of every bridge,
/// sorted lexicographically, without duplicates.
std::vector<std::pair<int, int>> base_edges(const Scenario& s);

/// Adds (delta > 0) or removes (delta < 0) user hosts in the entry subnet.
/// Removal drops the highest-numbered non-entry hosts and their bridges.
/// The current add/remove rules are fully determined by (s, delta); `seed`
/// is accepted so variant generation stays reproducible if that changes.
Scenario make_variant(const Scenario& s, int delta_users, std::uint64_t seed = 0);

/// The bundled default layout.
Scenario default_scenario2();

/// Index-based view of a validated Scenario, built once and shared by every
/// simulation that runs on it.
struct Topology {
  Scenario scenario;
  int num_nodes = 0;
  int entry = -1;
  int impact_target = -1;  // -1: no impactable host
  std::vector<int> node_subnet;
  std::vector<Importance> node_importance;
  std::vector<std::vector<int>> subnet_nodes;
  std::vector<std::pair<int, int>> bridges;  // as declared (source, target)
  std::vector<std::pair<int, int>> edges;    // base_edges
  std::vector<char> adjacent;                // N*N, adjacent[u*N+v] for base edge (u,v)
  std::vector<std::vector<int>> base_ports;

  bool is_base_edge(int u, int v) const { return adjacent[static_cast<std::size_t>(u) * num_nodes + v] != 0; }
  bool is_decoy_port(int port) const;

  static std::shared_ptr<const Topology> build(const Scenario& s);
};

}  // namespace topodef
