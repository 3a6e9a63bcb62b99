#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "topodef/netsim.hpp"

namespace topodef {

inline constexpr int kNodeFeatures = 3;
inline constexpr int kEdgeFeatures = 1;
inline constexpr int kGlobalFeatures = 3;

struct ObservedEdge {
  int source;
  int target;
  double count;

  bool operator==(const ObservedEdge&) const = default;
};

/// The defender's directed-graph view of the network.
///   node row:   [subnet index, open-port count, analysed malicious file flag]
///   edge:       detected connection count from source (remote) to target (local)
///   global:     [previous action node (N for global actions), action index, success]
struct GraphObservation {
  std::vector<std::array<double, kNodeFeatures>> nodes;
  std::vector<ObservedEdge> edges;  // sorted by (source, target), unique
  std::array<double, kGlobalFeatures> global{};
  std::vector<std::string> hosts;   // index -> hostname

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  bool operator==(const GraphObservation&) const = default;
};

GraphObservation encode_graph(const SimState& st);

nlohmann::json observation_to_json(const GraphObservation& obs);
GraphObservation observation_from_json(const nlohmann::json& j);

enum class Activity : int { None, Scan, Exploit };
enum class CompromisedView : int { No, Unknown, User, Privileged };

std::string_view to_string(Activity a);
std::string_view to_string(CompromisedView c);

struct BlueTableRow {
  std::string subnet;
  std::string ip;
  std::string hostname;
  Activity activity = Activity::None;
  CompromisedView compromised = CompromisedView::No;

  bool operator==(const BlueTableRow&) const = default;
};

/// Last per-host blue action, the only history the table rules consume.
class BlueHistory {
 public:
  explicit BlueHistory(int num_nodes = 0) : last_(static_cast<std::size_t>(num_nodes)) {}

  void record(const BlueAction& a);
  std::optional<int> last_action(int node) const { return last_.at(static_cast<std::size_t>(node)); }
  int size() const { return static_cast<int>(last_.size()); }

 private:
  std::vector<std::optional<int>> last_;
};

/// Activity from a host's detected connections.
Activity classify_activity(std::span<const ConnectionRecord> detected, std::span<const int> malicious_remote_ports);

/// Compromised status from activity, analysed-file evidence and history.
CompromisedView classify_compromised(Activity activity, bool malicious_file_detected, std::optional<int> last_action);

std::vector<BlueTableRow> blue_table(const SimState& st, const BlueHistory& history);

/// Four bits per host: two for activity then two for compromised status.
std::vector<std::uint8_t> bitvector(std::span<const BlueTableRow> rows);

std::string render_table(std::span<const BlueTableRow> rows);

}  // namespace topodef
