#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "topodef/action.hpp"
#include "topodef/rng.hpp"
#include "topodef/scenario.hpp"

namespace topodef {

enum class CompromiseLevel : int { NotCompromised = 0, UserAccess = 1, Privileged = 2 };

std::string_view to_string(CompromiseLevel c);

/// Transient kinds are cleared at the start of the next step; Exploit
/// records persist until Remove or Restore clears them.
enum class ConnectionKind : int { Benign, Scan, Exploit, DecoyProbe, Injected };

inline constexpr int kExploitPayloadPort = 4444;
inline constexpr int kScanConnections = 3;
inline constexpr int kExploitConnections = 3;

struct ConnectionRecord {
  int local_port = 0;
  int remote_host = 0;
  int remote_port = 0;
  bool malicious = false;
  bool detected = false;
  ConnectionKind kind = ConnectionKind::Benign;
  bool pending = false;  // created this step, detection not yet rolled

  bool operator==(const ConnectionRecord&) const = default;
};

struct DecoyService {
  DecoyKind kind;
  int port;
  bool operator==(const DecoyService&) const = default;
};

struct HostRuntime {
  std::vector<int> open_ports;  // sorted; base ports plus decoys
  std::vector<DecoyService> decoys;
  std::vector<ConnectionRecord> connections;
  bool malicious_file_present = false;
  bool malicious_file_analysed = false;
  CompromiseLevel compromise = CompromiseLevel::NotCompromised;
  bool scanned_by_red = false;

  bool operator==(const HostRuntime&) const = default;
};

struct RedState {
  std::vector<char> discovered;                 // per node
  std::map<int, CompromiseLevel> footholds;     // nodes with access >= UserAccess
  int target_subnet = 0;
  std::vector<char> subnets_targeted;           // per subnet

  bool operator==(const RedState&) const = default;
};

/// The previous blue action as reported back to the defender.
struct LastBlue {
  int node = kGlobalNode;
  int index = 0;
  bool success = true;

  bool operator==(const LastBlue&) const = default;
};

struct SimState {
  std::shared_ptr<const Topology> topology;
  std::vector<HostRuntime> hosts;
  RedState red;
  int step_index = 0;
  LastBlue last_blue;
  Rng red_rng;
  Rng green_rng;
  Rng detect_rng;

  const Scenario& scenario() const { return topology->scenario; }
  int num_nodes() const { return topology->num_nodes; }
  int horizon() const { return topology->scenario.dynamics.horizon; }
  bool done() const { return step_index >= horizon(); }

  friend bool operator==(const SimState& a, const SimState& b);
};

enum class RedActionKind : int { Sleep, Scan, Exploit, Escalate, Discover, Impact };

std::string_view to_string(RedActionKind k);

/// `target` is a node index, or a subnet index for Discover.
struct RedAction {
  RedActionKind kind = RedActionKind::Sleep;
  int target = -1;

  bool operator==(const RedAction&) const = default;
};

struct RedResult {
  bool success = false;
  std::optional<int> impacted;  // node hit by a successful Impact
};

enum class EventKind : int { UserBreach, ServerBreach, Impact, Restore };

std::string_view to_string(EventKind k);

/// Penalty amounts per turn.
inline constexpr double kUserBreachPenalty = -0.1;
inline constexpr double kServerBreachPenalty = -1.0;
inline constexpr double kImpactPenalty = -10.0;
inline constexpr double kRestorePenalty = -1.0;

struct PenaltyEvent {
  EventKind kind;
  int node;
  double amount;

  bool operator==(const PenaltyEvent&) const = default;
};

struct StepOutcome {
  double reward = 0.0;
  std::vector<PenaltyEvent> events;
  bool episode_done = false;
};

/// Newly detected connection, as the defender would see it in raw form.
struct DetectedConnection {
  int host;
  ConnectionRecord record;
};

struct StepResult {
  StepOutcome outcome;
  bool blue_success = true;
  RedAction red_action;
  bool red_success = false;
  std::vector<DetectedConnection> new_detections;
};

using RedPolicy = std::function<RedAction(const SimState&)>;

SimState reset(const Scenario& s, std::uint64_t seed);
SimState reset(std::shared_ptr<const Topology> topology, std::uint64_t seed);

/// Advances one turn: blue, green, red, detection, penalty. Throws
/// std::out_of_range for an invalid action and std::logic_error once the
/// episode is over.
StepResult blue_step(SimState& st, const BlueAction& a);
StepResult blue_step(SimState& st, const BlueAction& a, const RedPolicy& red_policy);

/// Throws std::out_of_range if `a` does not fit the state's node count.
void check_action(const SimState& st, const BlueAction& a);

bool apply_blue(SimState& st, const BlueAction& a);
void apply_green(SimState& st);
RedAction red_policy_meander(const SimState& st);
RedResult apply_red(SimState& st, const RedAction& ra);
std::vector<DetectedConnection> update_detection(SimState& st);
StepOutcome compute_penalty(const SimState& st, const BlueAction& a, const RedResult& red);

/// Drops transient connection records (scan, probe, benign, injected).
void clear_transient(SimState& st);

/// Rebuilds red's foothold map from host compromise levels.
void sync_footholds(SimState& st);

/// Records a detected, non-malicious connection from `from` to `to` that is
/// cleared with the other transient records. Used for off-layout stress.
void inject_connection(SimState& st, int from, int to, int local_port, int remote_port);

/// One JSON-lines trace record for a completed step.
nlohmann::json trace_record(const SimState& after, const BlueAction& a, const StepResult& r);

}  // namespace topodef
