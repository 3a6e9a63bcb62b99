#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "topodef/policy.hpp"
#include "topodef/scenario.hpp"
#include "topodef/train.hpp"

namespace topodef {

struct Histogram {
  std::vector<double> edges;  // bins + 1, ascending
  std::vector<int> counts;

  bool operator==(const Histogram&) const = default;
};

/// Equal-width bins over [lo, hi]; the last bin is closed. A degenerate
/// range gets a single unit-wide bin centred on the value.
Histogram make_histogram(std::span<const double> values, int bins);
Histogram make_histogram(std::span<const double> values, int bins, double lo, double hi);

struct ReturnSummary {
  int episodes = 0;
  double mean = 0.0;
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double min = 0.0;
  double max = 0.0;
  Histogram histogram;
  std::uint64_t seed = 0;
  std::vector<double> returns;  // per episode, in episode order

  bool operator==(const ReturnSummary&) const = default;
};

ReturnSummary summarize_returns(std::vector<double> returns, std::uint64_t seed, int bins = 20);

/// Episode e uses seed derive_seed(seed, {e}) for every policy, so policies
/// compared at the same seed face the same initial environment streams.
std::uint64_t eval_episode_seed(std::uint64_t seed, int episode);

ReturnSummary evaluate(const ActionPolicy& policy, const Scenario& scenario, int episodes, std::uint64_t seed,
                       int workers = 1);
ReturnSummary evaluate(const PolicyParams& params, const Scenario& scenario, int episodes, std::uint64_t seed,
                       int workers = 1);

/// Per-step reward-to-go distributions over a shared bin grid.
struct RtgTable {
  int horizon = 0;
  int episodes = 0;
  std::vector<double> edges;
  std::vector<std::vector<int>> counts;  // [step][bin]
  std::vector<double> step_min;
  std::vector<double> step_max;
  std::vector<double> step_mean;
};

RtgTable rtg_table(const std::vector<std::vector<double>>& episode_rewards, int bins, double gamma = 1.0);
RtgTable rtg_histogram(const ActionPolicy& policy, const Scenario& scenario, int episodes, std::uint64_t seed,
                       int bins, int workers = 1);
std::string rtg_csv(const RtgTable& t);

struct CrossEvalCell {
  std::string policy;
  std::string scenario;
  ReturnSummary summary;

  bool operator==(const CrossEvalCell&) const = default;
};

struct LabeledPolicy {
  std::string label;
  std::shared_ptr<const ActionPolicy> policy;
};

struct LabeledScenario {
  std::string label;
  Scenario scenario;
};

/// Row-major over policies (then the "random" row when requested).
std::vector<CrossEvalCell> cross_eval(const std::vector<LabeledPolicy>& policies,
                                      const std::vector<LabeledScenario>& scenarios, int episodes,
                                      std::uint64_t seed, bool with_random = true, int workers = 1);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 0.5;  // one-sided, H1: mean(a) > mean(b)
};

WelchResult welch_test(std::span<const double> a, std::span<const double> b);

/// Adds, with probability `rate`, one detected connection between a random
/// ordered host pair that is not a layout edge. Returns the number added.
StepInjector make_edge_injector(double rate);

struct StressReport {
  double injection_rate = 0.0;
  ReturnSummary clean;
  ReturnSummary stressed;
  double degradation = 0.0;  // clean mean minus stressed mean
  std::size_t injected_edges = 0;
  std::size_t steps = 0;
  std::size_t steps_with_offlayout_edges = 0;
  int forward_failures = 0;
};

StressReport stress_dynamic_edges(const ActionPolicy& policy, const Scenario& scenario, double injection_rate,
                                  int episodes, std::uint64_t seed, int workers = 1);

/// Local-logit changes caused by adding one edge to an observation.
struct EdgeInfluence {
  std::vector<bool> changed;         // per node: any local logit differs
  std::vector<bool> receptive;       // per node: reachable by the new edge's messages within the layer count
  std::vector<int> hops_from_edge;   // undirected hop distance to the nearer endpoint, -1 if unreachable
};

EdgeInfluence edge_influence(const PolicyParams& params, const GraphObservation& obs, int from, int to,
                             double count = 1.0);

void write_report_csv(const std::vector<CrossEvalCell>& cells, const std::filesystem::path& path);
void write_report_json(const std::vector<CrossEvalCell>& cells, const std::filesystem::path& path);
std::string report_csv(const std::vector<CrossEvalCell>& cells);
nlohmann::json report_json(const std::vector<CrossEvalCell>& cells);
std::vector<CrossEvalCell> report_from_json(const nlohmann::json& j);
std::vector<CrossEvalCell> load_report_json(const std::filesystem::path& path);

}  // namespace topodef
