#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "topodef/netsim.hpp"
#include "topodef/observe.hpp"
#include "topodef/policy.hpp"

namespace topodef {

struct TrainConfig {
  int episodes_per_batch = 1000;
  int horizon = 30;
  double learning_rate = 0.01;
  int iterations = 300;
  double gamma = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double norm_eps = 1e-8;
  std::uint64_t seed = 0;
  int workers = 1;
  bool per_timestep_normalization = false;
  double clip_norm = 0.0;  // 0 disables clipping
  int ckpt_every = 0;      // 0 writes only the final checkpoint
  int eval_every = 0;      // 0 disables periodic evaluation
  int eval_episodes = 100;
  std::filesystem::path out_dir;
  PolicySpec policy;

  void validate() const;
};

/// One episode. Observations are kept only when requested (training needs
/// them to recompute gradients; evaluation does not).
struct Trajectory {
  std::uint64_t seed = 0;
  std::vector<GraphObservation> observations;
  std::vector<std::uint32_t> actions;  // indices in the policy's joint layout
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> returns_to_go;
  std::size_t injected_edges = 0;

  std::size_t length() const { return rewards.size(); }
  double total_return() const;
};

/// Called before each observation is encoded; may mutate the state.
using StepInjector = std::function<std::size_t(SimState&, Rng&)>;

struct EpisodeOptions {
  bool keep_observations = false;
  const StepInjector* injector = nullptr;
  /// Invoked after every step with the chosen action and its result.
  std::function<void(const SimState&, const GraphObservation&, const BlueAction&, const StepResult&)> on_step;
};

/// Streams derived from `seed`: environment {1,2,3} (inside reset), action
/// sampling {4}, injection {5}.
Trajectory run_episode(const ActionPolicy& policy, std::shared_ptr<const Topology> topology, std::uint64_t seed,
                       const EpisodeOptions& options = {});

std::uint64_t episode_seed(std::uint64_t base, int batch_index, int episode_index);

/// Runs `count` jobs on up to `workers` threads; job i only touches slot i.
void parallel_for(int count, int workers, const std::function<void(int)>& job);

std::vector<Trajectory> collect_batch(const PolicyParams& params, std::shared_ptr<const Topology> topology,
                                      const TrainConfig& cfg, int batch_index);

std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma);

/// (G - mean) / (std + eps) with population std over every value; all zeros
/// when std is exactly zero.
std::vector<double> normalize_returns(std::span<const double> returns, double eps = 1e-8);

/// Fills returns_to_go of every trajectory and returns the normalized values
/// per trajectory, either over the whole batch or per time step.
std::vector<std::vector<double>> normalized_batch_returns(std::vector<Trajectory>& batch, const TrainConfig& cfg);

/// Gradient of L = -(1/B) Σ_episodes Σ_t log π(a_t|s_t) · Ĝ_t.
PolicyGrads policy_gradient(const PolicyParams& params, const std::vector<Trajectory>& batch,
                            const std::vector<std::vector<double>>& normalized, int workers = 1);

/// The surrogate loss itself, for finite-difference checks.
double surrogate_loss(const PolicyParams& params, const std::vector<Trajectory>& batch,
                      const std::vector<std::vector<double>>& normalized);

double gradient_norm(const PolicyGrads& g);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  PolicyParams m;
  PolicyParams v;
  long long t = 0;

  static AdamState zeros(const PolicySpec& spec);
};

/// Bias-corrected Adam; throws NonFiniteGradient before touching anything.
void adam_step(PolicyParams& params, const PolicyGrads& grads, AdamState& state, const TrainConfig& cfg);

struct IterationMetrics {
  int iteration = 0;
  double mean_return = 0.0;
  double median_return = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double grad_norm = 0.0;
  double eps_per_sec = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<IterationMetrics> metrics;
};

/// Full training loop. With an out_dir it writes metrics.csv (deterministic
/// columns), timing.csv (wall-clock columns), checkpoints and policy.json.
/// On failure it flushes abort.json with the last good parameters.
TrainResult train(const TrainConfig& cfg, const Scenario& scenario,
                  const std::function<void(const IterationMetrics&)>& progress = {});

std::string metrics_csv(const std::vector<IterationMetrics>& rows);
std::string timing_csv(const std::vector<IterationMetrics>& rows);

}  // namespace topodef
