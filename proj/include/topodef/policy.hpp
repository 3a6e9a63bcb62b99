#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "topodef/action.hpp"
#include "topodef/gatcore.hpp"
#include "topodef/observe.hpp"
#include "topodef/rng.hpp"

namespace topodef {

enum class Activation { Tanh, Identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct PolicySpec {
  int num_layers = 2;
  int hidden_dim = 3;
  int attention_dim = 8;
  int local_action_count = kLocalActions;
  int global_action_count = kGlobalActions;
  Activation activation = Activation::Tanh;
  gat::Neighborhood neighborhood = gat::Neighborhood::In;
  int node_dim = kNodeFeatures;
  int edge_dim = kEdgeFeatures;
  int global_dim = kGlobalFeatures;

  void validate() const;
  int head_width() const { return local_action_count + global_action_count; }
  bool operator==(const PolicySpec&) const = default;
};

/// All trainable tensors. Parameter count depends only on the spec, never on
/// the graph size.
struct PolicyParams {
  PolicySpec spec;
  std::vector<gat::GatLayerParams> layers;
  gat::Matrix head_weight;  // hidden_dim × (local + global)
  gat::Matrix head_bias;    // 1 × (local + global)

  static PolicyParams zeros(const PolicySpec& spec);

  /// Visits ("layer0.W_u", tensor) ... ("head.weight", ...), ("head.bias", ...).
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string prefix = "layer" + std::to_string(l) + ".";
      layers[l].for_each([&](std::string_view name, gat::Matrix& m) { f(prefix + std::string(name), m); });
    }
    f(std::string("head.weight"), head_weight);
    f(std::string("head.bias"), head_bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string prefix = "layer" + std::to_string(l) + ".";
      layers[l].for_each([&](std::string_view name, const gat::Matrix& m) { f(prefix + std::string(name), m); });
    }
    f(std::string("head.weight"), head_weight);
    f(std::string("head.bias"), head_bias);
  }

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  bool operator==(const PolicyParams&) const = default;
};

using PolicyGrads = PolicyParams;

PolicyParams init_policy(const PolicySpec& spec, std::uint64_t seed);

/// Joint distribution over 10N + 2 actions (for the default spec). Layout:
/// the global actions first, then each node's block of local actions.
struct ActionDistribution {
  std::vector<double> logits;
  std::vector<double> log_probs;
  int num_nodes = 0;
  int local_count = kLocalActions;
  int global_count = kGlobalActions;

  std::size_t size() const { return logits.size(); }
  double prob(std::size_t i) const;
};

/// Builds the distribution (max-subtracted log-softmax) from raw logits.
ActionDistribution make_distribution(std::vector<double> logits, int num_nodes, int local_count, int global_count);
ActionDistribution uniform_distribution(int num_nodes, int local_count = kLocalActions, int global_count = kGlobalActions);

std::size_t action_to_index(const BlueAction& a, int num_nodes, int local_count = kLocalActions,
                            int global_count = kGlobalActions);
BlueAction index_to_action(std::size_t index, int num_nodes, int local_count = kLocalActions,
                           int global_count = kGlobalActions);

/// Converts an observation into the GAT's graph form.
gat::DirectedGraphBatch to_graph_batch(const GraphObservation& obs, gat::Neighborhood direction);

/// Everything the backward pass needs from one forward evaluation.
struct PolicyTrace {
  gat::DirectedGraphBatch graph;
  std::vector<gat::LayerCache> layer_caches;
  std::vector<gat::Matrix> layer_outputs;  // pre-activation outputs per layer
  gat::Matrix head_input;                  // N × hidden
  ActionDistribution dist;
};

ActionDistribution policy_forward(const PolicyParams& params, const GraphObservation& obs);
PolicyTrace policy_forward_traced(const PolicyParams& params, const GraphObservation& obs);

/// Raw per-node head scores (N × head width) before the global columns are summed.
gat::Matrix node_scores(const PolicyParams& params, const GraphObservation& obs);

/// Gradient of Σ_i d_logits[i] · logits[i] w.r.t. every parameter.
PolicyGrads policy_backward(const PolicyParams& params, const PolicyTrace& trace, std::span<const double> d_logits);

/// Inverse-CDF draw over the canonical layout.
std::pair<BlueAction, double> sample_action(const ActionDistribution& dist, Rng& rng);
std::size_t sample_index(const ActionDistribution& dist, Rng& rng);

double action_logprob(const ActionDistribution& dist, const BlueAction& a);

/// ∂ log π(index) / ∂ logits = onehot(index) − softmax.
std::vector<double> logprob_grad(const ActionDistribution& dist, std::size_t index);

/// Anything that maps an observation to an action distribution.
class ActionPolicy {
 public:
  virtual ~ActionPolicy() = default;
  virtual ActionDistribution distribution(const GraphObservation& obs) const = 0;
};

class GatPolicy final : public ActionPolicy {
 public:
  explicit GatPolicy(PolicyParams params) : params_(std::move(params)) {}
  ActionDistribution distribution(const GraphObservation& obs) const override { return policy_forward(params_, obs); }
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

class UniformPolicy final : public ActionPolicy {
 public:
  explicit UniformPolicy(int local_count = kLocalActions, int global_count = kGlobalActions)
      : local_(local_count), global_(global_count) {}
  ActionDistribution distribution(const GraphObservation& obs) const override {
    return uniform_distribution(obs.num_nodes(), local_, global_);
  }

 private:
  int local_;
  int global_;
};

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string trained_on_scenario;
  int iterations = 0;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  PolicyParams params;
  CheckpointMeta meta;
};

nlohmann::json checkpoint_to_json(const PolicyParams& params, const CheckpointMeta& meta);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const PolicyParams& params, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, but fails unless the stored spec equals `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const PolicySpec& expected);

}  // namespace topodef
