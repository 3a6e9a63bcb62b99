#include "topodef/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace topodef {

using gat::Matrix;
using nlohmann::json;

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

void PolicySpec::validate() const {
  if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
  if (attention_dim < 1) throw std::invalid_argument("attention_dim must be >= 1");
  if (local_action_count < 1) throw std::invalid_argument("local_action_count must be >= 1");
  if (global_action_count != kGlobalActions) throw std::invalid_argument("global_action_count must be 2");
  if (node_dim != kNodeFeatures || edge_dim != kEdgeFeatures || global_dim != kGlobalFeatures)
    throw std::invalid_argument("feature dimensions must be (3, 1, 3)");
}

namespace {

gat::GatDims layer_dims(const PolicySpec& spec, int l) {
  return {l == 0 ? spec.node_dim : spec.hidden_dim, spec.hidden_dim, spec.attention_dim, spec.edge_dim,
          spec.global_dim};
}

bool activated(const PolicySpec& spec, int l) {
  return spec.activation == Activation::Tanh && l + 1 < spec.num_layers;
}

}  // namespace

PolicyParams PolicyParams::zeros(const PolicySpec& spec) {
  spec.validate();
  PolicyParams p;
  p.spec = spec;
  for (int l = 0; l < spec.num_layers; ++l) p.layers.push_back(gat::GatLayerParams::zeros(layer_dims(spec, l)));
  p.head_weight = Matrix(static_cast<std::size_t>(spec.hidden_dim), static_cast<std::size_t>(spec.head_width()));
  p.head_bias = Matrix(1, static_cast<std::size_t>(spec.head_width()));
  return p;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

std::vector<double> PolicyParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each([&](const std::string&, const Matrix& m) { out.insert(out.end(), m.data().begin(), m.data().end()); });
  return out;
}

void PolicyParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("flat parameter vector has the wrong length");
  std::size_t at = 0;
  for_each([&](const std::string&, Matrix& m) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), m.size(), m.data().begin());
    at += m.size();
  });
}

PolicyParams init_policy(const PolicySpec& spec, std::uint64_t seed) {
  PolicyParams p = PolicyParams::zeros(spec);
  for (int l = 0; l < spec.num_layers; ++l)
    p.layers[static_cast<std::size_t>(l)] =
        gat::init_params(layer_dims(spec, l), derive_seed(seed, {static_cast<std::uint64_t>(l)}));
  Rng rng(derive_seed(seed, {0x4EAD}));
  const double limit = std::sqrt(6.0 / static_cast<double>(p.head_weight.rows() + p.head_weight.cols()));
  for (double& v : p.head_weight.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return p;
}

double ActionDistribution::prob(std::size_t i) const { return std::exp(log_probs.at(i)); }

ActionDistribution make_distribution(std::vector<double> logits, int num_nodes, int local_count, int global_count) {
  const std::size_t expected = static_cast<std::size_t>(num_nodes) * local_count + global_count;
  if (logits.size() != expected) throw std::invalid_argument("logit vector has the wrong length");
  ActionDistribution d;
  d.num_nodes = num_nodes;
  d.local_count = local_count;
  d.global_count = global_count;
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> ex(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) ex[i] = std::exp(logits[i] - mx);
  const double log_z = std::log(gat::canonical_sum(ex));
  d.log_probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) d.log_probs[i] = logits[i] - mx - log_z;
  d.logits = std::move(logits);
  return d;
}

ActionDistribution uniform_distribution(int num_nodes, int local_count, int global_count) {
  return make_distribution(std::vector<double>(static_cast<std::size_t>(num_nodes) * local_count + global_count, 0.0),
                           num_nodes, local_count, global_count);
}

std::size_t action_to_index(const BlueAction& a, int num_nodes, int local_count, int global_count) {
  if (a.is_global()) {
    if (a.index < 0 || a.index >= global_count) throw std::out_of_range("global action index out of range");
    return static_cast<std::size_t>(a.index);
  }
  if (a.node < 0 || a.node >= num_nodes)
    throw std::out_of_range("action node " + std::to_string(a.node) + " out of range for " +
                            std::to_string(num_nodes) + " nodes");
  if (a.index < 0 || a.index >= local_count) throw std::out_of_range("local action index out of range");
  return static_cast<std::size_t>(global_count) + static_cast<std::size_t>(a.node) * local_count + a.index;
}

BlueAction index_to_action(std::size_t index, int num_nodes, int local_count, int global_count) {
  if (index >= static_cast<std::size_t>(num_nodes) * local_count + global_count)
    throw std::out_of_range("action index out of range");
  if (index < static_cast<std::size_t>(global_count)) return {kGlobalNode, static_cast<int>(index)};
  const std::size_t k = index - global_count;
  return {static_cast<int>(k / local_count), static_cast<int>(k % local_count)};
}

gat::DirectedGraphBatch to_graph_batch(const GraphObservation& obs, gat::Neighborhood direction) {
  const std::size_t n = obs.nodes.size();
  Matrix nodes(n, kNodeFeatures);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < static_cast<std::size_t>(kNodeFeatures); ++c) nodes(i, c) = obs.nodes[i][c];
  std::vector<std::pair<int, int>> edges;
  Matrix feats(obs.edges.size(), kEdgeFeatures);
  edges.reserve(obs.edges.size());
  for (std::size_t e = 0; e < obs.edges.size(); ++e) {
    edges.emplace_back(obs.edges[e].source, obs.edges[e].target);
    feats(e, 0) = obs.edges[e].count;
  }
  return gat::DirectedGraphBatch::build(std::move(nodes), std::move(edges), std::move(feats),
                                        std::vector<double>(obs.global.begin(), obs.global.end()), direction);
}

namespace {

void check_observation(const PolicyParams& params, const GraphObservation& obs) {
  if (params.spec.node_dim != kNodeFeatures || params.spec.edge_dim != kEdgeFeatures ||
      params.spec.global_dim != kGlobalFeatures)
    throw std::invalid_argument("observation feature dimensions do not match the policy");
  if (obs.nodes.empty()) throw std::invalid_argument("observation has no nodes");
}

Matrix head_scores(const PolicyParams& params, const Matrix& h) {
  Matrix s = gat::matmul(h, params.head_weight);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t c = 0; c < s.cols(); ++c) s(i, c) += params.head_bias(0, c);
  return s;
}

std::vector<double> assemble_logits(const PolicySpec& spec, const Matrix& scores) {
  const std::size_t n = scores.rows();
  const std::size_t L = static_cast<std::size_t>(spec.local_action_count);
  const std::size_t G = static_cast<std::size_t>(spec.global_action_count);
  std::vector<double> logits(G + n * L);
  std::vector<double> col(n);
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t i = 0; i < n; ++i) col[i] = scores(i, L + g);
    logits[g] = gat::canonical_sum(col);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < L; ++c) logits[G + i * L + c] = scores(i, c);
  return logits;
}

}  // namespace

PolicyTrace policy_forward_traced(const PolicyParams& params, const GraphObservation& obs) {
  check_observation(params, obs);
  PolicyTrace t;
  t.graph = to_graph_batch(obs, params.spec.neighborhood);
  Matrix x = t.graph.nodes;
  for (int l = 0; l < params.spec.num_layers; ++l) {
    auto [out, cache] = gat::gat_layer_forward(params.layers[static_cast<std::size_t>(l)], t.graph, x);
    t.layer_caches.push_back(std::move(cache));
    t.layer_outputs.push_back(out);
    if (activated(params.spec, l))
      for (double& v : out.data()) v = std::tanh(v);
    x = std::move(out);
  }
  t.head_input = x;
  const Matrix scores = head_scores(params, x);
  t.dist = make_distribution(assemble_logits(params.spec, scores), t.graph.num_nodes, params.spec.local_action_count,
                             params.spec.global_action_count);
  return t;
}

ActionDistribution policy_forward(const PolicyParams& params, const GraphObservation& obs) {
  return policy_forward_traced(params, obs).dist;
}

Matrix node_scores(const PolicyParams& params, const GraphObservation& obs) {
  return head_scores(params, policy_forward_traced(params, obs).head_input);
}

PolicyGrads policy_backward(const PolicyParams& params, const PolicyTrace& trace, std::span<const double> d_logits) {
  const PolicySpec& spec = params.spec;
  const std::size_t n = static_cast<std::size_t>(trace.graph.num_nodes);
  const std::size_t L = static_cast<std::size_t>(spec.local_action_count);
  const std::size_t G = static_cast<std::size_t>(spec.global_action_count);
  if (d_logits.size() != G + n * L) throw std::invalid_argument("logit gradient has the wrong length");

  PolicyGrads grads = PolicyParams::zeros(spec);
  Matrix d_scores(n, L + G);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < L; ++c) d_scores(i, c) = d_logits[G + i * L + c];
    for (std::size_t g = 0; g < G; ++g) d_scores(i, L + g) = d_logits[g];
  }

  const Matrix& h = trace.head_input;
  const std::size_t hd = h.cols();
  Matrix d_x(n, hd);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < L + G; ++c) {
      const double ds = d_scores(i, c);
      if (ds == 0.0) continue;
      grads.head_bias(0, c) += ds;
      for (std::size_t k = 0; k < hd; ++k) {
        grads.head_weight(k, c) += h(i, k) * ds;
        d_x(i, k) += params.head_weight(k, c) * ds;
      }
    }

  for (int l = spec.num_layers - 1; l >= 0; --l) {
    const std::size_t li = static_cast<std::size_t>(l);
    if (activated(spec, l)) {
      const Matrix& pre = trace.layer_outputs[li];
      for (std::size_t i = 0; i < d_x.size(); ++i) {
        const double th = std::tanh(pre.data()[i]);
        d_x.data()[i] *= 1.0 - th * th;
      }
    }
    gat::LayerBackward b = gat::gat_layer_backward(params.layers[li], trace.graph, trace.layer_caches[li], d_x);
    grads.layers[li] = std::move(b.grads);
    d_x = std::move(b.d_input);
  }
  return grads;
}

std::size_t sample_index(const ActionDistribution& dist, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const double p = dist.prob(i);
    if (p <= 0.0) continue;
    last_positive = i;
    cum += p;
    if (u < cum) return i;
  }
  return last_positive;
}

std::pair<BlueAction, double> sample_action(const ActionDistribution& dist, Rng& rng) {
  const std::size_t i = sample_index(dist, rng);
  return {index_to_action(i, dist.num_nodes, dist.local_count, dist.global_count), dist.log_probs[i]};
}

double action_logprob(const ActionDistribution& dist, const BlueAction& a) {
  return dist.log_probs[action_to_index(a, dist.num_nodes, dist.local_count, dist.global_count)];
}

std::vector<double> logprob_grad(const ActionDistribution& dist, std::size_t index) {
  std::vector<double> g(dist.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -dist.prob(i);
  g.at(index) += 1.0;
  return g;
}

json checkpoint_to_json(const PolicyParams& params, const CheckpointMeta& meta) {
  const PolicySpec& s = params.spec;
  json j;
  j["format_version"] = kCheckpointVersion;
  j["spec"] = {{"num_layers", s.num_layers},
               {"hidden_dim", s.hidden_dim},
               {"attention_dim", s.attention_dim},
               {"local_action_count", s.local_action_count},
               {"global_action_count", s.global_action_count},
               {"activation", std::string(to_string(s.activation))},
               {"neighborhood", std::string(gat::to_string(s.neighborhood))},
               {"node_dim", s.node_dim},
               {"edge_dim", s.edge_dim},
               {"global_dim", s.global_dim}};
  json tensors = json::object();
  params.for_each([&](const std::string& name, const Matrix& m) {
    tensors[name] = {{"shape", {m.rows(), m.cols()}}, {"data", m.data()}};
  });
  j["tensors"] = std::move(tensors);
  j["meta"] = {{"seed", meta.seed}, {"trained_on_scenario", meta.trained_on_scenario}, {"iterations", meta.iterations}};
  return j;
}

namespace {

PolicySpec spec_from_json(const json& j) {
  PolicySpec s;
  s.num_layers = j.at("num_layers").get<int>();
  s.hidden_dim = j.at("hidden_dim").get<int>();
  s.attention_dim = j.at("attention_dim").get<int>();
  s.local_action_count = j.at("local_action_count").get<int>();
  s.global_action_count = j.at("global_action_count").get<int>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.neighborhood = gat::neighborhood_from_string(j.at("neighborhood").get<std::string>());
  s.node_dim = j.at("node_dim").get<int>();
  s.edge_dim = j.at("edge_dim").get<int>();
  s.global_dim = j.at("global_dim").get<int>();
  return s;
}

std::string describe_spec_diff(const PolicySpec& got, const PolicySpec& want) {
  std::ostringstream out;
  auto cmp = [&](const char* name, auto a, auto b) {
    if (a != b) out << (out.tellp() > 0 ? ", " : "") << name << " " << a << " (expected " << b << ")";
  };
  cmp("num_layers", got.num_layers, want.num_layers);
  cmp("hidden_dim", got.hidden_dim, want.hidden_dim);
  cmp("attention_dim", got.attention_dim, want.attention_dim);
  cmp("local_action_count", got.local_action_count, want.local_action_count);
  cmp("global_action_count", got.global_action_count, want.global_action_count);
  cmp("activation", to_string(got.activation), to_string(want.activation));
  cmp("neighborhood", gat::to_string(got.neighborhood), gat::to_string(want.neighborhood));
  return out.str();
}

}  // namespace

Checkpoint checkpoint_from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    Checkpoint c;
    const PolicySpec spec = spec_from_json(j.at("spec"));
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint spec invalid: ") + e.what());
    }
    c.params = PolicyParams::zeros(spec);
    const json& tensors = j.at("tensors");
    std::size_t seen = 0;
    c.params.for_each([&](const std::string& name, Matrix& m) {
      if (!tensors.contains(name)) throw CheckpointError("checkpoint is missing tensor " + name);
      const json& t = tensors.at(name);
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
        throw CheckpointError("tensor " + name + " has shape " + t.at("shape").dump() + ", expected [" +
                              std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "]");
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != m.size()) throw CheckpointError("tensor " + name + " has the wrong number of values");
      m.data() = data;
      ++seen;
    });
    if (seen != tensors.size()) throw CheckpointError("checkpoint has unexpected tensors");
    const json& meta = j.at("meta");
    c.meta.seed = meta.at("seed").get<std::uint64_t>();
    c.meta.trained_on_scenario = meta.at("trained_on_scenario").get<std::string>();
    c.meta.iterations = meta.value("iterations", 0);
    return c;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const PolicyParams& params, const CheckpointMeta& meta, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(params, meta).dump(1) << '\n';
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const PolicySpec& expected) {
  Checkpoint c = load_checkpoint(path);
  if (!(c.params.spec == expected))
    throw CheckpointError("checkpoint spec mismatch: " + describe_spec_diff(c.params.spec, expected));
  return c;
}

}  // namespace topodef
