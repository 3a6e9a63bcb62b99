#include "topodef/evalkit.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <set>

#include "topodef/stats.hpp"

namespace topodef {

using nlohmann::json;

namespace {

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

int bin_of(double x, double lo, double hi, int bins) {
  if (x <= lo) return 0;
  if (x >= hi) return bins - 1;
  const int b = static_cast<int>((x - lo) / (hi - lo) * bins);
  return std::clamp(b, 0, bins - 1);
}

std::vector<double> bin_edges(double lo, double hi, int bins) {
  std::vector<double> e(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) e[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  e.back() = hi;
  return e;
}

}  // namespace

Histogram make_histogram(std::span<const double> values, int bins, double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
    bins = 1;
  }
  Histogram h;
  h.edges = bin_edges(lo, hi, bins);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) ++h.counts[static_cast<std::size_t>(bin_of(v, lo, hi, bins))];
  return h;
}

Histogram make_histogram(std::span<const double> values, int bins) {
  if (values.empty()) return make_histogram(values, bins, 0.0, 0.0);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return make_histogram(values, bins, *lo, *hi);
}

ReturnSummary summarize_returns(std::vector<double> returns, std::uint64_t seed, int bins) {
  if (returns.empty()) throw std::invalid_argument("episodes must be >= 1");
  ReturnSummary s;
  s.episodes = static_cast<int>(returns.size());
  s.seed = seed;
  s.histogram = make_histogram(returns, bins);
  s.mean = mean(returns);
  s.returns = returns;
  std::sort(returns.begin(), returns.end());
  s.median = quantile_sorted(returns, 0.5);
  s.p25 = quantile_sorted(returns, 0.25);
  s.p75 = quantile_sorted(returns, 0.75);
  s.min = returns.front();
  s.max = returns.back();
  return s;
}

std::uint64_t eval_episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, {static_cast<std::uint64_t>(episode)});
}

namespace {

std::vector<Trajectory> run_episodes(const ActionPolicy& policy, const Scenario& scenario, int episodes,
                                     std::uint64_t seed, int workers, const EpisodeOptions& opts = {}) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  validate(scenario);
  const auto topology = Topology::build(scenario);
  std::vector<Trajectory> out(static_cast<std::size_t>(episodes));
  parallel_for(episodes, workers, [&](int e) {
    out[static_cast<std::size_t>(e)] = run_episode(policy, topology, eval_episode_seed(seed, e), opts);
  });
  return out;
}

std::vector<double> totals(const std::vector<Trajectory>& ts) {
  std::vector<double> r;
  r.reserve(ts.size());
  for (const auto& t : ts) r.push_back(t.total_return());
  return r;
}

}  // namespace

ReturnSummary evaluate(const ActionPolicy& policy, const Scenario& scenario, int episodes, std::uint64_t seed,
                       int workers) {
  return summarize_returns(totals(run_episodes(policy, scenario, episodes, seed, workers)), seed);
}

ReturnSummary evaluate(const PolicyParams& params, const Scenario& scenario, int episodes, std::uint64_t seed,
                       int workers) {
  return evaluate(GatPolicy(params), scenario, episodes, seed, workers);
}

RtgTable rtg_table(const std::vector<std::vector<double>>& episode_rewards, int bins, double gamma) {
  if (episode_rewards.empty()) throw std::invalid_argument("episodes must be >= 1");
  RtgTable t;
  t.episodes = static_cast<int>(episode_rewards.size());
  std::vector<std::vector<double>> g;
  g.reserve(episode_rewards.size());
  for (const auto& r : episode_rewards) {
    g.push_back(rewards_to_go(r, gamma));
    t.horizon = std::max(t.horizon, static_cast<int>(r.size()));
  }
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& ep : g)
    for (double x : ep) {
      lo = first ? x : std::min(lo, x);
      hi = first ? x : std::max(hi, x);
      first = false;
    }
  const Histogram grid = make_histogram(std::span<const double>{}, bins, lo, hi);
  t.edges = grid.edges;
  const int nb = static_cast<int>(grid.counts.size());
  const std::size_t h = static_cast<std::size_t>(t.horizon);
  t.counts.assign(h, std::vector<int>(static_cast<std::size_t>(nb), 0));
  t.step_min.assign(h, 0.0);
  t.step_max.assign(h, 0.0);
  t.step_mean.assign(h, 0.0);
  for (std::size_t s = 0; s < h; ++s) {
    std::vector<double> col;
    for (const auto& ep : g)
      if (s < ep.size()) col.push_back(ep[s]);
    if (col.empty()) continue;
    for (double x : col) ++t.counts[s][static_cast<std::size_t>(bin_of(x, t.edges.front(), t.edges.back(), nb))];
    t.step_min[s] = *std::min_element(col.begin(), col.end());
    t.step_max[s] = *std::max_element(col.begin(), col.end());
    t.step_mean[s] = mean(col);
  }
  return t;
}

RtgTable rtg_histogram(const ActionPolicy& policy, const Scenario& scenario, int episodes, std::uint64_t seed,
                       int bins, int workers) {
  std::vector<std::vector<double>> rewards;
  for (auto& t : run_episodes(policy, scenario, episodes, seed, workers)) rewards.push_back(std::move(t.rewards));
  return rtg_table(rewards, bins);
}

std::string rtg_csv(const RtgTable& t) {
  std::string s = "step,bin_lo,bin_hi,count\n";
  for (std::size_t step = 0; step < t.counts.size(); ++step)
    for (std::size_t b = 0; b < t.counts[step].size(); ++b)
      s += std::to_string(step) + "," + num(t.edges[b]) + "," + num(t.edges[b + 1]) + "," +
           std::to_string(t.counts[step][b]) + "\n";
  return s;
}

std::vector<CrossEvalCell> cross_eval(const std::vector<LabeledPolicy>& policies,
                                      const std::vector<LabeledScenario>& scenarios, int episodes,
                                      std::uint64_t seed, bool with_random, int workers) {
  std::set<std::string> seen;
  for (const auto& p : policies)
    if (!seen.insert(p.label).second || (with_random && p.label == "random"))
      throw std::invalid_argument("duplicate policy label '" + p.label + "'");
  seen.clear();
  for (const auto& s : scenarios)
    if (!seen.insert(s.label).second) throw std::invalid_argument("duplicate scenario label '" + s.label + "'");

  std::vector<LabeledPolicy> rows = policies;
  if (with_random) rows.push_back({"random", std::make_shared<UniformPolicy>()});
  std::vector<CrossEvalCell> cells;
  for (const auto& p : rows)
    for (const auto& s : scenarios)
      cells.push_back({p.label, s.label, evaluate(*p.policy, s.scenario, episodes, seed, workers)});
  return cells;
}

WelchResult welch_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_test needs at least 2 samples per side");
  auto moments = [](std::span<const double> x) {
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = va / na;
  const double sb = vb / nb;
  WelchResult r;
  if (sa + sb == 0.0) {
    r.t = ma == mb ? 0.0 : (ma > mb ? INFINITY : -INFINITY);
    r.df = na + nb - 2.0;
    r.p_value = ma == mb ? 0.5 : (ma > mb ? 0.0 : 1.0);
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

StepInjector make_edge_injector(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("injection rate must be in [0, 1]");
  return [rate](SimState& st, Rng& rng) -> std::size_t {
    if (!rng.bernoulli(rate)) return 0;
    const Topology& t = *st.topology;
    std::vector<std::pair<int, int>> pairs;
    for (int u = 0; u < t.num_nodes; ++u)
      for (int v = 0; v < t.num_nodes; ++v)
        if (u != v && !t.is_base_edge(u, v)) pairs.emplace_back(u, v);
    if (pairs.empty()) return 0;
    const auto [from, to] = pairs[rng.below(pairs.size())];
    const auto& ports = st.hosts[static_cast<std::size_t>(to)].open_ports;
    const int local = ports.empty() ? 22 : ports[rng.below(ports.size())];
    inject_connection(st, from, to, local, 49152 + static_cast<int>(rng.below(16384)));
    return 1;
  };
}

StressReport stress_dynamic_edges(const ActionPolicy& policy, const Scenario& scenario, double injection_rate,
                                  int episodes, std::uint64_t seed, int workers) {
  const StepInjector injector = make_edge_injector(injection_rate);
  StressReport rep;
  rep.injection_rate = injection_rate;
  rep.clean = evaluate(policy, scenario, episodes, seed, workers);

  validate(scenario);
  const auto topology = Topology::build(scenario);
  std::vector<Trajectory> trajs(static_cast<std::size_t>(episodes));
  std::vector<std::size_t> offlayout(static_cast<std::size_t>(episodes), 0);
  std::vector<char> failed(static_cast<std::size_t>(episodes), 0);
  parallel_for(episodes, workers, [&](int e) {
    const std::size_t i = static_cast<std::size_t>(e);
    EpisodeOptions opts;
    opts.injector = &injector;
    opts.on_step = [&](const SimState&, const GraphObservation& obs, const BlueAction&, const StepResult&) {
      for (const auto& edge : obs.edges)
        if (!topology->is_base_edge(edge.source, edge.target)) {
          ++offlayout[i];
          break;
        }
    };
    try {
      trajs[i] = run_episode(policy, topology, eval_episode_seed(seed, e), opts);
    } catch (const std::exception&) {
      failed[i] = 1;
    }
  });

  std::vector<double> returns;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (failed[i]) {
      ++rep.forward_failures;
      continue;
    }
    returns.push_back(trajs[i].total_return());
    rep.injected_edges += trajs[i].injected_edges;
    rep.steps += trajs[i].length();
    rep.steps_with_offlayout_edges += offlayout[i];
  }
  if (!returns.empty()) {
    rep.stressed = summarize_returns(std::move(returns), seed);
    rep.degradation = rep.clean.mean - rep.stressed.mean;
  }
  return rep;
}

EdgeInfluence edge_influence(const PolicyParams& params, const GraphObservation& obs, int from, int to,
                             double count) {
  const int n = obs.num_nodes();
  if (from < 0 || to < 0 || from >= n || to >= n || from == to)
    throw std::out_of_range("edge_influence: invalid endpoints");
  GraphObservation mod = obs;
  auto it = std::find_if(mod.edges.begin(), mod.edges.end(),
                         [&](const ObservedEdge& e) { return e.source == from && e.target == to; });
  if (it != mod.edges.end())
    it->count += count;
  else
    mod.edges.insert(std::upper_bound(mod.edges.begin(), mod.edges.end(), ObservedEdge{from, to, count},
                                      [](const ObservedEdge& a, const ObservedEdge& b) {
                                        return std::pair(a.source, a.target) < std::pair(b.source, b.target);
                                      }),
                     {from, to, count});

  const ActionDistribution before = policy_forward(params, obs);
  const ActionDistribution after = policy_forward(params, mod);
  const int L = params.spec.local_action_count;
  const int G = params.spec.global_action_count;

  EdgeInfluence r;
  r.changed.assign(static_cast<std::size_t>(n), false);
  for (int u = 0; u < n; ++u)
    for (int c = 0; c < L; ++c) {
      const std::size_t i = static_cast<std::size_t>(G + u * L + c);
      if (before.logits[i] != after.logits[i]) r.changed[static_cast<std::size_t>(u)] = true;
    }

  // Messages travel from a neighbour to the node that owns it, one hop per
  // layer. The owners whose support gained the new pair change at layer 1.
  const gat::DirectedGraphBatch g = to_graph_batch(mod, params.spec.neighborhood);
  std::vector<std::vector<int>> consumers(static_cast<std::size_t>(n));
  for (int u = 0; u < n; ++u)
    for (int k = g.offsets[static_cast<std::size_t>(u)]; k < g.offsets[static_cast<std::size_t>(u) + 1]; ++k)
      consumers[static_cast<std::size_t>(g.neighbors[static_cast<std::size_t>(k)])].push_back(u);
  r.receptive.assign(static_cast<std::size_t>(n), false);
  std::vector<int> frontier;
  if (params.spec.neighborhood != gat::Neighborhood::Out) frontier.push_back(to);
  if (params.spec.neighborhood != gat::Neighborhood::In) frontier.push_back(from);
  for (int v : frontier) r.receptive[static_cast<std::size_t>(v)] = true;
  for (int layer = 1; layer < params.spec.num_layers; ++layer) {
    std::vector<int> next;
    for (int v : frontier)
      for (int u : consumers[static_cast<std::size_t>(v)])
        if (!r.receptive[static_cast<std::size_t>(u)]) {
          r.receptive[static_cast<std::size_t>(u)] = true;
          next.push_back(u);
        }
    frontier = std::move(next);
  }

  std::vector<std::vector<int>> undirected(static_cast<std::size_t>(n));
  for (const auto& e : mod.edges)
    if (e.source != e.target) {
      undirected[static_cast<std::size_t>(e.source)].push_back(e.target);
      undirected[static_cast<std::size_t>(e.target)].push_back(e.source);
    }
  r.hops_from_edge.assign(static_cast<std::size_t>(n), -1);
  std::deque<int> queue{from, to};
  r.hops_from_edge[static_cast<std::size_t>(from)] = 0;
  r.hops_from_edge[static_cast<std::size_t>(to)] = 0;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    for (int w : undirected[static_cast<std::size_t>(v)])
      if (r.hops_from_edge[static_cast<std::size_t>(w)] < 0) {
        r.hops_from_edge[static_cast<std::size_t>(w)] = r.hops_from_edge[static_cast<std::size_t>(v)] + 1;
        queue.push_back(w);
      }
  }
  return r;
}

std::string report_csv(const std::vector<CrossEvalCell>& cells) {
  std::string s = "policy,scenario,episodes,mean,median,p25,p75,min,max\n";
  for (const auto& c : cells) {
    const ReturnSummary& r = c.summary;
    s += c.policy + "," + c.scenario + "," + std::to_string(r.episodes) + "," + num(r.mean) + "," + num(r.median) +
         "," + num(r.p25) + "," + num(r.p75) + "," + num(r.min) + "," + num(r.max) + "\n";
  }
  return s;
}

json report_json(const std::vector<CrossEvalCell>& cells) {
  json arr = json::array();
  for (const auto& c : cells) {
    const ReturnSummary& r = c.summary;
    arr.push_back({{"policy", c.policy},
                   {"scenario", c.scenario},
                   {"episodes", r.episodes},
                   {"seed", r.seed},
                   {"mean", r.mean},
                   {"median", r.median},
                   {"p25", r.p25},
                   {"p75", r.p75},
                   {"min", r.min},
                   {"max", r.max},
                   {"histogram", {{"edges", r.histogram.edges}, {"counts", r.histogram.counts}}},
                   {"returns", r.returns}});
  }
  return {{"cells", arr}};
}

std::vector<CrossEvalCell> report_from_json(const json& j) {
  std::vector<CrossEvalCell> cells;
  for (const auto& c : j.at("cells")) {
    CrossEvalCell cell;
    cell.policy = c.at("policy").get<std::string>();
    cell.scenario = c.at("scenario").get<std::string>();
    ReturnSummary& r = cell.summary;
    r.episodes = c.at("episodes").get<int>();
    r.seed = c.at("seed").get<std::uint64_t>();
    r.mean = c.at("mean").get<double>();
    r.median = c.at("median").get<double>();
    r.p25 = c.at("p25").get<double>();
    r.p75 = c.at("p75").get<double>();
    r.min = c.at("min").get<double>();
    r.max = c.at("max").get<double>();
    r.histogram.edges = c.at("histogram").at("edges").get<std::vector<double>>();
    r.histogram.counts = c.at("histogram").at("counts").get<std::vector<int>>();
    r.returns = c.at("returns").get<std::vector<double>>();
    cells.push_back(std::move(cell));
  }
  return cells;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << text;
  if (!out) throw std::runtime_error("cannot write report " + path.string());
}

}  // namespace

void write_report_csv(const std::vector<CrossEvalCell>& cells, const std::filesystem::path& path) {
  write_file(path, report_csv(cells));
}

void write_report_json(const std::vector<CrossEvalCell>& cells, const std::filesystem::path& path) {
  write_file(path, report_json(cells).dump(1) + "\n");
}

std::vector<CrossEvalCell> load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  return report_from_json(json::parse(in));
}

}  // namespace topodef
