#include "topodef/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "topodef/stats.hpp"

namespace topodef {

void TrainConfig::validate() const {
  if (episodes_per_batch < 2) throw std::invalid_argument("episodes_per_batch must be >= 2");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in [0, 1]");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
  if (ckpt_every < 0 || eval_every < 0) throw std::invalid_argument("cadences must be >= 0");
  if (eval_every > 0 && eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
  policy.validate();
}

double Trajectory::total_return() const {
  double s = 0.0;
  for (double r : rewards) s += r;
  return s;
}

Trajectory run_episode(const ActionPolicy& policy, std::shared_ptr<const Topology> topology, std::uint64_t seed,
                       const EpisodeOptions& options) {
  Trajectory traj;
  traj.seed = seed;
  SimState st = reset(std::move(topology), seed);
  Rng action_rng(derive_seed(seed, {4}));
  Rng inject_rng(derive_seed(seed, {5}));
  const std::size_t h = static_cast<std::size_t>(st.horizon());
  traj.actions.reserve(h);
  traj.log_probs.reserve(h);
  traj.rewards.reserve(h);
  while (!st.done()) {
    if (options.injector) traj.injected_edges += (*options.injector)(st, inject_rng);
    GraphObservation obs = encode_graph(st);
    const ActionDistribution dist = policy.distribution(obs);
    const std::size_t idx = sample_index(dist, action_rng);
    const BlueAction a = index_to_action(idx, dist.num_nodes, dist.local_count, dist.global_count);
    const StepResult r = blue_step(st, a);
    traj.actions.push_back(static_cast<std::uint32_t>(idx));
    traj.log_probs.push_back(dist.log_probs[idx]);
    traj.rewards.push_back(r.outcome.reward);
    if (options.on_step) options.on_step(st, obs, a, r);
    if (options.keep_observations) traj.observations.push_back(std::move(obs));
  }
  return traj;
}

std::uint64_t episode_seed(std::uint64_t base, int batch_index, int episode_index) {
  return derive_seed(base, {static_cast<std::uint64_t>(batch_index), static_cast<std::uint64_t>(episode_index)});
}

void parallel_for(int count, int workers, const std::function<void(int)>& job) {
  if (count <= 0) return;
  if (workers <= 1 || count == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(workers, count);
  pool.reserve(static_cast<std::size_t>(n));
  for (int w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<Trajectory> collect_batch(const PolicyParams& params, std::shared_ptr<const Topology> topology,
                                      const TrainConfig& cfg, int batch_index) {
  const GatPolicy policy(params);
  std::vector<Trajectory> batch(static_cast<std::size_t>(cfg.episodes_per_batch));
  EpisodeOptions opts;
  opts.keep_observations = true;
  parallel_for(cfg.episodes_per_batch, cfg.workers, [&](int ep) {
    batch[static_cast<std::size_t>(ep)] = run_episode(policy, topology, episode_seed(cfg.seed, batch_index, ep), opts);
  });
  return batch;
}

std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

std::vector<double> normalize_returns(std::span<const double> returns, double eps) {
  std::vector<double> out(returns.size(), 0.0);
  if (returns.empty()) return out;
  const double m = mean(returns);
  const double s = stddev(returns);
  if (s == 0.0) return out;
  for (std::size_t i = 0; i < returns.size(); ++i) out[i] = (returns[i] - m) / (s + eps);
  return out;
}

std::vector<std::vector<double>> normalized_batch_returns(std::vector<Trajectory>& batch, const TrainConfig& cfg) {
  std::vector<std::vector<double>> out(batch.size());
  for (auto& t : batch) t.returns_to_go = rewards_to_go(t.rewards, cfg.gamma);

  if (!cfg.per_timestep_normalization) {
    std::vector<double> all;
    for (const auto& t : batch) all.insert(all.end(), t.returns_to_go.begin(), t.returns_to_go.end());
    const std::vector<double> z = normalize_returns(all, cfg.norm_eps);
    std::size_t at = 0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
      const std::size_t n = batch[e].returns_to_go.size();
      out[e].assign(z.begin() + static_cast<std::ptrdiff_t>(at), z.begin() + static_cast<std::ptrdiff_t>(at + n));
      at += n;
    }
    return out;
  }

  std::size_t longest = 0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    out[e].assign(batch[e].returns_to_go.size(), 0.0);
    longest = std::max(longest, batch[e].returns_to_go.size());
  }
  std::vector<double> column;
  std::vector<std::size_t> owners;
  for (std::size_t t = 0; t < longest; ++t) {
    column.clear();
    owners.clear();
    for (std::size_t e = 0; e < batch.size(); ++e)
      if (t < batch[e].returns_to_go.size()) {
        column.push_back(batch[e].returns_to_go[t]);
        owners.push_back(e);
      }
    const std::vector<double> z = normalize_returns(column, cfg.norm_eps);
    for (std::size_t k = 0; k < owners.size(); ++k) out[owners[k]][t] = z[k];
  }
  return out;
}

namespace {

void check_batch(const std::vector<Trajectory>& batch, const std::vector<std::vector<double>>& normalized) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (normalized.size() != batch.size()) throw std::invalid_argument("normalized returns do not match the batch");
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Trajectory& t = batch[e];
    if (t.observations.size() != t.actions.size() || normalized[e].size() != t.actions.size())
      throw std::invalid_argument("trajectory " + std::to_string(e) + " is missing observations or returns");
  }
}

std::vector<double> episode_gradient(const PolicyParams& params, const Trajectory& t, std::span<const double> ghat,
                                     double scale) {
  std::vector<double> acc(params.parameter_count(), 0.0);
  for (std::size_t s = 0; s < t.actions.size(); ++s) {
    if (ghat[s] == 0.0) continue;
    const PolicyTrace trace = policy_forward_traced(params, t.observations[s]);
    if (t.actions[s] >= trace.dist.size()) throw std::invalid_argument("recorded action does not fit the policy head");
    std::vector<double> d = logprob_grad(trace.dist, t.actions[s]);
    const double w = -ghat[s] * scale;
    for (double& x : d) x *= w;
    const std::vector<double> g = policy_backward(params, trace, d).flatten();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }
  return acc;
}

}  // namespace

PolicyGrads policy_gradient(const PolicyParams& params, const std::vector<Trajectory>& batch,
                            const std::vector<std::vector<double>>& normalized, int workers) {
  check_batch(batch, normalized);
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<double>> per_episode(batch.size());
  parallel_for(static_cast<int>(batch.size()), workers, [&](int e) {
    const std::size_t i = static_cast<std::size_t>(e);
    per_episode[i] = episode_gradient(params, batch[i], normalized[i], scale);
  });
  std::vector<double> total(params.parameter_count(), 0.0);
  for (const auto& g : per_episode)
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += g[i];
  PolicyGrads grads = PolicyParams::zeros(params.spec);
  grads.assign(total);
  return grads;
}

double surrogate_loss(const PolicyParams& params, const std::vector<Trajectory>& batch,
                      const std::vector<std::vector<double>>& normalized) {
  check_batch(batch, normalized);
  double loss = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e)
    for (std::size_t s = 0; s < batch[e].actions.size(); ++s) {
      const ActionDistribution d = policy_forward(params, batch[e].observations[s]);
      loss -= d.log_probs[batch[e].actions[s]] * normalized[e][s];
    }
  return loss / static_cast<double>(batch.size());
}

double gradient_norm(const PolicyGrads& g) {
  double ss = 0.0;
  g.for_each([&](const std::string&, const gat::Matrix& m) {
    for (double x : m.data()) ss += x * x;
  });
  return std::sqrt(ss);
}

AdamState AdamState::zeros(const PolicySpec& spec) {
  return {PolicyParams::zeros(spec), PolicyParams::zeros(spec), 0};
}

void adam_step(PolicyParams& params, const PolicyGrads& grads, AdamState& state, const TrainConfig& cfg) {
  if (!(grads.spec == params.spec) || grads.parameter_count() != params.parameter_count())
    throw std::invalid_argument("gradient shape does not match parameters");
  grads.for_each([&](const std::string& name, const gat::Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!std::isfinite(m.data()[i])) {
        std::ostringstream msg;
        msg << "non-finite gradient in " << name << "[" << i << "] = " << m.data()[i] << " at Adam step "
            << state.t + 1;
        throw NonFiniteGradient(msg.str());
      }
  });

  std::vector<double> theta = params.flatten();
  const std::vector<double> g = grads.flatten();
  std::vector<double> m = state.m.flatten();
  std::vector<double> v = state.v.flatten();
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
  params.assign(theta);
  state.m.assign(m);
  state.v.assign(v);
}

namespace {

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string metrics_csv(const std::vector<IterationMetrics>& rows) {
  std::string s = "iteration,mean_return,median_return,p25,p75,grad_norm\n";
  for (const auto& r : rows)
    s += std::to_string(r.iteration) + "," + num(r.mean_return) + "," + num(r.median_return) + "," + num(r.p25) +
         "," + num(r.p75) + "," + num(r.grad_norm) + "\n";
  return s;
}

std::string timing_csv(const std::vector<IterationMetrics>& rows) {
  std::string s = "iteration,eps_per_sec,wall_ms\n";
  for (const auto& r : rows) s += std::to_string(r.iteration) + "," + num(r.eps_per_sec) + "," + num(r.wall_ms) + "\n";
  return s;
}

TrainResult train(const TrainConfig& cfg, const Scenario& scenario,
                  const std::function<void(const IterationMetrics&)>& progress) {
  cfg.validate();
  Scenario sc = scenario;
  sc.dynamics.horizon = cfg.horizon;
  validate(sc);
  const auto topology = Topology::build(sc);

  TrainResult result;
  result.params = init_policy(cfg.policy, cfg.seed);
  AdamState adam = AdamState::zeros(cfg.policy);
  const bool writing = !cfg.out_dir.empty();
  if (writing) std::filesystem::create_directories(cfg.out_dir);

  CheckpointMeta meta{cfg.seed, sc.name, 0};
  std::string eval_log = "iteration,mean_return\n";

  auto flush_logs = [&] {
    write_text(cfg.out_dir / "metrics.csv", metrics_csv(result.metrics));
    write_text(cfg.out_dir / "timing.csv", timing_csv(result.metrics));
    if (cfg.eval_every > 0) write_text(cfg.out_dir / "eval.csv", eval_log);
  };

  try {
    for (int it = 0; it < cfg.iterations; ++it) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<Trajectory> batch = collect_batch(result.params, topology, cfg, it);
      const auto normalized = normalized_batch_returns(batch, cfg);
      PolicyGrads grads = policy_gradient(result.params, batch, normalized, cfg.workers);
      const double norm = gradient_norm(grads);
      if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
        const double k = cfg.clip_norm / norm;
        grads.for_each([&](const std::string&, gat::Matrix& m) {
          for (double& x : m.data()) x *= k;
        });
      }
      adam_step(result.params, grads, adam, cfg);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

      std::vector<double> returns;
      returns.reserve(batch.size());
      for (const auto& t : batch) returns.push_back(t.total_return());
      std::sort(returns.begin(), returns.end());
      IterationMetrics row;
      row.iteration = it;
      row.mean_return = mean(returns);
      row.median_return = quantile_sorted(returns, 0.5);
      row.p25 = quantile_sorted(returns, 0.25);
      row.p75 = quantile_sorted(returns, 0.75);
      row.grad_norm = norm;
      row.wall_ms = ms;
      row.eps_per_sec = ms > 0.0 ? 1000.0 * static_cast<double>(batch.size()) / ms : 0.0;
      result.metrics.push_back(row);
      meta.iterations = it + 1;

      if (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) {
        const GatPolicy policy(result.params);
        std::vector<double> eval_returns(static_cast<std::size_t>(cfg.eval_episodes));
        parallel_for(cfg.eval_episodes, cfg.workers, [&](int ep) {
          eval_returns[static_cast<std::size_t>(ep)] =
              run_episode(policy, topology, derive_seed(cfg.seed, {0xE7A1, static_cast<std::uint64_t>(ep)}))
                  .total_return();
        });
        eval_log += std::to_string(it) + "," + num(mean(eval_returns)) + "\n";
      }
      if (writing && cfg.ckpt_every > 0 && (it + 1) % cfg.ckpt_every == 0)
        save_checkpoint(result.params, meta, cfg.out_dir / ("ckpt_" + std::to_string(it + 1) + ".json"));
      if (progress) progress(row);
    }
  } catch (...) {
    if (writing) {
      try {
        save_checkpoint(result.params, meta, cfg.out_dir / "abort.json");
        flush_logs();
      } catch (...) {
      }
    }
    throw;
  }

  if (writing) {
    save_checkpoint(result.params, meta, cfg.out_dir / "policy.json");
    flush_logs();
  }
  return result;
}

}  // namespace topodef
