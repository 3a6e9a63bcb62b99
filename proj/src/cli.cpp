#include "topodef/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "topodef/evalkit.hpp"
#include "topodef/observe.hpp"
#include "topodef/policy.hpp"
#include "topodef/scenario.hpp"
#include "topodef/train.hpp"

namespace topodef {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

std::uint64_t env_seed() {
  const char* s = std::getenv("TOPODEF_SEED");
  if (s == nullptr || *s == '\0') return 0;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("TOPODEF_SEED is not an unsigned integer: ") + s);
  }
}

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
  return opt->count() > 0 ? flag_value : env_seed();
}

std::pair<std::string, std::string> split_label(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) {
    const std::filesystem::path p(arg);
    return {p.stem().string(), arg};
  }
  if (eq == 0 || eq + 1 == arg.size()) throw UsageError("expected label=PATH, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

std::shared_ptr<const ActionPolicy> load_policy(const std::string& path) {
  if (path.empty() || path == "random") return std::make_shared<UniformPolicy>();
  return std::make_shared<GatPolicy>(load_checkpoint(path).params);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string summary_line(const ReturnSummary& s) {
  return "episodes " + std::to_string(s.episodes) + "  mean " + num(s.mean) + "  median " + num(s.median) +
         "  p25 " + num(s.p25) + "  p75 " + num(s.p75) + "  min " + num(s.min) + "  max " + num(s.max);
}

struct TrainFlags {
  std::string scenario;
  std::string preset;
  int iters = 300;
  int batch = 1000;
  int horizon = 30;
  double lr = 0.01;
  double gamma = 1.0;
  std::uint64_t seed = 0;
  std::string out = "run";
  int ckpt_every = 0;
  int workers = 1;
  int local_actions = kLocalActions;
  bool per_timestep = false;
  double clip_norm = 0.0;
  int eval_every = 0;
  bool quiet = false;
};

struct EvalFlags {
  std::string policy;
  std::string scenario;
  std::string preset;
  int episodes = 500;
  std::uint64_t seed = 0;
  std::string out;
  int workers = 1;
};

struct CrossFlags {
  std::vector<std::string> policies;
  std::vector<std::string> scenarios;
  int episodes = 500;
  std::uint64_t seed = 0;
  bool with_random = false;
  std::string out;
  int workers = 1;
};

struct RolloutFlags {
  std::string policy;
  std::string scenario;
  std::uint64_t seed = 0;
  int steps = 0;
  bool dump_obs = false;
};

struct GradFlags {
  int nodes = 6;
  std::uint64_t seed = 0;
  bool corrupt = false;
};

struct ScenarioFlags {
  std::string path;
  int delta = 0;
  std::string out;
};

struct StressFlags {
  std::string policy;
  std::string scenario;
  std::vector<double> rates{0.25, 0.5, 1.0};
  int episodes = 100;
  std::uint64_t seed = 0;
  int workers = 1;
};

int cmd_train(const TrainFlags& f, const CLI::App& sub, std::uint64_t seed, std::ostream& out) {
  TrainConfig cfg;
  cfg.iterations = f.iters;
  cfg.episodes_per_batch = f.batch;
  if (f.preset == "desk") {
    if (sub.count("--iters") == 0) cfg.iterations = 60;
    if (sub.count("--batch") == 0) cfg.episodes_per_batch = 128;
  }
  cfg.horizon = f.horizon;
  cfg.learning_rate = f.lr;
  cfg.gamma = f.gamma;
  cfg.seed = seed;
  cfg.out_dir = f.out;
  cfg.ckpt_every = f.ckpt_every;
  cfg.workers = f.workers;
  cfg.policy.local_action_count = f.local_actions;
  cfg.per_timestep_normalization = f.per_timestep;
  cfg.clip_norm = f.clip_norm;
  cfg.eval_every = f.eval_every;
  const Scenario scenario = load_scenario_file(f.scenario);

  out << "training on " << scenario.name << ": " << cfg.iterations << " iterations x " << cfg.episodes_per_batch
      << " episodes, horizon " << cfg.horizon << ", lr " << num(cfg.learning_rate) << ", seed " << cfg.seed << "\n";
  const TrainResult r = train(cfg, scenario, [&](const IterationMetrics& m) {
    if (f.quiet) return;
    out << "iter " << m.iteration << "  mean " << num(m.mean_return) << "  median " << num(m.median_return)
        << "  grad_norm " << num(m.grad_norm) << "  eps/s " << num(m.eps_per_sec) << "\n";
  });
  out << "wrote " << (cfg.out_dir / "policy.json").string() << "\n";
  return kExitOk;
}

int cmd_eval(const EvalFlags& f, std::uint64_t seed, std::ostream& out) {
  const Scenario scenario = load_scenario_file(f.scenario);
  const auto policy = load_policy(f.policy);
  const std::string label = f.policy.empty() ? "random" : std::filesystem::path(f.policy).stem().string();
  const ReturnSummary s = evaluate(*policy, scenario, f.episodes, seed, f.workers);
  out << label << " on " << scenario.name << ": " << summary_line(s) << "\n";
  if (!f.out.empty()) {
    const std::vector<CrossEvalCell> cells{{label, scenario.name, s}};
    const std::string stem = "eval_" + label + "_" + scenario.name + "_seed" + std::to_string(seed);
    write_report_csv(cells, std::filesystem::path(f.out) / (stem + ".csv"));
    write_report_json(cells, std::filesystem::path(f.out) / (stem + ".json"));
  }
  return kExitOk;
}

int cmd_crosseval(const CrossFlags& f, std::uint64_t seed, std::ostream& out) {
  std::vector<LabeledPolicy> policies;
  for (const auto& arg : f.policies) {
    auto [label, path] = split_label(arg);
    policies.push_back({label, load_policy(path)});
  }
  std::vector<LabeledScenario> scenarios;
  for (const auto& arg : f.scenarios) {
    auto [label, path] = split_label(arg);
    scenarios.push_back({label, load_scenario_file(path)});
  }
  const auto cells = cross_eval(policies, scenarios, f.episodes, seed, f.with_random, f.workers);
  out << report_csv(cells);
  if (f.with_random) {
    std::map<std::string, const ReturnSummary*> random_by_scenario;
    for (const auto& c : cells)
      if (c.policy == "random") random_by_scenario[c.scenario] = &c.summary;
    for (const auto& c : cells) {
      if (c.policy == "random") continue;
      const WelchResult w = welch_test(c.summary.returns, random_by_scenario.at(c.scenario)->returns);
      out << "welch " << c.policy << " > random on " << c.scenario << ": t " << num(w.t) << "  p " << num(w.p_value)
          << "\n";
    }
  }
  if (!f.out.empty()) {
    const std::string stem = "crosseval_seed" + std::to_string(seed);
    write_report_csv(cells, std::filesystem::path(f.out) / (stem + ".csv"));
    write_report_json(cells, std::filesystem::path(f.out) / (stem + ".json"));
  }
  return kExitOk;
}

int cmd_rollout(const RolloutFlags& f, std::uint64_t seed, std::ostream& out) {
  Scenario scenario = load_scenario_file(f.scenario);
  if (f.steps > 0) scenario.dynamics.horizon = f.steps;
  validate(scenario);
  const auto policy = load_policy(f.policy);
  const auto topology = Topology::build(scenario);
  BlueHistory history(topology->num_nodes);
  EpisodeOptions opts;
  opts.on_step = [&](const SimState& st, const GraphObservation& obs, const BlueAction& a, const StepResult& r) {
    history.record(a);
    const nlohmann::json rec = trace_record(st, a, r);
    out << "== step " << st.step_index << " ==\n";
    out << "blue: " << rec.at("blue_action").get<std::string>() << (r.blue_success ? "" : " (failed)") << "\n";
    out << "red: " << rec.at("red_action").get<std::string>() << (r.red_success ? "" : " (failed)") << "\n";
    out << "reward: " << num(r.outcome.reward) << "\n";
    if (f.dump_obs) out << "obs: " << observation_to_json(obs).dump() << "\n";
    out << render_table(blue_table(st, history));
  };
  const Trajectory t = run_episode(*policy, topology, seed, opts);
  out << "return: " << num(t.total_return()) << "\n";
  return kExitOk;
}

GraphObservation random_observation(int n, Rng& rng) {
  GraphObservation obs;
  for (int i = 0; i < n; ++i) {
    obs.nodes.push_back({static_cast<double>(rng.below(3)), static_cast<double>(1 + rng.below(5)),
                         rng.bernoulli(0.3) ? 1.0 : 0.0});
    obs.hosts.push_back("h" + std::to_string(i));
  }
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (u != v && rng.bernoulli(0.35)) obs.edges.push_back({u, v, static_cast<double>(rng.below(4))});
  obs.global = {static_cast<double>(rng.below(static_cast<std::size_t>(n) + 1)), static_cast<double>(rng.below(10)),
                rng.bernoulli(0.5) ? 1.0 : 0.0};
  return obs;
}

std::string parameter_name(const PolicyParams& p, std::size_t flat_index) {
  std::string found;
  std::size_t at = 0;
  p.for_each([&](const std::string& name, const gat::Matrix& m) {
    if (found.empty() && flat_index < at + m.size()) found = name + "[" + std::to_string(flat_index - at) + "]";
    at += m.size();
  });
  return found;
}

int cmd_gradcheck(const GradFlags& f, std::uint64_t seed, std::ostream& out) {
  if (f.nodes < 1) throw std::invalid_argument("--nodes must be >= 1");
  const PolicySpec spec;
  const PolicyParams params = init_policy(spec, seed);
  Rng rng(derive_seed(seed, {0x6C}));
  std::vector<Trajectory> batch(2);
  std::vector<std::vector<double>> ghat(2);
  const std::size_t actions = static_cast<std::size_t>(f.nodes) * spec.local_action_count + spec.global_action_count;
  for (std::size_t e = 0; e < batch.size(); ++e)
    for (int s = 0; s < 3; ++s) {
      batch[e].observations.push_back(random_observation(f.nodes, rng));
      batch[e].actions.push_back(static_cast<std::uint32_t>(rng.below(actions)));
      ghat[e].push_back(2.0 * rng.uniform() - 1.0);
    }
  std::vector<double> analytic = policy_gradient(params, batch, ghat).flatten();
  if (f.corrupt) analytic[0] += 0.5;
  const std::vector<double> theta = params.flatten();
  PolicyParams probe = params;
  const gat::GradCheckResult r = gat::finite_diff_check(
      [&](std::span<const double> x) {
        probe.assign(x);
        return surrogate_loss(probe, batch, ghat);
      },
      theta, analytic, 1e-5);
  out << "parameters: " << theta.size() << "\n";
  out << "max relative error: " << r.max_rel_error << "\n";
  if (r.max_rel_error < 1e-4) return kExitOk;
  out << "worst coordinate: " << parameter_name(params, r.worst_index) << " analytic " << r.analytic << " numeric "
      << r.numeric << "\n";
  return kExitRuntime;
}

int cmd_stress(const StressFlags& f, std::uint64_t seed, std::ostream& out) {
  const Scenario scenario = load_scenario_file(f.scenario);
  const auto policy = load_policy(f.policy);
  out << "rate,episodes,injected_edges,offlayout_steps,steps,forward_failures,clean_mean,stressed_mean,degradation\n";
  int failures = 0;
  for (double rate : f.rates) {
    const StressReport r = stress_dynamic_edges(*policy, scenario, rate, f.episodes, seed, f.workers);
    failures += r.forward_failures;
    out << num(rate) << "," << f.episodes << "," << r.injected_edges << "," << r.steps_with_offlayout_edges << ","
        << r.steps << "," << r.forward_failures << "," << num(r.clean.mean) << "," << num(r.stressed.mean) << ","
        << num(r.degradation) << "\n";
  }
  return failures == 0 ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph-attention defender training and evaluation", "topodef"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough(false);

  TrainFlags tf;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a policy with REINFORCE");
  train_cmd->add_option("--scenario", tf.scenario, "Scenario JSON file")->required();
  train_cmd->add_option("--preset", tf.preset, "Named preset (desk: 60 iters x 128 episodes)")
      ->check(CLI::IsMember({"desk"}));
  train_cmd->add_option("--iters", tf.iters, "Optimiser iterations");
  train_cmd->add_option("--batch", tf.batch, "Episodes per batch");
  train_cmd->add_option("--horizon", tf.horizon, "Steps per episode");
  train_cmd->add_option("--lr", tf.lr, "Adam learning rate");
  train_cmd->add_option("--gamma", tf.gamma, "Discount factor");
  CLI::Option* train_seed = train_cmd->add_option("--seed", tf.seed, "Random seed (fallback: TOPODEF_SEED)");
  train_cmd->add_option("--out", tf.out, "Output directory");
  train_cmd->add_option("--ckpt-every", tf.ckpt_every, "Checkpoint cadence in iterations (0: final only)");
  train_cmd->add_option("--workers", tf.workers, "Rollout worker threads");
  train_cmd->add_option("--local-actions", tf.local_actions, "Per-node action columns in the policy head");
  train_cmd->add_flag("--per-timestep-norm", tf.per_timestep, "Normalise returns per time step");
  train_cmd->add_option("--clip-norm", tf.clip_norm, "Gradient clipping norm (0: off)");
  train_cmd->add_option("--eval-every", tf.eval_every, "Evaluation cadence in iterations (0: off)");
  train_cmd->add_flag("--quiet", tf.quiet, "Suppress per-iteration progress");

  EvalFlags ef;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a scenario");
  eval_cmd->add_option("--policy", ef.policy, "Checkpoint file (omit for a uniform-random policy)");
  eval_cmd->add_option("--scenario", ef.scenario, "Scenario JSON file")->required();
  eval_cmd->add_option("--preset", ef.preset, "Named preset (desk: 500 episodes)")->check(CLI::IsMember({"desk"}));
  eval_cmd->add_option("--episodes", ef.episodes, "Evaluation episodes");
  CLI::Option* eval_seed = eval_cmd->add_option("--seed", ef.seed, "Random seed (fallback: TOPODEF_SEED)");
  eval_cmd->add_option("--out", ef.out, "Report directory");
  eval_cmd->add_option("--workers", ef.workers, "Worker threads");

  CrossFlags cf;
  CLI::App* cross_cmd = app.add_subcommand("crosseval", "Evaluate every policy on every scenario");
  cross_cmd->add_option("--policy", cf.policies, "label=PATH checkpoint, repeatable")->required();
  cross_cmd->add_option("--scenario", cf.scenarios, "label=PATH scenario, repeatable")->required();
  cross_cmd->add_option("--episodes", cf.episodes, "Evaluation episodes per cell");
  CLI::Option* cross_seed = cross_cmd->add_option("--seed", cf.seed, "Random seed (fallback: TOPODEF_SEED)");
  cross_cmd->add_flag("--with-random", cf.with_random, "Add a uniform-random policy row");
  cross_cmd->add_option("--out", cf.out, "Report directory");
  cross_cmd->add_option("--workers", cf.workers, "Worker threads");

  RolloutFlags rf;
  CLI::App* rollout_cmd = app.add_subcommand("rollout", "Print one episode step by step");
  rollout_cmd->add_option("--policy", rf.policy, "Checkpoint file (omit for a uniform-random policy)");
  rollout_cmd->add_option("--scenario", rf.scenario, "Scenario JSON file")->required();
  CLI::Option* rollout_seed = rollout_cmd->add_option("--seed", rf.seed, "Random seed (fallback: TOPODEF_SEED)");
  rollout_cmd->add_option("--steps", rf.steps, "Steps to run (0: scenario horizon)");
  rollout_cmd->add_flag("--dump-obs", rf.dump_obs, "Print each graph observation as JSON");

  GradFlags gf;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference policy gradients");
  grad_cmd->add_option("--nodes", gf.nodes, "Nodes in the random graph");
  CLI::Option* grad_seed = grad_cmd->add_option("--seed", gf.seed, "Random seed (fallback: TOPODEF_SEED)");
  grad_cmd->add_flag("--corrupt-gradient", gf.corrupt)->group("");

  ScenarioFlags sf;
  CLI::App* scen_cmd = app.add_subcommand("scenario", "Scenario tooling");
  scen_cmd->require_subcommand(1);
  CLI::App* scen_validate = scen_cmd->add_subcommand("validate", "Check scenario invariants");
  scen_validate->add_option("path", sf.path, "Scenario JSON file")->required();
  CLI::App* scen_variant = scen_cmd->add_subcommand("variant", "Add or remove user hosts");
  scen_variant->add_option("path", sf.path, "Scenario JSON file")->required();
  scen_variant->add_option("--delta", sf.delta, "User hosts to add (positive) or remove (negative)")->required();
  scen_variant->add_option("--out", sf.out, "Output file (default: stdout)");
  CLI::App* scen_edges = scen_cmd->add_subcommand("edges", "Count layout edges");
  scen_edges->add_option("path", sf.path, "Scenario JSON file")->required();

  StressFlags xf;
  CLI::App* stress_cmd = app.add_subcommand("stress", "Evaluate under injected off-layout connections");
  stress_cmd->add_option("--policy", xf.policy, "Checkpoint file (omit for a uniform-random policy)");
  stress_cmd->add_option("--scenario", xf.scenario, "Scenario JSON file")->required();
  stress_cmd->add_option("--rate", xf.rates, "Injection rates in [0, 1], repeatable");
  stress_cmd->add_option("--episodes", xf.episodes, "Episodes per rate");
  CLI::Option* stress_seed = stress_cmd->add_option("--seed", xf.seed, "Random seed (fallback: TOPODEF_SEED)");
  stress_cmd->add_option("--workers", xf.workers, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    CLI::App* shown = &app;
    for (CLI::App* sub : app.get_subcommands())
      if (sub->parsed()) shown = sub;
    err << shown->help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(tf, *train_cmd, resolve_seed(train_seed, tf.seed), out);
    if (eval_cmd->parsed()) {
      if (ef.preset == "desk" && eval_cmd->count("--episodes") == 0) ef.episodes = 500;
      return cmd_eval(ef, resolve_seed(eval_seed, ef.seed), out);
    }
    if (cross_cmd->parsed()) return cmd_crosseval(cf, resolve_seed(cross_seed, cf.seed), out);
    if (rollout_cmd->parsed()) return cmd_rollout(rf, resolve_seed(rollout_seed, rf.seed), out);
    if (grad_cmd->parsed()) return cmd_gradcheck(gf, resolve_seed(grad_seed, gf.seed), out);
    if (stress_cmd->parsed()) return cmd_stress(xf, resolve_seed(stress_seed, xf.seed), out);
    if (scen_validate->parsed()) {
      const Scenario s = load_scenario_file(sf.path);
      out << s.name << ": ok (" << s.node_count() << " hosts, " << s.subnets.size() << " subnets)\n";
      return kExitOk;
    }
    if (scen_variant->parsed()) {
      const Scenario v = make_variant(load_scenario_file(sf.path), sf.delta);
      if (sf.out.empty())
        out << dump_scenario(v);
      else
        write_text(sf.out, dump_scenario(v));
      return kExitOk;
    }
    if (scen_edges->parsed()) {
      const Scenario s = load_scenario_file(sf.path);
      const auto topo = Topology::build(s);
      std::size_t intra = 0;
      for (const auto& [u, v] : topo->edges)
        if (topo->node_subnet[static_cast<std::size_t>(u)] == topo->node_subnet[static_cast<std::size_t>(v)]) ++intra;
      out << "intra: " << intra << "\n";
      out << "bridge: " << topo->edges.size() - intra << "\n";
      out << "total: " << topo->edges.size() << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ScenarioError& e) {
    err << "invalid scenario: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NonFiniteGradient& e) {
    err << "training aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace topodef
