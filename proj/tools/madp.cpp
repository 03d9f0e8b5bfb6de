// Command-line driver: dataset generation, policy training, rollout
// evaluation, and the experiment suites, all reproducible from one --seed.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "madp/evalharness.hpp"
#include "madp/train.hpp"

namespace {

using namespace madp;

// relative outputs can be redirected wholesale via MADP_OUT_DIR
std::string out_path(const std::string& p) {
  const char* dir = std::getenv("MADP_OUT_DIR");
  if (dir == nullptr || *dir == '\0' || p.empty() || p.front() == '/') return p;
  return std::string(dir) + "/" + p;
}

WorldConfig world_from_flag(const std::string& path) {
  if (path.empty()) return WorldConfig{};
  return load_world_config(path);
}

template <typename Config>
Config config_from_flag(const std::string& path) {
  Config c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  c = j.get<Config>();
  c.validate();
  return c;
}

SigmaRange parse_range(const std::string& s) {
  std::size_t pos = s.find_first_of(":,");
  check(pos != std::string::npos, "range must look like LO:HI, got '" + s + "'");
  return {std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1))};
}

struct PolicySpec {
  std::string name;
  std::string checkpoint;
  int sample_steps = 0;    // 0: take the checkpoint's value
  double eta = -1.0;       // negative: take the checkpoint's value
  bool decentralized = false;
};

void add_policy_flags(CLI::App* cmd, PolicySpec& ps) {
  cmd->add_option("--policy", ps.name, "zero|random|clairvoyant|dcvt|madp");
  cmd->add_option("--checkpoint", ps.checkpoint, "checkpoint stem for --policy madp");
  cmd->add_option("--sample-steps", ps.sample_steps, "reverse diffusion steps (madp)");
  cmd->add_option("--eta", ps.eta, "stochasticity of the sampler in [0,1] (madp)");
  cmd->add_flag("--decentralized", ps.decentralized, "sample per robot over its own neighborhood");
}

// resolves the spec once (loading any checkpoint a single time) and returns a
// factory; a bare --checkpoint implies the learned policy
PolicyFactory make_policy_factory(PolicySpec ps, nlohmann::json& resolved) {
  if (ps.name.empty()) ps.name = ps.checkpoint.empty() ? "clairvoyant" : "madp";
  resolved["policy"] = ps.name;
  if (ps.name != "madp") {
    check(ps.checkpoint.empty(), "--checkpoint only applies to --policy madp");
    make_named_policy(ps.name, nullptr, SamplerConfig{});  // validate the name now
    std::string name = ps.name;
    return [name] { return make_named_policy(name, nullptr, SamplerConfig{}); };
  }
  check(!ps.checkpoint.empty(), "--policy madp needs --checkpoint");
  auto model = std::make_shared<MadpModel>(load_checkpoint(ps.checkpoint));
  SamplerConfig sc;
  sc.steps = ps.sample_steps > 0 ? ps.sample_steps : model->cfg.sample_steps;
  sc.eta = ps.eta >= 0.0 ? ps.eta : model->cfg.eta;
  sc.decentralized = ps.decentralized;
  check(sc.steps >= 1 && sc.steps <= model->sched.K, "--sample-steps out of range");
  check(sc.eta >= 0.0 && sc.eta <= 1.0, "--eta must lie in [0,1]");
  resolved["checkpoint"] = ps.checkpoint;
  resolved["sampler"] = {{"steps", sc.steps}, {"eta", sc.eta}, {"decentralized", sc.decentralized}};
  return [model, sc] { return std::make_unique<MadpPolicy>(*model, sc); };
}

void write_manifest(const std::string& csv_path, const nlohmann::json& manifest) {
  std::ofstream f(csv_path + ".manifest.json");
  check(f.good(), "cannot open " + csv_path + ".manifest.json for writing");
  f << manifest.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-agent diffusion policies for coverage control"};
  app.require_subcommand(1);

  // ---- generate ----
  std::string g_config, g_out;
  int g_examples = 100;
  std::uint64_t g_seed = 0;
  CLI::App* gen = app.add_subcommand("generate", "roll out the expert and write a dataset");
  gen->add_option("--config", g_config, "world config JSON (defaults to the full-scale world)");
  gen->add_option("--out", g_out, "dataset stem")->required();
  gen->add_option("--examples", g_examples, "number of examples")->required();
  gen->add_option("--seed", g_seed, "base seed");
  gen->callback([&] {
    WorldConfig cfg = world_from_flag(g_config);
    Dataset ds = generate_dataset(cfg, g_examples, g_seed);
    save_dataset(ds, out_path(g_out));
    std::printf("dataset: %d examples (%zu/%zu/%zu split) -> %s\n", ds.size(),
                ds.train_idx.size(), ds.val_idx.size(), ds.test_idx.size(),
                out_path(g_out).c_str());
  });

  // ---- train ----
  std::string t_dataset, t_model_cfg, t_train_cfg, t_out, t_resume, t_history;
  std::uint64_t t_seed = 0;
  bool t_seed_given = false;
  CLI::App* train = app.add_subcommand("train", "fit the diffusion policy by imitation");
  train->add_option("--dataset", t_dataset, "dataset stem")->required();
  train->add_option("--model-config", t_model_cfg, "model config JSON");
  train->add_option("--train-config", t_train_cfg, "trainer config JSON");
  train->add_option("--out", t_out, "checkpoint stem")->required();
  train->add_option("--resume", t_resume, "checkpoint stem to continue from");
  train->add_option("--history", t_history, "history CSV path (default <out>.history.csv)");
  train->add_option("--seed", t_seed, "overrides the trainer config seed")
      ->each([&](const std::string&) { t_seed_given = true; });
  train->callback([&] {
    Dataset ds = load_dataset(t_dataset);
    TrainConfig tc = config_from_flag<TrainConfig>(t_train_cfg);
    if (t_seed_given) tc.seed = t_seed;

    MadpModel m = init_model(config_from_flag<ModelConfig>(t_model_cfg), tc.seed);
    int start_epoch = 0;
    if (!t_resume.empty()) {
      check(t_model_cfg.empty(), "--resume and --model-config are mutually exclusive");
      nlohmann::json trainer;
      m = load_checkpoint(t_resume, &trainer);
      start_epoch = trainer.value("epochs", 0);
    }

    TrainResult res = train_model(m, ds, tc, start_epoch);
    nlohmann::json trainer = {{"epochs", start_epoch + res.epochs_run},
                              {"best_val", res.best_val},
                              {"best_epoch", res.best_epoch},
                              {"train_config", tc}};
    save_checkpoint(m, out_path(t_out), trainer);
    std::string history = t_history.empty() ? t_out + ".history.csv" : t_history;
    save_history(out_path(history), res.history);
    std::printf("trained %d epochs, best val %.6f at epoch %d -> %s\n", res.epochs_run,
                res.best_val, res.best_epoch, out_path(t_out).c_str());
  });

  // ---- rollout ----
  std::string r_config, r_scenario = "uniform", r_out, r_band;
  PolicySpec r_policy;
  int r_steps = 600, r_seeds = 20, r_jobs = 1;
  std::uint64_t r_seed = 0;
  CLI::App* roll = app.add_subcommand("rollout", "run a policy and record cost traces");
  roll->add_option("--config", r_config, "world config JSON");
  add_policy_flags(roll, r_policy);
  roll->add_option("--scenario", r_scenario, "uniform|square|line");
  roll->add_option("--steps", r_steps, "environment steps per rollout");
  roll->add_option("--seeds", r_seeds, "number of rollouts");
  roll->add_option("--seed", r_seed, "base seed");
  roll->add_option("--out", r_out, "per-step CSV path")->required();
  roll->add_option("--band", r_band, "also write a mean/CI CSV here");
  roll->add_option("--jobs", r_jobs, "parallel rollout workers");
  roll->callback([&] {
    WorldConfig cfg = world_from_flag(r_config);
    Scenario scenario = scenario_from_string(r_scenario);
    nlohmann::json manifest = {{"command", "rollout"}, {"world", cfg},
                               {"scenario", r_scenario}, {"steps", r_steps},
                               {"seeds", r_seeds},       {"seed", r_seed},
                               {"jobs", r_jobs}};
    PolicyFactory make = make_policy_factory(r_policy, manifest);
    std::vector<RolloutRecord> records =
        run_rollouts(make, cfg, r_steps, seed_jobs(r_seed, r_seeds), scenario, r_jobs);
    write_rollout_csv(out_path(r_out), records);
    write_manifest(out_path(r_out), manifest);
    if (!r_band.empty()) write_band_csv(out_path(r_band), confidence_band(records));
    std::printf("rollout: %d seeds x %d steps (%s) -> %s\n", r_seeds, r_steps,
                records.front().policy.c_str(), out_path(r_out).c_str());
  });

  // ---- eval ----
  std::string e_suite, e_config, e_out, e_baseline = "clairvoyant", e_scenario;
  PolicySpec e_policy;
  std::vector<std::string> e_ranges;
  std::vector<int> e_robots = {2, 4, 8};
  std::vector<int> e_features = {2, 4, 8};
  int e_steps = 150, e_seeds = 20, e_jobs = 1, e_robot = 0, e_runs = 20;
  std::uint64_t e_seed = 0;
  bool e_fixed_prior = false;
  CLI::App* eval = app.add_subcommand("eval", "run an experiment suite");
  eval->add_option("--suite", e_suite, "sigma|init|scale|fan")
      ->required()
      ->check(CLI::IsMember({"sigma", "init", "scale", "fan"}));
  eval->add_option("--config", e_config, "world config JSON");
  add_policy_flags(eval, e_policy);
  eval->add_option("--steps", e_steps, "environment steps per rollout");
  eval->add_option("--seeds", e_seeds, "rollouts per condition");
  eval->add_option("--seed", e_seed, "base seed");
  eval->add_option("--out", e_out, "suite CSV path")->required();
  eval->add_option("--jobs", e_jobs, "parallel rollout workers");
  eval->add_option("--range", e_ranges, "sigma range LO:HI (repeatable; sigma suite)");
  eval->add_option("--scenario", e_scenario, "restrict the init suite to one scenario");
  eval->add_option("--robots", e_robots, "robot counts (scale suite)")->delimiter(',');
  eval->add_option("--features", e_features, "feature counts (scale suite)")->delimiter(',');
  eval->add_option("--baseline", e_baseline, "baseline policy (scale suite)");
  eval->add_option("--robot", e_robot, "robot index (fan suite)");
  eval->add_option("--runs", e_runs, "fan runs (fan suite)");
  eval->add_flag("--fixed-prior", e_fixed_prior, "reuse one prior across fan runs");
  eval->callback([&] {
    WorldConfig cfg = world_from_flag(e_config);
    std::string csv = out_path(e_out);
    nlohmann::json manifest = {{"command", "eval"}, {"suite", e_suite}, {"world", cfg},
                               {"steps", e_steps},  {"seeds", e_seeds}, {"seed", e_seed},
                               {"jobs", e_jobs}};
    PolicyFactory make = make_policy_factory(e_policy, manifest);

    if (e_suite == "sigma") {
      std::vector<SigmaRange> ranges;
      for (const std::string& s : e_ranges) ranges.push_back(parse_range(s));
      if (ranges.empty()) ranges = {{40, 60}, {20, 40}, {60, 80}, {80, 100}};
      nlohmann::json jr = nlohmann::json::array();
      for (const SigmaRange& r : ranges) jr.push_back({r.lo, r.hi});
      manifest["ranges"] = jr;
      write_sigma_csv(csv, sigma_sweep(make, cfg, ranges, e_seeds, e_steps, e_seed, e_jobs));
    } else if (e_suite == "init") {
      std::vector<Scenario> scenarios;
      if (e_scenario.empty())
        scenarios = {Scenario::uniform, Scenario::square, Scenario::line};
      else
        scenarios = {scenario_from_string(e_scenario)};
      nlohmann::json js = nlohmann::json::array();
      std::vector<ScenarioRow> table;
      for (Scenario sc : scenarios) {
        js.push_back(scenario_name(sc));
        table.push_back(init_scenarios(make, cfg, sc, e_seeds, e_steps, e_seed, e_jobs));
      }
      manifest["scenarios"] = js;
      write_scenario_csv(csv, table);
    } else if (e_suite == "scale") {
      nlohmann::json base;
      PolicySpec bs;
      bs.name = e_baseline;
      PolicyFactory make_base = make_policy_factory(bs, base);
      manifest["baseline"] = e_baseline;
      manifest["robots"] = e_robots;
      manifest["features"] = e_features;
      write_grid_csv(csv, scalability_grid(make, make_base, cfg, e_robots, e_features, e_seeds,
                                           e_steps, e_seed, e_jobs));
    } else {  // fan
      manifest["robot"] = e_robot;
      manifest["runs"] = e_runs;
      manifest["vary_prior"] = !e_fixed_prior;
      std::unique_ptr<Policy> p = make();
      write_fan_csv(csv, trajectory_fan(*p, cfg, e_robot, e_runs, e_steps, e_seed,
                                        Scenario::uniform, !e_fixed_prior));
    }
    write_manifest(csv, manifest);
    std::printf("eval %s -> %s\n", e_suite.c_str(), csv.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
