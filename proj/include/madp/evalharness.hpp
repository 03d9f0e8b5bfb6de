#pragma once

// Rollout evaluation: cost traces, sigma generalization sweeps, launch
// scenarios, scalability grids, and trajectory fans, all emitted as CSV.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "madp/experts.hpp"
#include "madp/policy.hpp"

namespace madp {

// ---- policies under evaluation ----

struct Policy {
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  // rebind all policy-internal randomness to one rollout
  virtual void reset(std::uint64_t seed) { (void)seed; }
  virtual Tensor act(const SwarmState& state, const ImportanceField& field, const CommGraph& graph,
                     const WorldConfig& cfg) = 0;
};

struct ZeroPolicy : Policy {
  std::string name() const override { return "zero"; }
  Tensor act(const SwarmState& state, const ImportanceField&, const CommGraph&,
             const WorldConfig&) override {
    return Tensor::zeros({state.num_robots(), 2});
  }
};

// velocities drawn uniformly from the disk of radius u_max
struct RandomPolicy : Policy {
  Rng rng{0};
  std::string name() const override { return "random"; }
  void reset(std::uint64_t seed) override { rng = stream(seed, "policy-random"); }
  Tensor act(const SwarmState& state, const ImportanceField&, const CommGraph&,
             const WorldConfig& cfg) override {
    int n = state.num_robots();
    Tensor u({n, 2});
    for (int i = 0; i < n; ++i) {
      double r = cfg.u_max * std::sqrt(rng.uniform());
      double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      u.at(i, 0) = r * std::cos(theta);
      u.at(i, 1) = r * std::sin(theta);
    }
    return u;
  }
};

struct ClairvoyantPolicy : Policy {
  std::string name() const override { return "clairvoyant"; }
  Tensor act(const SwarmState& state, const ImportanceField& field, const CommGraph&,
             const WorldConfig& cfg) override {
    return clairvoyant_action(state.positions, field, cfg);
  }
};

struct DcvtPolicy : Policy {
  std::string name() const override { return "dcvt"; }
  Tensor act(const SwarmState& state, const ImportanceField&, const CommGraph& graph,
             const WorldConfig& cfg) override {
    return dcvt_action(state, graph, cfg);
  }
};

struct MadpPolicy : Policy {
  MadpModel model;
  SamplerConfig sampler;
  MadpPolicy(MadpModel m, SamplerConfig s) : model(std::move(m)), sampler(s) {}
  std::string name() const override { return "madp"; }
  void reset(std::uint64_t seed) override { sampler.seed = seed; }
  Tensor act(const SwarmState& state, const ImportanceField&, const CommGraph&,
             const WorldConfig& cfg) override {
    return policy_step(model, state, cfg, sampler);
  }
};

// ---- launch scenarios ----

enum class Scenario { uniform, square, line };

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::uniform: return "uniform";
    case Scenario::square: return "square";
    case Scenario::line: return "line";
  }
  return "uniform";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "uniform") return Scenario::uniform;
  if (s == "square") return Scenario::square;
  if (s == "line") return Scenario::line;
  throw std::invalid_argument("unknown scenario: " + s);
}

struct Rect {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

// launch rectangles are specified on a 1024 m reference world and scale with it
inline Rect scenario_rect(Scenario s, const WorldConfig& cfg) {
  double k = cfg.side / 1024.0;
  switch (s) {
    case Scenario::uniform: return {0.0, cfg.side, 0.0, cfg.side};
    case Scenario::square: return {115.25 * k, 217.25 * k, 115.25 * k, 217.25 * k};
    case Scenario::line: return {0.0, cfg.side, 96.0 * k, 352.0 * k};
  }
  return {0.0, cfg.side, 0.0, cfg.side};
}

inline Tensor scenario_positions(Scenario s, const WorldConfig& cfg, Rng& rng) {
  Rect r = scenario_rect(s, cfg);
  Tensor x({cfg.num_robots, 2});
  for (int i = 0; i < cfg.num_robots; ++i) {
    x.at(i, 0) = rng.uniform(r.x0, r.x1);
    x.at(i, 1) = rng.uniform(r.y0, r.y1);
  }
  return x;
}

// ---- rollouts ----

struct EvalEnv {
  ImportanceField field;
  Tensor x0;
};

inline EvalEnv make_env(const WorldConfig& cfg, std::uint64_t seed, Scenario scenario) {
  EvalEnv env;
  Rng field_rng = stream(seed, "rollout-field");
  env.field = generate_field(cfg, field_rng);
  Rng init_rng = stream(seed, "rollout-init");
  env.x0 = scenario_positions(scenario, cfg, init_rng);
  return env;
}

struct RolloutRecord {
  std::string policy;
  std::uint64_t seed = 0;
  WorldConfig world;
  std::vector<double> cost;        // J(X(t)), t = 0..T
  std::vector<double> normalized;  // J(X(t)) / J(X(0))
  std::vector<Tensor> positions;   // (N,2) per step

  int steps() const { return static_cast<int>(cost.size()) - 1; }
  double final_normalized() const { return normalized.back(); }
};

inline RolloutRecord rollout_env(Policy& policy, const WorldConfig& cfg, const EvalEnv& env,
                                 int steps, std::uint64_t seed,
                                 std::optional<std::uint64_t> policy_seed = std::nullopt) {
  cfg.validate();
  check(steps >= 0, "rollout: steps must be nonnegative");
  policy.reset(policy_seed.value_or(seed));

  SwarmState state = init_swarm(cfg, env.x0);
  sense(state, env.field, cfg);

  RolloutRecord rec;
  rec.policy = policy.name();
  rec.seed = seed;
  rec.world = cfg;
  rec.cost.reserve(static_cast<std::size_t>(steps) + 1);
  rec.positions.reserve(static_cast<std::size_t>(steps) + 1);
  rec.cost.push_back(coverage_cost(state.positions, env.field));
  rec.positions.push_back(state.positions);
  for (int t = 0; t < steps; ++t) {
    CommGraph graph = comm_graph(state.positions, cfg.comm_radius);
    Tensor u = policy.act(state, env.field, graph, cfg);
    step(state, u, env.field, cfg);
    rec.cost.push_back(coverage_cost(state.positions, env.field));
    rec.positions.push_back(state.positions);
  }
  double c0 = rec.cost.front();
  rec.normalized.reserve(rec.cost.size());
  for (double c : rec.cost) rec.normalized.push_back(c0 > 0.0 ? c / c0 : 1.0);
  return rec;
}

inline RolloutRecord rollout(Policy& policy, const WorldConfig& cfg, int steps, std::uint64_t seed,
                             Scenario scenario = Scenario::uniform,
                             std::optional<std::uint64_t> policy_seed = std::nullopt) {
  EvalEnv env = make_env(cfg, seed, scenario);
  return rollout_env(policy, cfg, env, steps, seed, policy_seed);
}

// ---- multi-seed execution ----

using PolicyFactory = std::function<std::unique_ptr<Policy>()>;

struct RolloutJob {
  std::uint64_t seed = 0;
  std::uint64_t policy_seed = 0;
};

inline std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, int count) {
  std::vector<std::uint64_t> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(stream_key(seed, "eval-seed", static_cast<std::uint64_t>(i)));
  return out;
}

// Each worker owns a private policy instance; outputs land at their job index,
// so the result order never depends on scheduling.
inline std::vector<RolloutRecord> run_rollouts(const PolicyFactory& make, const WorldConfig& cfg,
                                               int steps, const std::vector<RolloutJob>& jobs,
                                               Scenario scenario = Scenario::uniform,
                                               int workers = 1) {
  std::vector<RolloutRecord> out(jobs.size());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (workers == 1) {
    std::unique_ptr<Policy> p = make();
    for (std::size_t i = 0; i < jobs.size(); ++i)
      out[i] = rollout(*p, cfg, steps, jobs[i].seed, scenario, jobs[i].policy_seed);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      try {
        std::unique_ptr<Policy> p = make();
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
          out[i] = rollout(*p, cfg, steps, jobs[i].seed, scenario, jobs[i].policy_seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

inline std::vector<RolloutJob> seed_jobs(std::uint64_t seed, int count) {
  std::vector<RolloutJob> jobs;
  jobs.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t s : eval_seeds(seed, count)) jobs.push_back({s, s});
  return jobs;
}

// ---- summary statistics ----

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_error_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

// linearly interpolated quantile of a sorted sample
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  double h = p * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double f = h - static_cast<double>(lo);
  return sorted[lo] + f * (sorted[hi] - sorted[lo]);
}

// box-plot summary with 1.5 IQR whiskers; min/max are the whisker ends
struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  std::vector<double> outliers;
};

inline BoxStats box_stats(std::vector<double> v) {
  check(!v.empty(), "box_stats: empty sample");
  std::sort(v.begin(), v.end());
  BoxStats b;
  b.q1 = quantile_sorted(v, 0.25);
  b.median = quantile_sorted(v, 0.5);
  b.q3 = quantile_sorted(v, 0.75);
  double iqr = b.q3 - b.q1;
  double lo_fence = b.q1 - 1.5 * iqr;
  double hi_fence = b.q3 + 1.5 * iqr;
  b.min = b.q3;
  b.max = b.q1;
  for (double x : v) {
    if (x < lo_fence || x > hi_fence) {
      b.outliers.push_back(x);
    } else {
      b.min = std::min(b.min, x);
      b.max = std::max(b.max, x);
    }
  }
  return b;
}

// ---- experiment families ----

struct SigmaRange {
  double lo = 0, hi = 0;
};

struct SigmaSweepRow {
  std::string policy;
  SigmaRange range;
  std::vector<double> finals;  // final normalized cost per seed
  BoxStats stats;
};

inline std::vector<SigmaSweepRow> sigma_sweep(const PolicyFactory& make, const WorldConfig& cfg,
                                              const std::vector<SigmaRange>& ranges, int num_seeds,
                                              int steps, std::uint64_t seed, int workers = 1) {
  check(!ranges.empty() && num_seeds >= 1, "sigma_sweep: need ranges and seeds");
  std::vector<RolloutJob> jobs = seed_jobs(seed, num_seeds);
  std::vector<SigmaSweepRow> rows;
  for (const SigmaRange& r : ranges) {
    check(r.lo > 0 && r.lo <= r.hi, "sigma_sweep: bad range");
    WorldConfig c = cfg;
    c.sigma_min = r.lo;
    c.sigma_max = r.hi;
    SigmaSweepRow row;
    row.range = r;
    for (const RolloutRecord& rec :
         run_rollouts(make, c, steps, jobs, Scenario::uniform, workers)) {
      row.policy = rec.policy;
      row.finals.push_back(rec.final_normalized());
    }
    row.stats = box_stats(row.finals);
    rows.push_back(std::move(row));
  }
  return rows;
}

struct ScenarioRow {
  std::string policy;
  Scenario scenario = Scenario::uniform;
  std::vector<double> finals;
  double mean = 0;
  double std_error = 0;
};

inline ScenarioRow init_scenarios(const PolicyFactory& make, const WorldConfig& cfg,
                                  Scenario scenario, int num_seeds, int steps, std::uint64_t seed,
                                  int workers = 1) {
  check(num_seeds >= 1, "init_scenarios: need at least one seed");
  ScenarioRow row;
  row.scenario = scenario;
  for (const RolloutRecord& rec :
       run_rollouts(make, cfg, steps, seed_jobs(seed, num_seeds), scenario, workers)) {
    row.policy = rec.policy;
    row.finals.push_back(rec.final_normalized());
  }
  row.mean = mean_of(row.finals);
  row.std_error = std_error_of(row.finals);
  return row;
}

struct GridCell {
  int num_robots = 0;
  int num_features = 0;
  double mean_policy = 0;
  double mean_baseline = 0;
  double percent_diff = 0;  // (baseline - policy) / baseline, in percent
};

inline std::vector<GridCell> scalability_grid(const PolicyFactory& make_policy,
                                              const PolicyFactory& make_baseline,
                                              const WorldConfig& cfg,
                                              const std::vector<int>& robot_counts,
                                              const std::vector<int>& feature_counts,
                                              int num_seeds, int steps, std::uint64_t seed,
                                              int workers = 1) {
  check(!robot_counts.empty() && !feature_counts.empty() && num_seeds >= 1,
        "scalability_grid: need grid axes and seeds");
  std::vector<RolloutJob> jobs = seed_jobs(seed, num_seeds);
  std::vector<GridCell> cells;
  for (int n : robot_counts) {
    for (int f : feature_counts) {
      WorldConfig c = cfg;
      c.num_robots = n;
      c.num_features = f;
      GridCell cell;
      cell.num_robots = n;
      cell.num_features = f;
      std::vector<double> pol, base;
      for (const RolloutRecord& rec :
           run_rollouts(make_policy, c, steps, jobs, Scenario::uniform, workers))
        pol.push_back(rec.final_normalized());
      for (const RolloutRecord& rec :
           run_rollouts(make_baseline, c, steps, jobs, Scenario::uniform, workers))
        base.push_back(rec.final_normalized());
      cell.mean_policy = mean_of(pol);
      cell.mean_baseline = mean_of(base);
      cell.percent_diff =
          cell.mean_baseline != 0.0
              ? 100.0 * (cell.mean_baseline - cell.mean_policy) / cell.mean_baseline
              : 0.0;
      cells.push_back(cell);
    }
  }
  return cells;
}

struct FanRun {
  Tensor trajectory;  // (horizon+1, 2) for the chosen robot
  double final_cost = 0;
  double final_normalized = 0;
};

// Re-runs one environment several times; each run gets its own prior/noise
// streams unless vary_prior is off, in which case runs are replicas.
inline std::vector<FanRun> trajectory_fan(Policy& policy, const WorldConfig& cfg, int robot,
                                          int runs, int horizon, std::uint64_t seed,
                                          Scenario scenario = Scenario::uniform,
                                          bool vary_prior = true) {
  check(robot >= 0 && robot < cfg.num_robots, "trajectory_fan: robot index out of range");
  check(runs >= 1, "trajectory_fan: need at least one run");
  EvalEnv env = make_env(cfg, seed, scenario);
  std::vector<FanRun> out;
  out.reserve(static_cast<std::size_t>(runs));
  for (int j = 0; j < runs; ++j) {
    std::uint64_t ps = vary_prior ? stream_key(seed, "fan-run", static_cast<std::uint64_t>(j))
                                  : seed;
    RolloutRecord rec = rollout_env(policy, cfg, env, horizon, seed, ps);
    FanRun run;
    run.trajectory = Tensor::zeros({horizon + 1, 2});
    for (int t = 0; t <= horizon; ++t) {
      run.trajectory.at(t, 0) = rec.positions[static_cast<std::size_t>(t)].at(robot, 0);
      run.trajectory.at(t, 1) = rec.positions[static_cast<std::size_t>(t)].at(robot, 1);
    }
    run.final_cost = rec.cost.back();
    run.final_normalized = rec.final_normalized();
    out.push_back(std::move(run));
  }
  return out;
}

// ---- CSV output ----

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "cannot open " + path + " for writing");
  f << std::setprecision(17);
  return f;
}

inline void write_rollout_csv(const std::string& path, const std::vector<RolloutRecord>& records) {
  std::ofstream f = open_csv(path);
  f << "timestep,seed,policy,cost,normalized_cost\n";
  for (const RolloutRecord& rec : records)
    for (std::size_t t = 0; t < rec.cost.size(); ++t)
      f << t << "," << rec.seed << "," << rec.policy << "," << rec.cost[t] << ","
        << rec.normalized[t] << "\n";
}

inline void write_sigma_csv(const std::string& path, const std::vector<SigmaSweepRow>& rows) {
  std::ofstream f = open_csv(path);
  f << "policy,sigma_lo,sigma_hi,min,q1,median,q3,max,outliers\n";
  for (const SigmaSweepRow& r : rows) {
    f << r.policy << "," << r.range.lo << "," << r.range.hi << "," << r.stats.min << ","
      << r.stats.q1 << "," << r.stats.median << "," << r.stats.q3 << "," << r.stats.max << ",";
    for (std::size_t i = 0; i < r.stats.outliers.size(); ++i)
      f << (i ? ";" : "") << r.stats.outliers[i];
    f << "\n";
  }
}

inline void write_scenario_csv(const std::string& path, const std::vector<ScenarioRow>& rows) {
  std::ofstream f = open_csv(path);
  f << "scenario,policy,seeds,mean_final_normalized,std_error\n";
  for (const ScenarioRow& r : rows)
    f << scenario_name(r.scenario) << "," << r.policy << "," << r.finals.size() << "," << r.mean
      << "," << r.std_error << "\n";
}

inline void write_grid_csv(const std::string& path, const std::vector<GridCell>& cells) {
  std::ofstream f = open_csv(path);
  f << "num_robots,num_features,mean_policy,mean_baseline,percent_diff\n";
  for (const GridCell& c : cells)
    f << c.num_robots << "," << c.num_features << "," << c.mean_policy << "," << c.mean_baseline
      << "," << c.percent_diff << "\n";
}

inline void write_fan_csv(const std::string& path, const std::vector<FanRun>& runs) {
  std::ofstream f = open_csv(path);
  f << "run,timestep,x,y,final_normalized\n";
  for (std::size_t j = 0; j < runs.size(); ++j)
    for (int t = 0; t < runs[j].trajectory.rows(); ++t)
      f << j << "," << t << "," << runs[j].trajectory.at(t, 0) << ","
        << runs[j].trajectory.at(t, 1) << "," << runs[j].final_normalized << "\n";
}

// confidence band across records at each timestep: mean and 95% interval
struct BandRow {
  int timestep = 0;
  double mean = 0;
  double lo = 0;
  double hi = 0;
};

inline std::vector<BandRow> confidence_band(const std::vector<RolloutRecord>& records) {
  check(!records.empty(), "confidence_band: no records");
  std::size_t len = records.front().normalized.size();
  for (const RolloutRecord& r : records)
    check(r.normalized.size() == len, "confidence_band: records must share a horizon");
  std::vector<BandRow> band;
  band.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const RolloutRecord& r : records) v.push_back(r.normalized[t]);
    double m = mean_of(v);
    double se = std_error_of(v);
    band.push_back({static_cast<int>(t), m, m - 1.96 * se, m + 1.96 * se});
  }
  return band;
}

inline void write_band_csv(const std::string& path, const std::vector<BandRow>& band) {
  std::ofstream f = open_csv(path);
  f << "timestep,mean,ci_lo,ci_hi\n";
  for (const BandRow& b : band) f << b.timestep << "," << b.mean << "," << b.lo << "," << b.hi << "\n";
}

// named policy construction shared by the command-line driver
inline std::unique_ptr<Policy> make_named_policy(const std::string& name, const MadpModel* model,
                                                 const SamplerConfig& sampler) {
  if (name == "zero") return std::make_unique<ZeroPolicy>();
  if (name == "random") return std::make_unique<RandomPolicy>();
  if (name == "clairvoyant") return std::make_unique<ClairvoyantPolicy>();
  if (name == "dcvt") return std::make_unique<DcvtPolicy>();
  if (name == "madp") {
    check(model != nullptr, "policy 'madp' needs a checkpoint");
    return std::make_unique<MadpPolicy>(*model, sampler);
  }
  throw std::invalid_argument("unknown policy: " + name);
}

}  // namespace madp
