#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "madp/experts.hpp"
#include "madp/policy.hpp"
#include "madp/rng.hpp"
#include "madp/world.hpp"

namespace madp {

// Imitation dataset: rows sampled from clairvoyant rollouts, with enough
// provenance (seed, rollout id, step) to regenerate any row exactly.
struct Dataset {
  WorldConfig world;
  std::uint64_t seed = 0;
  int rollout_steps = 0;
  std::vector<Example> examples;
  std::vector<std::uint64_t> rollout_id;  // per example
  std::vector<int> rollout_t;             // per example
  std::vector<int> train_idx, val_idx, test_idx;

  int size() const { return static_cast<int>(examples.size()); }
};

inline constexpr int kDatasetRolloutSteps = 60;

namespace detail {

struct RolloutRow {
  Example ex;
  std::uint64_t rollout;
  int t;
};

// one expert rollout, recording (obs, positions, normalized action) per step
inline void expert_rollout_rows(const WorldConfig& cfg, std::uint64_t seed, std::uint64_t rollout,
                                int steps, std::vector<RolloutRow>& out) {
  Rng field_rng = stream(seed, "dataset-field", rollout);
  ImportanceField field = generate_field(cfg, field_rng);
  Rng pos_rng = stream(seed, "dataset-init", rollout);
  Tensor pos({cfg.num_robots, 2});
  for (double& v : pos.data) v = pos_rng.uniform(0.0, cfg.side);
  SwarmState state = init_swarm(cfg, pos);
  sense(state, field, cfg);

  for (int t = 0; t < steps; ++t) {
    CommGraph graph = comm_graph(state.positions, cfg.comm_radius);
    Tensor action = clairvoyant_action(state.positions, field, cfg);
    RolloutRow row;
    row.rollout = rollout;
    row.t = t;
    row.ex.x = state.positions;
    row.ex.u0 = Tensor({2, cfg.num_robots});
    for (int i = 0; i < cfg.num_robots; ++i) {
      row.ex.u0.at(0, i) = action.at(i, 0) / cfg.u_max;
      row.ex.u0.at(1, i) = action.at(i, 1) / cfg.u_max;
    }
    for (int i = 0; i < cfg.num_robots; ++i)
      row.ex.obs.push_back(build_observation(state, i, graph, cfg).channels);
    out.push_back(std::move(row));
    step(state, action, field, cfg);
  }
}

}  // namespace detail

// Rolls the clairvoyant expert on random worlds and draws rows uniformly
// without replacement from a pool at least twice the requested size, then
// splits 70/20/10.
inline Dataset generate_dataset(const WorldConfig& cfg, int num_examples, std::uint64_t seed) {
  cfg.validate();
  check(num_examples >= 1, "dataset: need at least one example");
  Dataset ds;
  ds.world = cfg;
  ds.seed = seed;
  ds.rollout_steps = kDatasetRolloutSteps;

  int per_rollout = kDatasetRolloutSteps;
  int rollouts = (2 * num_examples + per_rollout - 1) / per_rollout;
  std::vector<detail::RolloutRow> pool;
  pool.reserve(static_cast<std::size_t>(rollouts) * per_rollout);
  for (int r = 0; r < rollouts; ++r)
    detail::expert_rollout_rows(cfg, seed, static_cast<std::uint64_t>(r), per_rollout, pool);

  std::vector<int> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng pick = stream(seed, "dataset-pick");
  pick.shuffle(order);
  order.resize(static_cast<std::size_t>(num_examples));

  for (int idx : order) {
    detail::RolloutRow& row = pool[static_cast<std::size_t>(idx)];
    ds.examples.push_back(std::move(row.ex));
    ds.rollout_id.push_back(row.rollout);
    ds.rollout_t.push_back(row.t);
  }

  int n_train = num_examples * 7 / 10;
  int n_val = num_examples * 2 / 10;
  for (int i = 0; i < num_examples; ++i) {
    if (i < n_train)
      ds.train_idx.push_back(i);
    else if (i < n_train + n_val)
      ds.val_idx.push_back(i);
    else
      ds.test_idx.push_back(i);
  }
  return ds;
}

// ---- dataset files: JSON manifest + one float64 blob per field ----

namespace detail {

inline void write_blob(const std::string& path, const std::vector<const Tensor*>& tensors) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "dataset: cannot open " + path + " for writing");
  for (const Tensor* t : tensors)
    f.write(reinterpret_cast<const char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  check(f.good(), "dataset: short write to " + path);
}

inline void read_blob(const std::string& path, const std::vector<Tensor*>& tensors) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "dataset: cannot open " + path);
  for (Tensor* t : tensors) {
    f.read(reinterpret_cast<char*>(t->data.data()),
           static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    check(f.gcount() == static_cast<std::streamsize>(t->data.size() * sizeof(double)),
          "dataset: blob truncated: " + path);
  }
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& stem) {
  int n = ds.world.num_robots;
  nlohmann::json manifest;
  manifest["world"] = ds.world;
  manifest["seed"] = ds.seed;
  manifest["examples"] = ds.size();
  manifest["num_robots"] = n;
  manifest["rollout_steps"] = ds.rollout_steps;
  manifest["rollout_id"] = ds.rollout_id;
  manifest["rollout_t"] = ds.rollout_t;
  manifest["splits"] = {{"train", ds.train_idx}, {"val", ds.val_idx}, {"test", ds.test_idx}};
  manifest["shapes"] = {{"u0", Shape{2, n}},
                        {"x", Shape{n, 2}},
                        {"obs", Shape{n, 4, kObsGrid, kObsGrid}}};
  manifest["blobs"] = {{"u0", stem + ".u0.bin"}, {"x", stem + ".x.bin"}, {"obs", stem + ".obs.bin"}};

  std::vector<const Tensor*> u0s, xs, obss;
  for (const Example& ex : ds.examples) {
    u0s.push_back(&ex.u0);
    xs.push_back(&ex.x);
    for (const Tensor& o : ex.obs) obss.push_back(&o);
  }
  detail::write_blob(stem + ".u0.bin", u0s);
  detail::write_blob(stem + ".x.bin", xs);
  detail::write_blob(stem + ".obs.bin", obss);

  std::ofstream mf(stem + ".json");
  check(mf.good(), "dataset: cannot open " + stem + ".json for writing");
  mf << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& stem) {
  std::ifstream mf(stem + ".json");
  check(mf.good(), "dataset: cannot open " + stem + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);

  Dataset ds;
  ds.world = manifest.at("world").get<WorldConfig>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.rollout_steps = manifest.at("rollout_steps").get<int>();
  ds.rollout_id = manifest.at("rollout_id").get<std::vector<std::uint64_t>>();
  ds.rollout_t = manifest.at("rollout_t").get<std::vector<int>>();
  ds.train_idx = manifest.at("splits").at("train").get<std::vector<int>>();
  ds.val_idx = manifest.at("splits").at("val").get<std::vector<int>>();
  ds.test_idx = manifest.at("splits").at("test").get<std::vector<int>>();

  int m = manifest.at("examples").get<int>();
  int n = manifest.at("num_robots").get<int>();
  check(n == ds.world.num_robots, "dataset: robot count disagrees with world config");
  ds.examples.resize(static_cast<std::size_t>(m));
  std::vector<Tensor*> u0s, xs, obss;
  for (Example& ex : ds.examples) {
    ex.u0 = Tensor::zeros({2, n});
    ex.x = Tensor::zeros({n, 2});
    ex.obs.assign(static_cast<std::size_t>(n), Tensor::zeros({4, kObsGrid, kObsGrid}));
    u0s.push_back(&ex.u0);
    xs.push_back(&ex.x);
    for (Tensor& o : ex.obs) obss.push_back(&o);
  }
  detail::read_blob(manifest.at("blobs").at("u0").get<std::string>(), u0s);
  detail::read_blob(manifest.at("blobs").at("x").get<std::string>(), xs);
  detail::read_blob(manifest.at("blobs").at("obs").get<std::string>(), obss);
  return ds;
}

// ---- training ----

struct TrainConfig {
  double lr = 8.5e-5;
  double weight_decay = 2.1e-12;
  double momentum = 0.9;
  int batch_size = 196;
  int max_epochs = 1000;
  int patience = 500;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    check(lr >= 0 && weight_decay >= 0, "train: lr and weight decay must be non-negative");
    check(momentum >= 0 && momentum < 1, "train: momentum must lie in [0,1)");
    check(batch_size >= 1 && max_epochs >= 1, "train: batch size and epochs must be positive");
    check(patience >= 1 && patience <= max_epochs, "train: patience must lie in [1, max_epochs]");
    check(min_delta >= 0, "train: min delta must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"patience", c.patience},
                     {"min_delta", c.min_delta},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.momentum = j.value("momentum", d.momentum);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.min_delta = j.value("min_delta", d.min_delta);
  c.seed = j.value("seed", d.seed);
}

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_run = 0;
};

inline void save_history(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream f(path);
  check(f.good(), "history: cannot open " + path + " for writing");
  f << "epoch,train_loss,val_loss\n";
  for (const HistoryRow& r : rows)
    f << r.epoch << "," << r.train_loss << "," << r.val_loss << "\n";
}

// Stochastic gradient descent with momentum and decoupled weight decay on the
// noise-prediction loss; early stopping on a frozen-noise validation metric.
// The model is left holding the best-validation parameters.
inline TrainResult train_model(MadpModel& m, const Dataset& ds, const TrainConfig& tc,
                               int start_epoch = 0) {
  tc.validate();
  check(!ds.train_idx.empty() && !ds.val_idx.empty(),
        "train: dataset needs non-empty train and validation splits");
  int n_robots = ds.world.num_robots;

  // frozen per-example validation draws make the metric comparable across epochs
  std::vector<DiffusionDraw> val_draws;
  val_draws.reserve(ds.val_idx.size());
  for (std::size_t i = 0; i < ds.val_idx.size(); ++i) {
    Rng r = stream(tc.seed, "val-noise", static_cast<std::uint64_t>(i));
    val_draws.push_back(draw_diffusion_noise(n_robots, m.sched, r));
  }

  auto val_loss = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < ds.val_idx.size(); ++i) {
      Tape tape;
      ForwardPass fp(tape, m.params);
      const Example& ex = ds.examples[static_cast<std::size_t>(ds.val_idx[i])];
      total += ddpm_example_loss(fp, m, ex, ds.world, val_draws[i]).val().data[0];
    }
    return total / static_cast<double>(ds.val_idx.size());
  };

  std::vector<Tensor> velocity;
  velocity.reserve(static_cast<std::size_t>(m.params.count()));
  for (const Tensor& t : m.params.values) velocity.push_back(Tensor::zeros(t.shape));

  TrainResult res;
  ParamStore best = m.params;
  Rng order_rng = stream(tc.seed, "epoch-order");
  Rng noise_rng = stream(tc.seed, "train-noise");
  std::vector<int> order = ds.train_idx;
  // the best checkpoint tracks the strict minimum; patience only counts
  // epochs that fail to improve by at least min_delta
  double patience_ref = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  for (int epoch = start_epoch; epoch < start_epoch + tc.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(tc.batch_size)) {
      std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(tc.batch_size));
      std::vector<const Example*> batch;
      std::vector<DiffusionDraw> draws;
      for (std::size_t i = pos; i < end; ++i) {
        batch.push_back(&ds.examples[static_cast<std::size_t>(order[i])]);
        draws.push_back(draw_diffusion_noise(n_robots, m.sched, noise_rng));
      }
      Tape tape;
      ForwardPass fp(tape, m.params);
      Var loss = ddpm_loss(fp, m, batch, ds.world, draws);
      double lv = loss.val().data[0];
      if (!std::isfinite(lv))
        throw std::runtime_error("train: loss diverged to " + std::to_string(lv) + " at epoch " +
                                 std::to_string(epoch));
      epoch_loss += lv * static_cast<double>(batch.size());
      tape.backward(loss);
      for (int p = 0; p < m.params.count(); ++p) {
        const Tensor& g = fp[p].grad();
        Tensor& v = velocity[static_cast<std::size_t>(p)];
        Tensor& w = m.params.value(p);
        for (std::size_t j = 0; j < w.data.size(); ++j) {
          v.data[j] = tc.momentum * v.data[j] + g.data[j];
          w.data[j] -= tc.lr * (v.data[j] + tc.weight_decay * w.data[j]);
        }
      }
    }
    epoch_loss /= static_cast<double>(order.size());

    double vl = val_loss();
    res.history.push_back({epoch, epoch_loss, vl});
    res.epochs_run += 1;
    if (vl < res.best_val) {
      res.best_val = vl;
      res.best_epoch = epoch;
      best = m.params;
    }
    if (vl < patience_ref - tc.min_delta) {
      patience_ref = vl;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    if (bad_epochs >= tc.patience) break;
  }

  m.params = best;
  return res;
}

}  // namespace madp
