#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "madp/diffusion.hpp"
#include "madp/params.hpp"
#include "madp/perception.hpp"
#include "madp/rng.hpp"
#include "madp/stformer.hpp"
#include "madp/tensor.hpp"
#include "madp/world.hpp"

namespace madp {

struct ModelConfig {
  STConfig st;
  int token_dim = kTokenDim + 2;  // perception embedding plus scaled position
  int action_dim = 2;
  int diffusion_steps = 1000;
  double alpha_hi = 0.9999;
  double alpha_lo = 0.98;
  int sample_steps = 50;
  double eta = 0.0;

  void validate() const {
    st.validate();
    check(token_dim == kTokenDim + 2, "model: token dim must be the embedding plus position");
    check(action_dim == 2, "model: actions are planar velocities");
    check(diffusion_steps >= 1, "model: diffusion steps must be positive");
    check(sample_steps >= 1 && sample_steps <= diffusion_steps,
          "model: sample steps must lie in [1, K]");
    check(eta >= 0.0 && eta <= 1.0, "model: eta must lie in [0,1]");
    check(0.0 < alpha_lo && alpha_lo < alpha_hi && alpha_hi < 1.0,
          "model: alpha range must satisfy 0 < lo < hi < 1");
  }

  static ModelConfig desk() {
    ModelConfig c;
    c.st = STConfig::desk();
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.st.layers},
                     {"heads", c.st.heads},
                     {"head_dim", c.st.head_dim},
                     {"rope_period", c.st.rope_period},
                     {"attn_radius", c.st.attn_radius},
                     {"pre_norm", c.st.pre_norm},
                     {"token_dim", c.token_dim},
                     {"action_dim", c.action_dim},
                     {"diffusion_steps", c.diffusion_steps},
                     {"alpha_hi", c.alpha_hi},
                     {"alpha_lo", c.alpha_lo},
                     {"sample_steps", c.sample_steps},
                     {"eta", c.eta}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.st.layers = j.value("layers", d.st.layers);
  c.st.heads = j.value("heads", d.st.heads);
  c.st.head_dim = j.value("head_dim", d.st.head_dim);
  c.st.rope_period = j.value("rope_period", d.st.rope_period);
  c.st.attn_radius = j.value("attn_radius", d.st.attn_radius);
  c.st.pre_norm = j.value("pre_norm", d.st.pre_norm);
  c.token_dim = j.value("token_dim", d.token_dim);
  c.action_dim = j.value("action_dim", d.action_dim);
  c.diffusion_steps = j.value("diffusion_steps", d.diffusion_steps);
  c.alpha_hi = j.value("alpha_hi", d.alpha_hi);
  c.alpha_lo = j.value("alpha_lo", d.alpha_lo);
  c.sample_steps = j.value("sample_steps", d.sample_steps);
  c.eta = j.value("eta", d.eta);
}

// Perception encoder, token encoder, and action decoder sharing one flat
// parameter store, plus the noise schedule they were trained against.
struct MadpModel {
  ModelConfig cfg;
  ParamStore params;
  PerceptionIds perc;
  EncoderIds enc;
  DecoderIds dec;
  NoiseSchedule sched;
};

inline MadpModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MadpModel m;
  m.cfg = cfg;
  Rng rng = stream(seed, "model-init");
  m.perc = perception_init(m.params, rng);
  m.enc = encoder_init(m.params, cfg.st, cfg.token_dim, rng);
  m.dec = decoder_init(m.params, cfg.st, cfg.token_dim, cfg.action_dim, rng);
  m.sched = NoiseSchedule::linear(cfg.diffusion_steps, cfg.alpha_hi, cfg.alpha_lo);
  return m;
}

// One imitation example: expert actions (normalized by u_max), robot
// positions, and the per-robot observation stacks they were computed from.
struct Example {
  Tensor u0;                // (2, N)
  Tensor x;                 // (N, 2) meters
  std::vector<Tensor> obs;  // N stacks of (4, 32, 32)
};

inline std::vector<LocalObservation> swarm_observations(const SwarmState& state,
                                                        const CommGraph& graph,
                                                        const WorldConfig& cfg) {
  std::vector<LocalObservation> out;
  out.reserve(static_cast<std::size_t>(state.num_robots()));
  for (int i = 0; i < state.num_robots(); ++i) out.push_back(build_observation(state, i, graph, cfg));
  return out;
}

// Z0 column i = [cnn(o_i); x_i / side]
inline Var assemble_tokens(ForwardPass& fp, const MadpModel& m, const std::vector<Tensor>& obs,
                           const Tensor& positions, double side) {
  int n = positions.rows();
  check(static_cast<int>(obs.size()) == n, "assemble_tokens: one observation per robot");
  check(side > 0, "assemble_tokens: side must be positive");
  std::vector<Var> cols;
  cols.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var z = perception_encode(fp, m.perc, obs[static_cast<std::size_t>(i)]);
    Tensor p({2, 1}, {positions.at(i, 0) / side, positions.at(i, 1) / side});
    cols.push_back(concat({z, fp.tape->leaf(p)}, 0));
  }
  return cols.size() == 1 ? cols[0] : concat(cols, 1);
}

inline Var encode_conditioning(ForwardPass& fp, const MadpModel& m, Var tokens,
                               const Tensor& positions, const AttentionMask& mask) {
  return encoder_forward(fp, m.enc, m.cfg.st, tokens, positions, mask);
}

struct DiffusionDraw {
  int k = 1;
  Tensor eps;  // (2, N)
};

inline DiffusionDraw draw_diffusion_noise(int n_robots, const NoiseSchedule& sched, Rng& rng) {
  DiffusionDraw d;
  d.k = static_cast<int>(rng.uniform_int(1, sched.K));
  d.eps = Tensor::randn({2, n_robots}, rng);
  return d;
}

// Noise-prediction objective for one example under a fixed (k, eps) draw.
inline Var ddpm_example_loss(ForwardPass& fp, const MadpModel& m, const Example& ex,
                             const WorldConfig& wcfg, const DiffusionDraw& draw) {
  CommGraph graph = comm_graph(ex.x, wcfg.comm_radius);
  AttentionMask mask = build_mask(ex.x, graph, m.cfg.st.attn_radius);
  Var tokens = assemble_tokens(fp, m, ex.obs, ex.x, wcfg.side);
  Var cond = encode_conditioning(fp, m, tokens, ex.x, mask);
  Tensor u_k = forward_sample(ex.u0, draw.k, draw.eps, m.sched);
  Var eps_hat = decoder_forward(fp, m.dec, m.cfg.st, fp.tape->leaf(u_k), draw.k, cond, ex.x, mask);
  return mse_loss(eps_hat, fp.tape->leaf(draw.eps));
}

inline Var ddpm_loss(ForwardPass& fp, const MadpModel& m, const std::vector<const Example*>& batch,
                     const WorldConfig& wcfg, const std::vector<DiffusionDraw>& draws) {
  check(!batch.empty() && batch.size() == draws.size(),
        "ddpm_loss: need one noise draw per example");
  Var total = ddpm_example_loss(fp, m, *batch[0], wcfg, draws[0]);
  for (std::size_t i = 1; i < batch.size(); ++i)
    total = add(total, ddpm_example_loss(fp, m, *batch[i], wcfg, draws[i]));
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

// ---- sampling ----

struct SamplerConfig {
  int steps = 50;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool decentralized = false;
};

namespace detail {

// Samples normalized actions for an ordered robot subset. Noise streams are
// keyed by environment time and global robot id, so every caller that can see
// a robot reproduces that robot's columns bit-for-bit.
inline Tensor sample_subset_actions(const MadpModel& m, const SwarmState& state,
                                    const CommGraph& full_graph, const WorldConfig& wcfg,
                                    const SamplerConfig& sc, const std::vector<int>& members) {
  int n = static_cast<int>(members.size());
  Tensor pos({n, 2});
  for (int j = 0; j < n; ++j) {
    pos.at(j, 0) = state.positions.at(members[static_cast<std::size_t>(j)], 0);
    pos.at(j, 1) = state.positions.at(members[static_cast<std::size_t>(j)], 1);
  }
  CommGraph sub_graph = comm_graph(pos, wcfg.comm_radius);
  AttentionMask mask = build_mask(pos, sub_graph, m.cfg.st.attn_radius);

  // observations always come from each robot's own sensing and full one-hop
  // neighborhood; only the attention scope shrinks with the subset
  std::vector<Tensor> obs;
  obs.reserve(static_cast<std::size_t>(n));
  for (int j : members)
    obs.push_back(build_observation(state, j, full_graph, wcfg).channels);

  // conditioning runs once per sampler invocation
  Tape enc_tape;
  ForwardPass enc_fp(enc_tape, m.params);
  Var tokens = assemble_tokens(enc_fp, m, obs, pos, wcfg.side);
  Tensor cond = encode_conditioning(enc_fp, m, tokens, pos, mask).val();

  auto score = [&](const Tensor& u, int k) {
    Tape tape;
    ForwardPass fp(tape, m.params);
    return decoder_forward(fp, m.dec, m.cfg.st, tape.leaf(u), k, tape.leaf(cond), pos, mask)
        .val();
  };

  Tensor prior({2, n});
  for (int j = 0; j < n; ++j) {
    Rng r = stream(sc.seed, "policy-prior", static_cast<std::uint64_t>(state.t),
                   static_cast<std::uint64_t>(members[static_cast<std::size_t>(j)]));
    prior.at(0, j) = r.normal();
    prior.at(1, j) = r.normal();
  }
  auto noise = [&](int k_next) {
    Tensor z({2, n});
    for (int j = 0; j < n; ++j) {
      Rng r = stream(sc.seed, "policy-noise", static_cast<std::uint64_t>(state.t),
                     static_cast<std::uint64_t>(members[static_cast<std::size_t>(j)]),
                     static_cast<std::uint64_t>(k_next));
      z.at(0, j) = r.normal();
      z.at(1, j) = r.normal();
    }
    return z;
  };
  return ddim_sample(score, prior, m.sched, sc.steps, sc.eta, noise);
}

}  // namespace detail

// One control step: denoise actions conditioned on current observations,
// de-normalize, and clamp to the velocity budget. In decentralized mode each
// robot samples over its own attention neighborhood and keeps its column.
inline Tensor policy_step(const MadpModel& m, const SwarmState& state, const WorldConfig& wcfg,
                          const SamplerConfig& sc) {
  int n = state.num_robots();
  CommGraph graph = comm_graph(state.positions, wcfg.comm_radius);
  Tensor actions({n, 2});

  if (!sc.decentralized) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    Tensor u = detail::sample_subset_actions(m, state, graph, wcfg, sc, all);
    for (int i = 0; i < n; ++i) {
      actions.at(i, 0) = u.at(0, i) * wcfg.u_max;
      actions.at(i, 1) = u.at(1, i) * wcfg.u_max;
    }
  } else {
    AttentionMask mask = build_mask(state.positions, graph, m.cfg.st.attn_radius);
    for (int i = 0; i < n; ++i) {
      std::vector<int> members;
      for (int j = 0; j < n; ++j)
        if (mask.at(i, j)) members.push_back(j);
      Tensor u = detail::sample_subset_actions(m, state, graph, wcfg, sc, members);
      int self = 0;
      while (members[static_cast<std::size_t>(self)] != i) ++self;
      actions.at(i, 0) = u.at(0, self) * wcfg.u_max;
      actions.at(i, 1) = u.at(1, self) * wcfg.u_max;
    }
  }
  clamp_norm_rows(actions, wcfg.u_max);
  return actions;
}

// ---- checkpoints: JSON manifest beside a little-endian float64 blob ----

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

inline void save_checkpoint(const MadpModel& m, const std::string& stem,
                            const nlohmann::json& trainer = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["model"] = m.cfg;
  manifest["trainer"] = trainer;
  nlohmann::json params = nlohmann::json::array();
  for (int i = 0; i < m.params.count(); ++i) {
    params.push_back({{"name", m.params.names[static_cast<std::size_t>(i)]},
                      {"shape", m.params.value(i).shape}});
  }
  manifest["params"] = params;

  std::ofstream blob(stem + ".bin", std::ios::binary);
  check(blob.good(), "checkpoint: cannot open " + stem + ".bin for writing");
  for (const Tensor& t : m.params.values)
    blob.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  check(blob.good(), "checkpoint: short write to " + stem + ".bin");
  blob.close();

  std::ofstream mf(stem + ".json");
  check(mf.good(), "checkpoint: cannot open " + stem + ".json for writing");
  mf << manifest.dump(2) << "\n";
}

inline MadpModel load_checkpoint(const std::string& stem,
                                 nlohmann::json* trainer_out = nullptr) {
  std::ifstream mf(stem + ".json");
  check(mf.good(), "checkpoint: cannot open " + stem + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  ModelConfig cfg = manifest.at("model").get<ModelConfig>();
  MadpModel m = init_model(cfg, 0);

  const nlohmann::json& params = manifest.at("params");
  check(static_cast<int>(params.size()) == m.params.count(),
        "checkpoint: parameter count does not match the model config");
  std::ifstream blob(stem + ".bin", std::ios::binary);
  check(blob.good(), "checkpoint: cannot open " + stem + ".bin");
  for (int i = 0; i < m.params.count(); ++i) {
    const nlohmann::json& entry = params[static_cast<std::size_t>(i)];
    check(entry.at("name").get<std::string>() == m.params.names[static_cast<std::size_t>(i)],
          "checkpoint: parameter name mismatch at index " + std::to_string(i));
    check(entry.at("shape").get<Shape>() == m.params.value(i).shape,
          "checkpoint: parameter shape mismatch for " +
              m.params.names[static_cast<std::size_t>(i)]);
    Tensor& t = m.params.value(i);
    blob.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    check(blob.gcount() == static_cast<std::streamsize>(t.data.size() * sizeof(double)),
          "checkpoint: blob truncated");
  }
  if (trainer_out != nullptr) *trainer_out = manifest.value("trainer", nlohmann::json::object());
  return m;
}

}  // namespace madp
