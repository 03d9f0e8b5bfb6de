#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "madp/params.hpp"
#include "madp/rng.hpp"
#include "madp/tensor.hpp"
#include "madp/world.hpp"

namespace madp {

struct STConfig {
  int layers = 8;
  int heads = 8;
  int head_dim = 32;
  double rope_period = 1024.0;  // meters
  double attn_radius = 256.0;   // meters
  bool pre_norm = true;

  void validate() const {
    check(layers > 0 && heads > 0, "stformer: layers and heads must be positive");
    check(head_dim >= 4 && head_dim % 4 == 0, "stformer: head dim must be divisible by 4");
    check(rope_period > 0 && attn_radius >= 0, "stformer: rope period and radius must be positive");
  }

  static STConfig desk() {
    STConfig c;
    c.layers = 2;
    c.heads = 2;
    c.head_dim = 16;
    return c;
  }
};

// Attention visibility: within the distance window AND in the same
// communication component. The diagonal is always allowed.
struct AttentionMask {
  int n = 0;
  std::vector<std::uint8_t> allowed;  // n*n

  bool at(int i, int j) const { return allowed[static_cast<std::size_t>(i) * n + j] != 0; }
};

inline AttentionMask build_mask(const Tensor& positions, const CommGraph& graph, double r_att) {
  check(positions.ndim() == 2 && positions.cols() == 2, "build_mask: positions must be (N,2)");
  int n = positions.rows();
  check(graph.n == n && static_cast<int>(graph.component.size()) == n,
        "build_mask: graph does not match positions");
  AttentionMask m;
  m.n = n;
  m.allowed.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        m.allowed[static_cast<std::size_t>(i) * n + j] = 1;
        continue;
      }
      double dx = positions.at(i, 0) - positions.at(j, 0);
      double dy = positions.at(i, 1) - positions.at(j, 1);
      bool in_window = dx * dx + dy * dy <= r_att * r_att;
      bool same_comp = graph.component[static_cast<std::size_t>(i)] ==
                       graph.component[static_cast<std::size_t>(j)];
      m.allowed[static_cast<std::size_t>(i) * n + j] = (in_window && same_comp) ? 1 : 0;
    }
  }
  return m;
}

// Additive pre-softmax bias: 0 where attention is allowed, -inf where masked.
inline Tensor attention_bias(const AttentionMask& m) {
  Tensor b = Tensor::zeros({m.n, m.n});
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.n; ++j)
      if (!m.at(i, j)) b.at(i, j) = -std::numeric_limits<double>::infinity();
  return b;
}

// Rotary relative positional encoding. Head rows pair into D/2 complex
// planes; plane 2c rotates by w_{c+1}*x and plane 2c+1 by w_{c+1}*y with the
// geometric frequency ladder w_i = 2*pi*tau^(-4i/D).
struct RopeBasis {
  int dim = 0;                // head dimension D
  std::vector<double> freqs;  // D/4 values, strictly decreasing
  Tensor cosp, sinp;          // (D/2, N) per-plane, per-token phase
};

inline RopeBasis rope_phases(const Tensor& positions, int D, double tau) {
  check(positions.ndim() == 2 && positions.cols() == 2, "rope_phases: positions must be (N,2)");
  check(D >= 4 && D % 4 == 0, "rope_phases: dim must be divisible by 4");
  check(tau > 0, "rope_phases: tau must be positive");
  int n = positions.rows();
  RopeBasis rb;
  rb.dim = D;
  for (int i = 1; i <= D / 4; ++i)
    rb.freqs.push_back(2.0 * std::numbers::pi * std::pow(tau, -4.0 * i / D));
  rb.cosp = Tensor::zeros({D / 2, n});
  rb.sinp = Tensor::zeros({D / 2, n});
  for (int c = 0; c < D / 2; ++c) {
    double w = rb.freqs[static_cast<std::size_t>(c / 2)];
    for (int t = 0; t < n; ++t) {
      double p = w * (c % 2 == 0 ? positions.at(t, 0) : positions.at(t, 1));
      rb.cosp.at(c, t) = std::cos(p);
      rb.sinp.at(c, t) = std::sin(p);
    }
  }
  return rb;
}

// One masked multi-head attention block with skip connection and leaky-relu,
// optionally cross-attending (queries from q_in, keys/values from kv_in).
struct AttnBlockIds {
  struct Head {
    int wq = -1, wk = -1, wv = -1;
  };
  std::vector<Head> heads;
  int w = -1, b = -1;          // output mix across concatenated heads
  int ln_g = -1, ln_b = -1;    // query-side norm (pre or post depending on config)
  int kv_ln_g = -1, kv_ln_b = -1;  // key/value-side pre-norm, cross blocks only
  bool cross = false;
};

inline AttnBlockIds attn_block_init(ParamStore& ps, const STConfig& cfg, const std::string& prefix,
                                    int d_q, int d_kv, bool cross, Rng& rng) {
  AttnBlockIds ids;
  ids.cross = cross;
  for (int h = 0; h < cfg.heads; ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    AttnBlockIds::Head head;
    head.wq = ps.add(hp + ".wq",
                     Tensor::randn({cfg.head_dim, d_q}, rng, std::sqrt(2.0 / (cfg.head_dim + d_q))));
    head.wk = ps.add(hp + ".wk", Tensor::randn({cfg.head_dim, d_kv}, rng,
                                               std::sqrt(2.0 / (cfg.head_dim + d_kv))));
    head.wv = ps.add(hp + ".wv", Tensor::randn({cfg.head_dim, d_kv}, rng,
                                               std::sqrt(2.0 / (cfg.head_dim + d_kv))));
    ids.heads.push_back(head);
  }
  int cat_dim = cfg.heads * cfg.head_dim;
  ids.w = ps.add(prefix + ".w", Tensor::randn({d_q, cat_dim}, rng, std::sqrt(2.0 / (d_q + cat_dim))));
  ids.b = ps.add(prefix + ".b", Tensor::zeros({d_q}));
  ids.ln_g = ps.add(prefix + ".ln.g", Tensor::full({d_q}, 1.0));
  ids.ln_b = ps.add(prefix + ".ln.b", Tensor::zeros({d_q}));
  if (cross) {
    ids.kv_ln_g = ps.add(prefix + ".kvln.g", Tensor::full({d_kv}, 1.0));
    ids.kv_ln_b = ps.add(prefix + ".kvln.b", Tensor::zeros({d_kv}));
  }
  return ids;
}

inline Var attention_block(ForwardPass& fp, const AttnBlockIds& ids, const STConfig& cfg,
                           Var q_in, Var kv_in, const Tensor& bias, const RopeBasis* rope) {
  check(bias.ndim() == 2 && bias.rows() == q_in.shape()[1] && bias.cols() == kv_in.shape()[1],
        "attention_block: bias shape does not match token counts");
  if (rope != nullptr)
    check(rope->dim == cfg.head_dim, "attention_block: rope basis dim must equal head dim");

  auto apply_norm = [&](Var x, int g, int b) {
    return add_col_broadcast(mul_col_broadcast(layer_norm_cols(x), fp[g]), fp[b]);
  };
  Var qn = q_in;
  Var kn = kv_in;
  if (cfg.pre_norm) {
    qn = apply_norm(q_in, ids.ln_g, ids.ln_b);
    kn = ids.cross ? apply_norm(kv_in, ids.kv_ln_g, ids.kv_ln_b) : qn;
  } else if (!ids.cross) {
    kn = qn;
  }

  Var bias_var = fp.tape->leaf(bias);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  std::vector<Var> ys;
  ys.reserve(ids.heads.size());
  for (const AttnBlockIds::Head& head : ids.heads) {
    Var q = matmul(fp[head.wq], qn);
    Var k = matmul(fp[head.wk], kn);
    Var v = matmul(fp[head.wv], kn);
    if (rope != nullptr) {
      q = rope_rotate(q, rope->cosp, rope->sinp);
      k = rope_rotate(k, rope->cosp, rope->sinp);
    }
    Var logits = scale(matmul(transpose(q), k), inv_sqrt_d);
    Var a = softmax_rows(add(logits, bias_var));  // row i: weights over visible tokens j
    ys.push_back(matmul(v, transpose(a)));
  }
  Var cat = ys.size() == 1 ? ys[0] : concat(ys, 0);
  Var out = add(add_col_broadcast(matmul(fp[ids.w], cat), fp[ids.b]), q_in);
  out = leaky_relu(out);
  if (!cfg.pre_norm) out = apply_norm(out, ids.ln_g, ids.ln_b);
  return out;
}

// Self-attention layer over tokens at the given positions; the first layer of
// a stack carries the rotary encoding, later layers use plain dot products.
inline Var attention_layer(ForwardPass& fp, const AttnBlockIds& ids, const STConfig& cfg, Var z,
                           const Tensor& positions, const AttentionMask& mask, bool first_layer) {
  Tensor bias = attention_bias(mask);
  if (first_layer) {
    RopeBasis rb = rope_phases(positions, cfg.head_dim, cfg.rope_period);
    return attention_block(fp, ids, cfg, z, z, bias, &rb);
  }
  return attention_block(fp, ids, cfg, z, z, bias, nullptr);
}

// ---- encoder ----

struct EncoderIds {
  std::vector<AttnBlockIds> blocks;
};

inline EncoderIds encoder_init(ParamStore& ps, const STConfig& cfg, int token_dim, Rng& rng,
                               const std::string& prefix = "enc") {
  cfg.validate();
  EncoderIds ids;
  for (int l = 0; l < cfg.layers; ++l)
    ids.blocks.push_back(
        attn_block_init(ps, cfg, prefix + ".l" + std::to_string(l), token_dim, token_dim,
                        /*cross=*/false, rng));
  return ids;
}

inline Var encoder_forward(ForwardPass& fp, const EncoderIds& ids, const STConfig& cfg, Var z0,
                           const Tensor& positions, const AttentionMask& mask) {
  check(z0.shape()[1] == mask.n, "encoder_forward: token count does not match mask");
  Var z = z0;
  for (std::size_t l = 0; l < ids.blocks.size(); ++l)
    z = attention_layer(fp, ids.blocks[l], cfg, z, positions, mask, l == 0);
  return z;
}

// ---- decoder ----

// Sinusoidal embedding of the diffusion step, added to the projected noisy
// actions so the score network knows how much noise to remove.
inline Tensor step_embedding(int k, int dim) {
  check(dim > 0 && dim % 2 == 0, "step_embedding: dim must be positive and even");
  check(k >= 0, "step_embedding: step must be non-negative");
  Tensor e({dim});
  for (int i = 0; i < dim / 2; ++i) {
    double w = std::pow(10000.0, -2.0 * i / dim);
    e.data[static_cast<std::size_t>(2 * i)] = std::sin(k * w);
    e.data[static_cast<std::size_t>(2 * i + 1)] = std::cos(k * w);
  }
  return e;
}

struct DecoderIds {
  int in_w = -1, in_b = -1;  // action -> token projection
  std::vector<AttnBlockIds> blocks;
  int ln_g = -1, ln_b = -1;  // final norm before the output head
  int out_w = -1, out_b = -1;
};

inline DecoderIds decoder_init(ParamStore& ps, const STConfig& cfg, int token_dim, int action_dim,
                               Rng& rng, const std::string& prefix = "dec") {
  cfg.validate();
  check(token_dim % 2 == 0, "decoder_init: token dim must be even for the step embedding");
  DecoderIds ids;
  ids.in_w = ps.add(prefix + ".in.w", Tensor::randn({token_dim, action_dim}, rng,
                                                    std::sqrt(2.0 / (token_dim + action_dim))));
  ids.in_b = ps.add(prefix + ".in.b", Tensor::zeros({token_dim}));
  for (int l = 0; l < cfg.layers; ++l) {
    bool cross = l % 2 == 1;  // alternate self-attention over actions and cross onto C
    ids.blocks.push_back(attn_block_init(ps, cfg, prefix + ".l" + std::to_string(l), token_dim,
                                         token_dim, cross, rng));
  }
  ids.ln_g = ps.add(prefix + ".fin.g", Tensor::full({token_dim}, 1.0));
  ids.ln_b = ps.add(prefix + ".fin.b", Tensor::zeros({token_dim}));
  // zero-initialized head: an untrained decoder predicts zero noise
  ids.out_w = ps.add(prefix + ".out.w", Tensor::zeros({action_dim, token_dim}));
  ids.out_b = ps.add(prefix + ".out.b", Tensor::zeros({action_dim}));
  return ids;
}

inline Var decoder_forward(ForwardPass& fp, const DecoderIds& ids, const STConfig& cfg, Var u_k,
                           int k, Var cond, const Tensor& positions, const AttentionMask& mask) {
  check(u_k.shape()[1] == mask.n && cond.shape()[1] == mask.n,
        "decoder_forward: token count does not match mask");
  Tensor bias = attention_bias(mask);
  RopeBasis rb = rope_phases(positions, cfg.head_dim, cfg.rope_period);

  Var tok = add_col_broadcast(matmul(fp[ids.in_w], u_k), fp[ids.in_b]);
  int token_dim = tok.shape()[0];
  tok = add_col_broadcast(tok, fp.tape->leaf(step_embedding(k, token_dim)));
  for (std::size_t l = 0; l < ids.blocks.size(); ++l) {
    const AttnBlockIds& blk = ids.blocks[l];
    Var kv = blk.cross ? cond : tok;
    tok = attention_block(fp, blk, cfg, tok, kv, bias, l == 0 ? &rb : nullptr);
  }
  Var fin = tok;
  if (cfg.pre_norm)
    fin = add_col_broadcast(mul_col_broadcast(layer_norm_cols(tok), fp[ids.ln_g]), fp[ids.ln_b]);
  return add_col_broadcast(matmul(fp[ids.out_w], fin), fp[ids.out_b]);
}

}  // namespace madp
