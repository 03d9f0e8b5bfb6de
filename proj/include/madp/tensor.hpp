#pragma once

// Dense float64 tensors plus reverse-mode autodiff on a dynamic tape.
// Deliberately minimal: just the operations the coverage policy needs
// (matmul, row softmax with -inf masking, layer norm, conv2d, a few
// elementwise and shape utilities). Values are row-major.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "madp/rng.hpp"

namespace madp {

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s)
      : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    check(static_cast<std::int64_t>(data.size()) == numel_of(shape),
          "tensor: data size does not match shape");
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = stddev * rng.normal();
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  int rows() const {
    check(ndim() == 2, "tensor: rows() needs a 2-d tensor");
    return shape[0];
  }
  int cols() const {
    check(ndim() == 2, "tensor: cols() needs a 2-d tensor");
    return shape[1];
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  // 3-d (C,H,W) accessor, used by the conv path
  double& at3(int c, int i, int j) {
    return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
  }
  double at3(int c, int i, int j) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
  }

  bool finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// ---- tape ----

class Tape;

// Lightweight handle into a tape node. Copyable, only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  inline const Tensor& val() const;
  inline const Tensor& grad() const;
  inline const Shape& shape() const;
};

class Tape {
 public:
  Var leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  // Ops append one node each; the closure receives its own node id during the
  // reverse sweep and accumulates into the gradients of earlier nodes.
  Var emit(Tensor value, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(value), Tensor(), false, std::move(back)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  // grad buffers materialize lazily; untouched nodes never allocate one
  Tensor& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.touched) {
      n.grad = Tensor::zeros(n.value.shape);
      n.touched = true;
    }
    return n.grad;
  }

  bool touched(int id) const { return nodes_[static_cast<std::size_t>(id)].touched; }

  // Reverse sweep from a scalar loss. Deterministic: nodes run in strict
  // reverse creation order, so identical tapes give bit-identical gradients.
  void backward(Var loss) {
    check(loss.tape == this, "backward: loss var belongs to another tape");
    check(numel_of(value(loss.id).shape) == 1, "backward: loss must be scalar");
    grad(loss.id).data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.touched && n.back) n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool touched;
    std::function<void(Tape&, int)> back;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::val() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }
inline const Shape& Var::shape() const { return tape->value(id).shape; }

namespace detail {
inline Tape* tape_of(Var a, Var b) {
  check(a.valid() && b.valid() && a.tape == b.tape, "op: vars must share one tape");
  return a.tape;
}
}  // namespace detail

// ---- elementwise and linear ops ----

inline Var add(Var a, Var b) {
  Tape* t = detail::tape_of(a, b);
  check(a.shape() == b.shape(), "add: shape mismatch");
  Tensor out = a.val();
  const std::vector<double>& bv = b.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  int ai = a.id, bi = b.id;
  return t->emit(std::move(out), [ai, bi](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < go.data.size(); ++i) {
      ga.data[i] += go.data[i];
      gb.data[i] += go.data[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape* t = detail::tape_of(a, b);
  check(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor out = a.val();
  const std::vector<double>& bv = b.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
  int ai = a.id, bi = b.id;
  return t->emit(std::move(out), [ai, bi](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < go.data.size(); ++i) {
      ga.data[i] += go.data[i];
      gb.data[i] -= go.data[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.val();
  for (double& x : out.data) x *= s;
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, s](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += s * go.data[i];
  });
}

inline Var mul(Var a, Var b) {
  Tape* t = detail::tape_of(a, b);
  check(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out = a.val();
  const std::vector<double>& bv = b.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
  int ai = a.id, bi = b.id;
  return t->emit(std::move(out), [ai, bi](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    const Tensor& av = tp.value(ai);
    const Tensor& bvv = tp.value(bi);
    Tensor& ga = tp.grad(ai);
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < go.data.size(); ++i) {
      ga.data[i] += go.data[i] * bvv.data[i];
      gb.data[i] += go.data[i] * av.data[i];
    }
  });
}

inline Var leaky_relu(Var a, double slope = 0.01) {
  Tensor out = a.val();
  for (double& x : out.data)
    if (x <= 0.0) x *= slope;
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, slope](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    const Tensor& av = tp.value(ai);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < go.data.size(); ++i)
      ga.data[i] += go.data[i] * (av.data[i] > 0.0 ? 1.0 : slope);
  });
}

inline Var matmul(Var a, Var b) {
  Tape* t = detail::tape_of(a, b);
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check(av.ndim() == 2 && bv.ndim() == 2, "matmul: operands must be 2-d");
  check(av.cols() == bv.rows(), "matmul: inner dimensions disagree");
  int m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(Shape{m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double aip = av.at(i, p);
      if (aip == 0.0) continue;
      const double* brow = &bv.data[static_cast<std::size_t>(p) * n];
      double* orow = &out.data[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  int ai = a.id, bi = b.id;
  return t->emit(std::move(out), [ai, bi, m, k, n](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    const Tensor& av2 = tp.value(ai);
    const Tensor& bv2 = tp.value(bi);
    Tensor& ga = tp.grad(ai);
    Tensor& gb = tp.grad(bi);
    // dA = G B^T, dB = A^T G
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = &go.data[static_cast<std::size_t>(i) * n];
        const double* brow = &bv2.data[static_cast<std::size_t>(p) * n];
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga.at(i, p) += acc;
      }
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        double aip = av2.at(i, p);
        if (aip == 0.0) continue;
        const double* grow = &go.data[static_cast<std::size_t>(i) * n];
        double* gbrow = &gb.data[static_cast<std::size_t>(p) * n];
        for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
      }
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.val();
  check(av.ndim() == 2, "transpose: needs a 2-d tensor");
  int m = av.rows(), n = av.cols();
  Tensor out(Shape{n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, m, n](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.at(i, j) += go.at(j, i);
  });
}

// ---- shape ops (2-d) ----

inline Var concat(const std::vector<Var>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  check(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  Tape* t = parts[0].tape;
  int other = -1;
  int total = 0;
  for (const Var& p : parts) {
    check(p.tape == t, "concat: vars must share one tape");
    const Tensor& v = p.val();
    check(v.ndim() == 2, "concat: needs 2-d tensors");
    int keep = axis == 0 ? v.cols() : v.rows();
    if (other < 0) other = keep;
    check(keep == other, "concat: off-axis dimensions disagree");
    total += axis == 0 ? v.rows() : v.cols();
  }
  Tensor out(axis == 0 ? Shape{total, other} : Shape{other, total});
  std::vector<int> ids;
  std::vector<int> extents;
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.val();
    int ext = axis == 0 ? v.rows() : v.cols();
    for (int i = 0; i < v.rows(); ++i)
      for (int j = 0; j < v.cols(); ++j) {
        if (axis == 0)
          out.at(off + i, j) = v.at(i, j);
        else
          out.at(i, off + j) = v.at(i, j);
      }
    ids.push_back(p.id);
    extents.push_back(ext);
    off += ext;
  }
  return t->emit(std::move(out), [ids, extents, axis](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    int off2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& g = tp.grad(ids[k]);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j)
          g.at(i, j) += axis == 0 ? go.at(off2 + i, j) : go.at(i, off2 + j);
      off2 += extents[k];
    }
  });
}

inline Var slice(Var a, int axis, int begin, int end) {
  const Tensor& av = a.val();
  check(av.ndim() == 2, "slice: needs a 2-d tensor");
  check(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
  int extent = axis == 0 ? av.rows() : av.cols();
  check(0 <= begin && begin < end && end <= extent, "slice: bad range");
  int m = axis == 0 ? end - begin : av.rows();
  int n = axis == 0 ? av.cols() : end - begin;
  Tensor out(Shape{m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.at(i, j) = axis == 0 ? av.at(begin + i, j) : av.at(i, begin + j);
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, axis, begin, m, n](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        if (axis == 0)
          ga.at(begin + i, j) += go.at(i, j);
        else
          ga.at(i, begin + j) += go.at(i, j);
      }
  });
}

// ---- broadcasts over columns (tokens live in columns) ----

namespace detail {
inline const Tensor& col_vec_check(const Tensor& m, const Tensor& v, const char* op) {
  check(m.ndim() == 2, std::string(op) + ": matrix must be 2-d");
  bool ok = (v.ndim() == 2 && v.cols() == 1 && v.rows() == m.rows()) ||
            (v.ndim() == 1 && v.shape[0] == m.rows());
  check(ok, std::string(op) + ": vector length must match matrix rows");
  return v;
}
}  // namespace detail

// out[i,j] = a[i,j] + v[i]
inline Var add_col_broadcast(Var a, Var v) {
  Tape* t = detail::tape_of(a, v);
  detail::col_vec_check(a.val(), v.val(), "add_col_broadcast");
  Tensor out = a.val();
  const Tensor& vv = v.val();
  int m = out.rows(), n = out.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += vv.data[static_cast<std::size_t>(i)];
  int ai = a.id, vi = v.id;
  return t->emit(std::move(out), [ai, vi, m, n](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    Tensor& gv = tp.grad(vi);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) {
        ga.at(i, j) += go.at(i, j);
        acc += go.at(i, j);
      }
      gv.data[static_cast<std::size_t>(i)] += acc;
    }
  });
}

// out[i,j] = a[i,j] * v[i]
inline Var mul_col_broadcast(Var a, Var v) {
  Tape* t = detail::tape_of(a, v);
  detail::col_vec_check(a.val(), v.val(), "mul_col_broadcast");
  Tensor out = a.val();
  const Tensor& vv = v.val();
  int m = out.rows(), n = out.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) *= vv.data[static_cast<std::size_t>(i)];
  int ai = a.id, vi = v.id;
  return t->emit(std::move(out), [ai, vi, m, n](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    const Tensor& av = tp.value(ai);
    const Tensor& vv2 = tp.value(vi);
    Tensor& ga = tp.grad(ai);
    Tensor& gv = tp.grad(vi);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      double vi_val = vv2.data[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) {
        ga.at(i, j) += go.at(i, j) * vi_val;
        acc += go.at(i, j) * av.at(i, j);
      }
      gv.data[static_cast<std::size_t>(i)] += acc;
    }
  });
}

// ---- softmax / norm ----

// Row softmax with additive-mask support: -inf entries come out as exact
// zeros; a row of all -inf comes out all zero rather than NaN.
inline Var softmax_rows(Var a) {
  const Tensor& av = a.val();
  check(av.ndim() == 2, "softmax_rows: needs a 2-d tensor");
  int m = av.rows(), n = av.cols();
  Tensor out(Shape{m, n});
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    double mx = kNegInf;
    for (int j = 0; j < n; ++j) mx = std::max(mx, av.at(i, j));
    if (mx == kNegInf) continue;  // fully masked row stays zero
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = av.at(i, j) == kNegInf ? 0.0 : std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) out.at(i, j) /= z;
  }
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, m, n](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad(ai);
    for (int i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += go.at(i, j) * y.at(i, j);
      for (int j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (go.at(i, j) - dot);
    }
  });
}

// Normalizes each column (token) to zero mean / unit variance across rows.
// Affine gain/bias are applied separately via the broadcast ops.
inline Var layer_norm_cols(Var a, double eps = 1e-5) {
  const Tensor& av = a.val();
  check(av.ndim() == 2, "layer_norm_cols: needs a 2-d tensor");
  int m = av.rows(), n = av.cols();
  Tensor out(Shape{m, n});
  Tensor inv_std(Shape{1, n});
  for (int j = 0; j < n; ++j) {
    double mu = 0.0;
    for (int i = 0; i < m; ++i) mu += av.at(i, j);
    mu /= m;
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      double d = av.at(i, j) - mu;
      var += d * d;
    }
    var /= m;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(0, j) = is;
    for (int i = 0; i < m; ++i) out.at(i, j) = (av.at(i, j) - mu) * is;
  }
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, m, n, inv_std](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    const Tensor& xhat = tp.value(self);
    Tensor& ga = tp.grad(ai);
    for (int j = 0; j < n; ++j) {
      double gmean = 0.0, gxmean = 0.0;
      for (int i = 0; i < m; ++i) {
        gmean += go.at(i, j);
        gxmean += go.at(i, j) * xhat.at(i, j);
      }
      gmean /= m;
      gxmean /= m;
      double is = inv_std.at(0, j);
      for (int i = 0; i < m; ++i)
        ga.at(i, j) += is * (go.at(i, j) - gmean - xhat.at(i, j) * gxmean);
    }
  });
}

// ---- conv / pooling (3-d, channels first) ----

inline Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  Tape* t = detail::tape_of(x, w);
  check(b.tape == t, "conv2d: vars must share one tape");
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  check(xv.ndim() == 3, "conv2d: input must be (C,H,W)");
  check(wv.ndim() == 4, "conv2d: weight must be (OC,IC,KH,KW)");
  check(bv.ndim() == 1 && bv.shape[0] == wv.shape[0], "conv2d: bias must be (OC)");
  check(wv.shape[1] == xv.shape[0], "conv2d: input channels disagree");
  check(stride >= 1, "conv2d: stride must be positive");
  int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  int OC = wv.shape[0], KH = wv.shape[2], KW = wv.shape[3];
  int OH = (H + 2 * pad - KH) / stride + 1;
  int OW = (W + 2 * pad - KW) / stride + 1;
  check(OH > 0 && OW > 0, "conv2d: kernel larger than padded input");
  Tensor out(Shape{OC, OH, OW});
  for (int o = 0; o < OC; ++o)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        double acc = bv.data[static_cast<std::size_t>(o)];
        for (int ic = 0; ic < C; ++ic)
          for (int kh = 0; kh < KH; ++kh) {
            int ih = oh * stride + kh - pad;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < KW; ++kw) {
              int iw = ow * stride + kw - pad;
              if (iw < 0 || iw >= W) continue;
              acc += wv.data[((static_cast<std::size_t>(o) * C + ic) * KH + kh) * KW + kw] *
                     xv.at3(ic, ih, iw);
            }
          }
        out.at3(o, oh, ow) = acc;
      }
  int xi = x.id, wi = w.id, bi = b.id;
  return t->emit(std::move(out),
                 [xi, wi, bi, stride, pad, C, H, W, OC, KH, KW, OH, OW](Tape& tp, int self) {
                   const Tensor& go = tp.grad(self);
                   const Tensor& xv2 = tp.value(xi);
                   const Tensor& wv2 = tp.value(wi);
                   Tensor& gx = tp.grad(xi);
                   Tensor& gw = tp.grad(wi);
                   Tensor& gb = tp.grad(bi);
                   for (int o = 0; o < OC; ++o)
                     for (int oh = 0; oh < OH; ++oh)
                       for (int ow = 0; ow < OW; ++ow) {
                         double g = go.at3(o, oh, ow);
                         if (g == 0.0) continue;
                         gb.data[static_cast<std::size_t>(o)] += g;
                         for (int ic = 0; ic < C; ++ic)
                           for (int kh = 0; kh < KH; ++kh) {
                             int ih = oh * stride + kh - pad;
                             if (ih < 0 || ih >= H) continue;
                             for (int kw = 0; kw < KW; ++kw) {
                               int iw = ow * stride + kw - pad;
                               if (iw < 0 || iw >= W) continue;
                               std::size_t widx =
                                   ((static_cast<std::size_t>(o) * C + ic) * KH + kh) * KW + kw;
                               gw.data[widx] += g * xv2.at3(ic, ih, iw);
                               gx.at3(ic, ih, iw) += g * wv2.data[widx];
                             }
                           }
                       }
                 });
}

// (C,H,W) -> (C,1), mean over the spatial extent
inline Var mean_hw(Var x) {
  const Tensor& xv = x.val();
  check(xv.ndim() == 3, "mean_hw: input must be (C,H,W)");
  int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  Tensor out(Shape{C, 1});
  double inv = 1.0 / (static_cast<double>(H) * W);
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) acc += xv.at3(c, i, j);
    out.at(c, 0) = acc * inv;
  }
  int xi = x.id;
  return x.tape->emit(std::move(out), [xi, C, H, W, inv](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& gx = tp.grad(xi);
    for (int c = 0; c < C; ++c) {
      double g = go.at(c, 0) * inv;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) gx.at3(c, i, j) += g;
    }
  });
}

// ---- reductions / losses ----

inline Var sum_all(Var a) {
  double acc = 0.0;
  for (double v : a.val().data) acc += v;
  int ai = a.id;
  return a.tape->emit(Tensor(Shape{1, 1}, {acc}), [ai](Tape& tp, int self) {
    double g = tp.grad(self).data[0];
    Tensor& ga = tp.grad(ai);
    for (double& v : ga.data) v += g;
  });
}

// mean over all elements of (pred - target)^2
inline Var mse_loss(Var pred, Var target) {
  Tape* t = detail::tape_of(pred, target);
  check(pred.shape() == target.shape(), "mse_loss: shape mismatch");
  const Tensor& pv = pred.val();
  const Tensor& tv = target.val();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.data.size(); ++i) {
    double d = pv.data[i] - tv.data[i];
    acc += d * d;
  }
  double inv = 1.0 / static_cast<double>(pv.data.size());
  int pi = pred.id, ti = target.id;
  return t->emit(Tensor(Shape{1, 1}, {acc * inv}), [pi, ti, inv](Tape& tp, int self) {
    double g = tp.grad(self).data[0];
    const Tensor& pv2 = tp.value(pi);
    const Tensor& tv2 = tp.value(ti);
    Tensor& gp = tp.grad(pi);
    Tensor& gt = tp.grad(ti);
    for (std::size_t i = 0; i < pv2.data.size(); ++i) {
      double d = 2.0 * inv * g * (pv2.data[i] - tv2.data[i]);
      gp.data[i] += d;
      gt.data[i] -= d;
    }
  });
}

// ---- rotary rotation ----

// Rotates consecutive row pairs (2c, 2c+1) of a (D x N) matrix by per-token
// angles given as cos/sin matrices of shape (D/2 x N). The phases are data,
// not differentiated; gradient flows through the rotation only.
inline Var rope_rotate(Var a, const Tensor& cosp, const Tensor& sinp) {
  const Tensor& av = a.val();
  check(av.ndim() == 2 && av.rows() % 2 == 0, "rope_rotate: needs a 2-d tensor with even rows");
  int D = av.rows(), N = av.cols();
  check(cosp.ndim() == 2 && cosp.rows() == D / 2 && cosp.cols() == N &&
            sinp.shape == cosp.shape,
        "rope_rotate: phase shape must be (rows/2, cols)");
  Tensor out(Shape{D, N});
  for (int c = 0; c < D / 2; ++c)
    for (int j = 0; j < N; ++j) {
      double x = av.at(2 * c, j), y = av.at(2 * c + 1, j);
      double cs = cosp.at(c, j), sn = sinp.at(c, j);
      out.at(2 * c, j) = cs * x - sn * y;
      out.at(2 * c + 1, j) = sn * x + cs * y;
    }
  int ai = a.id;
  return a.tape->emit(std::move(out), [ai, D, N, cosp, sinp](Tape& tp, int self) {
    const Tensor& go = tp.grad(self);
    Tensor& ga = tp.grad(ai);
    for (int c = 0; c < D / 2; ++c)
      for (int j = 0; j < N; ++j) {
        double g0 = go.at(2 * c, j), g1 = go.at(2 * c + 1, j);
        double cs = cosp.at(c, j), sn = sinp.at(c, j);
        ga.at(2 * c, j) += cs * g0 + sn * g1;
        ga.at(2 * c + 1, j) += -sn * g0 + cs * g1;
      }
  });
}

// ---- forward-only grid resize ----

// Bilinear downsample of a (H x W) grid to (oh x ow), sampling at target cell
// centers (align-corners-false convention, edges clamped). Not on the tape.
inline Tensor bilinear_downsample(const Tensor& src, int oh, int ow) {
  check(src.ndim() == 2, "bilinear_downsample: source must be 2-d");
  check(oh >= 1 && ow >= 1, "bilinear_downsample: bad target size");
  int H = src.rows(), W = src.cols();
  Tensor out(Shape{oh, ow});
  for (int r = 0; r < oh; ++r) {
    double sy = (r + 0.5) * static_cast<double>(H) / oh - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
    int y0 = static_cast<int>(std::floor(sy));
    int y1 = std::min(y0 + 1, H - 1);
    double fy = sy - y0;
    for (int c = 0; c < ow; ++c) {
      double sx = (c + 0.5) * static_cast<double>(W) / ow - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      int x0 = static_cast<int>(std::floor(sx));
      int x1 = std::min(x0 + 1, W - 1);
      double fx = sx - x0;
      out.at(r, c) = (1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                     fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1));
    }
  }
  return out;
}

}  // namespace madp
