#pragma once

// Reverse-mode autodiff over dense tensors. A Graph is a tape of nodes in
// creation order (which is a valid topological order); backward walks the
// tape in reverse. Heavy products go through Eigen; everything else is
// plain loops with a fixed accumulation order so single-threaded runs are
// bit-reproducible.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mapclip/common.hpp"
#include "mapclip/tensor.hpp"

namespace mapclip::numerics {

template <typename R>
struct Parameter {
  std::string name;
  Tensor<R> value;
  Tensor<R> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<R> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<R>::zeros(value.shape)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), R(0)); }
};

template <typename R>
class Graph;

template <typename R>
struct Var {
  Graph<R>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<R>& val() const;
};

template <typename R>
class Graph {
 public:
  using BackFn = std::function<void(const Tensor<R>&)>;

  struct Node {
    Tensor<R> value;
    BackFn back;
    bool needs_grad = false;
  };

  Graph() { nodes_.reserve(1 << 14); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  Var<R> make(Tensor<R> value, bool needs_grad, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad && recording_;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var<R>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<R> input(Tensor<R> v) { return make(std::move(v), false, nullptr); }

  Var<R> constant(R v) { return input(Tensor<R>::scalar(v)); }

  // Leaf that accumulates into the parameter's grad buffer. Repeated use of
  // the same parameter in one graph shares a single leaf node.
  Var<R> param(Parameter<R>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<R>{this, it->second};
    Parameter<R>* pp = &p;
    Var<R> v = make(
        p.value, p.requires_grad, [pp](const Tensor<R>& gy) {
          for (int64_t i = 0; i < gy.numel(); ++i) pp->grad.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
        });
    param_nodes_.emplace(pp, v.id);
    return v;
  }

  const Tensor<R>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // Attach the backward closure after node creation, for ops whose backward
  // reads the node's own output value.
  void nodes_hook(int id, BackFn f) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.needs_grad) n.back = std::move(f);
  }

  // Transient gradient buffer for a node, allocated on first touch.
  Tensor<R>& gbuf(int id) {
    auto& t = grads_[static_cast<size_t>(id)];
    if (t.data.empty()) t = Tensor<R>::zeros(nodes_[static_cast<size_t>(id)].value.shape);
    return t;
  }

  // Backpropagate from a scalar root. May be called several times on one
  // graph (each call re-seeds node gradients); parameter gradients
  // accumulate across calls.
  void backward(Var<R> root) {
    require(root.g == this, "backward: var belongs to a different graph");
    require(nodes_[static_cast<size_t>(root.id)].value.numel() == 1,
            "backward: root must be scalar");
    grads_.assign(nodes_.size(), Tensor<R>{});
    gbuf(root.id).data[0] = R(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.back) continue;
      const Tensor<R>& gy = grads_[static_cast<size_t>(id)];
      if (gy.data.empty()) continue;
      n.back(gy);
    }
  }

  // Gradient of a non-leaf node after the latest backward call (empty if
  // the node was not reached).
  const Tensor<R>& grad_of(Var<R> v) const {
    static const Tensor<R> kEmpty{};
    if (static_cast<size_t>(v.id) >= grads_.size()) return kEmpty;
    return grads_[static_cast<size_t>(v.id)];
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<R>> grads_;
  std::unordered_map<Parameter<R>*, int> param_nodes_;
  bool recording_ = true;
};

template <typename R>
const Tensor<R>& Var<R>::val() const {
  return g->value(id);
}

namespace detail {

template <typename R>
using EMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename R>
Eigen::Map<EMat<R>> as_mat(Tensor<R>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<EMat<R>>(t.ptr(), rows, cols);
}

template <typename R>
Eigen::Map<const EMat<R>> as_mat(const Tensor<R>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<const EMat<R>>(t.ptr(), rows, cols);
}

inline int64_t row_size(const Shape& s) {
  int64_t n = 1;
  for (size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename R>
Var<R> reshape(Var<R> x, Shape shape) {
  const Tensor<R>& xv = x.val();
  require(numel_of(shape) == xv.numel(),
          "reshape: numel mismatch " + shape_str(xv.shape) + " -> " + shape_str(shape));
  Tensor<R> out(shape, xv.data);
  Graph<R>* g = x.g;
  int px = x.id;
  Shape old_shape = xv.shape;
  return g->make(std::move(out), g->needs_grad(px), [g, px, old_shape](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    for (int64_t i = 0; i < gy.numel(); ++i) gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
  });
}

template <typename R>
Var<R> transpose2d(Var<R> x) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 2, "transpose2d: rank-2 required");
  const int64_t m = xv.dim(0), n = xv.dim(1);
  Tensor<R> out = Tensor<R>::zeros({n, m});
  detail::as_mat(out, n, m).noalias() = detail::as_mat(xv, m, n).transpose();
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), [g, px, m, n](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    detail::as_mat(gx, m, n) += detail::as_mat(gy, n, m).transpose();
  });
}

// Slice along the first axis.
template <typename R>
Var<R> slice_rows(Var<R> x, int64_t r0, int64_t nrows) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() >= 1 && r0 >= 0 && nrows >= 0 && r0 + nrows <= xv.dim(0),
          "slice_rows: out of range");
  const int64_t rs = detail::row_size(xv.shape);
  Shape os = xv.shape;
  os[0] = nrows;
  Tensor<R> out = Tensor<R>::zeros(os);
  std::copy_n(xv.ptr() + r0 * rs, nrows * rs, out.ptr());
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), [g, px, r0, rs](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    R* dst = gx.ptr() + r0 * rs;
    for (int64_t i = 0; i < gy.numel(); ++i) dst[i] += gy.data[static_cast<size_t>(i)];
  });
}

// Concatenate along the first axis; trailing dims must match.
template <typename R>
Var<R> concat_rows(const std::vector<Var<R>>& xs) {
  require(!xs.empty(), "concat_rows: empty input");
  Graph<R>* g = xs[0].g;
  Shape trail = xs[0].val().shape;
  int64_t total = 0;
  bool any_grad = false;
  for (const auto& x : xs) {
    const auto& s = x.val().shape;
    require(s.size() == trail.size(), "concat_rows: rank mismatch");
    for (size_t i = 1; i < s.size(); ++i)
      require(s[i] == trail[i], "concat_rows: trailing shape mismatch");
    total += s[0];
    any_grad = any_grad || g->needs_grad(x.id);
  }
  Shape os = trail;
  os[0] = total;
  Tensor<R> out = Tensor<R>::zeros(os);
  const int64_t rs = detail::row_size(os);
  std::vector<int> pids;
  std::vector<int64_t> offsets, counts;
  int64_t off = 0;
  for (const auto& x : xs) {
    const Tensor<R>& xv = x.val();
    std::copy_n(xv.ptr(), xv.numel(), out.ptr() + off);
    pids.push_back(x.id);
    offsets.push_back(off);
    counts.push_back(xv.numel());
    off += xv.numel();
  }
  (void)rs;
  return g->make(std::move(out), any_grad, [g, pids, offsets, counts](const Tensor<R>& gy) {
    for (size_t k = 0; k < pids.size(); ++k) {
      if (!g->needs_grad(pids[k])) continue;
      Tensor<R>& gx = g->gbuf(pids[k]);
      const R* src = gy.ptr() + offsets[k];
      for (int64_t i = 0; i < counts[k]; ++i) gx.data[static_cast<size_t>(i)] += src[i];
    }
  });
}

template <typename R>
Var<R> slice_cols(Var<R> x, int64_t c0, int64_t ncols) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 2, "slice_cols: rank-2 required");
  const int64_t n = xv.dim(0), m = xv.dim(1);
  require(c0 >= 0 && ncols >= 0 && c0 + ncols <= m, "slice_cols: out of range");
  Tensor<R> out = Tensor<R>::zeros({n, ncols});
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(xv.ptr() + i * m + c0, ncols, out.ptr() + i * ncols);
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), [g, px, n, m, c0, ncols](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    for (int64_t i = 0; i < n; ++i) {
      R* dst = gx.ptr() + i * m + c0;
      const R* src = gy.ptr() + i * ncols;
      for (int64_t j = 0; j < ncols; ++j) dst[j] += src[j];
    }
  });
}

template <typename R>
Var<R> concat_cols(const std::vector<Var<R>>& xs) {
  require(!xs.empty(), "concat_cols: empty input");
  Graph<R>* g = xs[0].g;
  const int64_t n = xs[0].val().dim(0);
  int64_t total = 0;
  bool any_grad = false;
  for (const auto& x : xs) {
    require(x.val().rank() == 2 && x.val().dim(0) == n, "concat_cols: row mismatch");
    total += x.val().dim(1);
    any_grad = any_grad || g->needs_grad(x.id);
  }
  Tensor<R> out = Tensor<R>::zeros({n, total});
  std::vector<int> pids;
  std::vector<int64_t> offs, widths;
  int64_t off = 0;
  for (const auto& x : xs) {
    const Tensor<R>& xv = x.val();
    const int64_t w = xv.dim(1);
    for (int64_t i = 0; i < n; ++i)
      std::copy_n(xv.ptr() + i * w, w, out.ptr() + i * total + off);
    pids.push_back(x.id);
    offs.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return g->make(std::move(out), any_grad, [g, pids, offs, widths, n, total](const Tensor<R>& gy) {
    for (size_t k = 0; k < pids.size(); ++k) {
      if (!g->needs_grad(pids[k])) continue;
      Tensor<R>& gx = g->gbuf(pids[k]);
      const int64_t w = widths[k];
      for (int64_t i = 0; i < n; ++i) {
        const R* src = gy.ptr() + i * total + offs[k];
        R* dst = gx.ptr() + i * w;
        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename R, typename Fwd, typename Bwd>
Var<R> unary_op(Var<R> x, Fwd fwd, Bwd make_back) {
  Graph<R>* g = x.g;
  const Tensor<R>& xv = x.val();
  Tensor<R> out = Tensor<R>::zeros(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[static_cast<size_t>(i)] = fwd(xv.data[static_cast<size_t>(i)]);
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), make_back(g, px));
}

}  // namespace detail

template <typename R>
Var<R> add(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  require(av.same_shape(bv), "add: shape mismatch");
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[static_cast<size_t>(i)] = av.data[static_cast<size_t>(i)] + bv.data[static_cast<size_t>(i)];
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb](const Tensor<R>& gy) {
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      for (int64_t i = 0; i < gy.numel(); ++i) ga.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      for (int64_t i = 0; i < gy.numel(); ++i) gb.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
    }
  });
}

template <typename R>
Var<R> sub(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  require(av.same_shape(bv), "sub: shape mismatch");
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[static_cast<size_t>(i)] = av.data[static_cast<size_t>(i)] - bv.data[static_cast<size_t>(i)];
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb](const Tensor<R>& gy) {
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      for (int64_t i = 0; i < gy.numel(); ++i) ga.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      for (int64_t i = 0; i < gy.numel(); ++i) gb.data[static_cast<size_t>(i)] -= gy.data[static_cast<size_t>(i)];
    }
  });
}

template <typename R>
Var<R> mul(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  require(av.same_shape(bv), "mul: shape mismatch");
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[static_cast<size_t>(i)] = av.data[static_cast<size_t>(i)] * bv.data[static_cast<size_t>(i)];
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb](const Tensor<R>& gy) {
    const Tensor<R>&av2 = g->value(pa), &bv2 = g->value(pb);
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      for (int64_t i = 0; i < gy.numel(); ++i) ga.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * bv2.data[static_cast<size_t>(i)];
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      for (int64_t i = 0; i < gy.numel(); ++i) gb.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * av2.data[static_cast<size_t>(i)];
    }
  });
}

// a + b where b's shape is a suffix of a's shape (b broadcast over leading
// dims). Loops run block-wise over b-sized stretches.
template <typename R>
Var<R> add_bcast(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  const int64_t bn = bv.numel();
  require(bn > 0 && av.numel() % bn == 0, "add_bcast: incompatible sizes");
  const int64_t blocks = av.numel() / bn;
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t blk = 0; blk < blocks; ++blk) {
    const R* ap = av.ptr() + blk * bn;
    const R* bp = bv.ptr();
    R* op = out.ptr() + blk * bn;
    for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] + bp[i];
  }
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb, bn, blocks](const Tensor<R>& gy) {
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      const R* gp = gy.ptr();
      R* ap = ga.ptr();
      for (int64_t i = 0; i < gy.numel(); ++i) ap[i] += gp[i];
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      R* bp = gb.ptr();
      for (int64_t blk = 0; blk < blocks; ++blk) {
        const R* gp = gy.ptr() + blk * bn;
        for (int64_t i = 0; i < bn; ++i) bp[i] += gp[i];
      }
    }
  });
}

template <typename R>
Var<R> mul_bcast(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  const int64_t bn = bv.numel();
  require(bn > 0 && av.numel() % bn == 0, "mul_bcast: incompatible sizes");
  const int64_t blocks = av.numel() / bn;
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t blk = 0; blk < blocks; ++blk) {
    const R* ap = av.ptr() + blk * bn;
    const R* bp = bv.ptr();
    R* op = out.ptr() + blk * bn;
    for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] * bp[i];
  }
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb, bn, blocks](const Tensor<R>& gy) {
    const Tensor<R>&av2 = g->value(pa), &bv2 = g->value(pb);
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      for (int64_t blk = 0; blk < blocks; ++blk) {
        const R* gp = gy.ptr() + blk * bn;
        const R* bp = bv2.ptr();
        R* ap = ga.ptr() + blk * bn;
        for (int64_t i = 0; i < bn; ++i) ap[i] += gp[i] * bp[i];
      }
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      R* bp = gb.ptr();
      for (int64_t blk = 0; blk < blocks; ++blk) {
        const R* gp = gy.ptr() + blk * bn;
        const R* ap = av2.ptr() + blk * bn;
        for (int64_t i = 0; i < bn; ++i) bp[i] += gp[i] * ap[i];
      }
    }
  });
}

template <typename R>
Var<R> neg(Var<R> x) {
  return detail::unary_op(
      x, [](R v) { return -v; },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) gx.data[static_cast<size_t>(i)] -= gy.data[static_cast<size_t>(i)];
        };
      });
}

template <typename R>
Var<R> scale(Var<R> x, R c) {
  return detail::unary_op(
      x, [c](R v) { return c * v; },
      [c](Graph<R>* g, int px) {
        return [g, px, c](const Tensor<R>& gy) {
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) gx.data[static_cast<size_t>(i)] += c * gy.data[static_cast<size_t>(i)];
        };
      });
}

template <typename R>
Var<R> add_const(Var<R> x, R c) {
  return detail::unary_op(
      x, [c](R v) { return v + c; },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
        };
      });
}

template <typename R>
Var<R> relu(Var<R> x) {
  return detail::unary_op(
      x, [](R v) { return v > R(0) ? v : R(0); },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          const Tensor<R>& xv = g->value(px);
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i)
            if (xv.data[static_cast<size_t>(i)] > R(0)) gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
        };
      });
}

template <typename R>
Var<R> vdiv(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  require(av.same_shape(bv), "vdiv: shape mismatch");
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[static_cast<size_t>(i)] = av.data[static_cast<size_t>(i)] / bv.data[static_cast<size_t>(i)];
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb](const Tensor<R>& gy) {
    const Tensor<R>&av2 = g->value(pa), &bv2 = g->value(pb);
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      for (int64_t i = 0; i < gy.numel(); ++i) ga.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] / bv2.data[static_cast<size_t>(i)];
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      for (int64_t i = 0; i < gy.numel(); ++i) {
        const R bb = bv2.data[static_cast<size_t>(i)];
        gb.data[static_cast<size_t>(i)] -= gy.data[static_cast<size_t>(i)] * av2.data[static_cast<size_t>(i)] / (bb * bb);
      }
    }
  });
}

// a[i,j] * b[i] with b a per-row scalar.
template <typename R>
Var<R> mul_colvec(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  require(av.rank() == 2 && bv.numel() == av.dim(0), "mul_colvec: shape mismatch");
  const int64_t n = av.dim(0), m = av.dim(1);
  Tensor<R> out = Tensor<R>::zeros(av.shape);
  for (int64_t i = 0; i < n; ++i) {
    const R s = bv.data[static_cast<size_t>(i)];
    for (int64_t j = 0; j < m; ++j) out.data[static_cast<size_t>(i * m + j)] = av.data[static_cast<size_t>(i * m + j)] * s;
  }
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb), [g, pa, pb, n, m](const Tensor<R>& gy) {
    const Tensor<R>&av2 = g->value(pa), &bv2 = g->value(pb);
    if (g->needs_grad(pa)) {
      Tensor<R>& ga = g->gbuf(pa);
      for (int64_t i = 0; i < n; ++i) {
        const R s = bv2.data[static_cast<size_t>(i)];
        for (int64_t j = 0; j < m; ++j) ga.data[static_cast<size_t>(i * m + j)] += gy.data[static_cast<size_t>(i * m + j)] * s;
      }
    }
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      for (int64_t i = 0; i < n; ++i) {
        R s = R(0);
        for (int64_t j = 0; j < m; ++j) s += gy.data[static_cast<size_t>(i * m + j)] * av2.data[static_cast<size_t>(i * m + j)];
        gb.data[static_cast<size_t>(i)] += s;
      }
    }
  });
}

template <typename R>
Var<R> vrecip(Var<R> x) {
  return detail::unary_op(
      x, [](R v) { return R(1) / v; },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          const Tensor<R>& xv = g->value(px);
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) {
            const R v = xv.data[static_cast<size_t>(i)];
            gx.data[static_cast<size_t>(i)] -= gy.data[static_cast<size_t>(i)] / (v * v);
          }
        };
      });
}

template <typename R>
Var<R> sigmoid(Var<R> x) {
  Graph<R>* g = x.g;
  const Tensor<R>& xv = x.val();
  Tensor<R> out = Tensor<R>::zeros(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const R v = xv.data[static_cast<size_t>(i)];
    out.data[static_cast<size_t>(i)] = v >= R(0) ? R(1) / (R(1) + std::exp(-v))
                                                 : std::exp(v) / (R(1) + std::exp(v));
  }
  int px = x.id;
  Var<R> y = g->make(std::move(out), g->needs_grad(px), nullptr);
  if (g->needs_grad(px)) {
    int self = y.id;
    g->nodes_hook(self, [g, px, self](const Tensor<R>& gy) {
      const Tensor<R>& s = g->value(self);
      Tensor<R>& gx = g->gbuf(px);
      for (int64_t i = 0; i < gy.numel(); ++i) {
        const R sv = s.data[static_cast<size_t>(i)];
        gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * sv * (R(1) - sv);
      }
    });
  }
  return y;
}

template <typename R>
Var<R> vexp(Var<R> x) {
  Graph<R>* g = x.g;
  const Tensor<R>& xv = x.val();
  Tensor<R> out = Tensor<R>::zeros(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[static_cast<size_t>(i)] = std::exp(xv.data[static_cast<size_t>(i)]);
  int px = x.id;
  Var<R> y = g->make(std::move(out), g->needs_grad(px), nullptr);
  if (g->needs_grad(px)) {
    int self = y.id;
    g->nodes_hook(self, [g, px, self](const Tensor<R>& gy) {
      const Tensor<R>& e = g->value(self);
      Tensor<R>& gx = g->gbuf(px);
      for (int64_t i = 0; i < gy.numel(); ++i) gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * e.data[static_cast<size_t>(i)];
    });
  }
  return y;
}

template <typename R>
Var<R> vlog(Var<R> x) {
  return detail::unary_op(
      x, [](R v) { return std::log(v); },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          const Tensor<R>& xv = g->value(px);
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] / xv.data[static_cast<size_t>(i)];
        };
      });
}

template <typename R>
Var<R> vabs(Var<R> x) {
  return detail::unary_op(
      x, [](R v) { return std::abs(v); },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          const Tensor<R>& xv = g->value(px);
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) {
            const R v = xv.data[static_cast<size_t>(i)];
            const R s = v > R(0) ? R(1) : (v < R(0) ? R(-1) : R(0));
            gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * s;
          }
        };
      });
}

template <typename R>
Var<R> vsqrt(Var<R> x) {
  Graph<R>* g = x.g;
  const Tensor<R>& xv = x.val();
  Tensor<R> out = Tensor<R>::zeros(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[static_cast<size_t>(i)] = std::sqrt(xv.data[static_cast<size_t>(i)]);
  int px = x.id;
  Var<R> y = g->make(std::move(out), g->needs_grad(px), nullptr);
  if (g->needs_grad(px)) {
    int self = y.id;
    g->nodes_hook(self, [g, px, self](const Tensor<R>& gy) {
      const Tensor<R>& s = g->value(self);
      Tensor<R>& gx = g->gbuf(px);
      for (int64_t i = 0; i < gy.numel(); ++i)
        gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * R(0.5) / s.data[static_cast<size_t>(i)];
    });
  }
  return y;
}

template <typename R>
Var<R> vsquare(Var<R> x) {
  return detail::unary_op(
      x, [](R v) { return v * v; },
      [](Graph<R>* g, int px) {
        return [g, px](const Tensor<R>& gy) {
          const Tensor<R>& xv = g->value(px);
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i)
            gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * R(2) * xv.data[static_cast<size_t>(i)];
        };
      });
}

template <typename R>
Var<R> clamp(Var<R> x, R lo, R hi) {
  return detail::unary_op(
      x, [lo, hi](R v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](Graph<R>* g, int px) {
        return [g, px, lo, hi](const Tensor<R>& gy) {
          const Tensor<R>& xv = g->value(px);
          Tensor<R>& gx = g->gbuf(px);
          for (int64_t i = 0; i < gy.numel(); ++i) {
            const R v = xv.data[static_cast<size_t>(i)];
            if (v > lo && v < hi) gx.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Reductions and products
// ---------------------------------------------------------------------------

template <typename R>
Var<R> matmul(Var<R> a, Var<R> b) {
  const Tensor<R>&av = a.val(), &bv = b.val();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: shape mismatch " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<R> out = Tensor<R>::zeros({m, n});
  detail::as_mat(out, m, n).noalias() = detail::as_mat(av, m, k) * detail::as_mat(bv, k, n);
  Graph<R>* g = a.g;
  int pa = a.id, pb = b.id;
  return g->make(std::move(out), g->needs_grad(pa) || g->needs_grad(pb),
                 [g, pa, pb, m, k, n](const Tensor<R>& gy) {
                   const Tensor<R>&av2 = g->value(pa), &bv2 = g->value(pb);
                   if (g->needs_grad(pa)) {
                     Tensor<R>& ga = g->gbuf(pa);
                     detail::as_mat(ga, m, k).noalias() +=
                         detail::as_mat(gy, m, n) * detail::as_mat(bv2, k, n).transpose();
                   }
                   if (g->needs_grad(pb)) {
                     Tensor<R>& gb = g->gbuf(pb);
                     detail::as_mat(gb, k, n).noalias() +=
                         detail::as_mat(av2, m, k).transpose() * detail::as_mat(gy, m, n);
                   }
                 });
}

template <typename R>
Var<R> sum_all(Var<R> x) {
  const Tensor<R>& xv = x.val();
  R s = R(0);
  for (R v : xv.data) s += v;
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(Tensor<R>::scalar(s), g->needs_grad(px), [g, px](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    const R gv = gy.data[0];
    for (auto& v : gx.data) v += gv;
  });
}

template <typename R>
Var<R> mean_all(Var<R> x) {
  const int64_t n = x.val().numel();
  return scale(sum_all(x), R(1) / static_cast<R>(n));
}

template <typename R>
Var<R> rowsum(Var<R> x) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 2, "rowsum: rank-2 required");
  const int64_t n = xv.dim(0), m = xv.dim(1);
  Tensor<R> out = Tensor<R>::zeros({n});
  for (int64_t i = 0; i < n; ++i) {
    R s = R(0);
    const R* row = xv.ptr() + i * m;
    for (int64_t j = 0; j < m; ++j) s += row[j];
    out.data[static_cast<size_t>(i)] = s;
  }
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), [g, px, n, m](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    for (int64_t i = 0; i < n; ++i) {
      const R gv = gy.data[static_cast<size_t>(i)];
      R* row = gx.ptr() + i * m;
      for (int64_t j = 0; j < m; ++j) row[j] += gv;
    }
  });
}

// [a, b, c] -> [a, c], mean over the middle axis.
template <typename R>
Var<R> mean_middle(Var<R> x) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 3, "mean_middle: rank-3 required");
  const int64_t a = xv.dim(0), b = xv.dim(1), c = xv.dim(2);
  Tensor<R> out = Tensor<R>::zeros({a, c});
  for (int64_t i = 0; i < a; ++i)
    for (int64_t j = 0; j < b; ++j)
      for (int64_t k = 0; k < c; ++k)
        out.data[static_cast<size_t>(i * c + k)] += xv.data[static_cast<size_t>((i * b + j) * c + k)];
  const R inv = R(1) / static_cast<R>(b);
  for (auto& v : out.data) v *= inv;
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), [g, px, a, b, c, inv](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    for (int64_t i = 0; i < a; ++i)
      for (int64_t j = 0; j < b; ++j)
        for (int64_t k = 0; k < c; ++k)
          gx.data[static_cast<size_t>((i * b + j) * c + k)] += gy.data[static_cast<size_t>(i * c + k)] * inv;
  });
}

// [a, c] -> [a, b, c], replicate along a new middle axis.
template <typename R>
Var<R> expand_middle(Var<R> x, int64_t b) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 2, "expand_middle: rank-2 required");
  const int64_t a = xv.dim(0), c = xv.dim(1);
  Tensor<R> out = Tensor<R>::zeros({a, b, c});
  for (int64_t i = 0; i < a; ++i)
    for (int64_t j = 0; j < b; ++j)
      std::copy_n(xv.ptr() + i * c, c, out.ptr() + (i * b + j) * c);
  Graph<R>* g = x.g;
  int px = x.id;
  return g->make(std::move(out), g->needs_grad(px), [g, px, a, b, c](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px);
    for (int64_t i = 0; i < a; ++i)
      for (int64_t j = 0; j < b; ++j)
        for (int64_t k = 0; k < c; ++k)
          gx.data[static_cast<size_t>(i * c + k)] += gy.data[static_cast<size_t>((i * b + j) * c + k)];
  });
}

// Row-wise softmax with max subtraction. Optional additive mask (same shape,
// typically 0 / -inf-like values) applied before normalization.
template <typename R>
Var<R> softmax_rows(Var<R> x, const Tensor<R>* additive_mask = nullptr) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 2, "softmax_rows: rank-2 required");
  const int64_t n = xv.dim(0), m = xv.dim(1);
  if (additive_mask != nullptr)
    require(additive_mask->shape == xv.shape, "softmax_rows: mask shape mismatch");
  Tensor<R> out = Tensor<R>::zeros({n, m});
  for (int64_t i = 0; i < n; ++i) {
    const R* row = xv.ptr() + i * m;
    const R* mrow = additive_mask ? additive_mask->ptr() + i * m : nullptr;
    R mx = -std::numeric_limits<R>::infinity();
    for (int64_t j = 0; j < m; ++j) {
      const R v = row[j] + (mrow ? mrow[j] : R(0));
      mx = std::max(mx, v);
    }
    R denom = R(0);
    R* orow = out.ptr() + i * m;
    for (int64_t j = 0; j < m; ++j) {
      const R v = row[j] + (mrow ? mrow[j] : R(0));
      orow[j] = std::exp(v - mx);
      denom += orow[j];
    }
    for (int64_t j = 0; j < m; ++j) orow[j] /= denom;
  }
  Graph<R>* g = x.g;
  int px = x.id;
  Var<R> y = g->make(std::move(out), g->needs_grad(px), nullptr);
  if (g->needs_grad(px)) {
    int self = y.id;
    g->nodes_hook(self, [g, px, self, n, m](const Tensor<R>& gy) {
      const Tensor<R>& p = g->value(self);
      Tensor<R>& gx = g->gbuf(px);
      for (int64_t i = 0; i < n; ++i) {
        const R* prow = p.ptr() + i * m;
        const R* grow = gy.ptr() + i * m;
        R dot = R(0);
        for (int64_t j = 0; j < m; ++j) dot += prow[j] * grow[j];
        R* xrow = gx.ptr() + i * m;
        for (int64_t j = 0; j < m; ++j) xrow[j] += prow[j] * (grow[j] - dot);
      }
    });
  }
  return y;
}

// Layer normalization over the last axis with affine parameters.
template <typename R>
Var<R> layernorm(Var<R> x, Var<R> gamma, Var<R> beta, R eps = R(1e-5)) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() >= 1, "layernorm: rank >= 1 required");
  const int64_t c = xv.shape.back();
  require(gamma.val().numel() == c && beta.val().numel() == c, "layernorm: affine size mismatch");
  const int64_t rows = xv.numel() / c;
  auto xhat = std::make_shared<Tensor<R>>(Tensor<R>::zeros(xv.shape));
  auto inv_std = std::make_shared<std::vector<R>>(static_cast<size_t>(rows));
  Tensor<R> out = Tensor<R>::zeros(xv.shape);
  const R* gp = gamma.val().ptr();
  const R* bp = beta.val().ptr();
  for (int64_t i = 0; i < rows; ++i) {
    const R* row = xv.ptr() + i * c;
    R mean = R(0);
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<R>(c);
    R var = R(0);
    for (int64_t j = 0; j < c; ++j) {
      const R d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<R>(c);
    const R is = R(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = is;
    R* hrow = xhat->ptr() + i * c;
    R* orow = out.ptr() + i * c;
    for (int64_t j = 0; j < c; ++j) {
      hrow[j] = (row[j] - mean) * is;
      orow[j] = gp[j] * hrow[j] + bp[j];
    }
  }
  Graph<R>* g = x.g;
  int px = x.id, pg = gamma.id, pb = beta.id;
  const bool ng = g->needs_grad(px) || g->needs_grad(pg) || g->needs_grad(pb);
  return g->make(std::move(out), ng, [g, px, pg, pb, rows, c, xhat, inv_std](const Tensor<R>& gy) {
    const R* gp2 = g->value(pg).ptr();
    for (int64_t i = 0; i < rows; ++i) {
      const R* grow = gy.ptr() + i * c;
      const R* hrow = xhat->ptr() + i * c;
      if (g->needs_grad(pg)) {
        Tensor<R>& gg = g->gbuf(pg);
        for (int64_t j = 0; j < c; ++j) gg.data[static_cast<size_t>(j)] += grow[j] * hrow[j];
      }
      if (g->needs_grad(pb)) {
        Tensor<R>& gb = g->gbuf(pb);
        for (int64_t j = 0; j < c; ++j) gb.data[static_cast<size_t>(j)] += grow[j];
      }
      if (g->needs_grad(px)) {
        Tensor<R>& gx = g->gbuf(px);
        R m1 = R(0), m2 = R(0);
        for (int64_t j = 0; j < c; ++j) {
          const R dh = grow[j] * gp2[j];
          m1 += dh;
          m2 += dh * hrow[j];
        }
        m1 /= static_cast<R>(c);
        m2 /= static_cast<R>(c);
        const R is = (*inv_std)[static_cast<size_t>(i)];
        R* xrow = gx.ptr() + i * c;
        for (int64_t j = 0; j < c; ++j) {
          const R dh = grow[j] * gp2[j];
          xrow[j] += is * (dh - m1 - hrow[j] * m2);
        }
      }
    }
  });
}

// 3x3 same-padding convolution, channels-last: x [H,W,Cin], w [9*Cin,Cout].
template <typename R>
Var<R> conv3x3(Var<R> x, Var<R> w, Var<R> b) {
  const Tensor<R>& xv = x.val();
  const Tensor<R>& wv = w.val();
  require(xv.rank() == 3, "conv3x3: input rank-3 [H,W,C] required");
  const int64_t h = xv.dim(0), wd = xv.dim(1), cin = xv.dim(2);
  require(wv.rank() == 2 && wv.dim(0) == 9 * cin, "conv3x3: weight shape mismatch");
  const int64_t cout = wv.dim(1);
  require(b.val().numel() == cout, "conv3x3: bias size mismatch");

  auto col = std::make_shared<Tensor<R>>(Tensor<R>::zeros({h * wd, 9 * cin}));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t xx = 0; xx < wd; ++xx) {
      R* dst = col->ptr() + (y * wd + xx) * 9 * cin;
      int64_t k = 0;
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dx = -1; dx <= 1; ++dx, ++k) {
          const int64_t sy = y + dy, sx = xx + dx;
          if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;  // zero padding
          std::copy_n(xv.ptr() + (sy * wd + sx) * cin, cin, dst + k * cin);
        }
      }
    }
  }
  Tensor<R> out = Tensor<R>::zeros({h, wd, cout});
  detail::as_mat(out, h * wd, cout).noalias() =
      detail::as_mat(*col, h * wd, 9 * cin) * detail::as_mat(wv, 9 * cin, cout);
  const R* bp = b.val().ptr();
  for (int64_t i = 0; i < h * wd; ++i) {
    R* row = out.ptr() + i * cout;
    for (int64_t j = 0; j < cout; ++j) row[j] += bp[j];
  }
  Graph<R>* g = x.g;
  int px = x.id, pw = w.id, pb = b.id;
  const bool ng = g->needs_grad(px) || g->needs_grad(pw) || g->needs_grad(pb);
  return g->make(std::move(out), ng, [g, px, pw, pb, h, wd, cin, cout, col](const Tensor<R>& gy) {
    if (g->needs_grad(pb)) {
      Tensor<R>& gb = g->gbuf(pb);
      for (int64_t i = 0; i < h * wd; ++i) {
        const R* row = gy.ptr() + i * cout;
        for (int64_t j = 0; j < cout; ++j) gb.data[static_cast<size_t>(j)] += row[j];
      }
    }
    if (g->needs_grad(pw)) {
      Tensor<R>& gw = g->gbuf(pw);
      detail::as_mat(gw, 9 * cin, cout).noalias() +=
          detail::as_mat(*col, h * wd, 9 * cin).transpose() * detail::as_mat(gy, h * wd, cout);
    }
    if (g->needs_grad(px)) {
      const Tensor<R>& wv2 = g->value(pw);
      Tensor<R> gcol = Tensor<R>::zeros({h * wd, 9 * cin});
      detail::as_mat(gcol, h * wd, 9 * cin).noalias() =
          detail::as_mat(gy, h * wd, cout) * detail::as_mat(wv2, 9 * cin, cout).transpose();
      Tensor<R>& gx = g->gbuf(px);
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t xx = 0; xx < wd; ++xx) {
          const R* src = gcol.ptr() + (y * wd + xx) * 9 * cin;
          int64_t k = 0;
          for (int64_t dy = -1; dy <= 1; ++dy) {
            for (int64_t dx = -1; dx <= 1; ++dx, ++k) {
              const int64_t sy = y + dy, sx = xx + dx;
              if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
              R* dst = gx.ptr() + (sy * wd + sx) * cin;
              const R* s = src + k * cin;
              for (int64_t cch = 0; cch < cin; ++cch) dst[cch] += s[cch];
            }
          }
        }
      }
    }
  });
}

// Bilinear sampling with border clamping. feat [H,W,C]; coords [N,2] as
// (row, col) in continuous cell units where integer coordinates are cell
// centers. Differentiable in both the features and the coordinates.
template <typename R>
Var<R> bilinear(Var<R> feat, Var<R> coords) {
  const Tensor<R>& fv = feat.val();
  const Tensor<R>& cv = coords.val();
  require(fv.rank() == 3, "bilinear: feat rank-3 [H,W,C] required");
  require(cv.rank() == 2 && cv.dim(1) == 2, "bilinear: coords [N,2] required");
  const int64_t h = fv.dim(0), w = fv.dim(1), c = fv.dim(2), n = cv.dim(0);
  Tensor<R> out = Tensor<R>::zeros({n, c});

  auto sample_geometry = [h, w](R r, R cc, int64_t& r0, int64_t& r1, int64_t& c0, int64_t& c1,
                                R& fr, R& fc, bool& in_r, bool& in_c) {
    in_r = r > R(0) && r < static_cast<R>(h - 1);
    in_c = cc > R(0) && cc < static_cast<R>(w - 1);
    const R rcl = std::min(std::max(r, R(0)), static_cast<R>(h - 1));
    const R ccl = std::min(std::max(cc, R(0)), static_cast<R>(w - 1));
    r0 = static_cast<int64_t>(std::floor(rcl));
    c0 = static_cast<int64_t>(std::floor(ccl));
    r0 = std::min(r0, h - 1);
    c0 = std::min(c0, w - 1);
    r1 = std::min(r0 + 1, h - 1);
    c1 = std::min(c0 + 1, w - 1);
    fr = rcl - static_cast<R>(r0);
    fc = ccl - static_cast<R>(c0);
  };

  for (int64_t i = 0; i < n; ++i) {
    int64_t r0, r1, c0, c1;
    R fr, fc;
    bool in_r, in_c;
    sample_geometry(cv.data[static_cast<size_t>(2 * i)], cv.data[static_cast<size_t>(2 * i + 1)],
                    r0, r1, c0, c1, fr, fc, in_r, in_c);
    const R* f00 = fv.ptr() + (r0 * w + c0) * c;
    const R* f01 = fv.ptr() + (r0 * w + c1) * c;
    const R* f10 = fv.ptr() + (r1 * w + c0) * c;
    const R* f11 = fv.ptr() + (r1 * w + c1) * c;
    R* orow = out.ptr() + i * c;
    for (int64_t k = 0; k < c; ++k) {
      orow[k] = (R(1) - fr) * ((R(1) - fc) * f00[k] + fc * f01[k]) +
                fr * ((R(1) - fc) * f10[k] + fc * f11[k]);
    }
  }
  Graph<R>* g = feat.g;
  int pf = feat.id, pc = coords.id;
  const bool ng = g->needs_grad(pf) || g->needs_grad(pc);
  return g->make(std::move(out), ng, [g, pf, pc, h, w, c, n, sample_geometry](const Tensor<R>& gy) {
    const Tensor<R>& fv2 = g->value(pf);
    const Tensor<R>& cv2 = g->value(pc);
    for (int64_t i = 0; i < n; ++i) {
      int64_t r0, r1, c0, c1;
      R fr, fc;
      bool in_r, in_c;
      sample_geometry(cv2.data[static_cast<size_t>(2 * i)], cv2.data[static_cast<size_t>(2 * i + 1)],
                      r0, r1, c0, c1, fr, fc, in_r, in_c);
      const R* grow = gy.ptr() + i * c;
      if (g->needs_grad(pf)) {
        Tensor<R>& gf = g->gbuf(pf);
        R* g00 = gf.ptr() + (r0 * w + c0) * c;
        R* g01 = gf.ptr() + (r0 * w + c1) * c;
        R* g10 = gf.ptr() + (r1 * w + c0) * c;
        R* g11 = gf.ptr() + (r1 * w + c1) * c;
        for (int64_t k = 0; k < c; ++k) {
          g00[k] += grow[k] * (R(1) - fr) * (R(1) - fc);
          g01[k] += grow[k] * (R(1) - fr) * fc;
          g10[k] += grow[k] * fr * (R(1) - fc);
          g11[k] += grow[k] * fr * fc;
        }
      }
      if (g->needs_grad(pc)) {
        Tensor<R>& gc = g->gbuf(pc);
        const R* f00 = fv2.ptr() + (r0 * w + c0) * c;
        const R* f01 = fv2.ptr() + (r0 * w + c1) * c;
        const R* f10 = fv2.ptr() + (r1 * w + c0) * c;
        const R* f11 = fv2.ptr() + (r1 * w + c1) * c;
        R dr = R(0), dc = R(0);
        for (int64_t k = 0; k < c; ++k) {
          dr += grow[k] * ((R(1) - fc) * (f10[k] - f00[k]) + fc * (f11[k] - f01[k]));
          dc += grow[k] * ((R(1) - fr) * (f01[k] - f00[k]) + fr * (f11[k] - f10[k]));
        }
        if (in_r) gc.data[static_cast<size_t>(2 * i)] += dr;
        if (in_c) gc.data[static_cast<size_t>(2 * i + 1)] += dc;
      }
    }
  });
}

// Non-overlapping average pooling with stride s over [H,W,C]; partial border
// windows average over the cells they cover. Output [ceil(H/s)*ceil(W/s), C].
template <typename R>
Var<R> avgpool2d(Var<R> x, int64_t s) {
  const Tensor<R>& xv = x.val();
  require(xv.rank() == 3 && s >= 1, "avgpool2d: [H,W,C] input and s >= 1 required");
  const int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  const int64_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
  Tensor<R> out = Tensor<R>::zeros({oh * ow, c});
  for (int64_t br = 0; br < oh; ++br)
    for (int64_t bc = 0; bc < ow; ++bc) {
      const int64_t r1 = std::min(h, (br + 1) * s), c1 = std::min(w, (bc + 1) * s);
      const int64_t cnt = (r1 - br * s) * (c1 - bc * s);
      R* orow = out.ptr() + (br * ow + bc) * c;
      for (int64_t r = br * s; r < r1; ++r)
        for (int64_t cc = bc * s; cc < c1; ++cc) {
          const R* px = xv.ptr() + (r * w + cc) * c;
          for (int64_t k = 0; k < c; ++k) orow[k] += px[k];
        }
      for (int64_t k = 0; k < c; ++k) orow[k] /= static_cast<R>(cnt);
    }
  Graph<R>* g = x.g;
  int px_id = x.id;
  return g->make(std::move(out), g->needs_grad(px_id), [g, px_id, h, w, c, s, oh, ow](const Tensor<R>& gy) {
    Tensor<R>& gx = g->gbuf(px_id);
    for (int64_t br = 0; br < oh; ++br)
      for (int64_t bc = 0; bc < ow; ++bc) {
        const int64_t r1 = std::min(h, (br + 1) * s), c1 = std::min(w, (bc + 1) * s);
        const R inv = R(1) / static_cast<R>((r1 - br * s) * (c1 - bc * s));
        const R* grow = gy.ptr() + (br * ow + bc) * c;
        for (int64_t r = br * s; r < r1; ++r)
          for (int64_t cc = bc * s; cc < c1; ++cc) {
            R* px = gx.ptr() + (r * w + cc) * c;
            for (int64_t k = 0; k < c; ++k) px[k] += grow[k] * inv;
          }
      }
  });
}

// Mean binary cross entropy on logits against a constant target in {0,1}.
template <typename R>
Var<R> bce_with_logits_mean(Var<R> z, const Tensor<R>& target) {
  const Tensor<R>& zv = z.val();
  require(zv.shape == target.shape, "bce_with_logits_mean: shape mismatch");
  const int64_t n = zv.numel();
  R loss = R(0);
  for (int64_t i = 0; i < n; ++i) {
    const R zz = zv.data[static_cast<size_t>(i)];
    const R y = target.data[static_cast<size_t>(i)];
    loss += std::max(zz, R(0)) - zz * y + std::log1p(std::exp(-std::abs(zz)));
  }
  loss /= static_cast<R>(n);
  Graph<R>* g = z.g;
  int pz = z.id;
  auto tgt = std::make_shared<Tensor<R>>(target);
  return g->make(Tensor<R>::scalar(loss), g->needs_grad(pz), [g, pz, n, tgt](const Tensor<R>& gy) {
    const Tensor<R>& zv2 = g->value(pz);
    Tensor<R>& gz = g->gbuf(pz);
    const R gv = gy.data[0] / static_cast<R>(n);
    for (int64_t i = 0; i < n; ++i) {
      const R zz = zv2.data[static_cast<size_t>(i)];
      const R s = zz >= R(0) ? R(1) / (R(1) + std::exp(-zz)) : std::exp(zz) / (R(1) + std::exp(zz));
      gz.data[static_cast<size_t>(i)] += gv * (s - tgt->data[static_cast<size_t>(i)]);
    }
  });
}

}  // namespace mapclip::numerics
