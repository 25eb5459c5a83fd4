#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "jamlab/tensor.hpp"

namespace jamlab::nn {

// Define-by-run reverse-mode tape. Node creation order is the topological
// order, so the backward pass is a reverse sweep over the node list.
template <typename S>
class Graph {
public:
    using Id = std::int32_t;

    struct Node {
        TensorT<S> val;
        TensorT<S> grad;
        std::vector<Id> parents;
        std::function<void(Graph&, Id)> back;
        bool needs_grad = false;
        bool grad_alloc = false;
    };

    bool strict_nan_check = false;

    Id constant(TensorT<S> t) { return push(std::move(t), {}, nullptr, false); }

    Id leaf(TensorT<S> t) { return push(std::move(t), {}, nullptr, true); }

    const TensorT<S>& val(Id id) const { return nodes[static_cast<std::size_t>(id)].val; }

    // Gradient buffer, zero-allocated on first touch.
    TensorT<S>& grad(Id id) {
        Node& n = nodes[static_cast<std::size_t>(id)];
        if (!n.grad_alloc) {
            n.grad = TensorT<S>::zeros(n.val.shape);
            n.grad_alloc = true;
        }
        return n.grad;
    }

    bool has_grad(Id id) const { return nodes[static_cast<std::size_t>(id)].grad_alloc; }
    bool needs_grad(Id id) const { return nodes[static_cast<std::size_t>(id)].needs_grad; }

    void backward(Id loss) {
        Node& top = nodes[static_cast<std::size_t>(loss)];
        if (top.val.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
        grad(loss).data[0] = S(1);
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes[static_cast<std::size_t>(id)];
            if (n.grad_alloc && n.back) n.back(*this, id);
        }
    }

    Id push(TensorT<S> val, std::vector<Id> parents,
            std::function<void(Graph&, Id)> back, bool force_grad = false) {
        bool needs = force_grad;
        for (Id p : parents) needs = needs || nodes[static_cast<std::size_t>(p)].needs_grad;
        if (strict_nan_check) {
            for (S v : val.data) {
                if (!std::isfinite(static_cast<double>(v))) {
                    throw std::runtime_error("graph: non-finite value produced");
                }
            }
        }
        Node n;
        n.val = std::move(val);
        n.parents = std::move(parents);
        n.needs_grad = needs;
        if (needs) n.back = std::move(back);
        nodes.push_back(std::move(n));
        return static_cast<Id>(nodes.size() - 1);
    }

    std::size_t size() const { return nodes.size(); }

    std::vector<Node> nodes;
};

namespace detail {

inline void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline std::int64_t outer_product(const std::vector<std::int64_t>& shape, std::size_t upto) {
    std::int64_t n = 1;
    for (std::size_t i = 0; i < upto && i < shape.size(); ++i) n *= shape[i];
    return n;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename S, typename Fwd, typename Bwd>
typename Graph<S>::Id unary_elem(Graph<S>& g, typename Graph<S>::Id x, Fwd fwd, Bwd bwd) {
    const TensorT<S>& xv = g.val(x);
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::size_t i = 0; i < xv.data.size(); ++i) out.data[i] = fwd(xv.data[i]);
    return g.push(std::move(out), {x},
                  [x, bwd](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const auto& yd = gr.val(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::size_t i = 0; i < dy.size(); ++i) {
                          dx[i] += dy[i] * bwd(xd[i], yd[i]);
                      }
                  });
}

template <typename S>
typename Graph<S>::Id relu(Graph<S>& g, typename Graph<S>::Id x) {
    return unary_elem(
        g, x, [](S v) { return v > S(0) ? v : S(0); },
        [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
typename Graph<S>::Id sigmoid(Graph<S>& g, typename Graph<S>::Id x) {
    return unary_elem(
        g, x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
        [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
typename Graph<S>::Id gelu(Graph<S>& g, typename Graph<S>::Id x) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    return unary_elem(
        g, x,
        [](S v) {
            return static_cast<S>(0.5 * static_cast<double>(v) *
                                  (1.0 + std::erf(static_cast<double>(v) * kInvSqrt2)));
        },
        [](S v, S) {
            const double vd = static_cast<double>(v);
            const double cdf = 0.5 * (1.0 + std::erf(vd * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * vd * vd);
            return static_cast<S>(cdf + vd * pdf);
        });
}

template <typename S>
typename Graph<S>::Id log_elem(Graph<S>& g, typename Graph<S>::Id x) {
    return unary_elem(
        g, x, [](S v) { return std::log(v); },
        [](S v, S) { return S(1) / v; });
}

template <typename S>
typename Graph<S>::Id add(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b) {
    const TensorT<S>&av = g.val(a), &bv = g.val(b);
    detail::require(av.shape == bv.shape, "add: shape mismatch");
    TensorT<S> out = TensorT<S>::zeros(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return g.push(std::move(out), {a, b},
                  [a, b](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(a)) {
                          auto& da = gr.grad(a).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
                      }
                  });
}

template <typename S>
typename Graph<S>::Id mul(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b) {
    const TensorT<S>&av = g.val(a), &bv = g.val(b);
    detail::require(av.shape == bv.shape, "mul: shape mismatch");
    TensorT<S> out = TensorT<S>::zeros(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return g.push(std::move(out), {a, b},
                  [a, b](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& avd = gr.val(a).data;
                      const auto& bvd = gr.val(b).data;
                      if (gr.needs_grad(a)) {
                          auto& da = gr.grad(a).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bvd[i];
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * avd[i];
                      }
                  });
}

// y = a + beta * b, same shapes.
template <typename S>
typename Graph<S>::Id add_scaled(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b,
                                 double beta) {
    const TensorT<S>&av = g.val(a), &bv = g.val(b);
    detail::require(av.shape == bv.shape, "add_scaled: shape mismatch");
    TensorT<S> out = TensorT<S>::zeros(av.shape);
    const S bs = static_cast<S>(beta);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bs * bv.data[i];
    return g.push(std::move(out), {a, b},
                  [a, b, bs](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(a)) {
                          auto& da = gr.grad(a).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += bs * dy[i];
                      }
                  });
}

template <typename S>
typename Graph<S>::Id scale_const(Graph<S>& g, typename Graph<S>::Id x, double c) {
    const S cs = static_cast<S>(c);
    return unary_elem(
        g, x, [cs](S v) { return cs * v; },
        [cs](S, S) { return cs; });
}

// y = s * x with s a learnable scalar (shape [1]).
template <typename S>
typename Graph<S>::Id scale_by_scalar(Graph<S>& g, typename Graph<S>::Id x,
                                      typename Graph<S>::Id s) {
    const TensorT<S>& xv = g.val(x);
    const TensorT<S>& sv = g.val(s);
    detail::require(sv.numel() == 1, "scale_by_scalar: scale must be a scalar");
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    const S sc = sv.data[0];
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sc * xv.data[i];
    return g.push(std::move(out), {x, s},
                  [x, s](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const S sc = gr.val(s).data[0];
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += sc * dy[i];
                      }
                      if (gr.needs_grad(s)) {
                          S acc = S(0);
                          for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * xd[i];
                          gr.grad(s).data[0] += acc;
                      }
                  });
}

// ---- shape ------------------------------------------------------------------

template <typename S>
typename Graph<S>::Id reshape(Graph<S>& g, typename Graph<S>::Id x,
                              std::vector<std::int64_t> shape) {
    const TensorT<S>& xv = g.val(x);
    detail::require(TensorT<S>::numel_of(shape) == xv.numel(), "reshape: element count mismatch");
    TensorT<S> out(std::move(shape), xv.data);
    return g.push(std::move(out), {x},
                  [x](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                  });
}

namespace detail {

// concat/slice along an axis expressed as (outer, axis, inner) blocks
template <typename S>
void axis_blocks(const TensorT<S>& t, std::size_t axis, std::int64_t& outer,
                 std::int64_t& along, std::int64_t& inner) {
    require(axis < t.rank(), "axis out of range");
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= t.shape[i];
    along = t.shape[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.shape[i];
}

}  // namespace detail

template <typename S>
typename Graph<S>::Id concat_axis(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b,
                                  std::size_t axis) {
    const TensorT<S>&av = g.val(a), &bv = g.val(b);
    detail::require(av.rank() == bv.rank(), "concat: rank mismatch");
    for (std::size_t i = 0; i < av.rank(); ++i) {
        detail::require(i == axis || av.shape[i] == bv.shape[i], "concat: shape mismatch");
    }
    std::int64_t outer, ca, inner;
    detail::axis_blocks(av, axis, outer, ca, inner);
    const std::int64_t cb = bv.shape[axis];
    std::vector<std::int64_t> shape = av.shape;
    shape[axis] = ca + cb;
    TensorT<S> out = TensorT<S>::zeros(shape);
    for (std::int64_t o = 0; o < outer; ++o) {
        S* dst = out.data.data() + o * (ca + cb) * inner;
        std::copy_n(av.data.data() + o * ca * inner, ca * inner, dst);
        std::copy_n(bv.data.data() + o * cb * inner, cb * inner, dst + ca * inner);
    }
    return g.push(std::move(out), {a, b},
                  [a, b, axis](Graph<S>& gr, typename Graph<S>::Id self) {
                      std::int64_t outer, ca, inner;
                      detail::axis_blocks(gr.val(a), axis, outer, ca, inner);
                      const std::int64_t cb = gr.val(b).shape[axis];
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(a)) {
                          auto& da = gr.grad(a).data;
                          for (std::int64_t o = 0; o < outer; ++o) {
                              const S* src = dy.data() + o * (ca + cb) * inner;
                              S* dst = da.data() + o * ca * inner;
                              for (std::int64_t i = 0; i < ca * inner; ++i) dst[i] += src[i];
                          }
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::int64_t o = 0; o < outer; ++o) {
                              const S* src = dy.data() + (o * (ca + cb) + ca) * inner;
                              S* dst = db.data() + o * cb * inner;
                              for (std::int64_t i = 0; i < cb * inner; ++i) dst[i] += src[i];
                          }
                      }
                  });
}

template <typename S>
typename Graph<S>::Id slice_axis(Graph<S>& g, typename Graph<S>::Id x, std::size_t axis,
                                 std::int64_t from, std::int64_t to) {
    const TensorT<S>& xv = g.val(x);
    std::int64_t outer, along, inner;
    detail::axis_blocks(xv, axis, outer, along, inner);
    detail::require(0 <= from && from < to && to <= along, "slice: bad range");
    std::vector<std::int64_t> shape = xv.shape;
    shape[axis] = to - from;
    TensorT<S> out = TensorT<S>::zeros(shape);
    const std::int64_t len = to - from;
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(xv.data.data() + (o * along + from) * inner, len * inner,
                    out.data.data() + o * len * inner);
    }
    return g.push(std::move(out), {x},
                  [x, axis, from, to](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      std::int64_t outer, along, inner;
                      detail::axis_blocks(gr.val(x), axis, outer, along, inner);
                      const std::int64_t len = to - from;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t o = 0; o < outer; ++o) {
                          const S* src = dy.data() + o * len * inner;
                          S* dst = dx.data() + (o * along + from) * inner;
                          for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                      }
                  });
}

template <typename S>
typename Graph<S>::Id concat_chan(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b) {
    return concat_axis(g, a, b, 1);
}

template <typename S>
typename Graph<S>::Id slice_chan(Graph<S>& g, typename Graph<S>::Id x, std::int64_t c0,
                                 std::int64_t c1) {
    return slice_axis(g, x, 1, c0, c1);
}

template <typename S>
typename Graph<S>::Id concat_last(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b) {
    return concat_axis(g, a, b, g.val(a).rank() - 1);
}

template <typename S>
typename Graph<S>::Id slice_last(Graph<S>& g, typename Graph<S>::Id x, std::int64_t from,
                                 std::int64_t to) {
    return slice_axis(g, x, g.val(x).rank() - 1, from, to);
}

// ---- reductions -------------------------------------------------------------

template <typename S>
typename Graph<S>::Id sum_all(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    S acc = S(0);
    for (S v : xv.data) acc += v;
    return g.push(TensorT<S>::scalar(acc), {x},
                  [x](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const S dy = gr.grad(self).data[0];
                      auto& dx = gr.grad(x).data;
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
                  });
}

// mean over axis 0: [B, ...] -> [...]
template <typename S>
typename Graph<S>::Id mean_axis0(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() >= 2, "mean_axis0: rank must be >= 2");
    const std::int64_t b = xv.shape[0];
    const std::int64_t rest = xv.numel() / b;
    TensorT<S> out = TensorT<S>::zeros(
        std::vector<std::int64_t>(xv.shape.begin() + 1, xv.shape.end()));
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t j = 0; j < rest; ++j) out.data[j] += xv.data[i * rest + j];
    }
    const S inv = S(1) / static_cast<S>(b);
    for (S& v : out.data) v *= inv;
    return g.push(std::move(out), {x},
                  [x, b, rest, inv = 1.0 / static_cast<double>(b)](Graph<S>& gr,
                                                                   typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      const S f = static_cast<S>(inv);
                      for (std::int64_t i = 0; i < b; ++i) {
                          for (std::int64_t j = 0; j < rest; ++j) dx[i * rest + j] += f * dy[j];
                      }
                  });
}

// max over the last axis (axis dropped); ties route the gradient to the
// first maximal element.
template <typename S>
typename Graph<S>::Id reduce_max_last(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() >= 1, "reduce_max_last: rank must be >= 1");
    const std::int64_t l = xv.shape.back();
    const std::int64_t rows = xv.numel() / l;
    std::vector<std::int64_t> shape(xv.shape.begin(), xv.shape.end() - 1);
    if (shape.empty()) shape = {1};
    TensorT<S> out = TensorT<S>::zeros(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        S best = xv.data[r * l];
        for (std::int64_t i = 1; i < l; ++i) best = std::max(best, xv.data[r * l + i]);
        out.data[r] = best;
    }
    return g.push(std::move(out), {x},
                  [x, l, rows](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t r = 0; r < rows; ++r) {
                          std::int64_t arg = 0;
                          for (std::int64_t i = 1; i < l; ++i) {
                              if (xd[r * l + i] > xd[r * l + arg]) arg = i;
                          }
                          dx[r * l + arg] += dy[r];
                      }
                  });
}

// ---- softmax and loss ---------------------------------------------------------

template <typename S>
typename Graph<S>::Id softmax_last(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    const std::int64_t l = xv.shape.back();
    const std::int64_t rows = xv.numel() / l;
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* src = xv.data.data() + r * l;
        S* dst = out.data.data() + r * l;
        S m = src[0];
        for (std::int64_t i = 1; i < l; ++i) m = std::max(m, src[i]);
        S z = S(0);
        for (std::int64_t i = 0; i < l; ++i) {
            dst[i] = std::exp(src[i] - m);
            z += dst[i];
        }
        const S inv = S(1) / z;
        for (std::int64_t i = 0; i < l; ++i) dst[i] *= inv;
    }
    return g.push(std::move(out), {x},
                  [x, l, rows](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      const auto& y = gr.val(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t r = 0; r < rows; ++r) {
                          S dot = S(0);
                          for (std::int64_t i = 0; i < l; ++i) dot += dy[r * l + i] * y[r * l + i];
                          for (std::int64_t i = 0; i < l; ++i) {
                              dx[r * l + i] += y[r * l + i] * (dy[r * l + i] - dot);
                          }
                      }
                  });
}

// softmax over the channel axis of [B, C, H, W]
template <typename S>
typename Graph<S>::Id softmax_chan(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4, "softmax_chan: expects [B,C,H,W]");
    const std::int64_t b = xv.shape[0], c = xv.shape[1], hw = xv.shape[2] * xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t p = 0; p < hw; ++p) {
            const std::int64_t base = bi * c * hw + p;
            S m = xv.data[base];
            for (std::int64_t ci = 1; ci < c; ++ci) m = std::max(m, xv.data[base + ci * hw]);
            S z = S(0);
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const S e = std::exp(xv.data[base + ci * hw] - m);
                out.data[base + ci * hw] = e;
                z += e;
            }
            const S inv = S(1) / z;
            for (std::int64_t ci = 0; ci < c; ++ci) out.data[base + ci * hw] *= inv;
        }
    }
    return g.push(std::move(out), {x},
                  [x, b, c, hw](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      const auto& y = gr.val(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t bi = 0; bi < b; ++bi) {
                          for (std::int64_t p = 0; p < hw; ++p) {
                              const std::int64_t base = bi * c * hw + p;
                              S dot = S(0);
                              for (std::int64_t ci = 0; ci < c; ++ci) {
                                  dot += dy[base + ci * hw] * y[base + ci * hw];
                              }
                              for (std::int64_t ci = 0; ci < c; ++ci) {
                                  dx[base + ci * hw] +=
                                      y[base + ci * hw] * (dy[base + ci * hw] - dot);
                              }
                          }
                      }
                  });
}

inline constexpr double kCrossEntropyEps = 1e-9;

// Batch-averaged -log(p[label] + eps) on probability rows [B, C].
template <typename S>
typename Graph<S>::Id cross_entropy_from_probs(Graph<S>& g, typename Graph<S>::Id probs,
                                               const std::vector<int>& labels) {
    const TensorT<S>& pv = g.val(probs);
    detail::require(pv.rank() == 2, "cross_entropy: expects [B,C]");
    const std::int64_t b = pv.shape[0], c = pv.shape[1];
    detail::require(static_cast<std::int64_t>(labels.size()) == b, "cross_entropy: label count");
    for (int y : labels) detail::require(y >= 0 && y < c, "cross_entropy: label out of range");
    double acc = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
        acc -= std::log(static_cast<double>(pv.data[i * c + labels[static_cast<std::size_t>(i)]]) +
                        kCrossEntropyEps);
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / static_cast<double>(b)));
    return g.push(std::move(out), {probs},
                  [probs, labels, b, c](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(probs)) return;
                      const S dy = gr.grad(self).data[0];
                      const auto& pd = gr.val(probs).data;
                      auto& dp = gr.grad(probs).data;
                      const S invb = S(1) / static_cast<S>(b);
                      for (std::int64_t i = 0; i < b; ++i) {
                          const std::int64_t j = i * c + labels[static_cast<std::size_t>(i)];
                          dp[j] -= dy * invb / (pd[j] + static_cast<S>(kCrossEntropyEps));
                      }
                  });
}

}  // namespace jamlab::nn
