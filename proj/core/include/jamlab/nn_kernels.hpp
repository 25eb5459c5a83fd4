#pragma once

#include <cstdint>

#include "jamlab/graph.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Convolution, matmul, pooling and broadcast kernels for the graph. Every
// parallel loop partitions output elements and keeps a fixed accumulation
// order per element, so results are identical for any thread count.

namespace jamlab::nn {

// ---- dense ------------------------------------------------------------------

// x [B,F] * w [F,O] + b [O] -> [B,O]
template <typename S>
typename Graph<S>::Id dense(Graph<S>& g, typename Graph<S>::Id x, typename Graph<S>::Id w,
                            typename Graph<S>::Id b) {
    const TensorT<S>&xv = g.val(x), &wv = g.val(w), &bv = g.val(b);
    detail::require(xv.rank() == 2 && wv.rank() == 2, "dense: expects [B,F] and [F,O]");
    const std::int64_t bs = xv.shape[0], f = xv.shape[1], o = wv.shape[1];
    detail::require(wv.shape[0] == f, "dense: weight rows != input features");
    detail::require(bv.numel() == o, "dense: bias size");
    TensorT<S> out = TensorT<S>::zeros({bs, o});
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < bs; ++i) {
        S* dst = out.data.data() + i * o;
        for (std::int64_t j = 0; j < o; ++j) dst[j] = bv.data[static_cast<std::size_t>(j)];
        for (std::int64_t k = 0; k < f; ++k) {
            const S a = xv.data[i * f + k];
            const S* wr = wv.data.data() + k * o;
            for (std::int64_t j = 0; j < o; ++j) dst[j] += a * wr[j];
        }
    }
    return g.push(std::move(out), {x, w, b},
                  [x, w, b, bs, f, o](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const auto& wd = gr.val(w).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t i = 0; i < bs; ++i) {
                              for (std::int64_t k = 0; k < f; ++k) {
                                  S acc = S(0);
                                  const S* dyr = dy.data() + i * o;
                                  const S* wr = wd.data() + k * o;
                                  for (std::int64_t j = 0; j < o; ++j) acc += dyr[j] * wr[j];
                                  dx[i * f + k] += acc;
                              }
                          }
                      }
                      if (gr.needs_grad(w)) {
                          auto& dw = gr.grad(w).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t k = 0; k < f; ++k) {
                              for (std::int64_t i = 0; i < bs; ++i) {
                                  const S a = xd[i * f + k];
                                  const S* dyr = dy.data() + i * o;
                                  S* dwr = dw.data() + k * o;
                                  for (std::int64_t j = 0; j < o; ++j) dwr[j] += a * dyr[j];
                              }
                          }
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::int64_t i = 0; i < bs; ++i) {
                              const S* dyr = dy.data() + i * o;
                              for (std::int64_t j = 0; j < o; ++j) db[j] += dyr[j];
                          }
                      }
                  });
}

// plain matmul [M,K] x [K,N] -> [M,N]
template <typename S>
typename Graph<S>::Id matmul(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b) {
    const TensorT<S>&av = g.val(a), &bv = g.val(b);
    detail::require(av.rank() == 2 && bv.rank() == 2 && av.shape[1] == bv.shape[0],
                    "matmul: incompatible shapes");
    const std::int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    TensorT<S> out = TensorT<S>::zeros({m, n});
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        S* dst = out.data.data() + i * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const S x = av.data[i * k + kk];
            const S* br = bv.data.data() + kk * n;
            for (std::int64_t j = 0; j < n; ++j) dst[j] += x * br[j];
        }
    }
    return g.push(std::move(out), {a, b},
                  [a, b, m, k, n](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& ad = gr.val(a).data;
                      const auto& bd = gr.val(b).data;
                      if (gr.needs_grad(a)) {
                          auto& da = gr.grad(a).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t i = 0; i < m; ++i) {
                              for (std::int64_t kk = 0; kk < k; ++kk) {
                                  S acc = S(0);
                                  for (std::int64_t j = 0; j < n; ++j) {
                                      acc += dy[i * n + j] * bd[kk * n + j];
                                  }
                                  da[i * k + kk] += acc;
                              }
                          }
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t kk = 0; kk < k; ++kk) {
                              for (std::int64_t i = 0; i < m; ++i) {
                                  const S x = ad[i * k + kk];
                                  const S* dyr = dy.data() + i * n;
                                  S* dbr = db.data() + kk * n;
                                  for (std::int64_t j = 0; j < n; ++j) dbr[j] += x * dyr[j];
                              }
                          }
                      }
                  });
}

// Batched matmul. a is [G,M,K]; b is [G/heads_share, K, N] (or [..., N, K]
// when transpose_b), shared across groups of `heads_share` consecutive
// batches of a.
template <typename S>
typename Graph<S>::Id bmm(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id b,
                          bool transpose_b = false, std::int64_t heads_share = 1) {
    const TensorT<S>&av = g.val(a), &bv = g.val(b);
    detail::require(av.rank() == 3 && bv.rank() == 3, "bmm: expects rank-3 tensors");
    const std::int64_t ga = av.shape[0], m = av.shape[1], k = av.shape[2];
    const std::int64_t gb = bv.shape[0];
    detail::require(heads_share >= 1 && ga == gb * heads_share, "bmm: batch mismatch");
    const std::int64_t n = transpose_b ? bv.shape[1] : bv.shape[2];
    const std::int64_t bk = transpose_b ? bv.shape[2] : bv.shape[1];
    detail::require(bk == k, "bmm: inner dim mismatch");
    TensorT<S> out = TensorT<S>::zeros({ga, m, n});
#pragma omp parallel for schedule(static)
    for (std::int64_t gi = 0; gi < ga; ++gi) {
        const S* ap = av.data.data() + gi * m * k;
        const S* bp = bv.data.data() + (gi / heads_share) * bk * n;
        S* op = out.data.data() + gi * m * n;
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                S acc = S(0);
                if (transpose_b) {
                    const S* br = bp + j * k;
                    for (std::int64_t kk = 0; kk < k; ++kk) acc += ap[i * k + kk] * br[kk];
                } else {
                    for (std::int64_t kk = 0; kk < k; ++kk) acc += ap[i * k + kk] * bp[kk * n + j];
                }
                op[i * n + j] = acc;
            }
        }
    }
    return g.push(
        std::move(out), {a, b},
        [a, b, transpose_b, heads_share, m, k, n](Graph<S>& gr, typename Graph<S>::Id self) {
            const auto& dy = gr.grad(self).data;
            const auto& ad = gr.val(a).data;
            const auto& bd = gr.val(b).data;
            const std::int64_t ga = gr.val(a).shape[0];
            const std::int64_t gb = gr.val(b).shape[0];
            if (gr.needs_grad(a)) {
                auto& da = gr.grad(a).data;
#pragma omp parallel for schedule(static)
                for (std::int64_t gi = 0; gi < ga; ++gi) {
                    const S* bp = bd.data() + (gi / heads_share) * k * n;
                    const S* dyp = dy.data() + gi * m * n;
                    S* dap = da.data() + gi * m * k;
                    for (std::int64_t i = 0; i < m; ++i) {
                        for (std::int64_t kk = 0; kk < k; ++kk) {
                            S acc = S(0);
                            for (std::int64_t j = 0; j < n; ++j) {
                                // b[kk,j] is b[j,kk] when transposed
                                const S bval = transpose_b ? bp[j * k + kk] : bp[kk * n + j];
                                acc += dyp[i * n + j] * bval;
                            }
                            dap[i * k + kk] += acc;
                        }
                    }
                }
            }
            if (gr.needs_grad(b)) {
                auto& db = gr.grad(b).data;
#pragma omp parallel for schedule(static)
                for (std::int64_t bg = 0; bg < gb; ++bg) {
                    S* dbp = db.data() + bg * k * n;
                    for (std::int64_t h = 0; h < heads_share; ++h) {
                        const std::int64_t gi = bg * heads_share + h;
                        const S* ap = ad.data() + gi * m * k;
                        const S* dyp = dy.data() + gi * m * n;
                        for (std::int64_t i = 0; i < m; ++i) {
                            for (std::int64_t j = 0; j < n; ++j) {
                                const S dv = dyp[i * n + j];
                                if (transpose_b) {
                                    for (std::int64_t kk = 0; kk < k; ++kk) {
                                        dbp[j * k + kk] += dv * ap[i * k + kk];
                                    }
                                } else {
                                    for (std::int64_t kk = 0; kk < k; ++kk) {
                                        dbp[kk * n + j] += dv * ap[i * k + kk];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

// ---- convolutions -------------------------------------------------------------

// x [B,Ci,H,W], w [Co,Ci,kh,kw], b [Co]
template <typename S>
typename Graph<S>::Id conv2d(Graph<S>& g, typename Graph<S>::Id x, typename Graph<S>::Id w,
                             typename Graph<S>::Id b, std::int64_t stride, std::int64_t pad) {
    const TensorT<S>&xv = g.val(x), &wv = g.val(w), &bv = g.val(b);
    detail::require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expects [B,Ci,H,W],[Co,Ci,kh,kw]");
    detail::require(xv.shape[1] == wv.shape[1], "conv2d: channel mismatch");
    detail::require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    const std::int64_t bs = xv.shape[0], ci = xv.shape[1], h = xv.shape[2], wd = xv.shape[3];
    const std::int64_t co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
    detail::require(bv.numel() == co, "conv2d: bias size");
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
    detail::require(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");
    TensorT<S> out = TensorT<S>::zeros({bs, co, oh, ow});
#pragma omp parallel for schedule(static) collapse(2)
    for (std::int64_t bi = 0; bi < bs; ++bi) {
        for (std::int64_t c = 0; c < co; ++c) {
            S* dst = out.data.data() + ((bi * co + c) * oh) * ow;
            const S* wb = wv.data.data() + c * ci * kh * kw;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    S acc = bv.data[static_cast<std::size_t>(c)];
                    for (std::int64_t ic = 0; ic < ci; ++ic) {
                        const S* xp = xv.data.data() + ((bi * ci + ic) * h) * wd;
                        const S* wp = wb + ic * kh * kw;
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            const std::int64_t iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= wd) continue;
                                acc += xp[iy * wd + ix] * wp[ky * kw + kx];
                            }
                        }
                    }
                    dst[oy * ow + ox] = acc;
                }
            }
        }
    }
    return g.push(std::move(out), {x, w, b},
                  [x, w, b, stride, pad](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& xv = gr.val(x);
                      const auto& wv = gr.val(w);
                      const auto& yv = gr.val(self);
                      const std::int64_t bs = xv.shape[0], ci = xv.shape[1], h = xv.shape[2],
                                         wd = xv.shape[3];
                      const std::int64_t co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
                      const std::int64_t oh = yv.shape[2], ow = yv.shape[3];
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t bi = 0; bi < bs; ++bi) {
                              for (std::int64_t c = 0; c < co; ++c) {
                                  const S* dyp = dy.data() + ((bi * co + c) * oh) * ow;
                                  const S* wb = wv.data.data() + c * ci * kh * kw;
                                  for (std::int64_t oy = 0; oy < oh; ++oy) {
                                      for (std::int64_t ox = 0; ox < ow; ++ox) {
                                          const S dv = dyp[oy * ow + ox];
                                          if (dv == S(0)) continue;
                                          for (std::int64_t ic = 0; ic < ci; ++ic) {
                                              S* dxp = dx.data() + ((bi * ci + ic) * h) * wd;
                                              const S* wp = wb + ic * kh * kw;
                                              for (std::int64_t ky = 0; ky < kh; ++ky) {
                                                  const std::int64_t iy = oy * stride - pad + ky;
                                                  if (iy < 0 || iy >= h) continue;
                                                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                                                      const std::int64_t ix =
                                                          ox * stride - pad + kx;
                                                      if (ix < 0 || ix >= wd) continue;
                                                      dxp[iy * wd + ix] += dv * wp[ky * kw + kx];
                                                  }
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(w)) {
                          auto& dw = gr.grad(w).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t c = 0; c < co; ++c) {
                              S* dwb = dw.data() + c * ci * kh * kw;
                              for (std::int64_t bi = 0; bi < bs; ++bi) {
                                  const S* dyp = dy.data() + ((bi * co + c) * oh) * ow;
                                  for (std::int64_t oy = 0; oy < oh; ++oy) {
                                      for (std::int64_t ox = 0; ox < ow; ++ox) {
                                          const S dv = dyp[oy * ow + ox];
                                          if (dv == S(0)) continue;
                                          for (std::int64_t ic = 0; ic < ci; ++ic) {
                                              const S* xp =
                                                  xv.data.data() + ((bi * ci + ic) * h) * wd;
                                              S* dwp = dwb + ic * kh * kw;
                                              for (std::int64_t ky = 0; ky < kh; ++ky) {
                                                  const std::int64_t iy = oy * stride - pad + ky;
                                                  if (iy < 0 || iy >= h) continue;
                                                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                                                      const std::int64_t ix =
                                                          ox * stride - pad + kx;
                                                      if (ix < 0 || ix >= wd) continue;
                                                      dwp[ky * kw + kx] += dv * xp[iy * wd + ix];
                                                  }
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::int64_t bi = 0; bi < bs; ++bi) {
                              for (std::int64_t c = 0; c < co; ++c) {
                                  const S* dyp = dy.data() + ((bi * co + c) * oh) * ow;
                                  S acc = S(0);
                                  for (std::int64_t i = 0; i < oh * ow; ++i) acc += dyp[i];
                                  db[c] += acc;
                              }
                          }
                      }
                  });
}

// depthwise conv: x [B,C,H,W], w [C,kh,kw], b [C]
template <typename S>
typename Graph<S>::Id dwconv2d(Graph<S>& g, typename Graph<S>::Id x, typename Graph<S>::Id w,
                               typename Graph<S>::Id b, std::int64_t stride, std::int64_t pad) {
    const TensorT<S>&xv = g.val(x), &wv = g.val(w), &bv = g.val(b);
    detail::require(xv.rank() == 4 && wv.rank() == 3, "dwconv2d: expects [B,C,H,W],[C,kh,kw]");
    detail::require(xv.shape[1] == wv.shape[0], "dwconv2d: channel mismatch");
    const std::int64_t bs = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3];
    const std::int64_t kh = wv.shape[1], kw = wv.shape[2];
    detail::require(bv.numel() == c, "dwconv2d: bias size");
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
    detail::require(oh >= 1 && ow >= 1, "dwconv2d: kernel larger than padded input");
    TensorT<S> out = TensorT<S>::zeros({bs, c, oh, ow});
#pragma omp parallel for schedule(static) collapse(2)
    for (std::int64_t bi = 0; bi < bs; ++bi) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const S* xp = xv.data.data() + ((bi * c + ci) * h) * wd;
            const S* wp = wv.data.data() + ci * kh * kw;
            S* dst = out.data.data() + ((bi * c + ci) * oh) * ow;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    S acc = bv.data[static_cast<std::size_t>(ci)];
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xp[iy * wd + ix] * wp[ky * kw + kx];
                        }
                    }
                    dst[oy * ow + ox] = acc;
                }
            }
        }
    }
    return g.push(std::move(out), {x, w, b},
                  [x, w, b, stride, pad](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& xv = gr.val(x);
                      const auto& wv = gr.val(w);
                      const auto& yv = gr.val(self);
                      const std::int64_t bs = xv.shape[0], c = xv.shape[1], h = xv.shape[2],
                                         wd = xv.shape[3];
                      const std::int64_t kh = wv.shape[1], kw = wv.shape[2];
                      const std::int64_t oh = yv.shape[2], ow = yv.shape[3];
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
#pragma omp parallel for schedule(static) collapse(2)
                          for (std::int64_t bi = 0; bi < bs; ++bi) {
                              for (std::int64_t ci = 0; ci < c; ++ci) {
                                  const S* dyp = dy.data() + ((bi * c + ci) * oh) * ow;
                                  const S* wp = wv.data.data() + ci * kh * kw;
                                  S* dxp = dx.data() + ((bi * c + ci) * h) * wd;
                                  for (std::int64_t oy = 0; oy < oh; ++oy) {
                                      for (std::int64_t ox = 0; ox < ow; ++ox) {
                                          const S dv = dyp[oy * ow + ox];
                                          if (dv == S(0)) continue;
                                          for (std::int64_t ky = 0; ky < kh; ++ky) {
                                              const std::int64_t iy = oy * stride - pad + ky;
                                              if (iy < 0 || iy >= h) continue;
                                              for (std::int64_t kx = 0; kx < kw; ++kx) {
                                                  const std::int64_t ix = ox * stride - pad + kx;
                                                  if (ix < 0 || ix >= wd) continue;
                                                  dxp[iy * wd + ix] += dv * wp[ky * kw + kx];
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(w)) {
                          auto& dw = gr.grad(w).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t ci = 0; ci < c; ++ci) {
                              S* dwp = dw.data() + ci * kh * kw;
                              for (std::int64_t bi = 0; bi < bs; ++bi) {
                                  const S* dyp = dy.data() + ((bi * c + ci) * oh) * ow;
                                  const S* xp = xv.data.data() + ((bi * c + ci) * h) * wd;
                                  for (std::int64_t oy = 0; oy < oh; ++oy) {
                                      for (std::int64_t ox = 0; ox < ow; ++ox) {
                                          const S dv = dyp[oy * ow + ox];
                                          if (dv == S(0)) continue;
                                          for (std::int64_t ky = 0; ky < kh; ++ky) {
                                              const std::int64_t iy = oy * stride - pad + ky;
                                              if (iy < 0 || iy >= h) continue;
                                              for (std::int64_t kx = 0; kx < kw; ++kx) {
                                                  const std::int64_t ix = ox * stride - pad + kx;
                                                  if (ix < 0 || ix >= wd) continue;
                                                  dwp[ky * kw + kx] += dv * xp[iy * wd + ix];
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::int64_t bi = 0; bi < bs; ++bi) {
                              for (std::int64_t ci = 0; ci < c; ++ci) {
                                  const S* dyp = dy.data() + ((bi * c + ci) * oh) * ow;
                                  S acc = S(0);
                                  for (std::int64_t i = 0; i < oh * ow; ++i) acc += dyp[i];
                                  db[ci] += acc;
                              }
                          }
                      }
                  });
}

// x [B,Ci,L], w [Co,Ci,k], b [Co]
template <typename S>
typename Graph<S>::Id conv1d(Graph<S>& g, typename Graph<S>::Id x, typename Graph<S>::Id w,
                             typename Graph<S>::Id b, std::int64_t stride, std::int64_t pad) {
    const TensorT<S>&xv = g.val(x), &wv = g.val(w), &bv = g.val(b);
    detail::require(xv.rank() == 3 && wv.rank() == 3, "conv1d: expects [B,Ci,L],[Co,Ci,k]");
    detail::require(xv.shape[1] == wv.shape[1], "conv1d: channel mismatch");
    const std::int64_t bs = xv.shape[0], ci = xv.shape[1], l = xv.shape[2];
    const std::int64_t co = wv.shape[0], k = wv.shape[2];
    detail::require(bv.numel() == co, "conv1d: bias size");
    const std::int64_t ol = (l + 2 * pad - k) / stride + 1;
    detail::require(ol >= 1, "conv1d: kernel larger than padded input");
    TensorT<S> out = TensorT<S>::zeros({bs, co, ol});
#pragma omp parallel for schedule(static)
    for (std::int64_t bi = 0; bi < bs; ++bi) {
        for (std::int64_t c = 0; c < co; ++c) {
            S* dst = out.data.data() + (bi * co + c) * ol;
            const S* wb = wv.data.data() + c * ci * k;
            for (std::int64_t op = 0; op < ol; ++op) {
                S acc = bv.data[static_cast<std::size_t>(c)];
                for (std::int64_t ic = 0; ic < ci; ++ic) {
                    const S* xp = xv.data.data() + (bi * ci + ic) * l;
                    const S* wp = wb + ic * k;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const std::int64_t ip = op * stride - pad + kk;
                        if (ip < 0 || ip >= l) continue;
                        acc += xp[ip] * wp[kk];
                    }
                }
                dst[op] = acc;
            }
        }
    }
    return g.push(std::move(out), {x, w, b},
                  [x, w, b, stride, pad](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& xv = gr.val(x);
                      const auto& wv = gr.val(w);
                      const auto& yv = gr.val(self);
                      const std::int64_t bs = xv.shape[0], ci = xv.shape[1], l = xv.shape[2];
                      const std::int64_t co = wv.shape[0], k = wv.shape[2];
                      const std::int64_t ol = yv.shape[2];
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t bi = 0; bi < bs; ++bi) {
                              for (std::int64_t c = 0; c < co; ++c) {
                                  const S* dyp = dy.data() + (bi * co + c) * ol;
                                  const S* wb = wv.data.data() + c * ci * k;
                                  for (std::int64_t op = 0; op < ol; ++op) {
                                      const S dv = dyp[op];
                                      if (dv == S(0)) continue;
                                      for (std::int64_t ic = 0; ic < ci; ++ic) {
                                          S* dxp = dx.data() + (bi * ci + ic) * l;
                                          const S* wp = wb + ic * k;
                                          for (std::int64_t kk = 0; kk < k; ++kk) {
                                              const std::int64_t ip = op * stride - pad + kk;
                                              if (ip < 0 || ip >= l) continue;
                                              dxp[ip] += dv * wp[kk];
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(w)) {
                          auto& dw = gr.grad(w).data;
#pragma omp parallel for schedule(static)
                          for (std::int64_t c = 0; c < co; ++c) {
                              S* dwb = dw.data() + c * ci * k;
                              for (std::int64_t bi = 0; bi < bs; ++bi) {
                                  const S* dyp = dy.data() + (bi * co + c) * ol;
                                  for (std::int64_t op = 0; op < ol; ++op) {
                                      const S dv = dyp[op];
                                      if (dv == S(0)) continue;
                                      for (std::int64_t ic = 0; ic < ci; ++ic) {
                                          const S* xp = xv.data.data() + (bi * ci + ic) * l;
                                          S* dwp = dwb + ic * k;
                                          for (std::int64_t kk = 0; kk < k; ++kk) {
                                              const std::int64_t ip = op * stride - pad + kk;
                                              if (ip < 0 || ip >= l) continue;
                                              dwp[kk] += dv * xp[ip];
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(b)) {
                          auto& db = gr.grad(b).data;
                          for (std::int64_t bi = 0; bi < bs; ++bi) {
                              for (std::int64_t c = 0; c < co; ++c) {
                                  const S* dyp = dy.data() + (bi * co + c) * ol;
                                  S acc = S(0);
                                  for (std::int64_t i = 0; i < ol; ++i) acc += dyp[i];
                                  db[c] += acc;
                              }
                          }
                      }
                  });
}

// ---- pooling ----------------------------------------------------------------

// [B,C,H,W] -> [B,C], mean over the spatial extent.
template <typename S>
typename Graph<S>::Id global_avg_pool2d(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4, "global_avg_pool2d: expects [B,C,H,W]");
    const std::int64_t b = xv.shape[0], c = xv.shape[1], hw = xv.shape[2] * xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros({b, c});
    for (std::int64_t i = 0; i < b * c; ++i) {
        S acc = S(0);
        const S* src = xv.data.data() + i * hw;
        for (std::int64_t j = 0; j < hw; ++j) acc += src[j];
        out.data[i] = acc / static_cast<S>(hw);
    }
    return g.push(std::move(out), {x},
                  [x, b, c, hw](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      const S f = S(1) / static_cast<S>(hw);
                      for (std::int64_t i = 0; i < b * c; ++i) {
                          const S dv = dy[i] * f;
                          S* dst = dx.data() + i * hw;
                          for (std::int64_t j = 0; j < hw; ++j) dst[j] += dv;
                      }
                  });
}

// mean over the width axis: [B,C,H,W] -> [B,C,H]
template <typename S>
typename Graph<S>::Id avg_pool_w(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4, "avg_pool_w: expects [B,C,H,W]");
    const std::int64_t bc = xv.shape[0] * xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros({xv.shape[0], xv.shape[1], h});
    for (std::int64_t i = 0; i < bc * h; ++i) {
        S acc = S(0);
        const S* src = xv.data.data() + i * w;
        for (std::int64_t j = 0; j < w; ++j) acc += src[j];
        out.data[i] = acc / static_cast<S>(w);
    }
    return g.push(std::move(out), {x},
                  [x, bc, h, w](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      const S f = S(1) / static_cast<S>(w);
                      for (std::int64_t i = 0; i < bc * h; ++i) {
                          const S dv = dy[i] * f;
                          S* dst = dx.data() + i * w;
                          for (std::int64_t j = 0; j < w; ++j) dst[j] += dv;
                      }
                  });
}

// mean over the height axis: [B,C,H,W] -> [B,C,W]
template <typename S>
typename Graph<S>::Id avg_pool_h(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4, "avg_pool_h: expects [B,C,H,W]");
    const std::int64_t bc = xv.shape[0] * xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros({xv.shape[0], xv.shape[1], w});
    for (std::int64_t i = 0; i < bc; ++i) {
        const S* src = xv.data.data() + i * h * w;
        S* dst = out.data.data() + i * w;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t xw = 0; xw < w; ++xw) dst[xw] += src[y * w + xw];
        }
        for (std::int64_t xw = 0; xw < w; ++xw) dst[xw] /= static_cast<S>(h);
    }
    return g.push(std::move(out), {x},
                  [x, bc, h, w](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      const S f = S(1) / static_cast<S>(h);
                      for (std::int64_t i = 0; i < bc; ++i) {
                          const S* dyp = dy.data() + i * w;
                          S* dst = dx.data() + i * h * w;
                          for (std::int64_t y = 0; y < h; ++y) {
                              for (std::int64_t xw = 0; xw < w; ++xw) {
                                  dst[y * w + xw] += dyp[xw] * f;
                              }
                          }
                      }
                  });
}

// non-overlapping window mean pool, stride = win; trailing remainder dropped
template <typename S>
typename Graph<S>::Id avg_pool2d(Graph<S>& g, typename Graph<S>::Id x, std::int64_t win) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4 && win >= 1, "avg_pool2d: expects [B,C,H,W]");
    const std::int64_t bc = xv.shape[0] * xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    const std::int64_t oh = h / win, ow = w / win;
    detail::require(oh >= 1 && ow >= 1, "avg_pool2d: window larger than map");
    TensorT<S> out = TensorT<S>::zeros({xv.shape[0], xv.shape[1], oh, ow});
    const S f = S(1) / static_cast<S>(win * win);
    for (std::int64_t i = 0; i < bc; ++i) {
        const S* src = xv.data.data() + i * h * w;
        S* dst = out.data.data() + i * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                S acc = S(0);
                for (std::int64_t ky = 0; ky < win; ++ky) {
                    for (std::int64_t kx = 0; kx < win; ++kx) {
                        acc += src[(oy * win + ky) * w + ox * win + kx];
                    }
                }
                dst[oy * ow + ox] = acc * f;
            }
        }
    }
    return g.push(std::move(out), {x},
                  [x, bc, h, w, win](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& yv = gr.val(self);
                      const std::int64_t oh = yv.shape[2], ow = yv.shape[3];
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      const S f = S(1) / static_cast<S>(win * win);
                      for (std::int64_t i = 0; i < bc; ++i) {
                          const S* dyp = dy.data() + i * oh * ow;
                          S* dst = dx.data() + i * h * w;
                          for (std::int64_t oy = 0; oy < oh; ++oy) {
                              for (std::int64_t ox = 0; ox < ow; ++ox) {
                                  const S dv = dyp[oy * ow + ox] * f;
                                  for (std::int64_t ky = 0; ky < win; ++ky) {
                                      for (std::int64_t kx = 0; kx < win; ++kx) {
                                          dst[(oy * win + ky) * w + ox * win + kx] += dv;
                                      }
                                  }
                              }
                          }
                      }
                  });
}

// [B,C,L] -> [B,C,L/win]
template <typename S>
typename Graph<S>::Id avg_pool1d(Graph<S>& g, typename Graph<S>::Id x, std::int64_t win) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 3 && win >= 1, "avg_pool1d: expects [B,C,L]");
    const std::int64_t bc = xv.shape[0] * xv.shape[1], l = xv.shape[2];
    const std::int64_t ol = l / win;
    detail::require(ol >= 1, "avg_pool1d: window larger than length");
    TensorT<S> out = TensorT<S>::zeros({xv.shape[0], xv.shape[1], ol});
    const S f = S(1) / static_cast<S>(win);
    for (std::int64_t i = 0; i < bc; ++i) {
        const S* src = xv.data.data() + i * l;
        S* dst = out.data.data() + i * ol;
        for (std::int64_t o = 0; o < ol; ++o) {
            S acc = S(0);
            for (std::int64_t k = 0; k < win; ++k) acc += src[o * win + k];
            dst[o] = acc * f;
        }
    }
    return g.push(std::move(out), {x},
                  [x, bc, l, win](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const std::int64_t ol = gr.val(self).shape[2];
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      const S f = S(1) / static_cast<S>(win);
                      for (std::int64_t i = 0; i < bc; ++i) {
                          const S* dyp = dy.data() + i * ol;
                          S* dst = dx.data() + i * l;
                          for (std::int64_t o = 0; o < ol; ++o) {
                              const S dv = dyp[o] * f;
                              for (std::int64_t k = 0; k < win; ++k) dst[o * win + k] += dv;
                          }
                      }
                  });
}

// ---- broadcast scaling ----------------------------------------------------

// y[b,c,...] = x[b,c,...] * gate[b,c]
template <typename S>
typename Graph<S>::Id scale_chan(Graph<S>& g, typename Graph<S>::Id x, typename Graph<S>::Id gate) {
    const TensorT<S>&xv = g.val(x), &gv = g.val(gate);
    detail::require(xv.rank() >= 2 && gv.rank() == 2, "scale_chan: expects x[B,C,...], g[B,C]");
    detail::require(xv.shape[0] == gv.shape[0] && xv.shape[1] == gv.shape[1],
                    "scale_chan: shape mismatch");
    const std::int64_t bc = xv.shape[0] * xv.shape[1];
    const std::int64_t inner = xv.numel() / bc;
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t i = 0; i < bc; ++i) {
        const S s = gv.data[i];
        const S* src = xv.data.data() + i * inner;
        S* dst = out.data.data() + i * inner;
        for (std::int64_t j = 0; j < inner; ++j) dst[j] = src[j] * s;
    }
    return g.push(std::move(out), {x, gate},
                  [x, gate, bc, inner](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const auto& gd = gr.val(gate).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
                          for (std::int64_t i = 0; i < bc; ++i) {
                              const S s = gd[i];
                              for (std::int64_t j = 0; j < inner; ++j) {
                                  dx[i * inner + j] += dy[i * inner + j] * s;
                              }
                          }
                      }
                      if (gr.needs_grad(gate)) {
                          auto& dg = gr.grad(gate).data;
                          for (std::int64_t i = 0; i < bc; ++i) {
                              S acc = S(0);
                              for (std::int64_t j = 0; j < inner; ++j) {
                                  acc += dy[i * inner + j] * xd[i * inner + j];
                              }
                              dg[i] += acc;
                          }
                      }
                  });
}

// y[b,c,h,w] = x[b,c,h,w] * gate[b,c,h]
template <typename S>
typename Graph<S>::Id scale_rows_hw(Graph<S>& g, typename Graph<S>::Id x,
                                    typename Graph<S>::Id gate) {
    const TensorT<S>&xv = g.val(x), &gv = g.val(gate);
    detail::require(xv.rank() == 4 && gv.rank() == 3, "scale_rows_hw: expects [B,C,H,W],[B,C,H]");
    detail::require(xv.shape[0] == gv.shape[0] && xv.shape[1] == gv.shape[1] &&
                        xv.shape[2] == gv.shape[2],
                    "scale_rows_hw: shape mismatch");
    const std::int64_t bch = xv.shape[0] * xv.shape[1] * xv.shape[2], w = xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t i = 0; i < bch; ++i) {
        const S s = gv.data[i];
        for (std::int64_t j = 0; j < w; ++j) out.data[i * w + j] = xv.data[i * w + j] * s;
    }
    return g.push(std::move(out), {x, gate},
                  [x, gate, bch, w](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const auto& gd = gr.val(gate).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
                          for (std::int64_t i = 0; i < bch; ++i) {
                              const S s = gd[i];
                              for (std::int64_t j = 0; j < w; ++j) {
                                  dx[i * w + j] += dy[i * w + j] * s;
                              }
                          }
                      }
                      if (gr.needs_grad(gate)) {
                          auto& dg = gr.grad(gate).data;
                          for (std::int64_t i = 0; i < bch; ++i) {
                              S acc = S(0);
                              for (std::int64_t j = 0; j < w; ++j) {
                                  acc += dy[i * w + j] * xd[i * w + j];
                              }
                              dg[i] += acc;
                          }
                      }
                  });
}

// y[b,c,h,w] = x[b,c,h,w] * gate[b,c,w]
template <typename S>
typename Graph<S>::Id scale_cols_hw(Graph<S>& g, typename Graph<S>::Id x,
                                    typename Graph<S>::Id gate) {
    const TensorT<S>&xv = g.val(x), &gv = g.val(gate);
    detail::require(xv.rank() == 4 && gv.rank() == 3, "scale_cols_hw: expects [B,C,H,W],[B,C,W]");
    detail::require(xv.shape[0] == gv.shape[0] && xv.shape[1] == gv.shape[1] &&
                        xv.shape[3] == gv.shape[2],
                    "scale_cols_hw: shape mismatch");
    const std::int64_t bc = xv.shape[0] * xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t i = 0; i < bc; ++i) {
        const S* gp = gv.data.data() + i * w;
        for (std::int64_t y = 0; y < h; ++y) {
            const std::int64_t base = (i * h + y) * w;
            for (std::int64_t j = 0; j < w; ++j) out.data[base + j] = xv.data[base + j] * gp[j];
        }
    }
    return g.push(std::move(out), {x, gate},
                  [x, gate, bc, h, w](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const auto& gd = gr.val(gate).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
                          for (std::int64_t i = 0; i < bc; ++i) {
                              const S* gp = gd.data() + i * w;
                              for (std::int64_t y = 0; y < h; ++y) {
                                  const std::int64_t base = (i * h + y) * w;
                                  for (std::int64_t j = 0; j < w; ++j) {
                                      dx[base + j] += dy[base + j] * gp[j];
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(gate)) {
                          auto& dg = gr.grad(gate).data;
                          for (std::int64_t i = 0; i < bc; ++i) {
                              S* dgp = dg.data() + i * w;
                              for (std::int64_t y = 0; y < h; ++y) {
                                  const std::int64_t base = (i * h + y) * w;
                                  for (std::int64_t j = 0; j < w; ++j) {
                                      dgp[j] += dy[base + j] * xd[base + j];
                                  }
                              }
                          }
                      }
                  });
}

// y[b,c] = x[b,c] * s[b] with s of shape [B] or [B,1]
template <typename S>
typename Graph<S>::Id scale_rows(Graph<S>& g, typename Graph<S>::Id x, typename Graph<S>::Id s) {
    const TensorT<S>&xv = g.val(x), &sv = g.val(s);
    detail::require(xv.rank() == 2, "scale_rows: expects [B,C]");
    detail::require(sv.numel() == xv.shape[0], "scale_rows: scale length != batch");
    const std::int64_t b = xv.shape[0], c = xv.shape[1];
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t i = 0; i < b; ++i) {
        const S sc = sv.data[i];
        for (std::int64_t j = 0; j < c; ++j) out.data[i * c + j] = xv.data[i * c + j] * sc;
    }
    return g.push(std::move(out), {x, s},
                  [x, s, b, c](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& xd = gr.val(x).data;
                      const auto& sd = gr.val(s).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
                          for (std::int64_t i = 0; i < b; ++i) {
                              for (std::int64_t j = 0; j < c; ++j) {
                                  dx[i * c + j] += dy[i * c + j] * sd[i];
                              }
                          }
                      }
                      if (gr.needs_grad(s)) {
                          auto& ds = gr.grad(s).data;
                          for (std::int64_t i = 0; i < b; ++i) {
                              S acc = S(0);
                              for (std::int64_t j = 0; j < c; ++j) {
                                  acc += dy[i * c + j] * xd[i * c + j];
                              }
                              ds[i] += acc;
                          }
                      }
                  });
}

// y[b,c,...] = x[b,c,...] + bias[c]
template <typename S>
typename Graph<S>::Id add_bias_chan(Graph<S>& g, typename Graph<S>::Id x,
                                    typename Graph<S>::Id bias) {
    const TensorT<S>&xv = g.val(x), &bv = g.val(bias);
    detail::require(xv.rank() >= 2, "add_bias_chan: rank >= 2");
    detail::require(bv.numel() == xv.shape[1], "add_bias_chan: bias length != channels");
    const std::int64_t b = xv.shape[0], c = xv.shape[1];
    const std::int64_t inner = xv.numel() / (b * c);
    TensorT<S> out = TensorT<S>::zeros(xv.shape);
    for (std::int64_t i = 0; i < b * c; ++i) {
        const S bb = bv.data[i % c];
        const S* src = xv.data.data() + i * inner;
        S* dst = out.data.data() + i * inner;
        for (std::int64_t j = 0; j < inner; ++j) dst[j] = src[j] + bb;
    }
    return g.push(std::move(out), {x, bias},
                  [x, bias, b, c, inner](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      if (gr.needs_grad(x)) {
                          auto& dx = gr.grad(x).data;
                          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                      }
                      if (gr.needs_grad(bias)) {
                          auto& db = gr.grad(bias).data;
                          for (std::int64_t i = 0; i < b * c; ++i) {
                              S acc = S(0);
                              const S* src = dy.data() + i * inner;
                              for (std::int64_t j = 0; j < inner; ++j) acc += src[j];
                              db[i % c] += acc;
                          }
                      }
                  });
}

// ---- token layout ------------------------------------------------------------

// [B, heads*dh, H, W] -> [B*heads, H*W, dh]
template <typename S>
typename Graph<S>::Id chw_to_tokens(Graph<S>& g, typename Graph<S>::Id x, std::int64_t heads) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4, "chw_to_tokens: expects [B,C,H,W]");
    const std::int64_t b = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    detail::require(heads >= 1 && c % heads == 0, "chw_to_tokens: heads must divide channels");
    const std::int64_t dh = c / heads, n = h * w;
    TensorT<S> out = TensorT<S>::zeros({b * heads, n, dh});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t g2 = 0; g2 < heads; ++g2) {
            for (std::int64_t d = 0; d < dh; ++d) {
                const S* src = xv.data.data() + ((bi * c + g2 * dh + d) * n);
                S* dst = out.data.data() + ((bi * heads + g2) * n) * dh + d;
                for (std::int64_t t = 0; t < n; ++t) dst[t * dh] = src[t];
            }
        }
    }
    return g.push(std::move(out), {x},
                  [x, heads, b, c, n, dh](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t bi = 0; bi < b; ++bi) {
                          for (std::int64_t g2 = 0; g2 < heads; ++g2) {
                              for (std::int64_t d = 0; d < dh; ++d) {
                                  const S* src =
                                      dy.data() + ((bi * heads + g2) * n) * dh + d;
                                  S* dst = dx.data() + ((bi * c + g2 * dh + d) * n);
                                  for (std::int64_t t = 0; t < n; ++t) dst[t] += src[t * dh];
                              }
                          }
                      }
                  });
}

// [B*heads, H*W, dh] -> [B, heads*dh, H, W]
template <typename S>
typename Graph<S>::Id tokens_to_chw(Graph<S>& g, typename Graph<S>::Id x, std::int64_t heads,
                                    std::int64_t h, std::int64_t w) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 3, "tokens_to_chw: expects [G,N,dh]");
    const std::int64_t gb = xv.shape[0], n = xv.shape[1], dh = xv.shape[2];
    detail::require(gb % heads == 0 && n == h * w, "tokens_to_chw: shape mismatch");
    const std::int64_t b = gb / heads, c = heads * dh;
    TensorT<S> out = TensorT<S>::zeros({b, c, h, w});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t g2 = 0; g2 < heads; ++g2) {
            for (std::int64_t d = 0; d < dh; ++d) {
                const S* src = xv.data.data() + ((bi * heads + g2) * n) * dh + d;
                S* dst = out.data.data() + ((bi * c + g2 * dh + d) * n);
                for (std::int64_t t = 0; t < n; ++t) dst[t] = src[t * dh];
            }
        }
    }
    return g.push(std::move(out), {x},
                  [x, heads, h, w](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& yv = gr.val(self);
                      const std::int64_t b = yv.shape[0], c = yv.shape[1], n = h * w;
                      const std::int64_t dh = c / heads;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t bi = 0; bi < b; ++bi) {
                          for (std::int64_t g2 = 0; g2 < heads; ++g2) {
                              for (std::int64_t d = 0; d < dh; ++d) {
                                  const S* src = dy.data() + ((bi * c + g2 * dh + d) * n);
                                  S* dst = dx.data() + ((bi * heads + g2) * n) * dh + d;
                                  for (std::int64_t t = 0; t < n; ++t) dst[t * dh] += src[t];
                              }
                          }
                      }
                  });
}

// ---- local-window attention support -------------------------------------------

// Gathers the 3x3 clamped neighborhood of every pixel:
// y[b, g*C + c, i, j] = x[b, c, clamp(i+di_g), clamp(j+dj_g)], g = 0..8.
template <typename S>
typename Graph<S>::Id unfold3x3(Graph<S>& g, typename Graph<S>::Id x) {
    const TensorT<S>& xv = g.val(x);
    detail::require(xv.rank() == 4, "unfold3x3: expects [B,C,H,W]");
    const std::int64_t b = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    TensorT<S> out = TensorT<S>::zeros({b, 9 * c, h, w});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t g2 = 0; g2 < 9; ++g2) {
            const std::int64_t di = g2 / 3 - 1, dj = g2 % 3 - 1;
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const S* src = xv.data.data() + ((bi * c + ci) * h) * w;
                S* dst = out.data.data() + ((bi * 9 * c + g2 * c + ci) * h) * w;
                for (std::int64_t i = 0; i < h; ++i) {
                    const std::int64_t si = std::clamp(i + di, std::int64_t(0), h - 1);
                    for (std::int64_t j = 0; j < w; ++j) {
                        const std::int64_t sj = std::clamp(j + dj, std::int64_t(0), w - 1);
                        dst[i * w + j] = src[si * w + sj];
                    }
                }
            }
        }
    }
    return g.push(std::move(out), {x},
                  [x, b, c, h, w](Graph<S>& gr, typename Graph<S>::Id self) {
                      if (!gr.needs_grad(x)) return;
                      const auto& dy = gr.grad(self).data;
                      auto& dx = gr.grad(x).data;
                      for (std::int64_t bi = 0; bi < b; ++bi) {
                          for (std::int64_t g2 = 0; g2 < 9; ++g2) {
                              const std::int64_t di = g2 / 3 - 1, dj = g2 % 3 - 1;
                              for (std::int64_t ci = 0; ci < c; ++ci) {
                                  const S* src =
                                      dy.data() + ((bi * 9 * c + g2 * c + ci) * h) * w;
                                  S* dst = dx.data() + ((bi * c + ci) * h) * w;
                                  for (std::int64_t i = 0; i < h; ++i) {
                                      const std::int64_t si =
                                          std::clamp(i + di, std::int64_t(0), h - 1);
                                      for (std::int64_t j = 0; j < w; ++j) {
                                          const std::int64_t sj =
                                              std::clamp(j + dj, std::int64_t(0), w - 1);
                                          dst[si * w + sj] += src[i * w + j];
                                      }
                                  }
                              }
                          }
                      }
                  });
}

// Per-pixel dot products of a query map against unfolded keys:
// s[b,g,i,j] = sum_d q[b,d,i,j] * k[b, g*D + d, i, j]
template <typename S>
typename Graph<S>::Id win_scores(Graph<S>& g, typename Graph<S>::Id q, typename Graph<S>::Id k,
                                 std::int64_t groups) {
    const TensorT<S>&qv = g.val(q), &kv = g.val(k);
    detail::require(qv.rank() == 4 && kv.rank() == 4, "win_scores: expects rank-4");
    const std::int64_t b = qv.shape[0], d = qv.shape[1], h = qv.shape[2], w = qv.shape[3];
    detail::require(kv.shape[1] == groups * d, "win_scores: key channels != groups*d");
    const std::int64_t hw = h * w;
    TensorT<S> out = TensorT<S>::zeros({b, groups, h, w});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t g2 = 0; g2 < groups; ++g2) {
            S* dst = out.data.data() + (bi * groups + g2) * hw;
            for (std::int64_t di = 0; di < d; ++di) {
                const S* qp = qv.data.data() + (bi * d + di) * hw;
                const S* kp = kv.data.data() + (bi * groups * d + g2 * d + di) * hw;
                for (std::int64_t p = 0; p < hw; ++p) dst[p] += qp[p] * kp[p];
            }
        }
    }
    return g.push(std::move(out), {q, k},
                  [q, k, groups, b, d, hw](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& qd = gr.val(q).data;
                      const auto& kd = gr.val(k).data;
                      if (gr.needs_grad(q)) {
                          auto& dq = gr.grad(q).data;
                          for (std::int64_t bi = 0; bi < b; ++bi) {
                              for (std::int64_t g2 = 0; g2 < groups; ++g2) {
                                  const S* dyp = dy.data() + (bi * groups + g2) * hw;
                                  for (std::int64_t di = 0; di < d; ++di) {
                                      S* dqp = dq.data() + (bi * d + di) * hw;
                                      const S* kp =
                                          kd.data() + (bi * groups * d + g2 * d + di) * hw;
                                      for (std::int64_t p = 0; p < hw; ++p) {
                                          dqp[p] += dyp[p] * kp[p];
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(k)) {
                          auto& dk = gr.grad(k).data;
                          for (std::int64_t bi = 0; bi < b; ++bi) {
                              for (std::int64_t g2 = 0; g2 < groups; ++g2) {
                                  const S* dyp = dy.data() + (bi * groups + g2) * hw;
                                  for (std::int64_t di = 0; di < d; ++di) {
                                      const S* qp = qd.data() + (bi * d + di) * hw;
                                      S* dkp =
                                          dk.data() + (bi * groups * d + g2 * d + di) * hw;
                                      for (std::int64_t p = 0; p < hw; ++p) {
                                          dkp[p] += dyp[p] * qp[p];
                                      }
                                  }
                              }
                          }
                      }
                  });
}

// Applies per-pixel attention weights to unfolded values:
// y[b,d,i,j] = sum_g a[b,g,i,j] * v[b, g*D + d, i, j]
template <typename S>
typename Graph<S>::Id win_apply(Graph<S>& g, typename Graph<S>::Id a, typename Graph<S>::Id v,
                                std::int64_t d) {
    const TensorT<S>&av = g.val(a), &vv = g.val(v);
    detail::require(av.rank() == 4 && vv.rank() == 4, "win_apply: expects rank-4");
    const std::int64_t b = av.shape[0], groups = av.shape[1], h = av.shape[2], w = av.shape[3];
    detail::require(vv.shape[1] == groups * d, "win_apply: value channels != groups*d");
    const std::int64_t hw = h * w;
    TensorT<S> out = TensorT<S>::zeros({b, d, h, w});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t g2 = 0; g2 < groups; ++g2) {
            const S* ap = av.data.data() + (bi * groups + g2) * hw;
            for (std::int64_t di = 0; di < d; ++di) {
                const S* vp = vv.data.data() + (bi * groups * d + g2 * d + di) * hw;
                S* dst = out.data.data() + (bi * d + di) * hw;
                for (std::int64_t p = 0; p < hw; ++p) dst[p] += ap[p] * vp[p];
            }
        }
    }
    return g.push(std::move(out), {a, v},
                  [a, v, d, b, groups, hw](Graph<S>& gr, typename Graph<S>::Id self) {
                      const auto& dy = gr.grad(self).data;
                      const auto& ad = gr.val(a).data;
                      const auto& vd = gr.val(v).data;
                      if (gr.needs_grad(a)) {
                          auto& da = gr.grad(a).data;
                          for (std::int64_t bi = 0; bi < b; ++bi) {
                              for (std::int64_t g2 = 0; g2 < groups; ++g2) {
                                  S* dap = da.data() + (bi * groups + g2) * hw;
                                  for (std::int64_t di = 0; di < d; ++di) {
                                      const S* dyp = dy.data() + (bi * d + di) * hw;
                                      const S* vp =
                                          vd.data() + (bi * groups * d + g2 * d + di) * hw;
                                      for (std::int64_t p = 0; p < hw; ++p) {
                                          dap[p] += dyp[p] * vp[p];
                                      }
                                  }
                              }
                          }
                      }
                      if (gr.needs_grad(v)) {
                          auto& dv = gr.grad(v).data;
                          for (std::int64_t bi = 0; bi < b; ++bi) {
                              for (std::int64_t g2 = 0; g2 < groups; ++g2) {
                                  const S* ap = ad.data() + (bi * groups + g2) * hw;
                                  for (std::int64_t di = 0; di < d; ++di) {
                                      const S* dyp = dy.data() + (bi * d + di) * hw;
                                      S* dvp =
                                          dv.data() + (bi * groups * d + g2 * d + di) * hw;
                                      for (std::int64_t p = 0; p < hw; ++p) {
                                          dvp[p] += dyp[p] * ap[p];
                                      }
                                  }
                              }
                          }
                      }
                  });
}

}  // namespace jamlab::nn
