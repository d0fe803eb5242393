#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sanet/tape.hpp"

// Differentiable tensor ops. Each op validates shapes up front (throwing
// std::invalid_argument that names the offending shapes), computes the
// forward value, and registers a backward closure that accumulates into the
// input gradient buffers with +=.
//
// Determinism note: every parallel loop writes disjoint outputs and every
// reduction keeps one fixed accumulation order per output element, so results
// are bit-identical regardless of thread count.

namespace sanet {

inline void op_check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

enum class Axis { height, width };

inline const char* axis_name(Axis a) { return a == Axis::height ? "height" : "width"; }

// ---------------------------------------------------------------- elementwise

template <class S>
Var relu(TapeT<S>& t, Var x) {
  const auto& xv = t.val(x);
  TensorT<S> out(xv.shape);
  for (size_t i = 0; i < xv.data.size(); ++i) out.data[i] = xv.data[i] > S(0) ? xv.data[i] : S(0);
  int xid = x.id;
  return t.make(std::move(out), {x.id}, [xid](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    const auto& xv2 = tp.val(Var{xid});
    auto& dx = tp.grad_buf(xid);
    for (size_t i = 0; i < dy.data.size(); ++i)
      if (xv2.data[i] > S(0)) dx.data[i] += dy.data[i];
  });
}

template <class S>
Var add(TapeT<S>& t, Var a, Var b) {
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  op_check(av.same_shape(bv), "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  TensorT<S> out(av.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
  int aid = a.id, bid = b.id;
  bool na = t.requires_grad(a), nb = t.requires_grad(b);
  return t.make(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    if (na) {
      auto& da = tp.grad_buf(aid);
      for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i];
    }
    if (nb) {
      auto& db = tp.grad_buf(bid);
      for (size_t i = 0; i < dy.data.size(); ++i) db.data[i] += dy.data[i];
    }
  });
}

template <class S>
Var sub(TapeT<S>& t, Var a, Var b) {
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  op_check(av.same_shape(bv), "sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  TensorT<S> out(av.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] - bv.data[i];
  int aid = a.id, bid = b.id;
  bool na = t.requires_grad(a), nb = t.requires_grad(b);
  return t.make(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    if (na) {
      auto& da = tp.grad_buf(aid);
      for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i];
    }
    if (nb) {
      auto& db = tp.grad_buf(bid);
      for (size_t i = 0; i < dy.data.size(); ++i) db.data[i] -= dy.data[i];
    }
  });
}

template <class S>
Var mul(TapeT<S>& t, Var a, Var b) {
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  op_check(av.same_shape(bv), "mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  TensorT<S> out(av.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
  int aid = a.id, bid = b.id;
  bool na = t.requires_grad(a), nb = t.requires_grad(b);
  return t.make(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    const auto& av2 = tp.val(Var{aid});
    const auto& bv2 = tp.val(Var{bid});
    if (na) {
      auto& da = tp.grad_buf(aid);
      for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i] * bv2.data[i];
    }
    if (nb) {
      auto& db = tp.grad_buf(bid);
      for (size_t i = 0; i < dy.data.size(); ++i) db.data[i] += dy.data[i] * av2.data[i];
    }
  });
}

template <class S>
Var scale(TapeT<S>& t, Var a, S c) {
  const auto& av = t.val(a);
  TensorT<S> out(av.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * av.data[i];
  int aid = a.id;
  return t.make(std::move(out), {a.id}, [aid, c](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    auto& da = tp.grad_buf(aid);
    for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += c * dy.data[i];
  });
}

template <class S>
Var sum_all(TapeT<S>& t, Var a) {
  const auto& av = t.val(a);
  S acc = 0;
  for (S v : av.data) acc += v;
  int aid = a.id;
  return t.make(TensorT<S>::scalar(acc), {a.id}, [aid](TapeT<S>& tp, int self) {
    S g = tp.grad_buf(self).data[0];
    auto& da = tp.grad_buf(aid);
    for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += g;
  });
}

// ------------------------------------------------------------------- linear

// a [m,k] times b [k,n]
template <class S>
Var matmul(TapeT<S>& t, Var a, Var b) {
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  op_check(av.ndim() == 2 && bv.ndim() == 2,
           "matmul: expects 2-d operands, got " + shape_str(av.shape) + " and " + shape_str(bv.shape));
  op_check(av.dim(1) == bv.dim(0),
           "matmul: inner extents disagree, " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  TensorT<S> out({m, n});
  for (int i = 0; i < m; ++i) {
    S* ci = out.data.data() + (size_t)i * n;
    const S* ai = av.data.data() + (size_t)i * k;
    for (int p = 0; p < k; ++p) {
      S s = ai[p];
      const S* bp = bv.data.data() + (size_t)p * n;
      for (int j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
  int aid = a.id, bid = b.id;
  bool na = t.requires_grad(a), nb = t.requires_grad(b);
  return t.make(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    const auto& av2 = tp.val(Var{aid});
    const auto& bv2 = tp.val(Var{bid});
    if (na) {
      // dA = dY · B^T, with B transposed once so rows stay contiguous
      std::vector<S> bt((size_t)n * k);
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) bt[(size_t)j * k + p] = bv2.data[(size_t)p * n + j];
      auto& da = tp.grad_buf(aid);
      for (int i = 0; i < m; ++i) {
        S* dai = da.data.data() + (size_t)i * k;
        const S* dyi = dy.data.data() + (size_t)i * n;
        for (int j = 0; j < n; ++j) {
          S s = dyi[j];
          const S* btj = bt.data() + (size_t)j * k;
          for (int p = 0; p < k; ++p) dai[p] += s * btj[p];
        }
      }
    }
    if (nb) {
      // dB = A^T · dY, i outermost keeps one accumulation order per element
      auto& db = tp.grad_buf(bid);
      for (int i = 0; i < m; ++i) {
        const S* ai = av2.data.data() + (size_t)i * k;
        const S* dyi = dy.data.data() + (size_t)i * n;
        for (int p = 0; p < k; ++p) {
          S s = ai[p];
          S* dbp = db.data.data() + (size_t)p * n;
          for (int j = 0; j < n; ++j) dbp[j] += s * dyi[j];
        }
      }
    }
  });
}

// x [m,n] plus row vector b [n]
template <class S>
Var add_bias(TapeT<S>& t, Var x, Var b) {
  const auto& xv = t.val(x);
  const auto& bv = t.val(b);
  op_check(xv.ndim() == 2 && bv.ndim() == 1 && bv.dim(0) == xv.dim(1),
           "add_bias: got " + shape_str(xv.shape) + " and " + shape_str(bv.shape));
  int m = xv.dim(0), n = xv.dim(1);
  TensorT<S> out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data[(size_t)i * n + j] = xv.data[(size_t)i * n + j] + bv.data[(size_t)j];
  int xid = x.id, bid = b.id;
  bool nx = t.requires_grad(x), nb = t.requires_grad(b);
  return t.make(std::move(out), {x.id, b.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    if (nx) {
      auto& dx = tp.grad_buf(xid);
      for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
    }
    if (nb) {
      auto& db = tp.grad_buf(bid);
      for (int i = 0; i < m; ++i) {
        const S* dyi = dy.data.data() + (size_t)i * n;
        for (int j = 0; j < n; ++j) db.data[(size_t)j] += dyi[j];
      }
    }
  });
}

// ------------------------------------------------------------------ conv2d

template <class S>
void im2col(const S* x, int N, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, S* cols) {
  const int64_t K = (int64_t)C * kh * kw;
  const int64_t R = (int64_t)N * Ho * Wo;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < R; ++r) {
    int xo = (int)(r % Wo);
    int yo = (int)((r / Wo) % Ho);
    int n = (int)(r / ((int64_t)Wo * Ho));
    S* dst = cols + r * K;
    int iy0 = yo * stride - pad, ix0 = xo * stride - pad;
    int64_t idx = 0;
    for (int c = 0; c < C; ++c) {
      const S* xc = x + ((int64_t)n * C + c) * H * W;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = iy0 + ky;
        for (int kx = 0; kx < kw; ++kx, ++idx) {
          int ix = ix0 + kx;
          dst[idx] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xc[(int64_t)iy * W + ix] : S(0);
        }
      }
    }
  }
}

template <class S>
void col2im_add(const S* cols, int N, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, S* dx) {
  const int64_t K = (int64_t)C * kh * kw;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int yo = 0; yo < Ho; ++yo)
      for (int xo = 0; xo < Wo; ++xo) {
        const S* src = cols + (((int64_t)n * Ho + yo) * Wo + xo) * K;
        int iy0 = yo * stride - pad, ix0 = xo * stride - pad;
        int64_t idx = 0;
        for (int c = 0; c < C; ++c) {
          S* dc = dx + ((int64_t)n * C + c) * H * W;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = iy0 + ky;
            for (int kx = 0; kx < kw; ++kx, ++idx) {
              int ix = ix0 + kx;
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) dc[(int64_t)iy * W + ix] += src[idx];
            }
          }
        }
      }
  }
}

// x [N,C,H,W], w [F,C,kh,kw], b [F]. The output extent must divide exactly:
// (H + 2 pad - kh) % stride == 0 (same for width), otherwise the call is
// rejected rather than silently floored.
template <class S>
Var conv2d(TapeT<S>& t, Var x, Var w, Var b, int stride, int pad) {
  const auto& xv = t.val(x);
  const auto& wv = t.val(w);
  const auto& bv = t.val(b);
  op_check(xv.ndim() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(xv.shape));
  op_check(wv.ndim() == 4, "conv2d: kernel must be [F,C,kh,kw], got " + shape_str(wv.shape));
  op_check(bv.ndim() == 1 && bv.dim(0) == wv.dim(0),
           "conv2d: bias " + shape_str(bv.shape) + " does not match kernel " + shape_str(wv.shape));
  op_check(xv.dim(1) == wv.dim(1), "conv2d: channel mismatch, input " + shape_str(xv.shape) +
                                       " vs kernel " + shape_str(wv.shape));
  op_check(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int F = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  op_check(kh <= H + 2 * pad && kw <= W + 2 * pad,
           "conv2d: kernel " + shape_str(wv.shape) + " exceeds padded input " + shape_str(xv.shape));
  op_check((H + 2 * pad - kh) % stride == 0 && (W + 2 * pad - kw) % stride == 0,
           "conv2d: output extent is not integral for input " + shape_str(xv.shape) + ", kernel " +
               shape_str(wv.shape) + ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const int64_t R = (int64_t)N * Ho * Wo;
  const int64_t K = (int64_t)C * kh * kw;

  auto cols = std::make_shared<std::vector<S>>((size_t)(R * K));
  im2col(xv.data.data(), N, C, H, W, kh, kw, stride, pad, Ho, Wo, cols->data());

  // kernel transposed to [K,F] so the row-update inner loop is contiguous
  std::vector<S> wt((size_t)(K * F));
  for (int f = 0; f < F; ++f)
    for (int64_t k = 0; k < K; ++k) wt[(size_t)(k * F + f)] = wv.data[(size_t)(f * K + k)];

  std::vector<S> g((size_t)(R * F));
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < R; ++r) {
    S* gr = g.data() + r * F;
    for (int f = 0; f < F; ++f) gr[f] = bv.data[(size_t)f];
    const S* xr = cols->data() + r * K;
    for (int64_t k = 0; k < K; ++k) {
      S s = xr[k];
      const S* wr = wt.data() + k * F;
      for (int f = 0; f < F; ++f) gr[f] += s * wr[f];
    }
  }

  TensorT<S> out({N, F, Ho, Wo});
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < R; ++r) {
    int xo = (int)(r % Wo);
    int yo = (int)((r / Wo) % Ho);
    int n = (int)(r / ((int64_t)Wo * Ho));
    for (int f = 0; f < F; ++f)
      out.data[(size_t)((((int64_t)n * F + f) * Ho + yo) * Wo + xo)] = g[(size_t)(r * F + f)];
  }

  bool nx = t.requires_grad(x), nw = t.requires_grad(w), nb = t.requires_grad(b);
  if (!(nx || nw || nb)) return t.make(std::move(out), {x.id, w.id, b.id}, nullptr);
  int xid = x.id, wid = w.id, bid = b.id;
  return t.make(std::move(out), {x.id, w.id, b.id}, [=](TapeT<S>& tp, int self) {
    const auto& dyt = tp.grad_buf(self);
    std::vector<S> dg((size_t)(R * F));
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < R; ++r) {
      int xo = (int)(r % Wo);
      int yo = (int)((r / Wo) % Ho);
      int n = (int)(r / ((int64_t)Wo * Ho));
      for (int f = 0; f < F; ++f)
        dg[(size_t)(r * F + f)] = dyt.data[(size_t)((((int64_t)n * F + f) * Ho + yo) * Wo + xo)];
    }
    if (nb) {
      auto& db = tp.grad_buf(bid);
      for (int64_t r = 0; r < R; ++r) {
        const S* dgr = dg.data() + r * F;
        for (int f = 0; f < F; ++f) db.data[(size_t)f] += dgr[f];
      }
    }
    if (nw) {
      // dW[f,k] = sum_r dg[r,f] * cols[r,k]; f parallel, r ascending per f
      auto& dw = tp.grad_buf(wid);
      const S* X = cols->data();
#pragma omp parallel for schedule(static)
      for (int f = 0; f < F; ++f) {
        S* dwf = dw.data.data() + (size_t)f * K;
        for (int64_t r = 0; r < R; ++r) {
          S s = dg[(size_t)(r * F + f)];
          const S* xr = X + r * K;
          for (int64_t k = 0; k < K; ++k) dwf[k] += s * xr[k];
        }
      }
    }
    if (nx) {
      const auto& wv2 = tp.val(Var{wid});
      std::vector<S> dcols((size_t)(R * K));
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < R; ++r) {
        S* dr = dcols.data() + r * K;
        const S* dgr = dg.data() + r * F;
        for (int f = 0; f < F; ++f) {
          S s = dgr[f];
          const S* wf = wv2.data.data() + (size_t)f * K;
          for (int64_t k = 0; k < K; ++k) dr[k] += s * wf[k];
        }
      }
      auto& dx = tp.grad_buf(xid);
      col2im_add(dcols.data(), N, C, H, W, kh, kw, stride, pad, Ho, Wo, dx.data.data());
    }
  });
}

// ------------------------------------------------------------------ pooling

// [N,C,H,W] -> [N,C] mean over the spatial extent
template <class S>
Var global_avg_pool(TapeT<S>& t, Var x) {
  const auto& xv = t.val(x);
  op_check(xv.ndim() == 4, "global_avg_pool: input must be [N,C,H,W], got " + shape_str(xv.shape));
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t hw = (int64_t)H * W;
  TensorT<S> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* p = xv.data.data() + ((int64_t)n * C + c) * hw;
      S acc = 0;
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
      out.data[(size_t)((int64_t)n * C + c)] = acc / (S)hw;
    }
  int xid = x.id;
  return t.make(std::move(out), {x.id}, [xid, N, C, hw](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    auto& dx = tp.grad_buf(xid);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        S g = dy.data[(size_t)((int64_t)n * C + c)] / (S)hw;
        S* p = dx.data.data() + ((int64_t)n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) p[i] += g;
      }
  });
}

// ------------------------------------------------------------ shape plumbing

// Concatenate along the last axis; all leading extents must agree.
template <class S>
Var concat_last_axis(TapeT<S>& t, const std::vector<Var>& parts) {
  op_check(!parts.empty(), "concat_last_axis: no inputs");
  const auto& first = t.val(parts[0]);
  int nd = first.ndim();
  op_check(nd >= 1, "concat_last_axis: inputs need at least one axis");
  int64_t lead = 1;
  for (int i = 0; i + 1 < nd; ++i) lead *= first.dim(i);
  int total_last = 0;
  std::vector<int> lasts;
  for (Var p : parts) {
    const auto& pv = t.val(p);
    op_check(pv.ndim() == nd, "concat_last_axis: rank mismatch " + shape_str(first.shape) + " vs " +
                                  shape_str(pv.shape));
    for (int i = 0; i + 1 < nd; ++i)
      op_check(pv.dim(i) == first.dim(i), "concat_last_axis: leading extents disagree, " +
                                              shape_str(first.shape) + " vs " + shape_str(pv.shape));
    lasts.push_back(pv.dim(nd - 1));
    total_last += pv.dim(nd - 1);
  }
  std::vector<int> oshape = first.shape;
  oshape[(size_t)nd - 1] = total_last;
  TensorT<S> out(oshape);
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = t.val(parts[pi]);
    int d = lasts[pi];
    for (int64_t r = 0; r < lead; ++r)
      for (int j = 0; j < d; ++j)
        out.data[(size_t)(r * total_last + off + j)] = pv.data[(size_t)(r * d + j)];
    off += d;
  }
  std::vector<int> ids;
  std::vector<bool> need;
  for (Var p : parts) {
    ids.push_back(p.id);
    need.push_back(t.requires_grad(p));
  }
  return t.make(std::move(out), std::vector<int>(ids), [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    int64_t o = 0;
    for (size_t pi = 0; pi < ids.size(); ++pi) {
      int d = lasts[pi];
      if (need[pi]) {
        auto& dp = tp.grad_buf(ids[pi]);
        for (int64_t r = 0; r < lead; ++r)
          for (int j = 0; j < d; ++j)
            dp.data[(size_t)(r * d + j)] += dy.data[(size_t)(r * total_last + o + j)];
      }
      o += d;
    }
  });
}

// One strip of an even split along H or W of an [N,C,H,W] map. The sliced
// extent must divide exactly into `parts`.
template <class S>
Var slice_strip(TapeT<S>& t, Var x, Axis axis, int index, int parts) {
  const auto& xv = t.val(x);
  op_check(xv.ndim() == 4, "slice_strip: input must be [N,C,H,W], got " + shape_str(xv.shape));
  op_check(parts >= 1 && index >= 0 && index < parts,
           "slice_strip: index " + std::to_string(index) + " outside [0," + std::to_string(parts) + ")");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int extent = axis == Axis::height ? H : W;
  op_check(extent % parts == 0, "slice_strip: " + std::string(axis_name(axis)) + " extent " +
                                    std::to_string(extent) + " of " + shape_str(xv.shape) +
                                    " does not divide into " + std::to_string(parts) + " strips");
  int step = extent / parts;
  int Ho = axis == Axis::height ? step : H;
  int Wo = axis == Axis::width ? step : W;
  int y0 = axis == Axis::height ? index * step : 0;
  int x0 = axis == Axis::width ? index * step : 0;
  TensorT<S> out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y) {
        const S* src = xv.data.data() + (((int64_t)n * C + c) * H + (y0 + y)) * W + x0;
        S* dst = out.data.data() + (((int64_t)n * C + c) * Ho + y) * Wo;
        for (int xx = 0; xx < Wo; ++xx) dst[xx] = src[xx];
      }
  int xid = x.id;
  return t.make(std::move(out), {x.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    auto& dx = tp.grad_buf(xid);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y) {
          S* dst = dx.data.data() + (((int64_t)n * C + c) * H + (y0 + y)) * W + x0;
          const S* src = dy.data.data() + (((int64_t)n * C + c) * Ho + y) * Wo;
          for (int xx = 0; xx < Wo; ++xx) dst[xx] += src[xx];
        }
  });
}

// One half of a spatial split (the M == 2 case of slice_strip).
template <class S>
Var slice_spatial(TapeT<S>& t, Var x, Axis axis, int half) {
  return slice_strip(t, x, axis, half, 2);
}

// ------------------------------------------------------------ classification

// Mean cross-entropy with a numerically safe fused softmax. Gradient is
// (softmax - onehot) / N.
template <class S>
Var softmax_cross_entropy(TapeT<S>& t, Var logits, const std::vector<int>& labels) {
  const auto& zv = t.val(logits);
  op_check(zv.ndim() == 2, "softmax_cross_entropy: logits must be [N,C], got " + shape_str(zv.shape));
  int N = zv.dim(0), C = zv.dim(1);
  op_check((int)labels.size() == N, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(N) + " rows");
  for (int i = 0; i < N; ++i)
    op_check(labels[i] >= 0 && labels[i] < C, "softmax_cross_entropy: label " +
                                                  std::to_string(labels[i]) + " at row " +
                                                  std::to_string(i) + " outside [0," +
                                                  std::to_string(C) + ")");
  auto probs = std::make_shared<std::vector<S>>((size_t)N * C);
  S loss = 0;
  for (int i = 0; i < N; ++i) {
    const S* z = zv.data.data() + (size_t)i * C;
    S m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    S se = 0;
    for (int c = 0; c < C; ++c) {
      S e = std::exp(z[c] - m);
      (*probs)[(size_t)i * C + c] = e;
      se += e;
    }
    for (int c = 0; c < C; ++c) (*probs)[(size_t)i * C + c] /= se;
    loss += std::log(se) - (z[labels[i]] - m);
  }
  loss /= (S)N;
  int zid = logits.id;
  std::vector<int> lab = labels;
  return t.make(TensorT<S>::scalar(loss), {logits.id}, [=](TapeT<S>& tp, int self) {
    S g = tp.grad_buf(self).data[0] / (S)N;
    auto& dz = tp.grad_buf(zid);
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) {
        S p = (*probs)[(size_t)i * C + c];
        dz.data[(size_t)i * C + c] += g * (p - (c == lab[i] ? S(1) : S(0)));
      }
  });
}

}  // namespace sanet
