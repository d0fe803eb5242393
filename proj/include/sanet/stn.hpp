#pragma once

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sanet/ops.hpp"
#include "sanet/params.hpp"
#include "sanet/tape.hpp"

// Differentiable affine resampling.
//
// Coordinate convention: normalized coordinates run over [-1,1] where -1 is
// the CENTER of the first pixel and +1 the center of the last, i.e.
// x_norm(i) = i / half - 1 with half = (extent-1)/2. An affine theta
// (t0..t5, row-major 2x3) maps target to source:
//   x_src = t0*x_t + t1*y_t + t2,   y_src = t3*x_t + t4*y_t + t5.
//
// Internally the grid holds SOURCE PIXEL coordinates, computed as
//   x_pix = t0*ax[j] + t1*bx[i] + (t2+1)*half_in_x
// with ax[j] = (j - half_out_x) * (half_in_x / half_out_x). When the output
// extent equals the input extent the ratio is exactly 1.0 and every term is a
// small dyadic rational, so the identity theta yields x_pix == j bitwise and
// bilinear sampling degenerates to an exact copy. The normalized view below
// recovers the [-1,1] convention for convention-level checks.

namespace sanet {

inline const std::array<float, 6> kIdentityTheta = {1.f, 0.f, 0.f, 0.f, 1.f, 0.f};

// Plain Eq-style affine map on normalized coordinates (test oracle helper).
inline std::pair<double, double> apply_theta(const std::array<double, 6>& th, double xt, double yt) {
  return {th[0] * xt + th[1] * yt + th[2], th[3] * xt + th[4] * yt + th[5]};
}

inline double normalized_coord(int i, int extent) { return (double)i / ((extent - 1) * 0.5) - 1.0; }

// grid [N,h,w,2] of pixel-space coords -> normalized [-1,1] view
template <class S>
TensorT<S> grid_normalized(const TensorT<S>& grid, int h_in, int w_in) {
  op_check(grid.ndim() == 4 && grid.dim(3) == 2,
           "grid_normalized: expected [N,h,w,2], got " + shape_str(grid.shape));
  S hx = (S)(w_in - 1) / S(2), hy = (S)(h_in - 1) / S(2);
  TensorT<S> out(grid.shape);
  for (size_t i = 0; i < grid.data.size(); i += 2) {
    out.data[i] = grid.data[i] / hx - S(1);
    out.data[i + 1] = grid.data[i + 1] / hy - S(1);
  }
  return out;
}

// theta [N,6] -> sampling grid [N,h_out,w_out,2] holding source pixel coords
// for an input of extent (h_in, w_in).
template <class S>
Var generate_grid(TapeT<S>& t, Var theta, int h_out, int w_out, int h_in, int w_in) {
  const auto& tv = t.val(theta);
  op_check(tv.ndim() == 2 && tv.dim(1) == 6,
           "generate_grid: theta must be [N,6], got " + shape_str(tv.shape));
  op_check(h_out >= 2 && w_out >= 2, "generate_grid: output extent must be >= 2, got " +
                                         std::to_string(h_out) + "x" + std::to_string(w_out));
  op_check(h_in >= 2 && w_in >= 2, "generate_grid: input extent must be >= 2, got " +
                                       std::to_string(h_in) + "x" + std::to_string(w_in));
  const int N = tv.dim(0);
  const S hox = (S)(w_out - 1) / S(2), hoy = (S)(h_out - 1) / S(2);
  const S hix = (S)(w_in - 1) / S(2), hiy = (S)(h_in - 1) / S(2);
  // per-axis factor tables; ratios are exactly 1.0 when extents match
  auto ax = std::make_shared<std::vector<S>>((size_t)w_out);   // x_t * half_in_x
  auto bx = std::make_shared<std::vector<S>>((size_t)h_out);   // y_t * half_in_x
  auto ay = std::make_shared<std::vector<S>>((size_t)w_out);   // x_t * half_in_y
  auto by = std::make_shared<std::vector<S>>((size_t)h_out);   // y_t * half_in_y
  const S rxx = hix / hox, rxy = hix / hoy, ryx = hiy / hox, ryy = hiy / hoy;
  for (int j = 0; j < w_out; ++j) {
    (*ax)[(size_t)j] = ((S)j - hox) * rxx;
    (*ay)[(size_t)j] = ((S)j - hox) * ryx;
  }
  for (int i = 0; i < h_out; ++i) {
    (*bx)[(size_t)i] = ((S)i - hoy) * rxy;
    (*by)[(size_t)i] = ((S)i - hoy) * ryy;
  }
  TensorT<S> out({N, h_out, w_out, 2});
  for (int n = 0; n < N; ++n) {
    const S* th = tv.data.data() + (size_t)n * 6;
    S* g = out.data.data() + (size_t)n * h_out * w_out * 2;
    for (int i = 0; i < h_out; ++i)
      for (int j = 0; j < w_out; ++j) {
        S* px = g + ((size_t)i * w_out + j) * 2;
        px[0] = th[0] * (*ax)[(size_t)j] + th[1] * (*bx)[(size_t)i] + (th[2] + S(1)) * hix;
        px[1] = th[3] * (*ay)[(size_t)j] + th[4] * (*by)[(size_t)i] + (th[5] + S(1)) * hiy;
      }
  }
  int tid = theta.id;
  return t.make(std::move(out), {theta.id}, [=](TapeT<S>& tp, int self) {
    const auto& dg = tp.grad_buf(self);
    auto& dth = tp.grad_buf(tid);
    for (int n = 0; n < N; ++n) {
      const S* g = dg.data.data() + (size_t)n * h_out * w_out * 2;
      S* d = dth.data.data() + (size_t)n * 6;
      for (int i = 0; i < h_out; ++i)
        for (int j = 0; j < w_out; ++j) {
          const S* px = g + ((size_t)i * w_out + j) * 2;
          d[0] += px[0] * (*ax)[(size_t)j];
          d[1] += px[0] * (*bx)[(size_t)i];
          d[2] += px[0] * hix;
          d[3] += px[1] * (*ay)[(size_t)j];
          d[4] += px[1] * (*by)[(size_t)i];
          d[5] += px[1] * hiy;
        }
    }
  });
}

// u [N,C,H,W] sampled at grid [N,h,w,2] (source pixel coords) -> [N,C,h,w].
// Out-of-range source locations contribute zero (zero padding); neighbor
// weights fade linearly across the border.
template <class S>
Var bilinear_sample(TapeT<S>& t, Var u, Var grid) {
  const auto& uv = t.val(u);
  const auto& gv = t.val(grid);
  op_check(uv.ndim() == 4, "bilinear_sample: input must be [N,C,H,W], got " + shape_str(uv.shape));
  op_check(gv.ndim() == 4 && gv.dim(3) == 2,
           "bilinear_sample: grid must be [N,h,w,2], got " + shape_str(gv.shape));
  op_check(uv.dim(0) == gv.dim(0), "bilinear_sample: batch mismatch, input " + shape_str(uv.shape) +
                                       " vs grid " + shape_str(gv.shape));
  const int N = uv.dim(0), C = uv.dim(1), H = uv.dim(2), W = uv.dim(3);
  const int h = gv.dim(1), w = gv.dim(2);
  TensorT<S> out({N, C, h, w});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < h; ++oy)
      for (int ox = 0; ox < w; ++ox) {
        const S* px = gv.data.data() + (((size_t)n * h + oy) * w + ox) * 2;
        S sx = px[0], sy = px[1];
        // guards also reject NaN and values that would overflow the int cast
        if (!(sx > S(-2) && sx < S(W + 1) && sy > S(-2) && sy < S(H + 1))) continue;
        int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
        S fx = sx - (S)x0, fy = sy - (S)y0;
        S w00 = (S(1) - fx) * (S(1) - fy), w01 = fx * (S(1) - fy);
        S w10 = (S(1) - fx) * fy, w11 = fx * fy;
        bool bx0 = x0 >= 0 && x0 < W, bx1 = x0 + 1 >= 0 && x0 + 1 < W;
        bool by0 = y0 >= 0 && y0 < H, by1 = y0 + 1 >= 0 && y0 + 1 < H;
        for (int c = 0; c < C; ++c) {
          const S* uc = uv.data.data() + ((size_t)n * C + c) * H * W;
          S acc = 0;
          if (by0 && bx0) acc += w00 * uc[(size_t)y0 * W + x0];
          if (by0 && bx1) acc += w01 * uc[(size_t)y0 * W + x0 + 1];
          if (by1 && bx0) acc += w10 * uc[((size_t)y0 + 1) * W + x0];
          if (by1 && bx1) acc += w11 * uc[((size_t)y0 + 1) * W + x0 + 1];
          out.data[(((size_t)n * C + c) * h + oy) * w + ox] = acc;
        }
      }
  int uid = u.id, gid = grid.id;
  bool nu = t.requires_grad(u), ng = t.requires_grad(grid);
  return t.make(std::move(out), {u.id, grid.id}, [=](TapeT<S>& tp, int self) {
    const auto& dy = tp.grad_buf(self);
    const auto& uv2 = tp.val(Var{uid});
    const auto& gv2 = tp.val(Var{gid});
    auto& du = tp.grad_buf(uid);
    auto& dgr = tp.grad_buf(gid);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
      for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox) {
          const S* px = gv2.data.data() + (((size_t)n * h + oy) * w + ox) * 2;
          S sx = px[0], sy = px[1];
          if (!(sx > S(-2) && sx < S(W + 1) && sy > S(-2) && sy < S(H + 1))) continue;
          int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
          S fx = sx - (S)x0, fy = sy - (S)y0;
          S w00 = (S(1) - fx) * (S(1) - fy), w01 = fx * (S(1) - fy);
          S w10 = (S(1) - fx) * fy, w11 = fx * fy;
          bool bx0 = x0 >= 0 && x0 < W, bx1 = x0 + 1 >= 0 && x0 + 1 < W;
          bool by0 = y0 >= 0 && y0 < H, by1 = y0 + 1 >= 0 && y0 + 1 < H;
          S dsx = 0, dsy = 0;
          for (int c = 0; c < C; ++c) {
            S g = dy.data[(((size_t)n * C + c) * h + oy) * w + ox];
            if (g == S(0)) continue;
            const S* uc = uv2.data.data() + ((size_t)n * C + c) * H * W;
            S u00 = (by0 && bx0) ? uc[(size_t)y0 * W + x0] : S(0);
            S u01 = (by0 && bx1) ? uc[(size_t)y0 * W + x0 + 1] : S(0);
            S u10 = (by1 && bx0) ? uc[((size_t)y0 + 1) * W + x0] : S(0);
            S u11 = (by1 && bx1) ? uc[((size_t)y0 + 1) * W + x0 + 1] : S(0);
            if (nu) {
              S* dc = du.data.data() + ((size_t)n * C + c) * H * W;
              if (by0 && bx0) dc[(size_t)y0 * W + x0] += g * w00;
              if (by0 && bx1) dc[(size_t)y0 * W + x0 + 1] += g * w01;
              if (by1 && bx0) dc[((size_t)y0 + 1) * W + x0] += g * w10;
              if (by1 && bx1) dc[((size_t)y0 + 1) * W + x0 + 1] += g * w11;
            }
            if (ng) {
              dsx += g * ((S(1) - fy) * (u01 - u00) + fy * (u11 - u10));
              dsy += g * ((S(1) - fx) * (u10 - u00) + fx * (u11 - u01));
            }
          }
          if (ng) {
            S* dp = dgr.data.data() + (((size_t)n * h + oy) * w + ox) * 2;
            dp[0] += dsx;
            dp[1] += dsy;
          }
        }
  });
}

// --------------------------------------------------------- localisation net

// Two stride-2 4x4 convs, global average pool, two fully connected layers.
// The last layer starts at zero weights with an identity-transform bias, so
// an untrained network regresses the identity theta for every input.
struct LocNetShape {
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  static constexpr int conv1_width = 16;
  static constexpr int conv2_width = 32;
  static constexpr int fc_width = 64;
};

template <class S>
void register_locnet_params(ParamStoreT<S>& store, const LocNetShape& sh, uint64_t seed) {
  const int c1 = LocNetShape::conv1_width, c2 = LocNetShape::conv2_width, fw = LocNetShape::fc_width;
  auto he = [&](const std::string& name, std::vector<int> shape, int fan_in) {
    store.add(name, he_uniform<S>(std::move(shape), fan_in, init_stream(seed, name)), ParamGroup::stn);
  };
  he("stn.conv1.w", {c1, sh.in_channels, 4, 4}, sh.in_channels * 16);
  store.add("stn.conv1.b", TensorT<S>({c1}), ParamGroup::stn);
  he("stn.conv2.w", {c2, c1, 4, 4}, c1 * 16);
  store.add("stn.conv2.b", TensorT<S>({c2}), ParamGroup::stn);
  he("stn.fc1.w", {c2, fw}, c2);
  store.add("stn.fc1.b", TensorT<S>({fw}), ParamGroup::stn);
  store.add("stn.fc2.w", TensorT<S>({fw, 6}), ParamGroup::stn);  // zeros: identity at init
  TensorT<S> tb({6});
  for (int i = 0; i < 6; ++i) tb.data[(size_t)i] = (S)kIdentityTheta[(size_t)i];
  store.add("stn.fc2.b", tb, ParamGroup::stn);
}

// feature map u [N,C,H,W] -> theta [N,6]
template <class S>
Var localize(TapeT<S>& t, const std::map<std::string, Var>& p, const LocNetShape& sh, Var u) {
  const auto& uv = t.val(u);
  op_check(uv.ndim() == 4 && uv.dim(1) == sh.in_channels && uv.dim(2) == sh.in_h && uv.dim(3) == sh.in_w,
           "localize: net is configured for [*," + std::to_string(sh.in_channels) + "," +
               std::to_string(sh.in_h) + "," + std::to_string(sh.in_w) + "], got " + shape_str(uv.shape));
  Var h1 = relu(t, conv2d(t, u, p.at("stn.conv1.w"), p.at("stn.conv1.b"), 2, 1));
  Var h2 = relu(t, conv2d(t, h1, p.at("stn.conv2.w"), p.at("stn.conv2.b"), 2, 1));
  Var g = global_avg_pool(t, h2);
  Var f1 = relu(t, add_bias(t, matmul(t, g, p.at("stn.fc1.w")), p.at("stn.fc1.b")));
  return add_bias(t, matmul(t, f1, p.at("stn.fc2.w")), p.at("stn.fc2.b"));
}

template <class S>
struct StnResult {
  Var aligned;  // [N,C,H,W]
  Var theta;    // [N,6]
};

// Regress theta from u, build the sampling grid, resample u with it.
template <class S>
StnResult<S> stn_forward(TapeT<S>& t, const std::map<std::string, Var>& p, const LocNetShape& sh, Var u) {
  // copy the extents up front: localize() grows the tape and may invalidate
  // references into its value storage
  const int h = t.val(u).dim(2), w = t.val(u).dim(3);
  Var theta = localize(t, p, sh, u);
  Var grid = generate_grid(t, theta, h, w, h, w);
  Var v = bilinear_sample(t, u, grid);
  return {v, theta};
}

}  // namespace sanet
