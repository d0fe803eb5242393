#include "sanet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "sanet/losses.hpp"
#include "sanet/ppm.hpp"
#include "sanet/stn.hpp"

namespace fs = std::filesystem;

namespace sanet {

EmbeddingMatrix embed_set(const SANet& model, const std::vector<LabeledImage>& images,
                          int batch_size) {
  op_check(!images.empty(), "embed_set: empty image list");
  op_check(batch_size >= 1, "embed_set: batch_size must be >= 1");
  const int S = model.config().input_size;
  const int dim = model.config().embedding_dim();
  EmbeddingMatrix em;
  em.values = Tensor({(int)images.size(), dim});
  for (size_t start = 0; start < images.size(); start += (size_t)batch_size) {
    size_t n = std::min((size_t)batch_size, images.size() - start);
    Tensor batch({(int)n, 3, S, S});
    for (size_t i = 0; i < n; ++i) {
      const Tensor& px = images[start + i].pixels;
      op_check(px.ndim() == 3 && px.dim(0) == 3 && px.dim(1) == S && px.dim(2) == S,
               "embed_set: image " + images[start + i].name + " has shape " + shape_str(px.shape) +
                   ", model expects [3," + std::to_string(S) + "," + std::to_string(S) + "]");
      std::copy(px.data.begin(), px.data.end(), batch.data.begin() + (int64_t)i * px.numel());
    }
    Tape tape;
    BranchVars b = model.forward(tape, batch);
    const Tensor& emb = tape.val(b.embedding);
    std::copy(emb.data.begin(), emb.data.end(), em.values.data.begin() + (int64_t)start * dim);
  }
  for (const auto& li : images) {
    em.labels.push_back(li.identity);
    em.names.push_back(li.name);
  }
  return em;
}

Tensor distance_matrix(const EmbeddingMatrix& q, const EmbeddingMatrix& g) {
  op_check(q.values.dim(1) == g.values.dim(1),
           "distance_matrix: embedding widths differ, " + shape_str(q.values.shape) + " vs " +
               shape_str(g.values.shape));
  const int Q = q.values.dim(0), G = g.values.dim(0), d = q.values.dim(1);
  Tensor D({Q, G});
  for (int i = 0; i < Q; ++i)
    for (int j = 0; j < G; ++j)
      D.data[(size_t)i * G + j] = row_distance(q.values.data.data() + (size_t)i * d,
                                               g.values.data.data() + (size_t)j * d, d);
  return D;
}

std::vector<double> cmc(const Tensor& D, const std::vector<int>& q_labels,
                        const std::vector<int>& g_labels, int k_max) {
  op_check(D.ndim() == 2, "cmc: distance matrix must be 2-d, got " + shape_str(D.shape));
  const int Q = D.dim(0), G = D.dim(1);
  op_check((int)q_labels.size() == Q && (int)g_labels.size() == G,
           "cmc: label counts do not match the distance matrix " + shape_str(D.shape));
  op_check(k_max >= 1, "cmc: k_max must be >= 1");
  for (int i = 0; i < Q; ++i) {
    int hits = 0;
    for (int j = 0; j < G; ++j) hits += g_labels[(size_t)j] == q_labels[(size_t)i];
    op_check(hits == 1, "cmc: query identity " + std::to_string(q_labels[(size_t)i]) + " appears " +
                            std::to_string(hits) + " times in the gallery, expected exactly once");
  }
  std::vector<int64_t> first_hit_at((size_t)k_max + 1, 0);  // counts by rank
  std::vector<int> order((size_t)G);
  for (int i = 0; i < Q; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const float* row = D.data.data() + (size_t)i * G;
    std::stable_sort(order.begin(), order.end(),
                     [row](int a, int b) { return row[(size_t)a] < row[(size_t)b]; });
    for (int r = 0; r < G; ++r)
      if (g_labels[(size_t)order[(size_t)r]] == q_labels[(size_t)i]) {
        if (r < k_max) first_hit_at[(size_t)r + 1]++;
        break;
      }
  }
  std::vector<double> curve((size_t)k_max, 0.0);
  int64_t cum = 0;
  for (int k = 1; k <= k_max; ++k) {
    cum += first_hit_at[(size_t)k];
    curve[(size_t)k - 1] = (double)cum / (double)Q;
  }
  return curve;
}

void export_results(const std::string& out_dir, const std::vector<double>& curve, const Tensor& D,
                    const EmbeddingMatrix& q, const EmbeddingMatrix& g) {
  fs::create_directories(out_dir);
  std::ofstream cf(out_dir + "/cmc.csv", std::ios::binary);
  cf << "k,accuracy\n";
  char buf[64];
  for (size_t k = 0; k < curve.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", k + 1, curve[k]);
    cf << buf;
  }
  const int Q = D.dim(0), G = D.dim(1);
  const int top = std::min(10, G);
  std::ofstream rf(out_dir + "/ranks.csv", std::ios::binary);
  rf << "query";
  for (int i = 1; i <= top; ++i) rf << ",top" << i;
  for (int i = 1; i <= top; ++i) rf << ",ok" << i;
  rf << "\n";
  std::vector<int> order((size_t)G);
  for (int i = 0; i < Q; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const float* row = D.data.data() + (size_t)i * G;
    std::stable_sort(order.begin(), order.end(),
                     [row](int a, int b) { return row[(size_t)a] < row[(size_t)b]; });
    rf << q.names[(size_t)i];
    for (int r = 0; r < top; ++r) rf << "," << g.names[(size_t)order[(size_t)r]];
    for (int r = 0; r < top; ++r)
      rf << "," << (g.labels[(size_t)order[(size_t)r]] == q.labels[(size_t)i] ? 1 : 0);
    rf << "\n";
  }
  if (!cf || !rf) throw std::runtime_error("export_results: cannot write under " + out_dir);
}

std::array<float, 6> regress_theta(const SANet& model, const LabeledImage& image) {
  Tensor batch({1, 3, image.pixels.dim(1), image.pixels.dim(2)});
  batch.data = image.pixels.data;
  Tape tape;
  BranchVars b = model.forward(tape, batch);
  const Tensor& th = tape.val(b.theta);
  std::array<float, 6> out;
  std::copy(th.data.begin(), th.data.end(), out.begin());
  return out;
}

Tensor aligned_image(const SANet& model, const LabeledImage& image) {
  auto th = regress_theta(model, image);
  const int H = image.pixels.dim(1), W = image.pixels.dim(2);
  Tape tape;
  Var img = tape.leaf(Tensor({1, 3, H, W}, image.pixels.data));
  Var theta = tape.leaf(Tensor({1, 6}, std::vector<float>(th.begin(), th.end())));
  Var grid = generate_grid(tape, theta, H, W, H, W);
  Var warped = bilinear_sample(tape, img, grid);
  return Tensor({3, H, W}, tape.val(warped).data);
}

void export_alignment_pairs(const SANet& model, const std::vector<LabeledImage>& images,
                            const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream tf(out_dir + "/theta.csv", std::ios::binary);
  tf << "image,t0,t1,t2,t3,t4,t5\n";
  char buf[64];
  for (const auto& li : images) {
    write_ppm(out_dir + "/" + li.name + "_before.ppm", li.pixels);
    write_ppm(out_dir + "/" + li.name + "_after.ppm", aligned_image(model, li));
    auto th = regress_theta(model, li);
    tf << li.name;
    for (float v : th) {
      std::snprintf(buf, sizeof(buf), ",%.9g", (double)v);
      tf << buf;
    }
    tf << "\n";
  }
  if (!tf) throw std::runtime_error("export_alignment_pairs: cannot write under " + out_dir);
}

std::optional<double> estimate_axis_angle(const Tensor& img) {
  op_check(img.ndim() == 3 && img.dim(0) == 3,
           "estimate_axis_angle: expected [3,H,W], got " + shape_str(img.shape));
  const int H = img.dim(1), W = img.dim(2);
  // border median per channel approximates the background color
  std::array<float, 3> bg;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> border;
    const float* p = img.data.data() + (size_t)c * H * W;
    for (int x = 0; x < W; ++x) {
      border.push_back(p[x]);
      border.push_back(p[(size_t)(H - 1) * W + x]);
    }
    for (int y = 1; y + 1 < H; ++y) {
      border.push_back(p[(size_t)y * W]);
      border.push_back(p[(size_t)y * W + W - 1]);
    }
    std::nth_element(border.begin(), border.begin() + border.size() / 2, border.end());
    bg[(size_t)c] = border[border.size() / 2];
  }
  double sx = 0, sy = 0, n = 0;
  std::vector<std::pair<int, int>> fg;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float dev = 0;
      for (int c = 0; c < 3; ++c)
        dev = std::max(dev, std::abs(img.data[((size_t)c * H + y) * W + x] - bg[(size_t)c]));
      if (dev > 0.1f) {
        fg.emplace_back(x, y);
        sx += x;
        sy += y;
        n += 1;
      }
    }
  if (fg.size() < 10) return std::nullopt;
  sx /= n;
  sy /= n;
  double cxx = 0, cxy = 0, cyy = 0;
  for (auto [x, y] : fg) {
    double dx = x - sx, dy = y - sy;
    cxx += dx * dx;
    cxy += dx * dy;
    cyy += dy * dy;
  }
  double angle = 0.5 * std::atan2(2 * cxy, cxx - cyy);  // [-pi/2, pi/2]
  if (angle < 0) angle += std::numbers::pi;
  return angle;
}

double axial_circular_std(const std::vector<double>& angles) {
  op_check(!angles.empty(), "axial_circular_std: no angles");
  double cs = 0, sn = 0;
  for (double a : angles) {
    cs += std::cos(2 * a);
    sn += std::sin(2 * a);
  }
  cs /= (double)angles.size();
  sn /= (double)angles.size();
  double r = std::sqrt(cs * cs + sn * sn);
  r = std::max(r, 1e-12);
  return 0.5 * std::sqrt(-2.0 * std::log(r));
}

}  // namespace sanet
