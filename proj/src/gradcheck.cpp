#include "sanet/gradcheck.hpp"

#include <cmath>

namespace sanet {
namespace {

DTensor relu_safe_tensor(std::vector<int> shape, RngStream& rng) {
  DTensor t(std::move(shape));
  for (auto& v : t.data) {
    double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * rng.uniform(0.2, 1.0);
  }
  return t;
}

double check_matmul(RngStream& rng, uint64_t ws) {
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng);
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) { return weighted_sum(t, matmul(t, in[0], in[1]), ws); },
      {a, b});
}

double check_add_bias(RngStream& rng, uint64_t ws) {
  auto x = random_tensor({3, 4}, rng);
  auto b = random_tensor({4}, rng);
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) { return weighted_sum(t, add_bias(t, in[0], in[1]), ws); },
      {x, b});
}

double check_conv(RngStream& rng, uint64_t ws) {
  auto x1 = random_tensor({2, 2, 5, 5}, rng);
  auto w1 = random_tensor({3, 2, 3, 3}, rng);
  auto b1 = random_tensor({3}, rng);
  double e1 = fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        return weighted_sum(t, conv2d(t, in[0], in[1], in[2], 1, 1), ws);
      },
      {x1, w1, b1});
  auto x2 = random_tensor({1, 2, 6, 6}, rng);
  auto w2 = random_tensor({2, 2, 4, 4}, rng);
  auto b2 = random_tensor({2}, rng);
  double e2 = fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        return weighted_sum(t, conv2d(t, in[0], in[1], in[2], 2, 1), ws);
      },
      {x2, w2, b2});
  return std::max(e1, e2);
}

double check_relu(RngStream& rng, uint64_t ws) {
  auto x = relu_safe_tensor({2, 7}, rng);
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) { return weighted_sum(t, relu(t, in[0]), ws); }, {x});
}

double check_pool(RngStream& rng, uint64_t ws) {
  auto x = random_tensor({2, 3, 4, 4}, rng);
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) { return weighted_sum(t, global_avg_pool(t, in[0]), ws); },
      {x});
}

double check_concat(RngStream& rng, uint64_t ws) {
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 2}, rng);
  auto c = random_tensor({2, 4}, rng);
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        return weighted_sum(t, concat_last_axis(t, {in[0], in[1], in[2]}), ws);
      },
      {a, b, c});
}

double check_slice(RngStream& rng, uint64_t ws) {
  auto x = random_tensor({1, 2, 4, 6}, rng);
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        Var top = weighted_sum(t, slice_spatial(t, in[0], Axis::height, 0), ws);
        Var mid = weighted_sum(t, slice_strip(t, in[0], Axis::width, 1, 3), ws + 1);
        return add(t, top, mid);
      },
      {x});
}

double check_softmax_ce(RngStream& rng, uint64_t) {
  auto z = random_tensor({4, 6}, rng, -2, 2);
  std::vector<int> labels;
  for (int i = 0; i < 4; ++i) labels.push_back(rng.uniform_int(6));
  return fd_max_rel_err(
      [labels](DTape& t, const std::vector<Var>& in) {
        return softmax_cross_entropy(t, in[0], labels);
      },
      {z});
}

DTensor perturbed_theta(int n, RngStream& rng, double mag) {
  DTensor th({n, 6});
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 6; ++k)
      th.data[(size_t)i * 6 + k] = kIdentityTheta[(size_t)k] + rng.uniform(-mag, mag);
  }
  return th;
}

double check_grid(RngStream& rng, uint64_t ws) {
  auto th = perturbed_theta(2, rng, 0.2);
  double e1 = fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        return weighted_sum(t, generate_grid(t, in[0], 5, 5, 5, 5), ws);
      },
      {th});
  double e2 = fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        return weighted_sum(t, generate_grid(t, in[0], 4, 6, 5, 7), ws + 1);
      },
      {th});
  return std::max(e1, e2);
}

// Every sampled source coordinate must sit well between lattice points,
// otherwise the FD step would cross the bilinear kink.
bool grid_clears_lattice(const DTensor& th, int h, int w, double clearance) {
  DTape t;
  Var g = generate_grid(t, t.leaf(th), h, w, h, w);
  for (double v : t.val(g).data) {
    double frac = v - std::floor(v);
    if (frac < clearance || frac > 1.0 - clearance) return false;
  }
  return true;
}

double check_bilinear(RngStream& rng, uint64_t ws) {
  auto u = random_tensor({1, 2, 6, 6}, rng);
  DTensor th({1, 6});
  for (int attempt = 0; attempt < 200; ++attempt) {
    th = perturbed_theta(1, rng, 0.15);
    th.data[2] += 0.031;  // nudge translations off the lattice
    th.data[5] += 0.047;
    if (grid_clears_lattice(th, 6, 6, 0.05)) break;
  }
  return fd_max_rel_err(
      [ws](DTape& t, const std::vector<Var>& in) {
        Var grid = generate_grid(t, in[1], 6, 6, 6, 6);
        return weighted_sum(t, bilinear_sample(t, in[0], grid), ws);
      },
      {u, th});
}

// Regenerate until every anchor's hardest-pair selection and hinge value
// clear the decision boundaries by a safe margin, and the mined distances
// sit above the damping floor where the backward is the exact gradient.
double check_triplet(RngStream& rng, uint64_t) {
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};
  const double margin = 0.3, clearance = 0.03;
  const int N = 8, d = 4;
  DTensor emb({N, d});
  for (int attempt = 0; attempt < 500; ++attempt) {
    emb = random_tensor({N, d}, rng);
    for (auto& v : emb.data) v *= 6;  // spread the batch clear of the floor
    auto mined = mine_batch_hard(emb, labels);
    bool ok = true;
    for (const auto& m : mined)
      if (m.pos_dist < kDistGradFloor + 0.05 || m.neg_dist < kDistGradFloor + 0.05) ok = false;
    for (int a = 0; a < N && ok; ++a) {
      std::vector<double> pos, neg;
      for (int b = 0; b < N; ++b) {
        if (b == a) continue;
        double dist = row_distance(emb.data.data() + (size_t)a * d, emb.data.data() + (size_t)b * d, d);
        (labels[b] == labels[a] ? pos : neg).push_back(dist);
      }
      std::sort(pos.begin(), pos.end());
      std::sort(neg.begin(), neg.end());
      if (pos.size() > 1 && pos.back() - pos[pos.size() - 2] < clearance) ok = false;
      if (neg.size() > 1 && neg[1] - neg[0] < clearance) ok = false;
      double hinge = mined[(size_t)a].pos_dist - mined[(size_t)a].neg_dist + margin;
      if (std::abs(hinge) < clearance) ok = false;
    }
    if (ok) break;
  }
  return fd_max_rel_err(
      [labels, margin](DTape& t, const std::vector<Var>& in) {
        return triplet_loss(t, in[0], labels, margin);
      },
      {emb});
}

double check_model(uint64_t seed) {
  SANetConfig cfg;
  cfg.input_size = 32;
  cfg.trunk_channels = {3, 4, 6, 6};
  cfg.branch_channels = 8;
  cfg.embed_dim_global = 6;
  cfg.embed_dim_part = 5;
  cfg.parts_per_branch = 2;
  cfg.num_classes = 2;
  SANetT<double> model(cfg, seed);
  // The stock init is a terrible place to difference: the predicted
  // transform is exactly the identity, parking every sampling point on a
  // pixel-corner kink of the interpolation, and the zero biases sit exactly
  // on the activation boundary of any conv patch whose inputs are all
  // relu-dead. Move to a generic point: a non-identity transform plus noise
  // on every parameter.
  auto rng = RngStream::derive(seed, "model-batch");
  {
    auto& fw = model.params().get("stn.fc2.w").value;
    for (auto& v : fw.data) v = rng.uniform(-0.05, 0.05);
    auto& fb = model.params().get("stn.fc2.b").value;
    const double skew[6] = {0.93, 0.061, 0.043, -0.057, 1.07, -0.039};
    for (int i = 0; i < 6; ++i) fb.data[(size_t)i] = skew[i];
    for (auto& p : model.params().all())
      for (auto& v : p.value.data) v += rng.uniform(-0.02, 0.02);
  }
  DTensor images({4, 3, 32, 32});
  for (auto& v : images.data) v = rng.uniform(0.05, 0.95);
  const std::vector<int> labels = {0, 0, 1, 1};
  return model_fd_max_rel_err(model, images, labels, 0.3, 2, seed, 5e-4);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed, int rounds) {
  struct Entry {
    const char* name;
    double (*fn)(RngStream&, uint64_t);
  };
  const Entry entries[] = {
      {"matmul", check_matmul},   {"add_bias", check_add_bias},
      {"conv2d", check_conv},     {"relu", check_relu},
      {"global_avg_pool", check_pool}, {"concat", check_concat},
      {"slice", check_slice},     {"softmax_ce", check_softmax_ce},
      {"grid", check_grid},       {"bilinear", check_bilinear},
      {"triplet", check_triplet},
  };
  std::vector<GradCheckCase> out;
  for (const auto& e : entries) {
    GradCheckCase c{e.name, 0};
    for (int r = 0; r < rounds; ++r) {
      auto rng = RngStream::derive(seed, std::string("gradcheck:") + e.name, (uint64_t)r);
      c.max_rel_err = std::max(c.max_rel_err, e.fn(rng, seed * 1000 + (uint64_t)r));
    }
    out.push_back(c);
  }
  GradCheckCase m{"model", 0};
  for (int r = 0; r < rounds; ++r)
    m.max_rel_err = std::max(m.max_rel_err, check_model(seed + (uint64_t)r * 7919));
  out.push_back(m);
  return out;
}

}  // namespace sanet
