#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sanet/losses.hpp"
#include "sanet/rng.hpp"
#include "sanet/tape.hpp"

using namespace sanet;

namespace {

using DTensor = TensorT<double>;
using DTape = TapeT<double>;

DTensor rows(std::vector<std::vector<double>> r) {
  DTensor t({(int)r.size(), (int)r[0].size()});
  size_t k = 0;
  for (auto& row : r)
    for (double v : row) t.data[k++] = v;
  return t;
}

DTensor rnd(std::vector<int> shape, uint64_t seed, double lo = -1, double hi = 1) {
  auto rng = RngStream::derive(seed, "t");
  DTensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double tri_at(const DTensor& emb, const std::vector<int>& labels, double margin) {
  DTape t;
  return t.val(triplet_loss(t, t.leaf(emb), labels, margin)).data[0];
}

double ce_oracle(const DTensor& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0), C = logits.dim(1);
  double loss = 0;
  for (int n = 0; n < N; ++n) {
    const double* z = logits.data.data() + (size_t)n * C;
    double mx = z[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    double se = 0;
    for (int c = 0; c < C; ++c) se += std::exp(z[c] - mx);
    loss += std::log(se) + mx - z[labels[(size_t)n]];
  }
  return loss / N;
}

}  // namespace

TEST_CASE("triplet loss hand oracles") {
  // 1-d clusters with exactly known distances; second coordinate stays zero
  std::vector<int> labels{5, 5, 9, 9};  // ids need not be contiguous
  // hardest pos 1.0, hardest neg 0.5 for every anchor
  DTensor tight = rows({{0, 0}, {1.0, 0}, {0.5, 0}, {1.5, 0}});
  CHECK(tri_at(tight, labels, 0.3) == doctest::Approx(0.8).epsilon(1e-9));
  // well separated: pos 0.5, neg >= 1.0, hinge closed everywhere
  DTensor apart = rows({{0, 0}, {0.5, 0}, {1.5, 0}, {2.0, 0}});
  CHECK(tri_at(apart, labels, 0.3) == doctest::Approx(0.0));
  // margin 0.8 reopens the hinge for the two inner anchors only:
  // their 0.5 - 1.0 + 0.8 = 0.3 averages to 0.15 over the four anchors
  CHECK(tri_at(apart, labels, 0.8) == doctest::Approx(0.15).epsilon(1e-9));
}

TEST_CASE("larger margin never shrinks the loss") {
  DTensor emb = rnd({8, 4}, 17);
  std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
  double prev = tri_at(emb, labels, 0.0);
  for (double m : {0.1, 0.3, 0.7, 1.5}) {
    double cur = tri_at(emb, labels, m);
    CHECK(cur >= prev - 1e-12);
    prev = cur;
  }
}

TEST_CASE("mining agrees with exhaustive enumeration") {
  DTensor emb = rnd({12, 5}, 23);
  std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
  auto mined = mine_batch_hard(emb, labels);
  REQUIRE(mined.size() == 12);
  const int d = 5;
  for (int a = 0; a < 12; ++a) {
    int bp = -1, bn = -1;
    double dp = -1, dn = std::numeric_limits<double>::infinity();
    for (int b = 0; b < 12; ++b) {
      if (b == a) continue;
      double dist = row_distance(emb.data.data() + (size_t)a * d, emb.data.data() + (size_t)b * d, d);
      if (labels[(size_t)b] == labels[(size_t)a]) {
        if (dist > dp) dp = dist, bp = b;
      } else if (dist < dn) {
        dn = dist, bn = b;
      }
    }
    CHECK(mined[(size_t)a].pos == bp);
    CHECK(mined[(size_t)a].neg == bn);
    CHECK(mined[(size_t)a].pos_dist == doctest::Approx(dp).epsilon(1e-12));
    CHECK(mined[(size_t)a].neg_dist == doctest::Approx(dn).epsilon(1e-12));
  }
}

TEST_CASE("triplet gradient matches central differences") {
  DTensor emb = rnd({6, 3}, 29, -8, 8);
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const double margin = 7.0;  // wide margin keeps hinges active and off the kink
  // the backward is the exact gradient only above the damping floor, so the
  // mined pairs must sit clear of it for the comparison to be meaningful
  for (const auto& m : mine_batch_hard(emb, labels)) {
    REQUIRE(m.pos_dist > kDistGradFloor + 0.05);
    REQUIRE(m.neg_dist > kDistGradFloor + 0.05);
  }
  DTape t;
  Var e = t.leaf(emb, true);
  t.backward(triplet_loss(t, e, labels, margin));
  DTensor g = t.grad(e);
  const double h = 1e-6;
  double worst = 0;
  for (size_t c = 0; c < emb.data.size(); ++c) {
    DTensor ep = emb, em = emb;
    ep.data[c] += h;
    em.data[c] -= h;
    double fd = (tri_at(ep, labels, margin) - tri_at(em, labels, margin)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.data[c]));
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("coincident embeddings stay finite") {
  DTensor emb = rows({{0.5, 0.5}, {0.5, 0.5}, {1.0, 0.2}, {1.0, 0.2}});
  std::vector<int> labels{0, 0, 1, 1};
  DTape t;
  Var e = t.leaf(emb, true);
  Var loss = triplet_loss(t, e, labels, 0.4);
  CHECK(std::isfinite(t.val(loss).data[0]));
  t.backward(loss);
  for (double v : t.grad(e).data) CHECK(std::isfinite(v));
}

TEST_CASE("pairs inside the damping floor emit shrunken gradients") {
  // the exact quotient (a - n) / d keeps unit magnitude however small the
  // spread; under the floor the backward scales it by d / floor instead, so
  // the gradient vanishes with the spread rather than staying full strength
  const double eps = 1e-3;
  DTensor emb = rows({{0, 0}, {0, 0}, {eps, 0}, {eps, 0}});
  std::vector<int> labels{0, 0, 1, 1};
  DTape t;
  Var e = t.leaf(emb, true);
  Var loss = triplet_loss(t, e, labels, 0.4);
  CHECK(t.val(loss).data[0] == doctest::Approx(0.4 - eps).epsilon(1e-4));  // value is undamped
  t.backward(loss);
  double mx = 0;
  for (double v : t.grad(e).data) mx = std::max(mx, std::abs(v));
  CHECK(mx > 0.0);
  CHECK(mx <= 3 * eps / kDistGradFloor);  // far below the unit-scale exact gradient
}

TEST_CASE("closed hinges send no gradient, classification still does") {
  DTensor emb = rows({{0, 0}, {0.1, 0}, {5.0, 0}, {5.1, 0}});
  std::vector<int> labels{0, 0, 1, 1};
  DTape t;
  Var e = t.leaf(emb, true);
  Var loss = triplet_loss(t, e, labels, 0.2);
  CHECK(t.val(loss).data[0] == 0.0);
  t.backward(loss);
  for (double v : t.grad(e).data) CHECK(v == 0.0);

  DTape t2;
  Var z = t2.leaf(rnd({4, 3}, 31), true);
  t2.backward(id_loss(t2, z, {0, 1, 2, 0}));
  double total = 0;
  for (double v : t2.grad(z).data) total += std::abs(v);
  CHECK(total > 0);
}

TEST_CASE("joint objective sums every term") {
  // hand-assembled branch outputs; each feature is its own leaf
  DTape t;
  std::vector<int> labels{0, 0, 1, 1};
  BranchVars b;
  b.global_feat = t.leaf(rnd({4, 3}, 41), true);
  b.td_parts = {t.leaf(rnd({4, 2}, 42), true), t.leaf(rnd({4, 2}, 43), true)};
  b.lr_parts = {t.leaf(rnd({4, 2}, 44), true), t.leaf(rnd({4, 2}, 45), true)};
  b.embedding = assemble_embedding(t, b);
  DTensor gl = rnd({4, 2}, 46), tl = rnd({4, 2}, 47), ll = rnd({4, 2}, 48);
  b.global_logits = t.leaf(gl, true);
  b.td_logits = t.leaf(tl, true);
  b.lr_logits = t.leaf(ll, true);

  LossTerms lt = total_loss(t, b, labels, 0.5);
  LossBreakdown bd = breakdown(t, lt);
  REQUIRE(bd.tri_td.size() == 2);
  REQUIRE(bd.tri_lr.size() == 2);
  CHECK(bd.finite());

  CHECK(bd.id_global == doctest::Approx(ce_oracle(gl, labels)).epsilon(1e-12));
  CHECK(bd.id_topdown == doctest::Approx(ce_oracle(tl, labels)).epsilon(1e-12));
  CHECK(bd.id_leftright == doctest::Approx(ce_oracle(ll, labels)).epsilon(1e-12));

  double sum = bd.id_global + bd.id_topdown + bd.id_leftright + bd.tri_global + bd.tri_embed;
  for (double v : bd.tri_td) sum += v;
  for (double v : bd.tri_lr) sum += v;
  CHECK(bd.total == doctest::Approx(sum).epsilon(1e-12));

  // uniform logits cost exactly ln(num_classes)
  DTape t2;
  Var z0 = t2.leaf(DTensor({4, 2}));
  CHECK(t2.val(id_loss(t2, z0, labels)).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("breakdown finiteness flags bad values") {
  LossBreakdown b;
  b.tri_td = {0.1, 0.2};
  b.tri_lr = {0.3};
  CHECK(b.finite());
  b.tri_lr[0] = std::nan("");
  CHECK(!b.finite());
  b.tri_lr[0] = 0.3;
  b.total = std::numeric_limits<double>::infinity();
  CHECK(!b.finite());
}

TEST_CASE("degenerate batches are rejected") {
  DTensor emb = rnd({3, 2}, 51);
  DTape t;
  Var e = t.leaf(emb);
  CHECK_THROWS_AS((void)triplet_loss(t, e, {0, 0, 1}, 0.3), std::invalid_argument);  // lone id 1
  Var e4 = t.leaf(rnd({4, 2}, 52));
  CHECK_THROWS_AS((void)triplet_loss(t, e4, {0, 0, 0, 0}, 0.3), std::invalid_argument);  // no negatives
  CHECK_THROWS_AS((void)triplet_loss(t, e4, {0, 0, 1}, 0.3), std::invalid_argument);  // count mismatch
  Var e3 = t.leaf(rnd({2, 2, 2}, 53));
  CHECK_THROWS_AS((void)triplet_loss(t, e3, {0, 0}, 0.3), std::invalid_argument);  // not [N,d]
}
