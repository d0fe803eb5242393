#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sanet/model.hpp"
#include "sanet/ops.hpp"
#include "sanet/tape.hpp"

// Joint objective: one cross-entropy head per branch family plus batch-hard
// triplet terms on every individual feature and on the full embedding. All
// terms are summed unweighted; triplet losses average over all anchors.

namespace sanet {

template <class S>
struct HardMined {
  int pos = -1, neg = -1;  // row indices of the selected hardest pair
  S pos_dist = 0, neg_dist = 0;
};

// Euclidean distance with a 1e-12 floor inside the sqrt so coincident points
// stay differentiable.
template <class S>
S row_distance(const S* a, const S* b, int d) {
  S ss = 0;
  for (int i = 0; i < d; ++i) {
    S diff = a[i] - b[i];
    ss += diff * diff;
  }
  return std::sqrt(ss + S(1e-12));
}

// Hardest positive (max same-label distance, self excluded) and hardest
// negative (min other-label distance) per anchor. Ties keep the lowest row
// index. Every present label needs at least two rows, and at least two
// distinct labels must be present.
template <class S>
std::vector<HardMined<S>> mine_batch_hard(const TensorT<S>& emb, const std::vector<int>& labels) {
  op_check(emb.ndim() == 2, "mine_batch_hard: embeddings must be [N,d], got " + shape_str(emb.shape));
  const int N = emb.dim(0), d = emb.dim(1);
  op_check((int)labels.size() == N, "mine_batch_hard: " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(N) + " rows");
  std::map<int, int> counts;
  for (int l : labels) counts[l]++;
  for (auto& [l, c] : counts)
    op_check(c >= 2, "mine_batch_hard: identity " + std::to_string(l) + " has a single sample");
  op_check(counts.size() >= 2, "mine_batch_hard: batch holds a single identity, no negatives exist");

  std::vector<S> D((size_t)N * N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      D[(size_t)a * N + b] = row_distance(emb.data.data() + (size_t)a * d,
                                          emb.data.data() + (size_t)b * d, d);
  std::vector<HardMined<S>> out((size_t)N);
  for (int a = 0; a < N; ++a) {
    HardMined<S>& m = out[(size_t)a];
    for (int b = 0; b < N; ++b) {
      if (b == a) continue;
      S dist = D[(size_t)a * N + b];
      if (labels[b] == labels[a]) {
        if (m.pos < 0 || dist > m.pos_dist) {
          m.pos = b;
          m.pos_dist = dist;
        }
      } else {
        if (m.neg < 0 || dist < m.neg_dist) {
          m.neg = b;
          m.neg_dist = dist;
        }
      }
    }
  }
  return out;
}

// Distances below this scale contribute damped gradients: the true Euclidean
// gradient keeps unit magnitude however close a pair sits, so while the
// embeddings are still forming, the mined pairs emit full-strength noise in
// arbitrary directions, and under a per-coordinate optimizer that noise
// outvotes the small coherent id-loss signal and pins the embeddings near a
// single point. Below the floor the update direction is unchanged but its
// magnitude scales with the distance, matching the squared-distance form of
// the hinge; past the floor the backward is the exact Euclidean gradient.
constexpr double kDistGradFloor = 2.0;

// Batch-hard triplet loss: mean_a max(d(a,p*) - d(a,n*) + margin, 0). The
// hardest-pair selection is treated as constant; gradients flow through the
// two selected distances of each anchor.
template <class S>
Var triplet_loss(TapeT<S>& t, Var emb, const std::vector<int>& labels, S margin) {
  const auto& ev = t.val(emb);
  auto mined = std::make_shared<std::vector<HardMined<S>>>(mine_batch_hard(ev, labels));
  const int N = ev.dim(0), d = ev.dim(1);
  S loss = 0;
  for (auto& m : *mined) {
    S h = m.pos_dist - m.neg_dist + margin;
    if (h > S(0)) loss += h;
  }
  loss /= (S)N;
  int eid = emb.id;
  return t.make(TensorT<S>::scalar(loss), {emb.id}, [=](TapeT<S>& tp, int self) {
    S g0 = tp.grad_buf(self).data[0] / (S)N;
    const auto& e = tp.val(Var{eid});
    auto& de = tp.grad_buf(eid);
    for (int a = 0; a < N; ++a) {
      const HardMined<S>& m = (*mined)[(size_t)a];
      if (!(m.pos_dist - m.neg_dist + margin > S(0))) continue;
      const S* ea = e.data.data() + (size_t)a * d;
      const S* ep = e.data.data() + (size_t)m.pos * d;
      const S* en = e.data.data() + (size_t)m.neg * d;
      S* da = de.data.data() + (size_t)a * d;
      S* dp = de.data.data() + (size_t)m.pos * d;
      S* dn = de.data.data() + (size_t)m.neg * d;
      const S pd = std::max(m.pos_dist, (S)kDistGradFloor);
      const S nd = std::max(m.neg_dist, (S)kDistGradFloor);
      for (int i = 0; i < d; ++i) {
        S up = (ea[i] - ep[i]) / pd;  // d d(a,p)/d ea, damped under the floor
        S un = (ea[i] - en[i]) / nd;
        da[i] += g0 * (up - un);
        dp[i] -= g0 * up;
        dn[i] += g0 * un;
      }
    }
  });
}

// Cross-entropy over identity logits.
template <class S>
Var id_loss(TapeT<S>& t, Var logits, const std::vector<int>& labels) {
  return softmax_cross_entropy(t, logits, labels);
}

// Scalar Vars of every term plus their unweighted sum.
struct LossTerms {
  Var id_global, id_topdown, id_leftright;
  Var tri_global;
  std::vector<Var> tri_td;  // one per top->down part
  std::vector<Var> tri_lr;  // one per left->right part
  Var tri_embed;
  Var total;
};

// Plain numbers mirroring LossTerms, for logging.
struct LossBreakdown {
  double id_global = 0, id_topdown = 0, id_leftright = 0;
  double tri_global = 0;
  std::vector<double> tri_td, tri_lr;
  double tri_embed = 0;
  double total = 0;
  bool finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    for (double v : tri_td)
      if (!ok(v)) return false;
    for (double v : tri_lr)
      if (!ok(v)) return false;
    return ok(id_global) && ok(id_topdown) && ok(id_leftright) && ok(tri_global) &&
           ok(tri_embed) && ok(total);
  }
};

// Three ID terms, one triplet per individual feature, one on the embedding.
template <class S>
LossTerms total_loss(TapeT<S>& t, const BranchVars& b, const std::vector<int>& labels, S margin) {
  LossTerms lt;
  lt.id_global = id_loss(t, b.global_logits, labels);
  lt.id_topdown = id_loss(t, b.td_logits, labels);
  lt.id_leftright = id_loss(t, b.lr_logits, labels);
  lt.tri_global = triplet_loss(t, b.global_feat, labels, margin);
  for (Var p : b.td_parts) lt.tri_td.push_back(triplet_loss(t, p, labels, margin));
  for (Var p : b.lr_parts) lt.tri_lr.push_back(triplet_loss(t, p, labels, margin));
  lt.tri_embed = triplet_loss(t, b.embedding, labels, margin);
  Var s = add(t, add(t, lt.id_global, lt.id_topdown), lt.id_leftright);
  s = add(t, s, lt.tri_global);
  for (Var v : lt.tri_td) s = add(t, s, v);
  for (Var v : lt.tri_lr) s = add(t, s, v);
  lt.total = add(t, s, lt.tri_embed);
  return lt;
}

template <class S>
LossBreakdown breakdown(const TapeT<S>& t, const LossTerms& lt) {
  LossBreakdown b;
  auto v = [&](Var x) { return (double)t.val(x).data[0]; };
  b.id_global = v(lt.id_global);
  b.id_topdown = v(lt.id_topdown);
  b.id_leftright = v(lt.id_leftright);
  b.tri_global = v(lt.tri_global);
  for (Var x : lt.tri_td) b.tri_td.push_back(v(x));
  for (Var x : lt.tri_lr) b.tri_lr.push_back(v(x));
  b.tri_embed = v(lt.tri_embed);
  b.total = v(lt.total);
  return b;
}

}  // namespace sanet
