#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "sanet/jsonkeys.hpp"
#include "sanet/ops.hpp"
#include "sanet/params.hpp"
#include "sanet/stn.hpp"
#include "sanet/tape.hpp"

// Embedding network with one global branch and two aligned spatial branches.
// The trunk downsamples by 8. Both spatial branches share one alignment
// module: theta is regressed once per image and the resampled map feeds the
// top/down split and the left/right split. The retrieval embedding is the
// concatenation (global, top..down parts, left..right parts).

namespace sanet {

struct SANetConfig {
  int input_size = 64;
  std::vector<int> trunk_channels = {16, 32, 64, 64};
  int branch_channels = 128;
  int embed_dim_global = 64;  // global feature width
  int embed_dim_part = 64;    // width of each part feature
  int parts_per_branch = 2;   // strips per spatial branch
  int num_classes = 0;
  bool stn_enabled = true;

  int trunk_out_size() const { return input_size / 8; }
  int embedding_dim() const { return embed_dim_global + 2 * parts_per_branch * embed_dim_part; }

  void validate() const {
    if (input_size < 32 || input_size % 8 != 0)
      throw std::invalid_argument("model: input_size must be a multiple of 8 and >= 32, got " +
                                  std::to_string(input_size));
    if (trunk_channels.size() != 4)
      throw std::invalid_argument("model: trunk_channels needs 4 entries, got " +
                                  std::to_string(trunk_channels.size()));
    for (int c : trunk_channels)
      if (c < 1) throw std::invalid_argument("model: trunk channel widths must be positive");
    if (branch_channels < 1 || embed_dim_global < 1 || embed_dim_part < 1)
      throw std::invalid_argument("model: feature widths must be positive");
    if (parts_per_branch < 2 || parts_per_branch % 2 != 0)
      throw std::invalid_argument("model: parts_per_branch must be a positive even count, got " +
                                  std::to_string(parts_per_branch));
    if (trunk_out_size() % parts_per_branch != 0)
      throw std::invalid_argument("model: trunk output size " + std::to_string(trunk_out_size()) +
                                  " does not split into " + std::to_string(parts_per_branch) + " strips");
    if (num_classes < 1)
      throw std::invalid_argument("model: num_classes must be positive, got " +
                                  std::to_string(num_classes));
  }
};

inline void to_json(nlohmann::ordered_json& j, const SANetConfig& c) {
  j = nlohmann::ordered_json{{"input_size", c.input_size},
                             {"trunk_channels", c.trunk_channels},
                             {"branch_channels", c.branch_channels},
                             {"embed_dim_global", c.embed_dim_global},
                             {"embed_dim_part", c.embed_dim_part},
                             {"parts_per_branch", c.parts_per_branch},
                             {"num_classes", c.num_classes},
                             {"stn_enabled", c.stn_enabled}};
}

template <class J>
void config_from_json(const J& j, SANetConfig& c) {
  require_known_keys(j,
                     {"input_size", "trunk_channels", "branch_channels", "embed_dim_global",
                      "embed_dim_part", "parts_per_branch", "num_classes", "stn_enabled"},
                     "model config");
  c.input_size = j.value("input_size", c.input_size);
  if (j.contains("trunk_channels")) c.trunk_channels = j.at("trunk_channels").template get<std::vector<int>>();
  c.branch_channels = j.value("branch_channels", c.branch_channels);
  c.embed_dim_global = j.value("embed_dim_global", c.embed_dim_global);
  c.embed_dim_part = j.value("embed_dim_part", c.embed_dim_part);
  c.parts_per_branch = j.value("parts_per_branch", c.parts_per_branch);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.stn_enabled = j.value("stn_enabled", c.stn_enabled);
}

struct BranchVars;
template <class S>
Var assemble_embedding(TapeT<S>& t, const BranchVars& b);

// Per-batch forward outputs. All feature Vars are [N, width] rows.
struct BranchVars {
  Var global_feat;
  std::vector<Var> td_parts;  // top -> down
  std::vector<Var> lr_parts;  // left -> right
  Var embedding;              // concat(global, td..., lr...)
  Var theta;                  // [N,6]; identity when alignment is disabled
  Var global_logits, td_logits, lr_logits;
};

template <class S>
class SANetT {
 public:
  SANetT(SANetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& tc = cfg_.trunk_channels;
    const int maps = cfg_.trunk_out_size();
    auto he = [&](const std::string& name, std::vector<int> shape, int fan_in, ParamGroup g) {
      int width = shape[0];
      store_.add(name, he_uniform<S>(std::move(shape), fan_in, init_stream(seed, name)), g);
      store_.add(bias_of(name), TensorT<S>({width}), g);
    };
    // trunk
    he("trunk.conv0.w", {tc[0], 3, 3, 3}, 3 * 9, ParamGroup::trunk);
    he("trunk.conv1.w", {tc[1], tc[0], 4, 4}, tc[0] * 16, ParamGroup::trunk);
    he("trunk.conv2.w", {tc[2], tc[1], 4, 4}, tc[1] * 16, ParamGroup::trunk);
    he("trunk.conv3.w", {tc[3], tc[2], 4, 4}, tc[2] * 16, ParamGroup::trunk);
    // alignment module (registered even when disabled, so the ablation pair
    // shares identical init for everything else and checkpoints stay
    // layout-compatible)
    loc_ = LocNetShape{tc[3], maps, maps};
    register_locnet_params(store_, loc_, seed);
    // branch heads
    he("global.conv.w", {cfg_.branch_channels, tc[3], 4, 4}, tc[3] * 16, ParamGroup::head);
    he("topdown.conv.w", {cfg_.branch_channels, tc[3], 3, 3}, tc[3] * 9, ParamGroup::head);
    he("leftright.conv.w", {cfg_.branch_channels, tc[3], 3, 3}, tc[3] * 9, ParamGroup::head);
    add_linear("global.reduce", cfg_.branch_channels, cfg_.embed_dim_global, seed);
    for (int m = 0; m < cfg_.parts_per_branch; ++m) {
      add_linear("topdown.reduce" + std::to_string(m), cfg_.branch_channels, cfg_.embed_dim_part, seed);
      add_linear("leftright.reduce" + std::to_string(m), cfg_.branch_channels, cfg_.embed_dim_part, seed);
    }
    // identity classifiers
    add_classifier("cls.global", cfg_.embed_dim_global, cfg_.num_classes, seed);
    add_classifier("cls.topdown", cfg_.parts_per_branch * cfg_.embed_dim_part, cfg_.num_classes, seed);
    add_classifier("cls.leftright", cfg_.parts_per_branch * cfg_.embed_dim_part, cfg_.num_classes, seed);
  }

  const SANetConfig& config() const { return cfg_; }
  ParamStoreT<S>& params() { return store_; }
  const ParamStoreT<S>& params() const { return store_; }

  BranchVars forward(TapeT<S>& t, const TensorT<S>& images) const {
    op_check(images.ndim() == 4 && images.dim(1) == 3 && images.dim(2) == cfg_.input_size &&
                 images.dim(3) == cfg_.input_size,
             "model: expected images [N,3," + std::to_string(cfg_.input_size) + "," +
                 std::to_string(cfg_.input_size) + "], got " + shape_str(images.shape));
    auto p = store_.bind(t);
    Var x = t.leaf(images, false);
    Var u = relu(t, conv2d(t, x, p.at("trunk.conv0.w"), p.at("trunk.conv0.b"), 1, 1));
    u = relu(t, conv2d(t, u, p.at("trunk.conv1.w"), p.at("trunk.conv1.b"), 2, 1));
    u = relu(t, conv2d(t, u, p.at("trunk.conv2.w"), p.at("trunk.conv2.b"), 2, 1));
    u = relu(t, conv2d(t, u, p.at("trunk.conv3.w"), p.at("trunk.conv3.b"), 2, 1));

    BranchVars out;
    Var v = u;  // spatial branches read the aligned map when enabled
    if (cfg_.stn_enabled) {
      auto stn = stn_forward(t, p, loc_, u);
      v = stn.aligned;
      out.theta = stn.theta;
    } else {
      TensorT<S> ident({images.dim(0), 6});
      for (int n = 0; n < images.dim(0); ++n)
        for (int i = 0; i < 6; ++i) ident.data[(size_t)n * 6 + i] = (S)kIdentityTheta[(size_t)i];
      out.theta = t.leaf(std::move(ident), false);
    }

    // global branch: unaligned trunk map
    Var gb = relu(t, conv2d(t, u, p.at("global.conv.w"), p.at("global.conv.b"), 2, 1));
    out.global_feat = linear(t, p, "global.reduce", global_avg_pool(t, gb));

    // spatial branches: aligned map, strip split, per-part reduction
    Var tb = relu(t, conv2d(t, v, p.at("topdown.conv.w"), p.at("topdown.conv.b"), 1, 1));
    Var lb = relu(t, conv2d(t, v, p.at("leftright.conv.w"), p.at("leftright.conv.b"), 1, 1));
    const int M = cfg_.parts_per_branch;
    for (int m = 0; m < M; ++m) {
      Var ts = global_avg_pool(t, slice_strip(t, tb, Axis::height, m, M));
      out.td_parts.push_back(linear(t, p, "topdown.reduce" + std::to_string(m), ts));
      Var ls = global_avg_pool(t, slice_strip(t, lb, Axis::width, m, M));
      out.lr_parts.push_back(linear(t, p, "leftright.reduce" + std::to_string(m), ls));
    }

    out.embedding = assemble_embedding(t, out);
    out.global_logits = linear(t, p, "cls.global", out.global_feat);
    out.td_logits = linear(t, p, "cls.topdown", concat_last_axis(t, out.td_parts));
    out.lr_logits = linear(t, p, "cls.leftright", concat_last_axis(t, out.lr_parts));
    return out;
  }

  const LocNetShape& locnet_shape() const { return loc_; }

 private:
  static std::string bias_of(const std::string& wname) {
    return wname.substr(0, wname.size() - 2) + ".b";
  }

  // Embedding projections start at zero, like their biases. From a random
  // start the hinge mining contracts all embeddings to a single point within
  // the first epochs, long before the id losses build class structure; at
  // zero the mining gradient vanishes identically, so the projections grow
  // from the id losses with class structure in place from the first step.
  void add_linear(const std::string& name, int in, int out, uint64_t) {
    store_.add(name + ".w", TensorT<S>({in, out}), ParamGroup::head);
    store_.add(name + ".b", TensorT<S>({out}), ParamGroup::head);
  }

  void add_classifier(const std::string& name, int in, int out, uint64_t seed) {
    store_.add(name + ".w", glorot_uniform<S>({in, out}, in, out, init_stream(seed, name + ".w")),
               ParamGroup::head);
    store_.add(name + ".b", TensorT<S>({out}), ParamGroup::head);
  }

  static Var linear(TapeT<S>& t, const std::map<std::string, Var>& p, const std::string& name, Var x) {
    return add_bias(t, matmul(t, x, p.at(name + ".w")), p.at(name + ".b"));
  }

  SANetConfig cfg_;
  ParamStoreT<S> store_;
  LocNetShape loc_;
};

using SANet = SANetT<float>;

// Retrieval embedding layout: (global, top..down parts, left..right parts).
template <class S>
Var assemble_embedding(TapeT<S>& t, const BranchVars& b) {
  std::vector<Var> parts{b.global_feat};
  parts.insert(parts.end(), b.td_parts.begin(), b.td_parts.end());
  parts.insert(parts.end(), b.lr_parts.begin(), b.lr_parts.end());
  return concat_last_axis(t, parts);
}

}  // namespace sanet
