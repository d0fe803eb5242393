#include "sanet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sanet/checkpoint.hpp"
#include "sanet/jsonkeys.hpp"
#include "sanet/losses.hpp"

namespace fs = std::filesystem;

namespace sanet {

void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
  j = nlohmann::ordered_json{{"epochs", c.epochs},
                             {"steps_per_epoch", c.steps_per_epoch},
                             {"base_lr", c.base_lr},
                             {"stn_lr_multiplier", c.stn_lr_multiplier},
                             {"margin", c.margin},
                             {"P", c.p_identities},
                             {"K", c.k_images},
                             {"warmup_freeze_epochs", c.warmup_freeze_epochs},
                             {"seed", c.seed}};
}

void train_config_from_json(const nlohmann::json& j, TrainConfig& c) {
  // "model" is allowed so one file can carry both configs
  require_known_keys(j,
                     {"epochs", "steps_per_epoch", "base_lr", "stn_lr_multiplier", "margin", "P",
                      "K", "warmup_freeze_epochs", "seed", "model"},
                     "train config");
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.stn_lr_multiplier = j.value("stn_lr_multiplier", c.stn_lr_multiplier);
  c.margin = j.value("margin", c.margin);
  c.p_identities = j.value("P", c.p_identities);
  c.k_images = j.value("K", c.k_images);
  c.warmup_freeze_epochs = j.value("warmup_freeze_epochs", c.warmup_freeze_epochs);
  c.seed = j.value("seed", c.seed);
}

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                const std::map<ParamGroup, double>& lr_by_group, const std::set<ParamGroup>& frozen) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, (double)step_count_);
  const double bc2 = 1.0 - std::pow(beta2_, (double)step_count_);
  for (auto& p : params.all()) {
    if (frozen.count(p.group)) continue;
    auto git = grads.find(p.name);
    if (git == grads.end()) throw std::invalid_argument("adam: no gradient for parameter " + p.name);
    const Tensor& g = git->second;
    if (!g.same_shape(p.value))
      throw std::invalid_argument("adam: gradient shape " + shape_str(g.shape) +
                                  " does not match parameter " + p.name);
    if (!g.all_finite()) throw NumericalError("non-finite gradient in parameter " + p.name);
    const double lr = lr_by_group.at(p.group);
    auto& mom = moments_[p.name];
    if (mom.m.data.empty()) {
      mom.m = Tensor(p.value.shape);
      mom.v = Tensor(p.value.shape);
    }
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      double gi = g.data[i];
      double m = beta1_ * mom.m.data[i] + (1.0 - beta1_) * gi;
      double v = beta2_ * mom.v.data[i] + (1.0 - beta2_) * gi * gi;
      mom.m.data[i] = (float)m;
      mom.v.data[i] = (float)v;
      p.value.data[i] = (float)(p.value.data[i] - lr * (m / bc1) / (std::sqrt(v / bc2) + eps_));
    }
  }
}

namespace {

Tensor gather_batch(const std::vector<LabeledImage>& split, const std::vector<int>& idx,
                    const AugmentConfig& aug, uint64_t seed, int64_t step,
                    std::vector<int>& labels_out) {
  const int S = split[(size_t)idx[0]].pixels.dim(1);
  Tensor batch({(int)idx.size(), 3, S, S});
  labels_out.clear();
  for (size_t s = 0; s < idx.size(); ++s) {
    auto rng = RngStream::derive(seed, "augment", (uint64_t)step, (uint64_t)s);
    Tensor img = augment(split[(size_t)idx[s]].pixels, aug, rng);
    std::copy(img.data.begin(), img.data.end(), batch.data.begin() + (int64_t)s * img.numel());
    labels_out.push_back(split[(size_t)idx[s]].identity);
  }
  return batch;
}

std::string epoch_ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.json", epoch);
  return buf;
}

nlohmann::ordered_json log_line(int64_t step, int epoch, const std::map<ParamGroup, double>& lr,
                                const LossBreakdown& b, double wall_ms) {
  nlohmann::ordered_json j{{"step", step},
                           {"epoch", epoch},
                           {"lr_trunk", lr.at(ParamGroup::trunk)},
                           {"lr_stn", lr.at(ParamGroup::stn)},
                           {"lr_head", lr.at(ParamGroup::head)},
                           {"id_global", b.id_global},
                           {"id_topdown", b.id_topdown},
                           {"id_leftright", b.id_leftright},
                           {"tri_global", b.tri_global}};
  if (b.tri_td.size() == 2 && b.tri_lr.size() == 2) {
    j["tri_top"] = b.tri_td[0];
    j["tri_down"] = b.tri_td[1];
    j["tri_left"] = b.tri_lr[0];
    j["tri_right"] = b.tri_lr[1];
  } else {
    j["tri_td"] = b.tri_td;
    j["tri_lr"] = b.tri_lr;
  }
  j["tri_embed"] = b.tri_embed;
  j["total"] = b.total;
  j["wall_ms"] = wall_ms;
  return j;
}

}  // namespace

FitResult fit(SANet& model, const Dataset& data, const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const int batch = cfg.p_identities * cfg.k_images;
  int steps_per_epoch = cfg.steps_per_epoch;
  if (steps_per_epoch == 0) steps_per_epoch = (int)data.train.size() / batch;
  if (steps_per_epoch < 1)
    throw std::invalid_argument("train: split of " + std::to_string(data.train.size()) +
                                " images cannot fill a single " + std::to_string(batch) + "-image batch");
  const int64_t total_steps = (int64_t)cfg.epochs * steps_per_epoch;

  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/train.log", std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot open " + out_dir + "/train.log");

  save_checkpoint(out_dir + "/ckpt_init.json", model.config(), model.params());
  std::string last_ckpt = out_dir + "/ckpt_init.json";

  Adam adam;
  const AugmentConfig aug;
  auto sampler = RngStream::derive(cfg.seed, "sampler");
  FitResult res;
  int64_t gstep = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool freeze_trunk = epoch < cfg.warmup_freeze_epochs;
    double epoch_total = 0;
    for (int s = 0; s < steps_per_epoch; ++s, ++gstep) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<int> idx = pk_sample(data.train, cfg.p_identities, cfg.k_images, sampler);
      std::vector<int> labels;
      Tensor images = gather_batch(data.train, idx, aug, cfg.seed, gstep, labels);

      Tape tape;
      BranchVars b = model.forward(tape, images);
      LossTerms lt = total_loss(tape, b, labels, (float)cfg.margin);
      LossBreakdown bd = breakdown(tape, lt);
      if (!bd.finite())
        throw NumericalError("non-finite loss at step " + std::to_string(gstep) +
                             "; last checkpoint: " + last_ckpt);
      tape.backward(lt.total);
      auto grads = tape.param_grads();

      const double lr = cosine_lr(gstep, total_steps, cfg.base_lr);
      std::map<ParamGroup, double> lr_by_group{{ParamGroup::trunk, lr},
                                               {ParamGroup::stn, lr * cfg.stn_lr_multiplier},
                                               {ParamGroup::head, lr}};
      std::set<ParamGroup> frozen;
      if (freeze_trunk) frozen.insert(ParamGroup::trunk);
      adam.step(model.params(), grads, lr_by_group, frozen);

      double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      log << log_line(gstep, epoch, lr_by_group, bd, wall_ms).dump() << "\n";
      epoch_total += bd.total;
      if (gstep == 0) res.first_total_loss = bd.total;
      res.last_total_loss = bd.total;
    }
    log.flush();
    std::string ck = out_dir + "/" + epoch_ckpt_name(epoch);
    save_checkpoint(ck, model.config(), model.params());
    last_ckpt = ck;
    std::printf("epoch %d/%d  mean total loss %.4f\n", epoch + 1, cfg.epochs,
                epoch_total / steps_per_epoch);
    std::fflush(stdout);
  }
  res.final_checkpoint = out_dir + "/ckpt_final.json";
  save_checkpoint(res.final_checkpoint, model.config(), model.params());
  res.steps_run = gstep;
  return res;
}

}  // namespace sanet
