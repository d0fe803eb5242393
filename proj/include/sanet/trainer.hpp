#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "sanet/data.hpp"
#include "sanet/model.hpp"
#include "sanet/params.hpp"

namespace sanet {

// Raised when a loss or gradient stops being finite; training aborts but the
// last epoch checkpoint stays on disk. The CLI maps this to exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 10;
  int steps_per_epoch = 0;  // 0: floor(train images / (P*K))
  double base_lr = 5e-4;
  double stn_lr_multiplier = 0.05;
  double margin = 0.3;
  int p_identities = 8;  // P
  int k_images = 4;      // K
  int warmup_freeze_epochs = 0;  // epochs with the trunk group frozen
  uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (steps_per_epoch < 0) throw std::invalid_argument("train: steps_per_epoch must be >= 0");
    if (base_lr <= 0) throw std::invalid_argument("train: base_lr must be positive");
    if (stn_lr_multiplier <= 0 || stn_lr_multiplier > 1)
      throw std::invalid_argument("train: stn_lr_multiplier must be in (0,1]");
    if (margin < 0) throw std::invalid_argument("train: margin must be >= 0");
    if (p_identities < 2 || k_images < 2)
      throw std::invalid_argument("train: need P >= 2 and K >= 2 for triplet mining");
    if (warmup_freeze_epochs < 0 || warmup_freeze_epochs > epochs)
      throw std::invalid_argument("train: warmup_freeze_epochs outside [0, epochs]");
  }
};

void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void train_config_from_json(const nlohmann::json& j, TrainConfig& c);

// Half-cosine decay from base to 0 over total_steps, evaluated per step.
inline double cosine_lr(int64_t step, int64_t total_steps, double base) {
  if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0," +
                                std::to_string(total_steps) + "]");
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * (double)step / (double)total_steps));
}

// Adam with bias correction. One shared step counter; moment buffers keyed by
// parameter name. Frozen groups are skipped entirely (their gradients are
// discarded, moments untouched).
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const std::map<std::string, Tensor>& grads,
            const std::map<ParamGroup, double>& lr_by_group, const std::set<ParamGroup>& frozen);

  int64_t step_count() const { return step_count_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  double beta1_, beta2_, eps_;
  int64_t step_count_ = 0;
  std::map<std::string, Moments> moments_;
};

struct FitResult {
  std::string final_checkpoint;  // manifest path
  int64_t steps_run = 0;
  double last_total_loss = 0;
  double first_total_loss = 0;
};

// Full training loop: P*K batches with augmentation, joint loss, per-group
// cosine learning rates, epoch checkpoints plus ckpt_init/ckpt_final, and a
// JSON-lines log at <out_dir>/train.log.
FitResult fit(SANet& model, const Dataset& data, const TrainConfig& cfg, const std::string& out_dir);

}  // namespace sanet
