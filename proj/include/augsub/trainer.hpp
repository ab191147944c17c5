#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augsub/analysis.hpp"
#include "augsub/dataset.hpp"
#include "augsub/objective.hpp"
#include "augsub/optim.hpp"

namespace augsub {

struct DatasetSpec {
  enum class Kind { synthetic, cifar10 };
  Kind kind = Kind::synthetic;
  // synthetic
  SynthSpec synth;
  std::int64_t eval_per_class = 50;
  // cifar10
  std::vector<std::string> train_paths;
  std::string test_path;
  std::int64_t subset = 0;  // 0 = all; otherwise first N records

  void validate() const {
    if (kind == Kind::synthetic) {
      synth.validate();
      if (eval_per_class < 1) {
        throw ConfigError("eval-per-class must be positive");
      }
    } else {
      if (train_paths.empty() || test_path.empty()) {
        throw ConfigError("cifar10 dataset needs train files and a test file");
      }
      if (subset < 0) {
        throw ConfigError("subset must be non-negative");
      }
    }
  }
};

struct TrainConfig {
  VitConfig model;
  DropSpec drop;        // main branch regularization
  SubSpec sub;          // built via build_sub_spec
  LossWeights weights;
  LossKind loss_kind = LossKind::ce;
  double label_smoothing = 0.0;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 128;
  std::int64_t warmup_epochs = 2;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double probe_ratio = 0.5;
  std::uint64_t seed = 1;
  DatasetSpec dataset;

  void validate() const {
    model.validate();
    drop.validate();
    weights.validate();
    dataset.validate();
    // Re-derive the sub spec so strength/ranges are checked coherently.
    build_sub_spec(sub.variant, sub.variant == Variant::none ? 0.0 : sub.strength,
                   drop, sub.mask.strategy, sub.target);
    if (epochs < 1 || batch_size < 1) {
      throw ConfigError("epochs and batch size must be positive");
    }
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
      throw ConfigError("warmup epochs must be in [0, epochs)");
    }
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
      throw ConfigError("label smoothing must be in [0,1)");
    }
    if (probe_ratio < 0.0 || probe_ratio > 1.0) {
      throw ConfigError("probe ratio must be in [0,1]");
    }
    if (lr_min > lr_max || lr_max <= 0.0 || lr_min < 0.0) {
      throw ConfigError("need 0 <= lr_min <= lr_max, lr_max > 0");
    }
    if (model.mask_token !=
        (variant_uses_mask(sub.variant) &&
         sub.mask.strategy == MaskStrategy::mask_token)) {
      throw ConfigError("model.mask-token must be set exactly when a mask "
                        "variant uses the mask-token strategy");
    }
  }
};

struct TrainResult {
  std::vector<TrainRecord> records;
  ModelParams<float> params;
  double final_eval_acc = 0.0;
};

// Full training run: deterministic given the config (bit-identical records
// and weights across runs, machines and AUGSUB_THREADS settings). Throws
// Error with the step number and loss components if a loss turns non-finite.
TrainResult train(const TrainConfig& cfg);

// Accuracy of the clean eval-mode forward over a dataset, batched.
double evaluate_accuracy(ModelParams<float>& params, const Dataset& data,
                         std::int64_t batch_size);

}  // namespace augsub
