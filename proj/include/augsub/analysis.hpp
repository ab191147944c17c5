#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augsub/objective.hpp"

namespace augsub {

// One row per optimizer step. The diagnostic columns (probe_*, grad_norm_*,
// eval_acc) are measured once per epoch boundary and stamped onto that
// epoch's last record; earlier records carry the most recent measurement so
// every field is always finite.
struct TrainRecord {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double loss_total = 0, loss_main = 0, loss_sub = 0;
  double probe_eq1 = 0, probe_eq2 = 0;
  double grad_norm_main = 0, grad_norm_sub = 0;
  double lr = 0;
  double train_acc = 0, eval_acc = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,loss_total,loss_main,loss_sub,probe_eq1,probe_eq2,"
    "grad_norm_main,grad_norm_sub,lr,train_acc,eval_acc";

// CSV with exactly the header above, 9 significant digits, LF line ends.
void emit_metrics(const std::vector<TrainRecord>& records,
                  const std::string& path);
std::vector<TrainRecord> parse_metrics(const std::string& path);

// Last record of each epoch, in epoch order: the rows carrying that epoch's
// fresh diagnostics.
std::vector<TrainRecord> epoch_summaries(const std::vector<TrainRecord>& r);

struct CompareReport {
  std::int64_t epochs_compared = 0;
  // Final-epoch values, run A and run B.
  double eval_acc_a = 0, eval_acc_b = 0;
  double probe_eq1_a = 0, probe_eq1_b = 0;
  double probe_eq2_a = 0, probe_eq2_b = 0;
  double loss_total_a = 0, loss_total_b = 0;
};

CompareReport compare_runs(const std::vector<TrainRecord>& a,
                           const std::vector<TrainRecord>& b);
std::string compare_text(const CompareReport& r);
std::string compare_json(const CompareReport& r);

// Matmul-dominated FLOP count for one sample: forward counts 2mnk per
// matmul (attention included), a backward pass costs twice the forward.
// keep_ratio is the fraction of patch tokens the sub branch sees; the main
// branch always sees all of them. keep_ratio 1 makes the step exactly twice
// a single forward+backward.
struct FlopBudget {
  double flops_main = 0;   // fwd+bwd, main branch
  double flops_sub = 0;    // fwd+bwd, sub branch
  double ratio = 1.0;      // (main+sub)/main
  std::int64_t tokens_main = 0;
  std::int64_t tokens_sub = 0;
};

FlopBudget flop_estimate(const VitConfig& cfg, double keep_ratio);

struct BranchGradReport {
  double grad_norm_main = 0;
  double grad_norm_sub = 0;
};

namespace andet {

template <typename T>
double mean_param_norm(ModelParams<T>& params) {
  double acc = 0.0;
  for (auto& kv : params.items) {
    double sq = 0.0;
    if (kv.second->grad_live) {
      sq = static_cast<double>(kernels::sumsq(
          kv.second->grad.data(),
          static_cast<std::int64_t>(kv.second->grad.size())));
    }
    acc += std::sqrt(sq);
  }
  return acc / static_cast<double>(params.items.size());
}

}  // namespace andet

// Per-branch gradient magnitudes on one batch: each branch's weighted loss
// is backpropagated alone and the norm is the mean over parameter tensors of
// the per-tensor L2. Branch randomness comes from probe streams keyed by
// (seed, probe, tag), so repeated calls with one tag are identical. With a
// weight of zero a branch reports exactly zero. Variants without a sub
// branch report the main branch only.
template <typename T>
BranchGradReport branch_grad_norms(const std::vector<T>& images,
                                   std::int64_t n, ModelParams<T>& params,
                                   const Tensor<T>& targets,
                                   const DropSpec& main_drop,
                                   const SubSpec& sub, const LossWeights& w,
                                   LossKind kind, std::uint64_t seed,
                                   std::uint64_t tag) {
  BranchGradReport rep;
  const std::uint64_t key_main =
      Rng::keyed(seed, {stream::probe, tag, stream::branch_main}).next_u64();
  const std::uint64_t key_sub =
      Rng::keyed(seed, {stream::probe, tag, stream::branch_sub}).next_u64();

  params.zero_grads();
  std::vector<Tensor<T>> plist = params.tensors();
  {
    Graph<T> g;
    MaskOutcome mask;
    const MaskOutcome* mask_ptr = nullptr;
    DropSpec drop = main_drop;
    if (sub.variant == Variant::single_mask) {
      Rng mr = Rng::keyed(seed, {stream::probe, tag, stream::mask});
      mask = sample_mask(params.cfg.patches(), sub.mask.ratio, mr);
      mask_ptr = &mask;
    } else if (sub.variant == Variant::single_dropout) {
      drop.dropout_p = sub.strength;
    } else if (sub.variant == Variant::single_droppath) {
      drop.drop_path_p = sub.strength;
    }
    Tensor<T> logits = forward_logits<T>(g, images, n, params, drop, key_main,
                                         mask_ptr, sub.mask.strategy);
    Tensor<T> loss = classification_loss(g, logits, targets, kind);
    const bool weighted = variant_has_sub(sub.variant);
    Tensor<T> wloss =
        weighted ? scale(g, loss, static_cast<T>(w.w_ce)) : loss;
    g.backward(wloss);
    rep.grad_norm_main = andet::mean_param_norm(params);
    params.zero_grads();
  }
  if (variant_has_sub(sub.variant)) {
    // Teacher logits computed off-graph; the sub branch then records alone.
    Tensor<T> teacher;
    {
      Graph<T> ge;
      ge.recording = false;
      teacher = forward_logits<T>(ge, images, n, params, main_drop, key_main,
                                  nullptr, sub.mask.strategy);
    }
    Graph<T> g;
    MaskOutcome mask;
    const MaskOutcome* mask_ptr = nullptr;
    if (sub.variant == Variant::masksub) {
      Rng mr = Rng::keyed(seed, {stream::probe, tag, stream::mask});
      mask = sample_mask(params.cfg.patches(), sub.mask.ratio, mr);
      mask_ptr = &mask;
    }
    auto [logits_s, loss_s] =
        sub_step<T>(g, images, n, params, main_drop, sub, key_sub, mask_ptr,
                    teacher, targets, kind);
    (void)logits_s;
    Tensor<T> wloss = scale(g, loss_s, static_cast<T>(w.w_kd));
    g.backward(wloss);
    rep.grad_norm_sub = andet::mean_param_norm(params);
    params.zero_grads();
  }
  return rep;
}

}  // namespace augsub
