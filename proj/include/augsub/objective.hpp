#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "augsub/masking.hpp"
#include "augsub/ops.hpp"
#include "augsub/vit.hpp"

// Self-distillation training objective. One step runs the clean main forward
// against hard labels, then a second forward of the SAME weights under a
// stronger perturbation (masking, dropout, or drop-path) against the
// softened, detached main predictions; the two losses combine by fixed
// weights. Single-model baselines and a no-sub baseline live here too so
// comparisons share one pipeline.

namespace augsub {

enum class Variant {
  none,            // plain supervised baseline, no sub branch
  masksub,         // sub forward sees masked tokens
  dropsub,         // sub forward uses dropout at `strength`
  pathsub,         // sub forward uses drop-path at `strength` (> main's)
  single_mask,     // no sub branch; the ONLY forward is masked
  single_dropout,  // no sub branch; boosted dropout on the only forward
  single_droppath  // no sub branch; boosted drop-path on the only forward
};

const char* variant_name(Variant v);
Variant variant_from(const std::string& s);
inline bool variant_has_sub(Variant v) {
  return v == Variant::masksub || v == Variant::dropsub ||
         v == Variant::pathsub;
}
inline bool variant_uses_mask(Variant v) {
  return v == Variant::masksub || v == Variant::single_mask;
}

enum class TargetKind { soft, hard };
enum class LossKind { ce, bce };

struct LossWeights {
  double w_ce = 0.5;
  double w_kd = 0.5;

  void validate() const {
    if (w_ce < 0.0 || w_kd < 0.0) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (std::abs(w_ce + w_kd - 1.0) > 1e-9) {
      throw ConfigError("loss weights must sum to 1; got " +
                        std::to_string(w_ce) + " + " + std::to_string(w_kd));
    }
  }
};

struct SubSpec {
  Variant variant = Variant::masksub;
  double strength = 0.5;   // mask ratio, dropout p, or drop-path p
  MaskSpec mask;           // strategy/patch for mask variants; ratio == strength
  TargetKind target = TargetKind::soft;
};

// Validates strength against the variant and the main branch's DropSpec and
// fills in the derived mask spec. pathsub must be strictly stronger than the
// main drop-path, otherwise the "sub sees a harder path" premise is gone.
SubSpec build_sub_spec(Variant variant, double strength,
                       const DropSpec& main_drop, MaskStrategy strategy,
                       TargetKind target);

template <typename T>
struct StepOutputs {
  Tensor<T> logits_main;  // from the branch that carries the hard loss
  Tensor<T> logits_sub;   // undefined when the variant has no sub branch
  Tensor<T> loss_main;
  Tensor<T> loss_sub;     // undefined when the variant has no sub branch
  Tensor<T> loss_total;
  std::int64_t sub_tokens = 0;  // token count the sub forward saw
};

// One-hot rows, optionally label-smoothed: (1-s) on the class, s/C elsewhere
// plus s/C on the class. Constant tensor.
template <typename T>
Tensor<T> hard_targets(const std::vector<std::int64_t>& labels,
                       std::int64_t classes, double smoothing) {
  const std::int64_t n = static_cast<std::int64_t>(labels.size());
  Tensor<T> t = Tensor<T>::zeros({n, classes});
  const T off = static_cast<T>(smoothing / static_cast<double>(classes));
  const T on = static_cast<T>(1.0 - smoothing) + off;
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractError("label " + std::to_string(labels[i]) +
                          " outside [0," + std::to_string(classes) + ")");
    }
    for (std::int64_t c = 0; c < classes; ++c) {
      t.val()[i * classes + c] = off;
    }
    t.val()[i * classes + labels[i]] = on;
  }
  return t;
}

// Forward pass with an optional mask perturbation. mask == nullptr means the
// clean pipeline. Token-removal shrinks the sequence; mask-token substitutes
// the learnable fill; zero-fill blanks pixels before patchify.
template <typename T>
Tensor<T> forward_logits(Graph<T>& g, const std::vector<T>& images,
                         std::int64_t n, ModelParams<T>& params,
                         const DropSpec& drop, std::uint64_t drop_key,
                         const MaskOutcome* mask, MaskStrategy strategy,
                         std::int64_t* tokens_seen = nullptr) {
  const VitConfig& cfg = params.cfg;
  Tensor<T> patches;
  if (mask != nullptr && strategy == MaskStrategy::zero_fill) {
    std::vector<T> blanked = images;
    zero_fill_image(blanked, n, cfg.channels, cfg.image_size, cfg.patch_size,
                    *mask);
    patches = patchify(blanked, n, cfg);
  } else {
    patches = patchify(images, n, cfg);
  }
  Tensor<T> tok = embed_tokens(g, patches, params);
  if (mask != nullptr && strategy != MaskStrategy::zero_fill) {
    if (mask->total != cfg.patches()) {
      throw ContractError("mask outcome covers " + std::to_string(mask->total) +
                          " tokens; model has " +
                          std::to_string(cfg.patches()) + " patches");
    }
    const MaskOutcome tokmask =
        cfg.class_token ? offset_for_class_token(*mask) : *mask;
    if (strategy == MaskStrategy::token_removal) {
      tok = gather_tokens(g, tok, tokmask.kept);
    } else {
      tok = fill_tokens(g, tok, tokmask.masked, params.at("mask_token"));
    }
  }
  if (tokens_seen != nullptr) {
    *tokens_seen = tok.dim(1);
  }
  return vit_forward(g, tok, params, drop, drop_key);
}

template <typename T>
Tensor<T> classification_loss(Graph<T>& g, const Tensor<T>& logits,
                              const Tensor<T>& targets, LossKind kind) {
  return kind == LossKind::ce ? cross_entropy_soft(g, logits, targets)
                              : bce_soft(g, logits, targets);
}

// Soft targets from detached teacher logits: softmax for CE, sigmoid for
// BCE. The detach is what guarantees the stop-gradient; the loss ops then
// enforce it by rejecting gradient-connected targets.
template <typename T>
Tensor<T> soft_targets(Graph<T>& g, const Tensor<T>& teacher_logits,
                       LossKind kind) {
  Tensor<T> detached = teacher_logits.detach();
  return kind == LossKind::ce ? softmax(g, detached) : sigmoid(g, detached);
}

// Main branch: unperturbed forward (or the perturbed one for single-model
// variants), hard-label loss.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> main_step(Graph<T>& g,
                                          const std::vector<T>& images,
                                          std::int64_t n,
                                          ModelParams<T>& params,
                                          const DropSpec& drop,
                                          std::uint64_t drop_key,
                                          const Tensor<T>& targets,
                                          LossKind kind) {
  Tensor<T> logits = forward_logits<T>(g, images, n, params, drop, drop_key,
                                       nullptr, MaskStrategy::token_removal);
  Tensor<T> loss = classification_loss(g, logits, targets, kind);
  return {logits, loss};
}

// Sub branch: perturbed forward of the same weights against soft (or, for
// the distillation ablation, hard) targets. main_logits stay live on the
// graph; only their detached values feed the target.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sub_step(
    Graph<T>& g, const std::vector<T>& images, std::int64_t n,
    ModelParams<T>& params, const DropSpec& main_drop, const SubSpec& sub,
    std::uint64_t drop_key, const MaskOutcome* mask,
    const Tensor<T>& main_logits, const Tensor<T>& targets, LossKind kind,
    std::int64_t* tokens_seen = nullptr) {
  DropSpec drop = main_drop;
  const MaskOutcome* use_mask = nullptr;
  switch (sub.variant) {
    case Variant::masksub:
      use_mask = mask;
      break;
    case Variant::dropsub:
      drop.dropout_p = sub.strength;
      break;
    case Variant::pathsub:
      drop.drop_path_p = sub.strength;
      break;
    default:
      throw ContractError("sub_step called for a variant without a sub "
                          "branch: " + std::string(variant_name(sub.variant)));
  }
  if (sub.variant == Variant::masksub && mask == nullptr) {
    throw ContractError("masksub sub_step needs a sampled mask");
  }
  Tensor<T> logits =
      forward_logits<T>(g, images, n, params, drop, drop_key, use_mask,
                        sub.mask.strategy, tokens_seen);
  Tensor<T> tgt = sub.target == TargetKind::soft
                      ? soft_targets(g, main_logits, kind)
                      : targets;
  Tensor<T> loss = classification_loss(g, logits, tgt, kind);
  return {logits, loss};
}

// Weighted total: w_ce * main + w_kd * sub.
template <typename T>
Tensor<T> combined_loss(Graph<T>& g, const Tensor<T>& loss_main,
                        const Tensor<T>& loss_sub, const LossWeights& w) {
  w.validate();
  return add_weighted(g, loss_main, static_cast<T>(w.w_ce), loss_sub,
                      static_cast<T>(w.w_kd));
}

// A full training step's losses on one graph. Branch drop keys derive from
// disjoint streams (seed, branch, step); the mask for mask variants comes
// from (seed, mask, step), one outcome shared by the whole batch.
template <typename T>
StepOutputs<T> objective_step(Graph<T>& g, const std::vector<T>& images,
                              std::int64_t n, ModelParams<T>& params,
                              const DropSpec& main_drop, const SubSpec& sub,
                              const LossWeights& weights, LossKind kind,
                              const Tensor<T>& targets, std::uint64_t seed,
                              std::uint64_t step) {
  const std::uint64_t key_main =
      Rng::keyed(seed, {stream::branch_main, step}).next_u64();
  const std::uint64_t key_sub =
      Rng::keyed(seed, {stream::branch_sub, step}).next_u64();
  StepOutputs<T> out;
  if (sub.variant == Variant::none || variant_has_sub(sub.variant)) {
    auto [logits_m, loss_m] = main_step<T>(g, images, n, params, main_drop,
                                           key_main, targets, kind);
    out.logits_main = logits_m;
    out.loss_main = loss_m;
    out.sub_tokens = params.cfg.tokens();
    if (sub.variant == Variant::none) {
      // Baseline: the total IS the main loss, bit for bit.
      out.loss_total = loss_m;
      return out;
    }
    MaskOutcome mask;
    const MaskOutcome* mask_ptr = nullptr;
    if (sub.variant == Variant::masksub) {
      Rng mask_rng = Rng::keyed(seed, {stream::mask, step});
      mask = sample_mask(params.cfg.patches(), sub.mask.ratio, mask_rng);
      mask_ptr = &mask;
    }
    auto [logits_s, loss_s] =
        sub_step<T>(g, images, n, params, main_drop, sub, key_sub, mask_ptr,
                    logits_m, targets, kind, &out.sub_tokens);
    out.logits_sub = logits_s;
    out.loss_sub = loss_s;
    out.loss_total = combined_loss(g, loss_m, loss_s, weights);
    return out;
  }
  // Single-model baselines: one perturbed forward against hard labels.
  DropSpec drop = main_drop;
  MaskOutcome mask;
  const MaskOutcome* mask_ptr = nullptr;
  switch (sub.variant) {
    case Variant::single_mask: {
      Rng mask_rng = Rng::keyed(seed, {stream::mask, step});
      mask = sample_mask(params.cfg.patches(), sub.mask.ratio, mask_rng);
      mask_ptr = &mask;
      break;
    }
    case Variant::single_dropout:
      drop.dropout_p = sub.strength;
      break;
    case Variant::single_droppath:
      drop.drop_path_p = sub.strength;
      break;
    default:
      break;
  }
  Tensor<T> logits =
      forward_logits<T>(g, images, n, params, drop, key_main, mask_ptr,
                        sub.mask.strategy, &out.sub_tokens);
  out.logits_main = logits;
  out.loss_main = classification_loss(g, logits, targets, kind);
  out.loss_total = out.loss_main;
  return out;
}

// Diagnostic losses, eval mode (no recording, no stochastic sites): the
// hard-label loss on the clean forward and on a masked forward at `ratio`.
// The mask draws from (seed, probe, tag).
template <typename T>
std::pair<T, T> probe_losses(const std::vector<T>& images, std::int64_t n,
                             ModelParams<T>& params, const Tensor<T>& targets,
                             double ratio, MaskStrategy strategy,
                             LossKind kind, std::uint64_t seed,
                             std::uint64_t tag) {
  Graph<T> g;
  g.recording = false;
  const DropSpec none{};
  Tensor<T> clean = forward_logits<T>(g, images, n, params, none, 0, nullptr,
                                      strategy);
  Tensor<T> l1 = classification_loss(g, clean, targets, kind);
  Rng mask_rng = Rng::keyed(seed, {stream::probe, tag});
  MaskOutcome mask = sample_mask(params.cfg.patches(), ratio, mask_rng);
  Tensor<T> masked = forward_logits<T>(g, images, n, params, none, 0, &mask,
                                       strategy);
  Tensor<T> l2 = classification_loss(g, masked, targets, kind);
  return {l1.scalar(), l2.scalar()};
}

}  // namespace augsub
