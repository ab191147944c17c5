#include "augsub/trainer.hpp"

#include <cmath>
#include <numeric>

namespace augsub {

namespace {

struct LoadedData {
  Dataset train;
  Dataset eval;
};

LoadedData load_data(const DatasetSpec& spec) {
  LoadedData d;
  if (spec.kind == DatasetSpec::Kind::synthetic) {
    d.train = synth_dataset(spec.synth);
    SynthSpec ev = spec.synth;
    ev.per_class = spec.eval_per_class;
    ev.index_offset = spec.synth.index_offset + spec.synth.per_class;
    d.eval = synth_dataset(ev);
  } else {
    d.train = load_records(spec.train_paths);
    if (spec.subset > 0 && spec.subset < d.train.n) {
      const std::int64_t pixels =
          d.train.channels * d.train.image_size * d.train.image_size;
      d.train.n = spec.subset;
      d.train.images.resize(static_cast<std::size_t>(spec.subset * pixels));
      d.train.labels.resize(static_cast<std::size_t>(spec.subset));
    }
    d.eval = load_records({spec.test_path});
  }
  return d;
}

double batch_accuracy(const std::vector<float>& logits, std::int64_t classes,
                      const std::vector<std::int64_t>& labels) {
  const std::vector<std::int64_t> pred = argmax_rows(logits, classes);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += pred[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

double evaluate_accuracy(ModelParams<float>& params, const Dataset& data,
                         std::int64_t batch_size) {
  if (data.n < 1) {
    throw Error("evaluation dataset is empty");
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.n));
  std::iota(order.begin(), order.end(), 0);
  std::int64_t correct = 0;
  for (std::int64_t at = 0; at < data.n; at += batch_size) {
    const std::int64_t n = std::min(batch_size, data.n - at);
    Batch b = gather_batch(data, order, at, n);
    Graph<float> g;
    g.recording = false;
    Tensor<float> logits =
        forward_logits<float>(g, b.images, n, params, DropSpec{}, 0, nullptr,
                              MaskStrategy::token_removal);
    const std::vector<std::int64_t> pred =
        argmax_rows(logits.val(), params.cfg.classes);
    for (std::int64_t i = 0; i < n; ++i) {
      correct += pred[static_cast<std::size_t>(i)] ==
                         b.labels[static_cast<std::size_t>(i)]
                     ? 1
                     : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.n);
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  LoadedData data = load_data(cfg.dataset);
  if (data.train.classes != cfg.model.classes) {
    throw ConfigError("dataset has " + std::to_string(data.train.classes) +
                      " classes, model expects " +
                      std::to_string(cfg.model.classes));
  }
  if (data.train.image_size != cfg.model.image_size ||
      data.train.channels != cfg.model.channels) {
    throw ConfigError("dataset geometry does not match the model");
  }
  const std::int64_t steps_per_epoch = data.train.n / cfg.batch_size;
  if (steps_per_epoch < 1) {
    throw ConfigError("batch size " + std::to_string(cfg.batch_size) +
                      " exceeds the training set of " +
                      std::to_string(data.train.n));
  }
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;
  const std::int64_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;

  TrainResult result{{}, build_params<float>(cfg.model, cfg.seed), 0.0};
  ModelParams<float>& params = result.params;
  std::vector<Tensor<float>> plist = params.tensors();
  AdamW opt(plist, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);

  // Fixed probe batch: the first batch-size samples in dataset order, so
  // epoch-to-epoch diagnostics track the model, not the sampling.
  const std::int64_t probe_n = std::min(cfg.batch_size, data.train.n);
  std::vector<std::int64_t> probe_idx(static_cast<std::size_t>(probe_n));
  std::iota(probe_idx.begin(), probe_idx.end(), 0);
  const Batch probe_batch = gather_batch(data.train, probe_idx, 0, probe_n);
  // Unsmoothed labels for the probes; the objective's own targets for the
  // branch gradient norms.
  const Tensor<float> probe_targets =
      hard_targets<float>(probe_batch.labels, cfg.model.classes, 0.0);
  const Tensor<float> probe_train_targets = hard_targets<float>(
      probe_batch.labels, cfg.model.classes, cfg.label_smoothing);

  struct Diag {
    double eq1 = 0, eq2 = 0, gn_main = 0, gn_sub = 0, eval_acc = 0;
  } diag;
  auto measure = [&](std::uint64_t tag) {
    // Probe losses stay cross-entropy whatever the training loss; they are
    // a fixed diagnostic, not part of the objective.
    auto [e1, e2] = probe_losses<float>(
        probe_batch.images, probe_n, params, probe_targets, cfg.probe_ratio,
        cfg.sub.mask.strategy, LossKind::ce, cfg.seed, tag);
    diag.eq1 = e1;
    diag.eq2 = e2;
    const BranchGradReport gr = branch_grad_norms<float>(
        probe_batch.images, probe_n, params, probe_train_targets, cfg.drop,
        cfg.sub, cfg.weights, cfg.loss_kind, cfg.seed, tag);
    diag.gn_main = gr.grad_norm_main;
    diag.gn_sub = gr.grad_norm_sub;
    diag.eval_acc = evaluate_accuracy(params, data.eval, cfg.batch_size);
  };
  measure(0);

  std::vector<std::int64_t> order(static_cast<std::size_t>(data.train.n));
  std::iota(order.begin(), order.end(), 0);
  std::int64_t global_step = 0;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::keyed(cfg.seed, {stream::shuffle,
                                            static_cast<std::uint64_t>(epoch)});
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    double acc_sum = 0.0;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      ++global_step;
      const Batch batch =
          gather_batch(data.train, order, s * cfg.batch_size, cfg.batch_size);
      const double lr =
          cosine_lr(global_step, total_steps, warmup_steps, cfg.lr_max,
                    cfg.lr_min);
      const Tensor<float> targets = hard_targets<float>(
          batch.labels, cfg.model.classes, cfg.label_smoothing);
      Graph<float> g;
      StepOutputs<float> out = objective_step<float>(
          g, batch.images, batch.n, params, cfg.drop, cfg.sub, cfg.weights,
          cfg.loss_kind, targets, cfg.seed,
          static_cast<std::uint64_t>(global_step));
      const double loss_total = out.loss_total.scalar();
      const double loss_main = out.loss_main.scalar();
      const double loss_sub =
          out.loss_sub.defined() ? out.loss_sub.scalar() : 0.0;
      if (!std::isfinite(loss_total) || !std::isfinite(loss_main) ||
          !std::isfinite(loss_sub)) {
        throw Error("non-finite loss at step " + std::to_string(global_step) +
                    ": total=" + std::to_string(loss_total) + " main=" +
                    std::to_string(loss_main) + " sub=" +
                    std::to_string(loss_sub));
      }
      g.backward(out.loss_total);
      opt.step(plist, lr);
      params.zero_grads();
      acc_sum += batch_accuracy(out.logits_main.val(), cfg.model.classes,
                                batch.labels);
      TrainRecord r;
      r.epoch = epoch;
      r.step = global_step;
      r.loss_total = loss_total;
      r.loss_main = loss_main;
      r.loss_sub = loss_sub;
      r.probe_eq1 = diag.eq1;
      r.probe_eq2 = diag.eq2;
      r.grad_norm_main = diag.gn_main;
      r.grad_norm_sub = diag.gn_sub;
      r.lr = lr;
      r.train_acc = acc_sum / static_cast<double>(s + 1);
      r.eval_acc = diag.eval_acc;
      result.records.push_back(r);
    }
    measure(static_cast<std::uint64_t>(epoch));
    TrainRecord& last = result.records.back();
    last.probe_eq1 = diag.eq1;
    last.probe_eq2 = diag.eq2;
    last.grad_norm_main = diag.gn_main;
    last.grad_norm_sub = diag.gn_sub;
    last.eval_acc = diag.eval_acc;
  }
  result.final_eval_acc = diag.eval_acc;
  return result;
}

}  // namespace augsub
