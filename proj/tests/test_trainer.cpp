#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "augsub/trainer.hpp"
#include "doctest.h"

using namespace augsub;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model.image_size = 8;
  cfg.model.patch_size = 4;
  cfg.model.dim = 16;
  cfg.model.depth = 1;
  cfg.model.heads = 2;
  cfg.model.classes = 2;
  cfg.sub = build_sub_spec(Variant::none, 0.0, DropSpec{},
                           MaskStrategy::token_removal, TargetKind::soft);
  cfg.epochs = 10;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 16;
  cfg.lr_max = 2e-3;
  cfg.seed = 1;
  cfg.dataset.kind = DatasetSpec::Kind::synthetic;
  cfg.dataset.synth.seed = 2;
  cfg.dataset.synth.classes = 2;
  cfg.dataset.synth.per_class = 24;
  cfg.dataset.synth.image_size = 8;
  cfg.dataset.synth.separation = 16.0;
  cfg.dataset.eval_per_class = 20;
  return cfg;
}

double nearest_mean_accuracy(const Dataset& train, const Dataset& eval) {
  const std::int64_t d =
      train.channels * train.image_size * train.image_size;
  const std::int64_t k = train.classes;
  std::vector<double> means(static_cast<std::size_t>(k * d), 0.0);
  std::vector<std::int64_t> cnt(static_cast<std::size_t>(k), 0);
  for (std::int64_t i = 0; i < train.n; ++i) {
    const std::int64_t c = train.labels[static_cast<std::size_t>(i)];
    ++cnt[static_cast<std::size_t>(c)];
    for (std::int64_t j = 0; j < d; ++j) {
      means[c * d + j] += train.images[i * d + j];
    }
  }
  for (std::int64_t c = 0; c < k; ++c) {
    for (std::int64_t j = 0; j < d; ++j) {
      means[c * d + j] /= static_cast<double>(cnt[static_cast<std::size_t>(c)]);
    }
  }
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < eval.n; ++i) {
    double best = 1e300;
    std::int64_t arg = -1;
    for (std::int64_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double t = eval.images[i * d + j] - means[c * d + j];
        s += t * t;
      }
      if (s < best) {
        best = s;
        arg = c;
      }
    }
    correct += arg == eval.labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.n);
}

}  // namespace

TEST_CASE("lr schedule: linear warmup, cosine decay, pinned endpoints") {
  const std::int64_t total = 100, warmup = 10;
  const double lr_max = 1e-3, lr_min = 1e-5;
  CHECK(cosine_lr(1, total, warmup, lr_max, lr_min) ==
        doctest::Approx(lr_max / 10.0));
  CHECK(cosine_lr(5, total, warmup, lr_max, lr_min) ==
        doctest::Approx(lr_max / 2.0));
  CHECK(cosine_lr(warmup, total, warmup, lr_max, lr_min) ==
        doctest::Approx(lr_max));
  CHECK(cosine_lr(55, total, warmup, lr_max, lr_min) ==
        doctest::Approx((lr_max + lr_min) / 2.0));
  CHECK(cosine_lr(total, total, warmup, lr_max, lr_min) ==
        doctest::Approx(lr_min).epsilon(1e-9));
  // Monotone non-increasing after warmup.
  double prev = cosine_lr(warmup, total, warmup, lr_max, lr_min);
  for (std::int64_t s = warmup + 1; s <= total; ++s) {
    const double lr = cosine_lr(s, total, warmup, lr_max, lr_min);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(1, 10, 10, lr_max, lr_min), ConfigError);
  CHECK_THROWS_AS(cosine_lr(1, 10, 2, 1e-5, 1e-3), ConfigError);
}

TEST_CASE("optimizer applies decoupled decay and bias-corrected moments") {
  auto p = Tensor<float>::from({2}, {1.0f, -2.0f}, true);
  std::vector<Tensor<float>> ps{p};
  AdamW opt(ps, 0.9, 0.999, 1e-8, 0.1);
  p.grad() = {1.0f, 0.5f};
  p->grad_live = true;
  opt.step(ps, 0.01);
  CHECK(opt.steps_taken() == 1);
  // t=1: m_hat = g, v_hat = g*g, update = lr*g/(|g|+eps) = lr*sign(g).
  const double want0 = 1.0 - 0.01 * 0.1 * 1.0 - 0.01 * (1.0 / (1.0 + 1e-8));
  const double want1 =
      -2.0 - 0.01 * 0.1 * -2.0 - 0.01 * (0.5 / (0.5 + 1e-8));
  CHECK(p.val()[0] == doctest::Approx(want0).epsilon(1e-6));
  CHECK(p.val()[1] == doctest::Approx(want1).epsilon(1e-6));

  // Zero grad: only the decay moves the weight (moments decay toward zero).
  auto q = Tensor<float>::from({1}, {4.0f}, true);
  std::vector<Tensor<float>> qs{q};
  AdamW opt2(qs, 0.9, 0.999, 1e-8, 0.05);
  q.grad() = {0.0f};
  opt2.step(qs, 0.1);
  CHECK(q.val()[0] == doctest::Approx(4.0 * (1.0 - 0.1 * 0.05)).epsilon(1e-6));

  std::vector<Tensor<float>> grew{q, p};
  CHECK_THROWS_AS(opt2.step(grew, 0.1), ContractError);
  CHECK_THROWS_AS(AdamW(ps, 1.0, 0.999, 1e-8, 0.0), ConfigError);
  CHECK_THROWS_AS(AdamW(ps, 0.9, 0.999, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(AdamW(ps, 0.9, 0.999, 1e-8, -0.1), ConfigError);
}

TEST_CASE("synthetic records are deterministic, class-major, well-formed") {
  SynthSpec sp;
  sp.seed = 4;
  sp.classes = 3;
  sp.per_class = 5;
  sp.image_size = 8;
  const auto a = synth_records(sp);
  const auto b = synth_records(sp);
  CHECK(a == b);
  const std::int64_t rec = 1 + sp.channels * 8 * 8;
  REQUIRE(static_cast<std::int64_t>(a.size()) == 15 * rec);
  for (std::int64_t i = 0; i < 15; ++i) {
    CHECK(a[static_cast<std::size_t>(i * rec)] == i / 5);
  }
  // A different index offset redraws image noise but keeps class patterns.
  SynthSpec shifted = sp;
  shifted.index_offset = 100;
  const auto c = synth_records(shifted);
  CHECK(c != a);
  SynthSpec bad = sp;
  bad.noise = 0.0;
  CHECK_THROWS_AS(synth_records(bad), ConfigError);
}

TEST_CASE("class mean distance follows the separation formula") {
  // The class-mean gap is separation*noise*sqrt(2) for unit-L2 patterns.
  // Empirical means carry d*2*noise^2/per_class of estimation noise in the
  // squared distance; subtract it and the ratio to the formula is ~1.
  SynthSpec sp;
  sp.seed = 5;
  sp.classes = 2;
  sp.per_class = 256;
  sp.image_size = 16;
  sp.separation = 4.0;
  const auto bytes = synth_records(sp);
  const std::int64_t d = sp.channels * 16 * 16;
  const std::int64_t rec = 1 + d;
  std::vector<double> m0(static_cast<std::size_t>(d), 0.0);
  std::vector<double> m1(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t i = 0; i < 2 * sp.per_class; ++i) {
    const std::uint8_t* r = bytes.data() + i * rec;
    auto& m = r[0] == 0 ? m0 : m1;
    for (std::int64_t k = 0; k < d; ++k) {
      m[static_cast<std::size_t>(k)] += r[1 + k];
    }
  }
  double d2 = 0.0;
  for (std::int64_t k = 0; k < d; ++k) {
    const double t = (m0[static_cast<std::size_t>(k)] -
                      m1[static_cast<std::size_t>(k)]) /
                     static_cast<double>(sp.per_class);
    d2 += t * t;
  }
  const double want = 2.0 * sp.separation * sp.separation * sp.noise * sp.noise;
  const double correction =
      static_cast<double>(d) * 2.0 * sp.noise * sp.noise /
      static_cast<double>(sp.per_class);
  const double ratio = (d2 - correction) / want;
  INFO("corrected distance ratio " << ratio);
  CHECK(ratio > 0.85);
  CHECK(ratio < 1.20);
}

TEST_CASE("a nearest-mean classifier separates the synthetic classes") {
  SynthSpec sp;
  sp.seed = 3;
  sp.classes = 4;
  sp.per_class = 96;
  sp.image_size = 16;
  SynthSpec ev = sp;
  ev.per_class = 64;
  ev.index_offset = sp.per_class;
  SUBCASE("hard setting") {
    sp.separation = 4.0;
    ev.separation = 4.0;
    const double acc = nearest_mean_accuracy(synth_dataset(sp),
                                             synth_dataset(ev));
    INFO("separation 4 accuracy " << acc);
    CHECK(acc >= 0.95);
  }
  SUBCASE("default setting") {
    const double acc = nearest_mean_accuracy(synth_dataset(sp),
                                             synth_dataset(ev));
    INFO("separation 16 accuracy " << acc);
    CHECK(acc >= 0.999);
  }
}

TEST_CASE("record decoding validates shape and labels, normalizes pixels") {
  const std::int64_t rec = 1 + 3 * 2 * 2;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(2 * rec), 0);
  bytes[0] = 1;
  bytes[1] = 255;  // first pixel of channel 0
  bytes[static_cast<std::size_t>(rec)] = 0;
  Dataset d = decode_records(bytes, 2, 3, 2, "test");
  CHECK(d.n == 2);
  CHECK(d.labels[0] == 1);
  CHECK(d.labels[1] == 0);
  CHECK(d.images[0] ==
        doctest::Approx((1.0 - kPixelMean[0]) / kPixelStd[0]).epsilon(1e-6));
  CHECK(d.images[1] ==
        doctest::Approx((0.0 - kPixelMean[0]) / kPixelStd[0]).epsilon(1e-6));

  std::vector<std::uint8_t> truncated(static_cast<std::size_t>(rec + 3), 0);
  CHECK_THROWS_AS(decode_records(truncated, 2, 3, 2, "test"), Error);
  CHECK_THROWS_AS(decode_records({}, 2, 3, 2, "test"), Error);
  std::vector<std::uint8_t> badlabel(static_cast<std::size_t>(rec), 0);
  badlabel[0] = 2;  // only classes 0 and 1 exist
  CHECK_THROWS_AS(decode_records(badlabel, 2, 3, 2, "test"), Error);
  CHECK_THROWS_AS(load_records({"/nonexistent/file.bin"}), Error);
  CHECK_THROWS_AS(load_records({}), ConfigError);
}

TEST_CASE("gather_batch picks rows by order and rejects bad ranges") {
  SynthSpec sp;
  sp.seed = 6;
  sp.classes = 2;
  sp.per_class = 4;
  sp.image_size = 4;
  Dataset d = synth_dataset(sp);
  const std::int64_t pixels = d.channels * 16;
  std::vector<std::int64_t> order{7, 0, 3};
  Batch b = gather_batch(d, order, 0, 3);
  CHECK(b.n == 3);
  CHECK(b.labels[0] == d.labels[7]);
  CHECK(b.labels[1] == d.labels[0]);
  CHECK(std::memcmp(b.images.data(), d.images.data() + 7 * pixels,
                    static_cast<std::size_t>(pixels) * 4) == 0);
  CHECK_THROWS_AS(gather_batch(d, order, 2, 2), ContractError);
  std::vector<std::int64_t> oob{99};
  CHECK_THROWS_AS(gather_batch(d, oob, 0, 1), ContractError);
}

TEST_CASE("training fits a separable two-class problem") {
  TrainConfig cfg = tiny_train_config();
  TrainResult r = train(cfg);
  REQUIRE(r.records.size() ==
          static_cast<std::size_t>(cfg.epochs * (48 / cfg.batch_size)));
  CHECK(r.records.back().train_acc >= 0.95);
  CHECK(r.final_eval_acc >= 0.90);
  CHECK(r.records.back().eval_acc == r.final_eval_acc);
  for (const TrainRecord& rec : r.records) {
    CHECK(std::isfinite(rec.loss_total));
    CHECK(rec.loss_total > 0.0);
    CHECK(rec.lr > 0.0);
    CHECK(rec.loss_sub == 0.0);  // baseline variant has no sub branch
  }
  // Steps are 1-based and contiguous; epochs partition them.
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    CHECK(r.records[i].step == static_cast<std::int64_t>(i + 1));
    CHECK(r.records[i].epoch ==
          static_cast<std::int64_t>(i / 3 + 1));
  }
}

TEST_CASE("repeated runs are bit-identical") {
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 3;
  cfg.sub = build_sub_spec(Variant::masksub, 0.5, cfg.drop,
                           MaskStrategy::token_removal, TargetKind::soft);
  cfg.sub.mask.patch_size = cfg.model.patch_size;
  TrainResult a = train(cfg);
  TrainResult b = train(cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].loss_total == b.records[i].loss_total);
    CHECK(a.records[i].loss_main == b.records[i].loss_main);
    CHECK(a.records[i].loss_sub == b.records[i].loss_sub);
    CHECK(a.records[i].probe_eq1 == b.records[i].probe_eq1);
    CHECK(a.records[i].grad_norm_sub == b.records[i].grad_norm_sub);
    CHECK(a.records[i].eval_acc == b.records[i].eval_acc);
  }
  for (std::size_t pi = 0; pi < a.params.items.size(); ++pi) {
    const auto& va = a.params.items[pi].second.val();
    const auto& vb = b.params.items[pi].second.val();
    CHECK(std::memcmp(va.data(), vb.data(), va.size() * 4) == 0);
  }
  // A different seed changes the trajectory.
  cfg.seed = 2;
  TrainResult c = train(cfg);
  CHECK(c.records.back().loss_total != a.records.back().loss_total);
}

TEST_CASE("masksub runs log both branch losses and a weighted total") {
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 2;
  cfg.sub = build_sub_spec(Variant::masksub, 0.5, cfg.drop,
                           MaskStrategy::token_removal, TargetKind::soft);
  cfg.sub.mask.patch_size = cfg.model.patch_size;
  TrainResult r = train(cfg);
  for (const TrainRecord& rec : r.records) {
    CHECK(rec.loss_sub > 0.0);
    CHECK(rec.loss_total ==
          doctest::Approx(0.5 * rec.loss_main + 0.5 * rec.loss_sub)
              .epsilon(1e-6));
  }
  // The sub branch exists, so its probe gradient norm is populated.
  CHECK(r.records.back().grad_norm_sub > 0.0);
}

TEST_CASE("train rejects configs that disagree with the data") {
  SUBCASE("batch larger than the dataset") {
    TrainConfig cfg = tiny_train_config();
    cfg.batch_size = 128;  // dataset holds 48
    CHECK_THROWS_AS(train(cfg), ConfigError);
  }
  SUBCASE("class count mismatch") {
    TrainConfig cfg = tiny_train_config();
    cfg.model.classes = 3;
    CHECK_THROWS_AS(train(cfg), ConfigError);
  }
  SUBCASE("geometry mismatch") {
    TrainConfig cfg = tiny_train_config();
    cfg.dataset.synth.image_size = 16;
    CHECK_THROWS_AS(train(cfg), ConfigError);
  }
  SUBCASE("warmup must stay below epochs") {
    TrainConfig cfg = tiny_train_config();
    cfg.warmup_epochs = cfg.epochs;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("mask-token flag must match the strategy") {
    TrainConfig cfg = tiny_train_config();
    cfg.model.mask_token = true;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.model.mask_token = false;
    cfg.sub = build_sub_spec(Variant::masksub, 0.5, cfg.drop,
                             MaskStrategy::mask_token, TargetKind::soft);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("probe ratio range") {
    TrainConfig cfg = tiny_train_config();
    cfg.probe_ratio = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("label smoothing range") {
    TrainConfig cfg = tiny_train_config();
    cfg.label_smoothing = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("evaluation batches cover remainders and reject empty data") {
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  TrainResult r = train(cfg);
  SynthSpec ev = cfg.dataset.synth;
  ev.per_class = cfg.dataset.eval_per_class;
  ev.index_offset = cfg.dataset.synth.per_class;
  Dataset eval = synth_dataset(ev);  // 40 samples
  const double a = evaluate_accuracy(r.params, eval, 7);
  const double b = evaluate_accuracy(r.params, eval, 40);
  CHECK(a == b);
  Dataset empty;
  CHECK_THROWS_AS(evaluate_accuracy(r.params, empty, 4), Error);
}
