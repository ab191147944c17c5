#include "augsub/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "augsub/analysis.hpp"
#include "augsub/checkpoint.hpp"
#include "augsub/config.hpp"
#include "augsub/gradcheck.hpp"
#include "augsub/trainer.hpp"

namespace augsub {

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg =
      a.config_path.empty() ? TrainConfig{} : load_config(a.config_path);
  if (a.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(a.seed);
  }
  cfg.validate();
  std::filesystem::create_directories(a.out_dir);
  TrainResult result = train(cfg);
  emit_metrics(result.records, a.out_dir + "/metrics.csv");
  save_checkpoint(a.out_dir + "/checkpoint.bin", result.params);
  {
    std::ofstream echo(a.out_dir + "/config.json", std::ios::binary);
    if (!echo) {
      throw Error("cannot write " + a.out_dir + "/config.json");
    }
    echo << config_to_json_text(cfg);
  }
  for (const TrainRecord& r : epoch_summaries(result.records)) {
    std::cout << "epoch " << r.epoch << " loss_total " << fmt9(r.loss_total)
              << " train_acc " << fmt9(r.train_acc) << " eval_acc "
              << fmt9(r.eval_acc) << "\n";
  }
  std::cout << "final_eval_acc " << fmt9(result.final_eval_acc) << "\n";
  std::cout << "wrote " << a.out_dir << "/{metrics.csv,checkpoint.bin,config.json}"
            << "\n";
  return 0;
}

struct ProbeArgs {
  std::string checkpoint_path;
  std::string data_path;
  double ratio = 0.5;
  std::int64_t batch = 128;
  std::string strategy = "token-removal";
  std::int64_t seed = 1;
};

int run_probe(const ProbeArgs& a) {
  ModelParams<float> params = load_checkpoint(a.checkpoint_path);
  const VitConfig& m = params.cfg;
  Dataset data = load_records({a.data_path}, m.image_size, m.channels,
                              m.classes);
  const MaskStrategy strategy = mask_strategy_from(a.strategy);
  if (a.ratio < 0.0 || a.ratio > 1.0) {
    throw ConfigError("probe ratio must be in [0,1]; got " +
                      std::to_string(a.ratio));
  }
  if (a.batch < 1) {
    throw ConfigError("batch size must be positive");
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.n));
  std::iota(order.begin(), order.end(), 0);
  double eq1_sum = 0.0;
  double eq2_sum = 0.0;
  std::uint64_t tag = 0;
  for (std::int64_t at = 0; at < data.n; at += a.batch) {
    const std::int64_t n = std::min(a.batch, data.n - at);
    Batch b = gather_batch(data, order, at, n);
    const Tensor<float> targets = hard_targets<float>(b.labels, m.classes, 0.0);
    auto [e1, e2] =
        probe_losses<float>(b.images, n, params, targets, a.ratio, strategy,
                            LossKind::ce, static_cast<std::uint64_t>(a.seed),
                            tag++);
    eq1_sum += static_cast<double>(e1) * static_cast<double>(n);
    eq2_sum += static_cast<double>(e2) * static_cast<double>(n);
  }
  std::cout << "probe_eq1 " << fmt9(eq1_sum / static_cast<double>(data.n))
            << "\n";
  std::cout << "probe_eq2 " << fmt9(eq2_sum / static_cast<double>(data.n))
            << "\n";
  std::cout << "samples " << data.n << "\n";
  return 0;
}

struct GradcheckArgs {
  std::int64_t dim = 16;
  std::int64_t depth = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
  VitConfig m;
  m.image_size = 8;
  m.patch_size = 4;
  m.dim = a.dim;
  m.depth = a.depth;
  m.heads = 2;
  m.classes = 4;
  m.validate();

  SynthSpec synth;
  synth.seed = 7;
  synth.per_class = 1;
  synth.classes = m.classes;
  synth.image_size = m.image_size;
  Dataset data = synth_dataset(synth);
  const std::int64_t n = 2;
  std::vector<double> images(data.images.begin(),
                             data.images.begin() +
                                 n * m.channels * m.image_size * m.image_size);
  std::vector<std::int64_t> labels(data.labels.begin(),
                                   data.labels.begin() + n);

  ModelParams<double> params = build_params<double>(m, 11);
  const Tensor<double> targets = hard_targets<double>(labels, m.classes, 0.0);
  const SubSpec sub = build_sub_spec(Variant::masksub, 0.5, DropSpec{},
                                     MaskStrategy::token_removal,
                                     TargetKind::soft);
  const LossWeights weights;
  const std::uint64_t seed = 7;
  const std::uint64_t key_main =
      Rng::keyed(seed, {stream::branch_main, 1}).next_u64();
  const std::uint64_t key_sub =
      Rng::keyed(seed, {stream::branch_sub, 1}).next_u64();
  Rng mask_rng = Rng::keyed(seed, {stream::mask, 1});
  const MaskOutcome mask = sample_mask(m.patches(), sub.mask.ratio, mask_rng);

  // The difference quotient must probe a fixed function of the parameters,
  // and under stop-gradient the live objective's gradient treats the soft
  // target as a constant. So freeze the teacher logits at the base point;
  // the frozen-vs-detached equivalence is covered separately.
  Tensor<double> frozen;
  {
    Graph<double> g0;
    g0.recording = false;
    Tensor<double> logits0 = forward_logits<double>(
        g0, images, n, params, DropSpec{}, key_main, nullptr,
        sub.mask.strategy);
    frozen = Tensor<double>::from(logits0.shape(), logits0.val());
  }
  auto make_loss = [&](Graph<double>& g) {
    auto [logits_m, loss_m] = main_step<double>(g, images, n, params,
                                                DropSpec{}, key_main, targets,
                                                LossKind::ce);
    auto [logits_s, loss_s] =
        sub_step<double>(g, images, n, params, DropSpec{}, sub, key_sub,
                         &mask, frozen, targets, LossKind::ce);
    (void)logits_m;
    (void)logits_s;
    return combined_loss(g, loss_m, loss_s, weights);
  };
  GradCheckReport<double> rep = grad_check<double>(make_loss, params.items,
                                                   1e-5);
  std::cout << "params " << params.param_count() << "\n";
  std::cout << "max_rel_err " << fmt9(rep.max_rel_err) << " at "
            << rep.worst_param << "[" << rep.worst_index << "]"
            << " analytic " << fmt9(rep.worst_analytic) << " numeric "
            << fmt9(rep.worst_numeric) << "\n";
  return rep.max_rel_err < 1e-4 ? 0 : 1;
}

struct FlopsArgs {
  std::string config_path;
  double keep_ratio = 1.0;
};

int run_flops(const FlopsArgs& a) {
  TrainConfig cfg =
      a.config_path.empty() ? TrainConfig{} : load_config(a.config_path);
  if (a.keep_ratio < 0.0 || a.keep_ratio > 1.0) {
    throw ConfigError("keep-ratio must be in [0,1]; got " +
                      std::to_string(a.keep_ratio));
  }
  const FlopBudget b = flop_estimate(cfg.model, a.keep_ratio);
  std::cout << "tokens_main " << b.tokens_main << "\n";
  std::cout << "tokens_sub " << b.tokens_sub << "\n";
  std::cout << "flops_main " << fmt9(b.flops_main) << "\n";
  std::cout << "flops_sub " << fmt9(b.flops_sub) << "\n";
  std::cout << "flops_total " << fmt9(b.flops_main + b.flops_sub) << "\n";
  std::cout << "ratio " << fmt9(b.ratio) << "\n";
  return 0;
}

struct GenDataArgs {
  std::string out_path;
  std::int64_t seed = 1;
  std::int64_t per_class = 52;
  std::int64_t classes = 10;
  std::int64_t image_size = 32;
  std::int64_t channels = 3;
  double noise = 25.0;
  double separation = 16.0;
  std::int64_t index_offset = 0;
};

int run_gen_data(const GenDataArgs& a) {
  SynthSpec spec;
  spec.seed = static_cast<std::uint64_t>(a.seed);
  spec.per_class = a.per_class;
  spec.classes = a.classes;
  spec.image_size = a.image_size;
  spec.channels = a.channels;
  spec.noise = a.noise;
  spec.separation = a.separation;
  spec.index_offset = a.index_offset;
  spec.validate();
  const std::vector<std::uint8_t> bytes = synth_records(spec);
  std::ofstream out(a.out_path, std::ios::binary);
  if (!out) {
    throw Error("cannot write " + a.out_path);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error("short write to " + a.out_path);
  }
  std::cout << "wrote " << a.per_class * a.classes << " records ("
            << bytes.size() << " bytes) to " << a.out_path << "\n";
  return 0;
}

struct CompareArgs {
  std::string csv_a;
  std::string csv_b;
  bool as_json = false;
};

int run_compare(const CompareArgs& a) {
  const CompareReport rep =
      compare_runs(parse_metrics(a.csv_a), parse_metrics(a.csv_b));
  std::cout << (a.as_json ? compare_json(rep) : compare_text(rep));
  return 0;
}

}  // namespace

int cli_run(int argc, char** argv) {
  CLI::App app{"Self-distillation trainer: a masked sub-model forward on "
               "shared weights, supervised by the clean forward's soft output"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Run a full training job");
  train_cmd->add_option("--config", train_args.config_path,
                        "JSON config; omit for the built-in default");
  train_cmd->add_option("--out", train_args.out_dir, "Output directory")
      ->required();
  train_cmd->add_option("--seed", train_args.seed, "Override the config seed");

  ProbeArgs probe_args;
  CLI::App* probe_cmd = app.add_subcommand(
      "probe", "Clean and masked hard-label losses of a checkpoint");
  probe_cmd->add_option("--checkpoint", probe_args.checkpoint_path,
                        "Checkpoint file")
      ->required();
  probe_cmd->add_option("--data", probe_args.data_path, "Records file")
      ->required();
  probe_cmd->add_option("--ratio", probe_args.ratio, "Mask ratio");
  probe_cmd->add_option("--batch", probe_args.batch, "Batch size");
  probe_cmd->add_option("--strategy", probe_args.strategy,
                        "token-removal | mask-token | zero-fill");
  probe_cmd->add_option("--seed", probe_args.seed, "Mask seed");

  GradcheckArgs gc_args;
  CLI::App* gc_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of the combined loss gradients");
  gc_cmd->add_option("--dim", gc_args.dim, "Model width");
  gc_cmd->add_option("--depth", gc_args.depth, "Block count");

  FlopsArgs flops_args;
  CLI::App* flops_cmd =
      app.add_subcommand("flops", "Per-sample FLOP budget of a step");
  flops_cmd->add_option("--config", flops_args.config_path,
                        "JSON config; omit for the built-in default");
  flops_cmd->add_option("--keep-ratio", flops_args.keep_ratio,
                        "Fraction of patch tokens the sub branch keeps")
      ->required();

  GenDataArgs gen_args;
  CLI::App* gen_cmd =
      app.add_subcommand("gen-data", "Write a synthetic records file");
  gen_cmd->add_option("--out", gen_args.out_path, "Output file")->required();
  gen_cmd->add_option("--seed", gen_args.seed, "Generator seed");
  gen_cmd->add_option("--per-class", gen_args.per_class, "Images per class");
  gen_cmd->add_option("--classes", gen_args.classes, "Class count");
  gen_cmd->add_option("--image-size", gen_args.image_size, "Image side");
  gen_cmd->add_option("--channels", gen_args.channels, "Channel count");
  gen_cmd->add_option("--noise", gen_args.noise, "Pixel noise sigma");
  gen_cmd->add_option("--separation", gen_args.separation,
                      "Class mean amplitude, in sigmas");
  gen_cmd->add_option("--index-offset", gen_args.index_offset,
                      "Shift of the per-image noise streams");

  CompareArgs cmp_args;
  CLI::App* cmp_cmd =
      app.add_subcommand("compare", "Final-epoch deltas of two metrics CSVs");
  cmp_cmd->add_option("csv-a", cmp_args.csv_a, "First run")->required();
  cmp_cmd->add_option("csv-b", cmp_args.csv_b, "Second run")->required();
  cmp_cmd->add_flag("--json", cmp_args.as_json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) {
      return run_train(train_args);
    }
    if (probe_cmd->parsed()) {
      return run_probe(probe_args);
    }
    if (gc_cmd->parsed()) {
      return run_gradcheck(gc_args);
    }
    if (flops_cmd->parsed()) {
      return run_flops(flops_args);
    }
    if (gen_cmd->parsed()) {
      return run_gen_data(gen_args);
    }
    if (cmp_cmd->parsed()) {
      return run_compare(cmp_args);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "no command given\n";
  return 2;
}

}  // namespace augsub
