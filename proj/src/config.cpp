#include "augsub/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace augsub {

namespace {

using nlohmann::json;

// Tracks which keys were consumed so finish() can name any stray key with
// its full dotted path.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError("config value \"" + path_ + "\" must be an object");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool get_bool(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (v == nullptr) {
      return fallback;
    }
    if (!v->is_boolean()) {
      throw ConfigError("config key \"" + at(key) + "\" must be a boolean");
    }
    return v->get<bool>();
  }

  double get_num(const std::string& key, double fallback) {
    const json* v = find(key);
    if (v == nullptr) {
      return fallback;
    }
    if (!v->is_number()) {
      throw ConfigError("config key \"" + at(key) + "\" must be a number");
    }
    return v->get<double>();
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) {
    const json* v = find(key);
    if (v == nullptr) {
      return fallback;
    }
    if (!v->is_number_integer() && !v->is_number_unsigned()) {
      throw ConfigError("config key \"" + at(key) + "\" must be an integer");
    }
    return v->get<std::int64_t>();
  }

  std::string get_str(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (v == nullptr) {
      return fallback;
    }
    if (!v->is_string()) {
      throw ConfigError("config key \"" + at(key) + "\" must be a string");
    }
    return v->get<std::string>();
  }

  std::vector<std::string> get_str_list(const std::string& key) {
    const json* v = find(key);
    std::vector<std::string> out;
    if (v == nullptr) {
      return out;
    }
    if (!v->is_array()) {
      throw ConfigError("config key \"" + at(key) +
                        "\" must be an array of strings");
    }
    for (const json& e : *v) {
      if (!e.is_string()) {
        throw ConfigError("config key \"" + at(key) +
                          "\" must be an array of strings");
      }
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::string at(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (seen_.count(item.key()) == 0) {
        throw ConfigError("unknown config key \"" + at(item.key()) + "\"");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(ObjectReader& top, VitConfig& m) {
  const json* v = top.find("model");
  if (v == nullptr) {
    return;
  }
  ObjectReader r(*v, "model");
  m.image_size = r.get_int("image-size", m.image_size);
  m.patch_size = r.get_int("patch-size", m.patch_size);
  m.channels = r.get_int("channels", m.channels);
  m.dim = r.get_int("dim", m.dim);
  m.depth = r.get_int("depth", m.depth);
  m.heads = r.get_int("heads", m.heads);
  m.classes = r.get_int("classes", m.classes);
  m.mlp_ratio = r.get_num("mlp-ratio", m.mlp_ratio);
  m.class_token = r.get_bool("class-token", m.class_token);
  m.ln_eps = r.get_num("ln-eps", m.ln_eps);
  r.finish();
}

void read_drop(ObjectReader& top, DropSpec& d) {
  const json* v = top.find("drop");
  if (v == nullptr) {
    return;
  }
  ObjectReader r(*v, "drop");
  d.dropout_p = r.get_num("dropout", d.dropout_p);
  d.drop_path_p = r.get_num("drop-path", d.drop_path_p);
  r.finish();
}

void read_sub(ObjectReader& top, TrainConfig& cfg) {
  Variant variant = cfg.sub.variant;
  double strength = cfg.sub.strength;
  MaskStrategy strategy = cfg.sub.mask.strategy;
  TargetKind target = cfg.sub.target;
  const json* v = top.find("sub");
  if (v != nullptr) {
    ObjectReader r(*v, "sub");
    variant = variant_from(r.get_str("variant", variant_name(variant)));
    strength = r.get_num("strength", strength);
    strategy =
        mask_strategy_from(r.get_str("mask-strategy",
                                     mask_strategy_name(strategy)));
    const std::string t = r.get_str("target", target == TargetKind::soft
                                                   ? "soft"
                                                   : "hard");
    if (t == "soft") {
      target = TargetKind::soft;
    } else if (t == "hard") {
      target = TargetKind::hard;
    } else {
      throw ConfigError("config key \"sub.target\" must be soft or hard");
    }
    r.finish();
  }
  cfg.sub = build_sub_spec(variant, strength, cfg.drop, strategy, target);
  cfg.sub.mask.patch_size = cfg.model.patch_size;
}

void read_weights(ObjectReader& top, LossWeights& w) {
  const json* v = top.find("weights");
  if (v == nullptr) {
    return;
  }
  ObjectReader r(*v, "weights");
  w.w_ce = r.get_num("ce", w.w_ce);
  w.w_kd = r.get_num("kd", w.w_kd);
  r.finish();
}

void read_dataset(ObjectReader& top, DatasetSpec& d, const VitConfig& m) {
  d.synth.classes = m.classes;
  d.synth.image_size = m.image_size;
  d.synth.channels = m.channels;
  const json* v = top.find("dataset");
  if (v == nullptr) {
    return;
  }
  ObjectReader r(*v, "dataset");
  const std::string kind = r.get_str("kind", "synthetic");
  if (kind == "synthetic") {
    d.kind = DatasetSpec::Kind::synthetic;
  } else if (kind == "cifar10") {
    d.kind = DatasetSpec::Kind::cifar10;
  } else {
    throw ConfigError(
        "config key \"dataset.kind\" must be synthetic or cifar10");
  }
  d.synth.seed = static_cast<std::uint64_t>(
      r.get_int("data-seed", static_cast<std::int64_t>(d.synth.seed)));
  d.synth.per_class = r.get_int("per-class", d.synth.per_class);
  d.eval_per_class = r.get_int("eval-per-class", d.eval_per_class);
  d.synth.noise = r.get_num("noise", d.synth.noise);
  d.synth.separation = r.get_num("separation", d.synth.separation);
  d.train_paths = r.get_str_list("train-files");
  d.test_path = r.get_str("test-file", d.test_path);
  d.subset = r.get_int("subset", d.subset);
  r.finish();
}

}  // namespace

TrainConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  ObjectReader top(j, "");
  read_model(top, cfg.model);
  read_drop(top, cfg.drop);
  const std::string loss = top.get_str("loss", "ce");
  if (loss == "ce") {
    cfg.loss_kind = LossKind::ce;
  } else if (loss == "bce") {
    cfg.loss_kind = LossKind::bce;
  } else {
    throw ConfigError("config key \"loss\" must be ce or bce");
  }
  read_weights(top, cfg.weights);
  cfg.label_smoothing = top.get_num("label-smoothing", cfg.label_smoothing);
  cfg.epochs = top.get_int("epochs", cfg.epochs);
  cfg.batch_size = top.get_int("batch-size", cfg.batch_size);
  cfg.warmup_epochs = top.get_int("warmup-epochs", cfg.warmup_epochs);
  cfg.lr_max = top.get_num("lr-max", cfg.lr_max);
  cfg.lr_min = top.get_num("lr-min", cfg.lr_min);
  cfg.weight_decay = top.get_num("weight-decay", cfg.weight_decay);
  cfg.beta1 = top.get_num("beta1", cfg.beta1);
  cfg.beta2 = top.get_num("beta2", cfg.beta2);
  cfg.adam_eps = top.get_num("adam-eps", cfg.adam_eps);
  cfg.probe_ratio = top.get_num("probe-ratio", cfg.probe_ratio);
  cfg.seed = static_cast<std::uint64_t>(
      top.get_int("seed", static_cast<std::int64_t>(cfg.seed)));
  read_sub(top, cfg);  // after drop: pathsub validates against drop-path
  read_dataset(top, cfg.dataset, cfg.model);
  top.finish();
  cfg.model.mask_token = variant_uses_mask(cfg.sub.variant) &&
                         cfg.sub.mask.strategy == MaskStrategy::mask_token;
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

std::string config_to_json_text(const TrainConfig& cfg) {
  json j;
  j["model"] = {{"image-size", cfg.model.image_size},
                {"patch-size", cfg.model.patch_size},
                {"channels", cfg.model.channels},
                {"dim", cfg.model.dim},
                {"depth", cfg.model.depth},
                {"heads", cfg.model.heads},
                {"classes", cfg.model.classes},
                {"mlp-ratio", cfg.model.mlp_ratio},
                {"class-token", cfg.model.class_token},
                {"ln-eps", cfg.model.ln_eps}};
  j["drop"] = {{"dropout", cfg.drop.dropout_p},
               {"drop-path", cfg.drop.drop_path_p}};
  j["sub"] = {{"variant", variant_name(cfg.sub.variant)},
              {"strength", cfg.sub.strength},
              {"mask-strategy", mask_strategy_name(cfg.sub.mask.strategy)},
              {"target", cfg.sub.target == TargetKind::soft ? "soft" : "hard"}};
  j["loss"] = cfg.loss_kind == LossKind::ce ? "ce" : "bce";
  j["weights"] = {{"ce", cfg.weights.w_ce}, {"kd", cfg.weights.w_kd}};
  j["label-smoothing"] = cfg.label_smoothing;
  j["epochs"] = cfg.epochs;
  j["batch-size"] = cfg.batch_size;
  j["warmup-epochs"] = cfg.warmup_epochs;
  j["lr-max"] = cfg.lr_max;
  j["lr-min"] = cfg.lr_min;
  j["weight-decay"] = cfg.weight_decay;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["adam-eps"] = cfg.adam_eps;
  j["probe-ratio"] = cfg.probe_ratio;
  j["seed"] = cfg.seed;
  json d;
  d["kind"] = cfg.dataset.kind == DatasetSpec::Kind::synthetic ? "synthetic"
                                                               : "cifar10";
  d["data-seed"] = cfg.dataset.synth.seed;
  d["per-class"] = cfg.dataset.synth.per_class;
  d["eval-per-class"] = cfg.dataset.eval_per_class;
  d["noise"] = cfg.dataset.synth.noise;
  d["separation"] = cfg.dataset.synth.separation;
  d["train-files"] = cfg.dataset.train_paths;
  d["test-file"] = cfg.dataset.test_path;
  d["subset"] = cfg.dataset.subset;
  j["dataset"] = d;
  return j.dump(2) + "\n";
}

}  // namespace augsub
