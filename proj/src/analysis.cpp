#include "augsub/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace augsub {

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void emit_metrics(const std::vector<TrainRecord>& records,
                  const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open metrics file for writing: " + path);
  }
  out << kMetricsHeader << "\n";
  for (const TrainRecord& r : records) {
    out << r.epoch << ',' << r.step << ',' << fmt9(r.loss_total) << ','
        << fmt9(r.loss_main) << ',' << fmt9(r.loss_sub) << ','
        << fmt9(r.probe_eq1) << ',' << fmt9(r.probe_eq2) << ','
        << fmt9(r.grad_norm_main) << ',' << fmt9(r.grad_norm_sub) << ','
        << fmt9(r.lr) << ',' << fmt9(r.train_acc) << ',' << fmt9(r.eval_acc)
        << "\n";
  }
  if (!out) {
    throw Error("short write to metrics file: " + path);
  }
}

std::vector<TrainRecord> parse_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open metrics file: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error("metrics file is empty: " + path);
  }
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != kMetricsHeader) {
    throw Error("metrics header mismatch in " + path + ": got \"" + line +
                "\"");
  }
  std::vector<TrainRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(ss, field, ',')) {
      try {
        v.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw Error("metrics line " + std::to_string(lineno) +
                    " has a non-numeric field: \"" + field + "\"");
      }
    }
    if (v.size() != 12) {
      throw Error("metrics line " + std::to_string(lineno) + " has " +
                  std::to_string(v.size()) + " fields, expected 12");
    }
    TrainRecord r;
    r.epoch = static_cast<std::int64_t>(v[0]);
    r.step = static_cast<std::int64_t>(v[1]);
    r.loss_total = v[2];
    r.loss_main = v[3];
    r.loss_sub = v[4];
    r.probe_eq1 = v[5];
    r.probe_eq2 = v[6];
    r.grad_norm_main = v[7];
    r.grad_norm_sub = v[8];
    r.lr = v[9];
    r.train_acc = v[10];
    r.eval_acc = v[11];
    out.push_back(r);
  }
  return out;
}

std::vector<TrainRecord> epoch_summaries(const std::vector<TrainRecord>& r) {
  std::vector<TrainRecord> out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i + 1 == r.size() || r[i + 1].epoch != r[i].epoch) {
      out.push_back(r[i]);
    }
  }
  return out;
}

CompareReport compare_runs(const std::vector<TrainRecord>& a,
                           const std::vector<TrainRecord>& b) {
  const std::vector<TrainRecord> ea = epoch_summaries(a);
  const std::vector<TrainRecord> eb = epoch_summaries(b);
  if (ea.empty() || eb.empty()) {
    throw Error("compare_runs needs at least one epoch per run");
  }
  CompareReport rep;
  rep.epochs_compared = static_cast<std::int64_t>(std::min(ea.size(), eb.size()));
  const TrainRecord& fa = ea.back();
  const TrainRecord& fb = eb.back();
  rep.eval_acc_a = fa.eval_acc;
  rep.eval_acc_b = fb.eval_acc;
  rep.probe_eq1_a = fa.probe_eq1;
  rep.probe_eq1_b = fb.probe_eq1;
  rep.probe_eq2_a = fa.probe_eq2;
  rep.probe_eq2_b = fb.probe_eq2;
  rep.loss_total_a = fa.loss_total;
  rep.loss_total_b = fb.loss_total;
  return rep;
}

std::string compare_text(const CompareReport& r) {
  std::string s;
  s += "epochs compared: " + std::to_string(r.epochs_compared) + "\n";
  s += "eval_acc:  A=" + fmt9(r.eval_acc_a) + "  B=" + fmt9(r.eval_acc_b) +
       "  delta=" + fmt9(r.eval_acc_a - r.eval_acc_b) + "\n";
  s += "probe_eq1: A=" + fmt9(r.probe_eq1_a) + "  B=" + fmt9(r.probe_eq1_b) +
       "  delta=" + fmt9(r.probe_eq1_a - r.probe_eq1_b) + "\n";
  s += "probe_eq2: A=" + fmt9(r.probe_eq2_a) + "  B=" + fmt9(r.probe_eq2_b) +
       "  delta=" + fmt9(r.probe_eq2_a - r.probe_eq2_b) + "\n";
  s += "loss_total: A=" + fmt9(r.loss_total_a) + "  B=" +
       fmt9(r.loss_total_b) + "  delta=" +
       fmt9(r.loss_total_a - r.loss_total_b) + "\n";
  return s;
}

std::string compare_json(const CompareReport& r) {
  std::string s = "{";
  s += "\"epochs_compared\":" + std::to_string(r.epochs_compared);
  s += ",\"eval_acc_a\":" + fmt9(r.eval_acc_a);
  s += ",\"eval_acc_b\":" + fmt9(r.eval_acc_b);
  s += ",\"probe_eq1_a\":" + fmt9(r.probe_eq1_a);
  s += ",\"probe_eq1_b\":" + fmt9(r.probe_eq1_b);
  s += ",\"probe_eq2_a\":" + fmt9(r.probe_eq2_a);
  s += ",\"probe_eq2_b\":" + fmt9(r.probe_eq2_b);
  s += ",\"loss_total_a\":" + fmt9(r.loss_total_a);
  s += ",\"loss_total_b\":" + fmt9(r.loss_total_b);
  s += "}";
  return s;
}

namespace {

// Forward matmul FLOPs for one sample at a given token count; 2mnk per
// matmul. Patch embedding always runs on every patch.
double forward_flops(const VitConfig& c, std::int64_t tokens) {
  const double d = static_cast<double>(c.dim);
  const double t = static_cast<double>(tokens);
  const double h = static_cast<double>(c.mlp_hidden());
  double f = 2.0 * static_cast<double>(c.patches()) *
             static_cast<double>(c.patch_dim()) * d;  // embedding
  // Per block: qkv, scores, attn-out, proj, fc1, fc2.
  const double per_block = 2.0 * t * d * 3.0 * d + 2.0 * t * t * d +
                           2.0 * t * t * d + 2.0 * t * d * d +
                           2.0 * t * d * h + 2.0 * t * h * d;
  f += static_cast<double>(c.depth) * per_block;
  f += 2.0 * d * static_cast<double>(c.classes);  // head
  return f;
}

}  // namespace

FlopBudget flop_estimate(const VitConfig& cfg, double keep_ratio) {
  cfg.validate();
  if (keep_ratio < 0.0 || keep_ratio > 1.0) {
    throw ConfigError("keep ratio must be in [0,1]; got " +
                      std::to_string(keep_ratio));
  }
  const std::int64_t p = cfg.patches();
  const double mask_ratio = 1.0 - keep_ratio;
  const std::int64_t masked =
      static_cast<std::int64_t>(std::floor(p * mask_ratio + 1e-9));
  FlopBudget b;
  b.tokens_main = cfg.tokens();
  b.tokens_sub = p - masked + (cfg.class_token ? 1 : 0);
  // Backward costs twice the forward; each branch runs forward + backward.
  b.flops_main = 3.0 * forward_flops(cfg, b.tokens_main);
  b.flops_sub = 3.0 * forward_flops(cfg, b.tokens_sub);
  b.ratio = (b.flops_main + b.flops_sub) / b.flops_main;
  return b;
}

}  // namespace augsub
