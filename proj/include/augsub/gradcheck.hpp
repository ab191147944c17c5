#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "augsub/tensor.hpp"

namespace augsub {

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  T max_abs_err = T(0);
  std::string worst_param;
  std::int64_t worst_index = -1;
  T worst_analytic = T(0);
  T worst_numeric = T(0);
};

// Central-difference check of reverse-mode gradients. make_loss(graph) must
// rebuild the same scalar loss from the current parameter values with all
// randomness frozen; grad_check first proves that by running it twice and
// demanding bit-equal losses. Relative error uses max(|a|,|n|,1e-6) as the
// denominator so near-zero gradients are judged absolutely.
template <typename T, typename MakeLoss>
GradCheckReport<T> grad_check(
    MakeLoss&& make_loss,
    std::vector<std::pair<std::string, Tensor<T>>>& params, T eps) {
  {
    Graph<T> ga;
    const T la = make_loss(ga).scalar();
    Graph<T> gb;
    const T lb = make_loss(gb).scalar();
    if (!(la == lb)) {
      throw ContractError(
          "grad_check: two identical forwards disagree; the loss closure is "
          "not deterministic");
    }
  }
  for (auto& kv : params) {
    if (!kv.second->grad.empty()) {
      std::fill(kv.second->grad.begin(), kv.second->grad.end(), T(0));
    }
    kv.second->grad_live = false;
  }
  std::vector<std::vector<T>> analytic;
  {
    Graph<T> g;
    Tensor<T> loss = make_loss(g);
    g.backward(loss);
    for (auto& kv : params) {
      kv.second->ensure_grad();
      analytic.push_back(kv.second->grad);
    }
  }
  GradCheckReport<T> rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& t = params[pi].second;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const T save = t.val()[i];
      t.val()[i] = save + eps;
      Graph<T> gp;
      const T lp = make_loss(gp).scalar();
      t.val()[i] = save - eps;
      Graph<T> gm;
      const T lm = make_loss(gm).scalar();
      t.val()[i] = save;
      const T numeric = (lp - lm) / (T(2) * eps);
      const T ana = analytic[pi][static_cast<std::size_t>(i)];
      const T abs_err = std::abs(ana - numeric);
      const T rel = abs_err / std::max({T(1e-6), std::abs(ana),
                                        std::abs(numeric)});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.max_abs_err = abs_err;
        rep.worst_param = params[pi].first;
        rep.worst_index = i;
        rep.worst_analytic = ana;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace augsub
