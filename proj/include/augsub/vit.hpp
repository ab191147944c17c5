#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "augsub/masking.hpp"
#include "augsub/ops.hpp"
#include "augsub/rng.hpp"
#include "augsub/tensor.hpp"

// Pre-norm vision transformer sized for desk-scale experiments. Forward is
// token-count agnostic: positional embeddings attach before any token subset
// is taken, so a branch can run on fewer tokens with the same weights.

namespace augsub {

struct VitConfig {
  std::int64_t image_size = 32;
  std::int64_t patch_size = 4;
  std::int64_t channels = 3;
  std::int64_t dim = 96;
  std::int64_t depth = 4;
  std::int64_t heads = 4;
  std::int64_t classes = 10;
  double mlp_ratio = 4.0;
  bool class_token = true;
  bool mask_token = false;  // register a learnable fill vector
  double ln_eps = 1e-6;

  std::int64_t grid() const { return image_size / patch_size; }
  std::int64_t patches() const { return grid() * grid(); }
  std::int64_t tokens() const { return patches() + (class_token ? 1 : 0); }
  std::int64_t patch_dim() const { return channels * patch_size * patch_size; }
  std::int64_t mlp_hidden() const {
    return static_cast<std::int64_t>(static_cast<double>(dim) * mlp_ratio);
  }

  void validate() const {
    if (image_size < 1 || patch_size < 1 || channels < 1 || dim < 1 ||
        depth < 0 || heads < 1 || classes < 2) {
      throw ConfigError("model config has a non-positive field");
    }
    if (image_size % patch_size != 0) {
      throw ConfigError("image size " + std::to_string(image_size) +
                        " not divisible by patch size " +
                        std::to_string(patch_size));
    }
    if (dim % heads != 0) {
      throw ConfigError("model dim " + std::to_string(dim) +
                        " not divisible by head count " +
                        std::to_string(heads));
    }
    if (mlp_hidden() < 1) {
      throw ConfigError("mlp ratio too small: hidden dim would be empty");
    }
  }
};

// Stochastic regularization of one forward pass. dropout_p applies after the
// attention projection and after each MLP linear; drop_path_p skips whole
// residual branches per sample. p == 0 sites are skipped entirely, keeping
// the tape identical to an unregularized forward.
struct DropSpec {
  double dropout_p = 0.0;
  double drop_path_p = 0.0;

  void validate() const {
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
      throw ConfigError("dropout probability must be in [0,1); got " +
                        std::to_string(dropout_p));
    }
    if (drop_path_p < 0.0 || drop_path_p >= 1.0) {
      throw ConfigError("drop-path probability must be in [0,1); got " +
                        std::to_string(drop_path_p));
    }
  }
};

// Named parameter registry: one storage location per parameter, fixed
// registration order. Both branches of a self-distillation step read the
// same tensors, so their gradient contributions accumulate in one place.
template <typename T>
struct ModelParams {
  VitConfig cfg;
  std::vector<std::pair<std::string, Tensor<T>>> items;
  std::unordered_map<std::string, std::size_t> index;

  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (index.count(name) != 0) {
      throw ContractError("duplicate parameter name: " + name);
    }
    index.emplace(name, items.size());
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw ContractError("unknown parameter: " + name);
    }
    return items[it->second].second;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(items.size());
    for (const auto& kv : items) {
      out.push_back(kv.second);
    }
    return out;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& kv : items) {
      n += kv.second.numel();
    }
    return n;
  }

  void zero_grads() {
    for (auto& kv : items) {
      if (!kv.second->grad.empty()) {
        std::fill(kv.second->grad.begin(), kv.second->grad.end(), T(0));
      }
      kv.second->grad_live = false;
    }
  }
};

// Builds and initializes all parameters. Draws come from one stream keyed
// (seed, init) in registration order: weights and embeddings are normal with
// stddev 0.02, biases and LN betas zero, LN gammas one.
template <typename T>
ModelParams<T> build_params(const VitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> p;
  p.cfg = cfg;
  Rng rng = Rng::keyed(seed, {stream::init});
  const T sd = T(0.02);
  auto normal = [&](Shape s) { return Tensor<T>::normal(std::move(s), rng, sd, true); };
  auto zeros = [&](Shape s) { return Tensor<T>::zeros(std::move(s), true); };
  auto ones = [&](Shape s) { return Tensor<T>::full(std::move(s), T(1), true); };

  p.add("patch_embed.weight", normal({cfg.patch_dim(), cfg.dim}));
  p.add("patch_embed.bias", zeros({cfg.dim}));
  if (cfg.class_token) {
    p.add("cls_token", normal({cfg.dim}));
  }
  if (cfg.mask_token) {
    p.add("mask_token", normal({cfg.dim}));
  }
  p.add("pos_embed", normal({cfg.tokens(), cfg.dim}));
  const std::int64_t hidden = cfg.mlp_hidden();
  for (std::int64_t b = 0; b < cfg.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    p.add(pre + "ln1.gamma", ones({cfg.dim}));
    p.add(pre + "ln1.beta", zeros({cfg.dim}));
    p.add(pre + "qkv.weight", normal({cfg.dim, 3 * cfg.dim}));
    p.add(pre + "qkv.bias", zeros({3 * cfg.dim}));
    p.add(pre + "proj.weight", normal({cfg.dim, cfg.dim}));
    p.add(pre + "proj.bias", zeros({cfg.dim}));
    p.add(pre + "ln2.gamma", ones({cfg.dim}));
    p.add(pre + "ln2.beta", zeros({cfg.dim}));
    p.add(pre + "fc1.weight", normal({cfg.dim, hidden}));
    p.add(pre + "fc1.bias", zeros({hidden}));
    p.add(pre + "fc2.weight", normal({hidden, cfg.dim}));
    p.add(pre + "fc2.bias", zeros({cfg.dim}));
  }
  p.add("final_ln.gamma", ones({cfg.dim}));
  p.add("final_ln.beta", zeros({cfg.dim}));
  p.add("head.weight", normal({cfg.dim, cfg.classes}));
  p.add("head.bias", zeros({cfg.classes}));
  return p;
}

// Cuts images [N,C,S,S] into a constant patch matrix [N, P, C*ps*ps]; patch
// grid row-major, pixels flattened channel-major then row-major. Pure data
// movement: gradients never flow to pixels.
template <typename T>
Tensor<T> patchify(const std::vector<T>& images, std::int64_t n,
                   const VitConfig& cfg) {
  const std::int64_t s = cfg.image_size, c = cfg.channels;
  const std::int64_t ps = cfg.patch_size, grid = cfg.grid();
  if (static_cast<std::int64_t>(images.size()) != n * c * s * s) {
    throw ContractError("patchify: image buffer size " +
                        std::to_string(images.size()) + " != " +
                        std::to_string(n * c * s * s));
  }
  Tensor<T> out = Tensor<T>::zeros({n, cfg.patches(), cfg.patch_dim()});
  T* dst = out.val().data();
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t gy = 0; gy < grid; ++gy) {
      for (std::int64_t gx = 0; gx < grid; ++gx) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          for (std::int64_t y = 0; y < ps; ++y) {
            const T* src = images.data() +
                           ((img * c + ch) * s + gy * ps + y) * s + gx * ps;
            for (std::int64_t x = 0; x < ps; ++x) {
              *dst++ = src[x];
            }
          }
        }
      }
    }
  }
  return out;
}

// patchify -> linear projection -> class token -> positional embedding.
// Output [N, tokens, dim]; masking (if any) happens after this, in token
// space, except zero-fill which edits pixels before patchify.
template <typename T>
Tensor<T> embed_tokens(Graph<T>& g, const Tensor<T>& patches,
                       ModelParams<T>& p) {
  Tensor<T> x = matmul(g, patches, p.at("patch_embed.weight"));
  x = add_bias(g, x, p.at("patch_embed.bias"));
  if (p.cfg.class_token) {
    x = prepend_token(g, x, p.at("cls_token"));
  }
  return add_pos(g, x, p.at("pos_embed"));
}

namespace vitdet {

// Bernoulli keep mask for inverted dropout, drawn from a site-keyed stream.
inline std::shared_ptr<std::vector<std::uint8_t>> keep_mask(
    std::int64_t n, double p, std::uint64_t site_key) {
  Rng rng(site_key);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(
      static_cast<std::size_t>(n));
  for (auto& b : *keep) {
    b = rng.next_unit() >= p ? 1 : 0;
  }
  return keep;
}

// Per-sample stochastic-depth factors: 0 dropped, 1/(1-p) kept.
template <typename T>
std::shared_ptr<std::vector<T>> path_factors(std::int64_t n, double p,
                                             std::uint64_t site_key) {
  Rng rng(site_key);
  auto f = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T inv = T(1) / static_cast<T>(1.0 - p);
  for (auto& v : *f) {
    v = rng.next_unit() >= p ? inv : T(0);
  }
  return f;
}

}  // namespace vitdet

// Transformer trunk over an embedded (and possibly reduced) token tensor
// [N, T', D] -> logits [N, classes]. drop_key seeds this pass's stochastic
// sites; a fixed site index keys each dropout/drop-path decision so branches
// with different keys draw independent masks. Sites with p == 0 are skipped,
// leaving no trace on the tape.
template <typename T>
Tensor<T> vit_forward(Graph<T>& g, const Tensor<T>& tokens,
                      ModelParams<T>& p, const DropSpec& drop,
                      std::uint64_t drop_key) {
  if (tokens.rank() != 3 || tokens.dim(2) != p.cfg.dim) {
    throw ContractError("vit_forward expects tokens [N,T," +
                        std::to_string(p.cfg.dim) + "]; got " +
                        shape_str(tokens.shape()));
  }
  drop.validate();
  const std::int64_t nb = tokens.dim(0);
  const bool training = g.recording;
  std::uint64_t site = 0;
  auto maybe_dropout = [&](Tensor<T> x) {
    const std::uint64_t key = Rng::mix(drop_key, site++);
    if (!training || drop.dropout_p == 0.0) {
      return x;
    }
    auto keep = vitdet::keep_mask(x.numel(), drop.dropout_p, key);
    return dropout_mask(g, x, keep, T(1.0 - drop.dropout_p));
  };
  auto maybe_drop_path = [&](Tensor<T> x) {
    const std::uint64_t key = Rng::mix(drop_key, site++);
    if (!training || drop.drop_path_p == 0.0) {
      return x;
    }
    auto f = vitdet::path_factors<T>(nb, drop.drop_path_p, key);
    return scale_rows(g, x, f);
  };

  Tensor<T> x = tokens;
  for (std::int64_t b = 0; b < p.cfg.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    Tensor<T> h = layer_norm(g, x, p.at(pre + "ln1.gamma"),
                             p.at(pre + "ln1.beta"), T(p.cfg.ln_eps));
    Tensor<T> qkv = add_bias(g, matmul(g, h, p.at(pre + "qkv.weight")),
                             p.at(pre + "qkv.bias"));
    Tensor<T> a = mha(g, qkv, p.cfg.heads);
    a = add_bias(g, matmul(g, a, p.at(pre + "proj.weight")),
                 p.at(pre + "proj.bias"));
    a = maybe_dropout(a);
    a = maybe_drop_path(a);
    x = add(g, x, a);

    Tensor<T> m = layer_norm(g, x, p.at(pre + "ln2.gamma"),
                             p.at(pre + "ln2.beta"), T(p.cfg.ln_eps));
    m = add_bias(g, matmul(g, m, p.at(pre + "fc1.weight")),
                 p.at(pre + "fc1.bias"));
    m = gelu(g, m);
    m = maybe_dropout(m);
    m = add_bias(g, matmul(g, m, p.at(pre + "fc2.weight")),
                 p.at(pre + "fc2.bias"));
    m = maybe_dropout(m);
    m = maybe_drop_path(m);
    x = add(g, x, m);
  }
  x = layer_norm(g, x, p.at("final_ln.gamma"), p.at("final_ln.beta"),
                 T(p.cfg.ln_eps));
  Tensor<T> pooled =
      p.cfg.class_token ? select_token(g, x, 0) : mean_tokens(g, x);
  return add_bias(g, matmul(g, pooled, p.at("head.weight")),
                  p.at("head.bias"));
}

}  // namespace augsub
