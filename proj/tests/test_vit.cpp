#include <cmath>
#include <cstring>
#include <vector>

#include "augsub/gradcheck.hpp"
#include "augsub/vit.hpp"
#include "doctest.h"

using namespace augsub;

namespace {

VitConfig tiny_config() {
  VitConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.classes = 3;
  return cfg;
}

template <typename T>
std::vector<T> random_images(std::int64_t n, const VitConfig& cfg,
                             std::uint64_t seed) {
  Rng rng = Rng::keyed(seed, {77});
  std::vector<T> v(static_cast<std::size_t>(n * cfg.channels *
                                            cfg.image_size * cfg.image_size));
  for (T& x : v) {
    x = static_cast<T>(rng.next_normal());
  }
  return v;
}

}  // namespace

TEST_CASE("config geometry helpers and validation") {
  VitConfig cfg = tiny_config();
  CHECK(cfg.grid() == 2);
  CHECK(cfg.patches() == 4);
  CHECK(cfg.tokens() == 5);
  CHECK(cfg.patch_dim() == 48);
  CHECK(cfg.mlp_hidden() == 32);
  cfg.class_token = false;
  CHECK(cfg.tokens() == 4);

  VitConfig bad = tiny_config();
  bad.patch_size = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.mlp_ratio = 0.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  DropSpec ds;
  ds.dropout_p = 1.0;
  CHECK_THROWS_AS(ds.validate(), ConfigError);
  ds.dropout_p = 0.0;
  ds.drop_path_p = -0.1;
  CHECK_THROWS_AS(ds.validate(), ConfigError);
}

TEST_CASE("patchify lays out patches grid-row-major, channel-major inside") {
  VitConfig cfg = tiny_config();
  const std::int64_t n = 2, s = cfg.image_size, c = cfg.channels;
  const std::int64_t ps = cfg.patch_size, grid = cfg.grid();
  std::vector<float> images(static_cast<std::size_t>(n * c * s * s));
  for (std::size_t i = 0; i < images.size(); ++i) {
    images[i] = static_cast<float>(i);
  }
  Tensor<float> out = patchify(images, n, cfg);
  REQUIRE(out.shape() == Shape{n, cfg.patches(), cfg.patch_dim()});
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t gy = 0; gy < grid; ++gy) {
      for (std::int64_t gx = 0; gx < grid; ++gx) {
        const std::int64_t patch = gy * grid + gx;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          for (std::int64_t y = 0; y < ps; ++y) {
            for (std::int64_t x = 0; x < ps; ++x) {
              const std::int64_t entry = (ch * ps + y) * ps + x;
              const float want = static_cast<float>(
                  ((img * c + ch) * s + gy * ps + y) * s + gx * ps + x);
              CHECK(out.val()[(img * cfg.patches() + patch) * cfg.patch_dim() +
                              entry] == want);
            }
          }
        }
      }
    }
  }
  std::vector<float> wrong(static_cast<std::size_t>(n * c * s * s - 1));
  CHECK_THROWS_AS(patchify(wrong, n, cfg), ContractError);
}

TEST_CASE("embedding is a per-patch affine map plus class and position") {
  VitConfig cfg = tiny_config();
  auto p = build_params<double>(cfg, 5);
  const std::int64_t n = 2;
  const auto images = random_images<double>(n, cfg, 1);
  Graph<double> g;
  auto patches = patchify(images, n, cfg);
  auto x = embed_tokens(g, patches, p);
  REQUIRE(x.shape() == Shape{n, cfg.tokens(), cfg.dim});
  const auto& w = p.at("patch_embed.weight").val();
  const auto& b = p.at("patch_embed.bias").val();
  const auto& cls = p.at("cls_token").val();
  const auto& pos = p.at("pos_embed").val();
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t t = 0; t < cfg.tokens(); ++t) {
      for (std::int64_t j = 0; j < cfg.dim; ++j) {
        double want;
        if (t == 0) {
          want = cls[j];
        } else {
          want = b[j];
          for (std::int64_t k = 0; k < cfg.patch_dim(); ++k) {
            want += patches.val()[(img * cfg.patches() + (t - 1)) *
                                      cfg.patch_dim() + k] * w[k * cfg.dim + j];
          }
        }
        want += pos[t * cfg.dim + j];
        CHECK(x.val()[(img * cfg.tokens() + t) * cfg.dim + j] ==
              doctest::Approx(want).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("parameter registry counts match the documented layout") {
  VitConfig cfg = tiny_config();
  cfg.mask_token = true;
  auto p = build_params<float>(cfg, 3);
  const std::int64_t d = cfg.dim, h = cfg.mlp_hidden();
  std::int64_t want = cfg.patch_dim() * d + d;  // patch embed
  want += d;                                    // class token
  want += d;                                    // mask token
  want += cfg.tokens() * d;                     // positions
  want += cfg.depth * (2 * d +                  // ln1
                       d * 3 * d + 3 * d +      // qkv
                       d * d + d +              // proj
                       2 * d +                  // ln2
                       d * h + h +              // fc1
                       h * d + d);              // fc2
  want += 2 * d;                                // final ln
  want += d * cfg.classes + cfg.classes;        // head
  CHECK(p.param_count() == want);
  CHECK_THROWS_AS(p.at("nope"), ContractError);
  CHECK_THROWS_AS(p.add("head.bias", Tensor<float>::zeros({1})),
                  ContractError);
  // Same seed rebuilds bit-identical values; another seed differs.
  auto q = build_params<float>(cfg, 3);
  REQUIRE(q.items.size() == p.items.size());
  for (std::size_t i = 0; i < p.items.size(); ++i) {
    CHECK(p.items[i].first == q.items[i].first);
    CHECK(std::memcmp(p.items[i].second.val().data(),
                      q.items[i].second.val().data(),
                      p.items[i].second.val().size() * 4) == 0);
  }
  auto r = build_params<float>(cfg, 4);
  CHECK(std::memcmp(p.at("head.weight").val().data(),
                    r.at("head.weight").val().data(),
                    p.at("head.weight").val().size() * 4) != 0);
}

TEST_CASE("eval forwards are deterministic and ignore stochastic sites") {
  VitConfig cfg = tiny_config();
  auto p = build_params<float>(cfg, 9);
  const std::int64_t n = 3;
  const auto images = random_images<float>(n, cfg, 2);
  DropSpec wet;
  wet.dropout_p = 0.5;
  wet.drop_path_p = 0.3;
  auto run = [&](const DropSpec& drop, std::uint64_t key) {
    Graph<float> g;
    g.recording = false;
    auto x = embed_tokens(g, patchify(images, n, cfg), p);
    auto logits = vit_forward(g, x, p, drop, key);
    CHECK(g.size() == 0);
    return logits.val();
  };
  const auto a = run(wet, 1);
  const auto b = run(wet, 2);
  const auto c = run(DropSpec{}, 3);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
  CHECK(std::memcmp(a.data(), c.data(), a.size() * 4) == 0);
}

TEST_CASE("training forwards reproduce per drop key and differ across keys") {
  VitConfig cfg = tiny_config();
  auto p = build_params<float>(cfg, 9);
  const std::int64_t n = 4;
  const auto images = random_images<float>(n, cfg, 3);
  DropSpec wet;
  wet.dropout_p = 0.3;
  wet.drop_path_p = 0.2;
  auto run = [&](std::uint64_t key) {
    Graph<float> g;
    auto x = embed_tokens(g, patchify(images, n, cfg), p);
    return vit_forward(g, x, p, wet, key).val();
  };
  const auto a = run(11);
  const auto b = run(11);
  const auto c = run(12);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
  CHECK(std::memcmp(a.data(), c.data(), a.size() * 4) != 0);
}

TEST_CASE("stochastic site draws hit their nominal rates") {
  const std::int64_t n = 100000;
  auto keep = vitdet::keep_mask(n, 0.25, 1234);
  std::int64_t kept = 0;
  for (std::uint8_t b : *keep) {
    kept += b;
  }
  CHECK(std::abs(kept / double(n) - 0.75) < 0.01);

  auto f = vitdet::path_factors<float>(n, 0.1, 999);
  std::int64_t alive = 0;
  const float inv = 1.0f / 0.9f;
  for (float v : *f) {
    CHECK((v == 0.0f || v == inv));
    alive += v != 0.0f;
  }
  CHECK(std::abs(alive / double(n) - 0.9) < 0.01);
}

TEST_CASE("forward accepts reduced token sets with shared weights") {
  VitConfig cfg = tiny_config();
  auto p = build_params<float>(cfg, 21);
  const std::int64_t n = 2;
  const auto images = random_images<float>(n, cfg, 4);
  Graph<float> g;
  g.recording = false;
  auto x = embed_tokens(g, patchify(images, n, cfg), p);
  auto full = vit_forward(g, x, p, DropSpec{}, 0);
  CHECK(full.shape() == Shape{n, cfg.classes});
  // Keep the class token and two of four patches.
  auto sub = gather_tokens(g, x, {0, 2, 4});
  auto logits = vit_forward(g, sub, p, DropSpec{}, 0);
  CHECK(logits.shape() == Shape{n, cfg.classes});
  CHECK(std::memcmp(logits.val().data(), full.val().data(),
                    logits.val().size() * 4) != 0);
  // Wrong embedding width is rejected.
  auto badtok = Tensor<float>::zeros({n, 3, cfg.dim + 1});
  CHECK_THROWS_AS(vit_forward(g, badtok, p, DropSpec{}, 0), ContractError);
}

TEST_CASE("shared-weight gradients accumulate across branch forwards") {
  VitConfig cfg = tiny_config();
  auto p = build_params<double>(cfg, 33);
  const std::int64_t n = 2;
  const auto images = random_images<double>(n, cfg, 5);
  auto targets = Tensor<double>::from(
      {n, cfg.classes}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});

  auto loss_of = [&](Graph<double>& g, bool reduced) {
    auto x = embed_tokens(g, patchify(images, n, cfg), p);
    if (reduced) {
      x = gather_tokens(g, x, {0, 1, 3});
    }
    auto logits = vit_forward(g, x, p, DropSpec{}, 0);
    return cross_entropy_soft(g, logits, targets);
  };

  // Pass A: two branches on one tape, one backward through their sum.
  p.zero_grads();
  {
    Graph<double> g;
    auto lm = loss_of(g, false);
    auto ls = loss_of(g, true);
    g.backward(add_weighted(g, lm, 0.5, ls, 0.5));
  }
  std::vector<std::vector<double>> combined;
  for (auto& kv : p.items) {
    combined.push_back(kv.second.grad());
  }

  // Pass B: each branch alone, grads summed by hand.
  p.zero_grads();
  {
    Graph<double> g;
    g.backward(loss_of(g, false));
  }
  std::vector<std::vector<double>> main_only;
  for (auto& kv : p.items) {
    main_only.push_back(kv.second.grad());
  }
  p.zero_grads();
  {
    Graph<double> g;
    g.backward(loss_of(g, true));
  }
  for (std::size_t pi = 0; pi < p.items.size(); ++pi) {
    const auto& sub_only = p.items[pi].second.grad();
    for (std::size_t i = 0; i < sub_only.size(); ++i) {
      const double want = 0.5 * (main_only[pi][i] + sub_only[i]);
      CHECK(combined[pi][i] == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("whole-model gradients pass a finite-difference check") {
  VitConfig cfg = tiny_config();
  auto p = build_params<double>(cfg, 17);
  const std::int64_t n = 2;
  const auto images = random_images<double>(n, cfg, 6);
  auto targets = Tensor<double>::from(
      {n, cfg.classes}, {0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  auto make_loss = [&](Graph<double>& g) {
    auto x = embed_tokens(g, patchify(images, n, cfg), p);
    auto logits = vit_forward(g, x, p, DropSpec{}, 0);
    return cross_entropy_soft(g, logits, targets);
  };
  auto rep = grad_check(make_loss, p.items, 1e-5);
  INFO("worst " << rep.worst_param << "[" << rep.worst_index
                << "] analytic=" << rep.worst_analytic
                << " numeric=" << rep.worst_numeric);
  // Full-depth compositions sit above the single-op noise floor: central
  // differences on an O(1) loss leave ~1e-11 absolute error, which reads as
  // ~1e-5 relative on near-zero gradients.
  CHECK(rep.max_rel_err < 1e-4);
}
