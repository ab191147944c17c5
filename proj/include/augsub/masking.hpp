#pragma once

#include <cstdint>
#include <vector>

#include "augsub/errors.hpp"
#include "augsub/rng.hpp"

namespace augsub {

enum class MaskStrategy { token_removal, mask_token, zero_fill };

const char* mask_strategy_name(MaskStrategy s);
MaskStrategy mask_strategy_from(const std::string& s);

struct MaskSpec {
  MaskStrategy strategy = MaskStrategy::token_removal;
  double ratio = 0.5;          // fraction of tokens masked, [0,1]
  std::int64_t patch_size = 4;  // pixel patch edge for zero_fill

  void validate() const {
    if (ratio < 0.0 || ratio > 1.0) {
      throw ConfigError("mask ratio must be in [0,1]; got " +
                        std::to_string(ratio));
    }
    if (patch_size < 1) {
      throw ConfigError("mask patch size must be positive");
    }
  }
};

// One sampled mask, shared across the batch. Both index lists are sorted;
// together they partition [0, total).
struct MaskOutcome {
  std::vector<std::int64_t> masked;
  std::vector<std::int64_t> kept;
  std::int64_t total = 0;
};

// Exact-count masking: exactly floor(n * ratio) indices via a seeded
// Fisher-Yates shuffle (the +1e-9 guards binary-float cases like 5 * 0.6
// landing just below the integer). Every subset of that size is equally
// likely under the shuffle.
MaskOutcome sample_mask(std::int64_t n_tokens, double ratio, Rng& rng);

// Shifts a patch-grid outcome to token space where index 0 is a class token:
// the class token is never maskable, so it joins kept and all patch indices
// shift by one.
MaskOutcome offset_for_class_token(const MaskOutcome& o);

// Zeroes the pixels of masked patches; images is [n, c, s, s] row-major and
// outcome indexes the (s/patch)^2 patch grid row-major. s must be divisible
// by patch.
template <typename T>
void zero_fill_image(std::vector<T>& images, std::int64_t n, std::int64_t c,
                     std::int64_t s, std::int64_t patch,
                     const MaskOutcome& outcome) {
  if (patch < 1 || s % patch != 0) {
    throw ContractError("zero_fill_image: image size " + std::to_string(s) +
                        " not divisible by patch " + std::to_string(patch));
  }
  const std::int64_t grid = s / patch;
  if (outcome.total != grid * grid) {
    throw ContractError("zero_fill_image: outcome covers " +
                        std::to_string(outcome.total) + " patches, grid has " +
                        std::to_string(grid * grid));
  }
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t idx : outcome.masked) {
      const std::int64_t py = idx / grid, px = idx % grid;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < patch; ++y) {
          T* row = images.data() + ((img * c + ch) * s + py * patch + y) * s +
                   px * patch;
          for (std::int64_t x = 0; x < patch; ++x) {
            row[x] = T(0);
          }
        }
      }
    }
  }
}

}  // namespace augsub
