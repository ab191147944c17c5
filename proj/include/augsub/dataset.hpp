#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augsub/errors.hpp"

namespace augsub {

// Channel statistics used to normalize pixels: value/255 minus mean, over
// std. The constants are the usual CIFAR-10 training-set moments; synthetic
// data shares them so both kinds flow through one pipeline.
inline constexpr double kPixelMean[3] = {0.4914, 0.4822, 0.4465};
inline constexpr double kPixelStd[3] = {0.2470, 0.2435, 0.2616};

struct Dataset {
  std::int64_t n = 0;
  std::int64_t channels = 3;
  std::int64_t image_size = 32;
  std::int64_t classes = 10;
  std::vector<float> images;  // normalized, [n, C, S, S] row-major
  std::vector<std::int64_t> labels;
};

// One record = 1 label byte + channels*size*size pixel bytes, channels
// planar. At 3x32x32 this is byte-for-byte the CIFAR-10 binary layout.
Dataset decode_records(const std::vector<std::uint8_t>& bytes,
                       std::int64_t image_size, std::int64_t channels,
                       std::int64_t classes, const std::string& origin);

// Concatenates the records of several files (CIFAR-10 ships in batches).
Dataset load_records(const std::vector<std::string>& paths,
                     std::int64_t image_size = 32, std::int64_t channels = 3,
                     std::int64_t classes = 10);

// Gaussian class-blob generator. Each class owns a smooth unit-L2 pattern
// (bilinear upsample of a coarse keyed-noise grid); an image is
// 128 + separation*noise*pattern + N(0, noise^2) per pixel, rounded to u8.
// "separation" is the class-mean amplitude in noise-sigma units, so the
// pairwise mean distance is separation*noise*sqrt(2) and two-class Bayes
// error at separation 4 is about 0.23%.
struct SynthSpec {
  std::uint64_t seed = 1;
  std::int64_t per_class = 52;
  std::int64_t classes = 10;
  std::int64_t image_size = 32;
  std::int64_t channels = 3;
  double noise = 25.0;        // pixel-unit sigma
  double separation = 16.0;   // mean amplitude, in sigmas
  std::int64_t index_offset = 0;  // shifts the per-image noise streams

  void validate() const {
    if (per_class < 1 || classes < 2 || classes > 256 || image_size < 2 ||
        channels < 1) {
      throw ConfigError("synthetic dataset spec out of range");
    }
    if (noise <= 0.0 || separation < 0.0) {
      throw ConfigError("synthetic noise must be positive and separation "
                        "non-negative");
    }
  }
};

// Same-seed calls return identical bytes. Records are ordered class-major:
// class 0's images, then class 1's, ...
std::vector<std::uint8_t> synth_records(const SynthSpec& spec);

Dataset synth_dataset(const SynthSpec& spec);

struct Batch {
  std::int64_t n = 0;
  std::vector<float> images;
  std::vector<std::int64_t> labels;
};

Batch gather_batch(const Dataset& d, const std::vector<std::int64_t>& order,
                   std::int64_t begin, std::int64_t count);

}  // namespace augsub
