#include "augsub/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "augsub/rng.hpp"

namespace augsub {

Dataset decode_records(const std::vector<std::uint8_t>& bytes,
                       std::int64_t image_size, std::int64_t channels,
                       std::int64_t classes, const std::string& origin) {
  const std::int64_t pixels = channels * image_size * image_size;
  const std::int64_t record = 1 + pixels;
  if (bytes.empty()) {
    throw Error("no records in " + origin);
  }
  if (static_cast<std::int64_t>(bytes.size()) % record != 0) {
    throw Error(origin + " holds " + std::to_string(bytes.size()) +
                " bytes, not a multiple of the " + std::to_string(record) +
                "-byte record (1 label + " + std::to_string(pixels) +
                " pixels)");
  }
  Dataset d;
  d.n = static_cast<std::int64_t>(bytes.size()) / record;
  d.channels = channels;
  d.image_size = image_size;
  d.classes = classes;
  d.images.resize(static_cast<std::size_t>(d.n * pixels));
  d.labels.resize(static_cast<std::size_t>(d.n));
  const std::int64_t plane = image_size * image_size;
  for (std::int64_t i = 0; i < d.n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    if (rec[0] >= classes) {
      throw Error(origin + " record " + std::to_string(i) + " has label " +
                  std::to_string(rec[0]) + ", expected < " +
                  std::to_string(classes));
    }
    d.labels[static_cast<std::size_t>(i)] = rec[0];
    for (std::int64_t c = 0; c < channels; ++c) {
      const double mean = kPixelMean[c % 3];
      const double inv_std = 1.0 / kPixelStd[c % 3];
      const std::uint8_t* src = rec + 1 + c * plane;
      float* dst = d.images.data() + (i * channels + c) * plane;
      for (std::int64_t px = 0; px < plane; ++px) {
        dst[px] = static_cast<float>(
            (static_cast<double>(src[px]) / 255.0 - mean) * inv_std);
      }
    }
  }
  return d;
}

Dataset load_records(const std::vector<std::string>& paths,
                     std::int64_t image_size, std::int64_t channels,
                     std::int64_t classes) {
  if (paths.empty()) {
    throw ConfigError("no dataset files given");
  }
  std::vector<std::uint8_t> bytes;
  for (const std::string& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
      throw Error("cannot open dataset file: " + p);
    }
    bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in),
                 std::istreambuf_iterator<char>());
  }
  return decode_records(bytes, image_size, channels, classes,
                        paths.size() == 1
                            ? paths[0]
                            : paths[0] + " (+" +
                                  std::to_string(paths.size() - 1) + " more)");
}

namespace {

// Smooth unit-L2 class pattern: coarse keyed noise, bilinear to full size,
// normalized over all channels.
std::vector<double> class_pattern(const SynthSpec& spec, std::int64_t cls) {
  const std::int64_t s = spec.image_size;
  const std::int64_t g = std::min<std::int64_t>(8, s);
  Rng rng = Rng::keyed(spec.seed, {stream::data_pattern,
                                   static_cast<std::uint64_t>(cls)});
  std::vector<double> coarse(static_cast<std::size_t>(spec.channels * g * g));
  for (double& v : coarse) {
    v = rng.next_normal();
  }
  std::vector<double> full(static_cast<std::size_t>(spec.channels * s * s));
  const double step = s > 1 ? static_cast<double>(g - 1) / (s - 1) : 0.0;
  for (std::int64_t c = 0; c < spec.channels; ++c) {
    const double* cg = coarse.data() + c * g * g;
    double* fp = full.data() + c * s * s;
    for (std::int64_t y = 0; y < s; ++y) {
      const double fy = y * step;
      const std::int64_t y0 = std::min<std::int64_t>(g - 2, static_cast<std::int64_t>(fy));
      const double wy = fy - y0;
      for (std::int64_t x = 0; x < s; ++x) {
        const double fx = x * step;
        const std::int64_t x0 = std::min<std::int64_t>(g - 2, static_cast<std::int64_t>(fx));
        const double wx = fx - x0;
        const double v00 = cg[y0 * g + x0], v01 = cg[y0 * g + x0 + 1];
        const double v10 = cg[(y0 + 1) * g + x0], v11 = cg[(y0 + 1) * g + x0 + 1];
        fp[y * s + x] = v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx +
                        v10 * wy * (1 - wx) + v11 * wy * wx;
      }
    }
  }
  double ss = 0.0;
  for (double v : full) {
    ss += v * v;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (double& v : full) {
    v *= inv;
  }
  return full;
}

}  // namespace

std::vector<std::uint8_t> synth_records(const SynthSpec& spec) {
  spec.validate();
  const std::int64_t pixels =
      spec.channels * spec.image_size * spec.image_size;
  const std::int64_t record = 1 + pixels;
  std::vector<std::uint8_t> bytes(
      static_cast<std::size_t>(spec.classes * spec.per_class * record));
  const double amp = spec.separation * spec.noise;
  std::size_t pos = 0;
  for (std::int64_t cls = 0; cls < spec.classes; ++cls) {
    const std::vector<double> pattern = class_pattern(spec, cls);
    for (std::int64_t i = 0; i < spec.per_class; ++i) {
      Rng rng = Rng::keyed(
          spec.seed,
          {stream::data_noise, static_cast<std::uint64_t>(cls),
           static_cast<std::uint64_t>(i + spec.index_offset)});
      bytes[pos++] = static_cast<std::uint8_t>(cls);
      for (std::int64_t px = 0; px < pixels; ++px) {
        const double v =
            128.0 + amp * pattern[static_cast<std::size_t>(px)] +
            spec.noise * rng.next_normal();
        const long r = std::lround(v);
        bytes[pos++] = static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
      }
    }
  }
  return bytes;
}

Dataset synth_dataset(const SynthSpec& spec) {
  return decode_records(synth_records(spec), spec.image_size, spec.channels,
                        spec.classes, "synthetic dataset");
}

Batch gather_batch(const Dataset& d, const std::vector<std::int64_t>& order,
                   std::int64_t begin, std::int64_t count) {
  if (begin < 0 || begin + count > static_cast<std::int64_t>(order.size())) {
    throw ContractError("gather_batch range [" + std::to_string(begin) + "," +
                        std::to_string(begin + count) + ") out of bounds");
  }
  const std::int64_t pixels = d.channels * d.image_size * d.image_size;
  Batch b;
  b.n = count;
  b.images.resize(static_cast<std::size_t>(count * pixels));
  b.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t src = order[static_cast<std::size_t>(begin + i)];
    if (src < 0 || src >= d.n) {
      throw ContractError("gather_batch index " + std::to_string(src) +
                          " outside dataset of " + std::to_string(d.n));
    }
    std::copy(d.images.begin() + src * pixels,
              d.images.begin() + (src + 1) * pixels,
              b.images.begin() + i * pixels);
    b.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(src)];
  }
  return b;
}

}  // namespace augsub
