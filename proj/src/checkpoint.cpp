#include "augsub/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

namespace augsub {
namespace {

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xFF));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  buf.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  buf.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

void put_f32(std::vector<unsigned char>& buf, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(buf, v);
}

struct Reader {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;

  std::uint32_t u32() {
    if (pos + 4 > buf.size()) {
      throw Error("checkpoint truncated at byte " + std::to_string(pos));
    }
    std::uint32_t v = static_cast<std::uint32_t>(buf[pos]) |
                      (static_cast<std::uint32_t>(buf[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(buf[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }

  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }

  std::string str(std::size_t n) {
    if (pos + n > buf.size()) {
      throw Error("checkpoint truncated at byte " + std::to_string(pos));
    }
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

void put_record(std::vector<unsigned char>& buf, const std::string& name,
                const Shape& shape, const std::vector<float>& values) {
  put_u32(buf, static_cast<std::uint32_t>(name.size()));
  buf.insert(buf.end(), name.begin(), name.end());
  put_u32(buf, static_cast<std::uint32_t>(shape.size()));
  for (std::int64_t d : shape) {
    put_u32(buf, static_cast<std::uint32_t>(d));
  }
  for (float v : values) {
    put_f32(buf, v);
  }
}

std::vector<float> meta_values(const VitConfig& c) {
  return {static_cast<float>(c.image_size), static_cast<float>(c.patch_size),
          static_cast<float>(c.channels),   static_cast<float>(c.dim),
          static_cast<float>(c.depth),      static_cast<float>(c.heads),
          static_cast<float>(c.classes),    static_cast<float>(c.mlp_ratio),
          c.class_token ? 1.0f : 0.0f,      c.mask_token ? 1.0f : 0.0f,
          static_cast<float>(c.ln_eps)};
}

VitConfig meta_to_config(const std::vector<float>& v) {
  if (v.size() != 11) {
    throw Error("checkpoint meta record has " + std::to_string(v.size()) +
                " values, expected 11");
  }
  VitConfig c;
  c.image_size = static_cast<std::int64_t>(v[0]);
  c.patch_size = static_cast<std::int64_t>(v[1]);
  c.channels = static_cast<std::int64_t>(v[2]);
  c.dim = static_cast<std::int64_t>(v[3]);
  c.depth = static_cast<std::int64_t>(v[4]);
  c.heads = static_cast<std::int64_t>(v[5]);
  c.classes = static_cast<std::int64_t>(v[6]);
  c.mlp_ratio = static_cast<double>(v[7]);
  c.class_token = v[8] != 0.0f;
  c.mask_token = v[9] != 0.0f;
  c.ln_eps = static_cast<double>(v[10]);
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const ModelParams<float>& params) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 8);
  put_u32(buf, static_cast<std::uint32_t>(params.items.size() + 1));
  put_record(buf, "meta/vit-config",
             {static_cast<std::int64_t>(meta_values(params.cfg).size())},
             meta_values(params.cfg));
  for (const auto& kv : params.items) {
    put_record(buf, kv.first, kv.second.shape(), kv.second.val());
  }
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  put_u32(buf, crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open checkpoint for writing: " + path);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw Error("short write to checkpoint: " + path);
  }
}

ModelParams<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open checkpoint: " + path);
  }
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12) {
    throw Error("checkpoint too small: " + path);
  }
  if (std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
    throw Error("bad checkpoint magic in " + path + "; expected AUGSUB01");
  }
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored = static_cast<std::uint32_t>(buf[body]) |
                         (static_cast<std::uint32_t>(buf[body + 1]) << 8) |
                         (static_cast<std::uint32_t>(buf[body + 2]) << 16) |
                         (static_cast<std::uint32_t>(buf[body + 3]) << 24);
  const std::uint32_t actual = static_cast<std::uint32_t>(
      crc32(0L, buf.data(), static_cast<uInt>(body)));
  if (stored != actual) {
    throw Error("checkpoint CRC mismatch in " + path + ": stored " +
                std::to_string(stored) + ", computed " +
                std::to_string(actual));
  }
  buf.resize(body);
  Reader r{buf, 8};
  const std::uint32_t count = r.u32();
  if (count < 1) {
    throw Error("checkpoint has no records: " + path);
  }

  auto read_record = [&](std::string& name, Shape& shape,
                         std::vector<float>& values) {
    const std::uint32_t name_len = r.u32();
    name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    shape.clear();
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::int64_t>(r.u32()));
      n *= shape.back();
    }
    values.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      values[static_cast<std::size_t>(i)] = r.f32();
    }
  };

  std::string name;
  Shape shape;
  std::vector<float> values;
  read_record(name, shape, values);
  if (name != "meta/vit-config") {
    throw Error("first checkpoint record is \"" + name +
                "\", expected meta/vit-config");
  }
  const VitConfig cfg = meta_to_config(values);
  ModelParams<float> params = build_params<float>(cfg, 0);
  std::vector<bool> seen(params.items.size(), false);
  for (std::uint32_t i = 1; i < count; ++i) {
    read_record(name, shape, values);
    auto it = params.index.find(name);
    if (it == params.index.end()) {
      throw Error("checkpoint record \"" + name +
                  "\" does not match any model parameter");
    }
    Tensor<float>& t = params.items[it->second].second;
    if (t.shape() != shape) {
      throw Error("checkpoint record \"" + name + "\" has shape " +
                  shape_str(shape) + ", model expects " +
                  shape_str(t.shape()));
    }
    t.val() = values;
    seen[it->second] = true;
  }
  if (r.pos != buf.size()) {
    throw Error("checkpoint has " + std::to_string(buf.size() - r.pos) +
                " trailing bytes: " + path);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw Error("checkpoint is missing parameter \"" +
                  params.items[i].first + "\"");
    }
  }
  return params;
}

}  // namespace augsub
