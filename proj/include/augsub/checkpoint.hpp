#pragma once

#include <string>

#include "augsub/vit.hpp"

namespace augsub {

// Binary checkpoint format, little-endian throughout:
//   bytes 0..7   magic "AUGSUB01"
//   u32          record count
//   per record:  u32 name length, name bytes,
//                u32 rank, u32 dims[rank],
//                f32 values (product of dims of them)
//   u32          CRC32 (zlib polynomial) of every preceding byte
// The first record is "meta/vit-config", carrying the model geometry so a
// checkpoint alone can rebuild its model; the rest are parameters in
// registration order.

inline constexpr char kCheckpointMagic[9] = "AUGSUB01";

void save_checkpoint(const std::string& path, const ModelParams<float>& params);

// Rebuilds the model from the meta record and fills every parameter.
// Corrupt magic, CRC mismatch, missing or extra records, or shape drift all
// raise Error naming the offender.
ModelParams<float> load_checkpoint(const std::string& path);

}  // namespace augsub
