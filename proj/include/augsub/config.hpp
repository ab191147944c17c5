#pragma once

#include <string>

#include "augsub/trainer.hpp"

namespace augsub {

// JSON <-> TrainConfig. Keys are kebab-case; every key is optional and
// defaults to the stock desk configuration; unknown keys are rejected with
// the full dotted path so typos cannot silently fall back to a default.
TrainConfig config_from_json_text(const std::string& text);
TrainConfig load_config(const std::string& path);

// Full echo of the effective configuration, every key present.
std::string config_to_json_text(const TrainConfig& cfg);

}  // namespace augsub
