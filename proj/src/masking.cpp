#include "augsub/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace augsub {

const char* mask_strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::token_removal:
      return "token-removal";
    case MaskStrategy::mask_token:
      return "mask-token";
    case MaskStrategy::zero_fill:
      return "zero-fill";
  }
  return "?";
}

MaskStrategy mask_strategy_from(const std::string& s) {
  if (s == "token-removal") {
    return MaskStrategy::token_removal;
  }
  if (s == "mask-token") {
    return MaskStrategy::mask_token;
  }
  if (s == "zero-fill") {
    return MaskStrategy::zero_fill;
  }
  throw ConfigError("unknown mask strategy \"" + s +
                    "\"; expected token-removal, mask-token or zero-fill");
}

MaskOutcome sample_mask(std::int64_t n_tokens, double ratio, Rng& rng) {
  if (n_tokens < 0) {
    throw ContractError("sample_mask: negative token count");
  }
  if (ratio < 0.0 || ratio > 1.0) {
    throw ContractError("sample_mask: ratio " + std::to_string(ratio) +
                        " outside [0,1]");
  }
  const std::int64_t count = static_cast<std::int64_t>(
      std::floor(static_cast<double>(n_tokens) * ratio + 1e-9));
  MaskOutcome o;
  o.total = n_tokens;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n_tokens));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  o.masked.assign(idx.begin(), idx.begin() + count);
  o.kept.assign(idx.begin() + count, idx.end());
  std::sort(o.masked.begin(), o.masked.end());
  std::sort(o.kept.begin(), o.kept.end());
  return o;
}

MaskOutcome offset_for_class_token(const MaskOutcome& o) {
  MaskOutcome r;
  r.total = o.total + 1;
  r.masked.reserve(o.masked.size());
  for (std::int64_t i : o.masked) {
    r.masked.push_back(i + 1);
  }
  r.kept.reserve(o.kept.size() + 1);
  r.kept.push_back(0);
  for (std::int64_t i : o.kept) {
    r.kept.push_back(i + 1);
  }
  return r;
}

}  // namespace augsub
