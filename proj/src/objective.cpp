#include "augsub/objective.hpp"

namespace augsub {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::none:
      return "none";
    case Variant::masksub:
      return "masksub";
    case Variant::dropsub:
      return "dropsub";
    case Variant::pathsub:
      return "pathsub";
    case Variant::single_mask:
      return "single-mask";
    case Variant::single_dropout:
      return "single-dropout";
    case Variant::single_droppath:
      return "single-droppath";
  }
  return "?";
}

Variant variant_from(const std::string& s) {
  if (s == "none") return Variant::none;
  if (s == "masksub") return Variant::masksub;
  if (s == "dropsub") return Variant::dropsub;
  if (s == "pathsub") return Variant::pathsub;
  if (s == "single-mask") return Variant::single_mask;
  if (s == "single-dropout") return Variant::single_dropout;
  if (s == "single-droppath") return Variant::single_droppath;
  throw ConfigError("unknown variant \"" + s +
                    "\"; expected none, masksub, dropsub, pathsub, "
                    "single-mask, single-dropout or single-droppath");
}

SubSpec build_sub_spec(Variant variant, double strength,
                       const DropSpec& main_drop, MaskStrategy strategy,
                       TargetKind target) {
  main_drop.validate();
  SubSpec s;
  s.variant = variant;
  s.strength = strength;
  s.target = target;
  s.mask.strategy = strategy;
  s.mask.ratio = strength;
  switch (variant) {
    case Variant::none:
      s.strength = 0.0;
      s.mask.ratio = 0.0;
      break;
    case Variant::masksub:
    case Variant::single_mask:
      if (strength < 0.0 || strength > 1.0) {
        throw ConfigError("mask ratio must be in [0,1]; got " +
                          std::to_string(strength));
      }
      break;
    case Variant::dropsub:
    case Variant::single_dropout:
      if (strength < 0.0 || strength >= 1.0) {
        throw ConfigError("dropout strength must be in [0,1); got " +
                          std::to_string(strength));
      }
      break;
    case Variant::pathsub:
      if (strength <= main_drop.drop_path_p) {
        throw ConfigError(
            "pathsub strength must exceed the main drop-path probability (" +
            std::to_string(main_drop.drop_path_p) + "); got " +
            std::to_string(strength));
      }
      if (strength >= 1.0) {
        throw ConfigError("drop-path strength must be below 1; got " +
                          std::to_string(strength));
      }
      break;
    case Variant::single_droppath:
      if (strength < 0.0 || strength >= 1.0) {
        throw ConfigError("drop-path strength must be in [0,1); got " +
                          std::to_string(strength));
      }
      break;
  }
  return s;
}

}  // namespace augsub
