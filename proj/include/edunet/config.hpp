#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edunet/data.hpp"
#include "edunet/edunet.hpp"
#include "edunet/optim.hpp"

namespace edunet {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Everything that determines a run, addressable through flat dotted keys
/// (model.*, train.*, augment.*, eval.*).
struct RunSettings {
  EDUNetConfig model = EDUNetConfig::b0(4);
  TrainConfig train;
  AugmentConfig augment;
  int folds = 5;
  std::uint64_t fold_seed = 0;
  bool pooled_metrics = false;

  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  /// Throws ConfigError for an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  /// Applies pairs on top of the defaults. model.profile (and model.num_classes) are applied
  /// first so that a profile selects its preset before the remaining overrides.
  static RunSettings from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

  std::string to_text() const;
};

/// Parses `key = value` lines; '#' starts a comment. Duplicate keys are rejected.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace edunet
