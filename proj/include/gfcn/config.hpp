#pragma once

#include <string>
#include <vector>

#include "gfcn/augment.hpp"
#include "gfcn/gatenet.hpp"
#include "gfcn/synth.hpp"
#include "gfcn/train.hpp"

namespace gfcn {

/// Everything a run needs. The file form is flat `key = value` lines with
/// section prefixes: model., train., augment., synth. and data.alphabet.
/// Lines starting with `#` are comments. Unlisted keys keep their defaults.
/// Text values keep everything after `= ` verbatim, so alphabets may hold spaces.
struct RunConfig {
  std::string alphabet = "0123456789";
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  SyntheticConfig synth;

  /// Every violated constraint across all sections.
  std::vector<std::string> violations() const;
  void validate() const;
  /// model config with alphabet_size taken from `alphabet`.
  ModelConfig resolved_model() const;
};

/// Parses config text; throws ConfigError listing every bad line and every violation.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// All keys, one per line, in a stable order. parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);
/// Names of every accepted key.
std::vector<std::string> config_keys();

}  // namespace gfcn
