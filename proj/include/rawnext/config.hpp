#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rawnext/data.hpp"
#include "rawnext/evaluation.hpp"
#include "rawnext/model.hpp"
#include "rawnext/training.hpp"

namespace rawnext {

struct EvalConfig {
  std::vector<Duration> durations{{1.0}, {2.0}, {5.0}, {}};
  std::vector<double> lengths{1, 2, 3, 4, 5, 6, 7, 8};
  DcfParams dcf;
  EerMode eer_mode = EerMode::interpolated;
};

/// Everything a run needs, read from a sectioned key=value file:
///
///   [model]  mode, frontend_channels, stage_widths, stage_blocks, ...
///   [train]  speakers_per_batch, fixed_len, epochs, lr_start, loss, seed, out ...
///   [data]   n_speakers, utts_per_speaker, seed, root ...
///   [eval]   durations, lengths, p_target, eer_mode ...
///
/// Lists are comma separated; '#' starts a comment. Unknown sections or keys
/// are rejected. Keys left out keep their desk() value.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusSpec data;
  EvalConfig eval;
  std::string data_root = "data";
  std::string train_out = "run";

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical text form; parse(serialize()) reproduces the config.
  std::string serialize() const;

  void set_seed(std::uint64_t seed);
  /// Throws ConfigError naming the offending value.
  void validate() const;

  /// Desk-scale defaults: what the CLI runs without a config file.
  static RunConfig desk();
};

}  // namespace rawnext
