#pragma once

// Plain-text run configuration:
//
//   # comment
//   [section]
//   key = value
//
// Every key has a default, so an empty file is a valid config. Overrides of the form
// section.key=value apply after the file, last one wins.

#include "rosslink/data/corpus.hpp"
#include "rosslink/eval/eval.hpp"
#include "rosslink/models/networks.hpp"
#include "rosslink/pipeline/pipeline.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace rosslink::cli {

/// Malformed config text, unknown key or unparsable value. Maps to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Single-point evaluation settings for the `eval` command.
struct EvalSettings {
  eval::System system = eval::System::ross_full;
  channel::ChannelKind channel = channel::ChannelKind::rayleigh;
  double snr_db = 6.0;
  int count = 200;
  bool corrupted = true;
};

struct RunConfig {
  std::filesystem::path out_dir = "run";
  std::filesystem::path corpus;  // empty: <out_dir>/corpus.txt
  std::uint64_t seed = 2024;     // master seed: corpus, training streams, sweep draws
  data::CorpusSpec data;
  data::CorruptionSpec corruption;
  models::ModelConfig model;
  pipeline::TrainConfig train;
  eval::SweepConfig sweep;
  EvalSettings eval;

  std::filesystem::path corpus_path() const;
  /// Copies the master seed, output directory and corruption settings into the
  /// per-module configs and validates them. Throws ConfigError.
  void resolve();
};

/// "section.key" for every settable key, in file order.
std::vector<std::string> config_keys();

void apply_setting(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value);
/// "section.key=value"
void apply_override(RunConfig& cfg, const std::string& assignment);
/// Parses config text onto `cfg`. `origin` prefixes error messages.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its current value; parses back to the same config.
std::string render_config(const RunConfig& cfg);

}  // namespace rosslink::cli
