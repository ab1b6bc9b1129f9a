#pragma once

#include "rosslink/channel/channel.hpp"
#include "rosslink/data/corpus.hpp"
#include "rosslink/losses/losses.hpp"
#include "rosslink/models/networks.hpp"
#include "rosslink/nn/adam.hpp"
#include "rosslink/nn/checkpoint.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rosslink::pipeline {

/// Raised when a step produces a non-finite loss. The last good parameters have
/// already been written to `checkpoint` when this is thrown.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::filesystem::path checkpoint)
      : std::runtime_error(what), checkpoint(std::move(checkpoint)) {}
  std::filesystem::path checkpoint;
};

/// Stage 2 stopped improving: the validation MSE never fell below the threshold.
class CollapseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint a stage depends on is missing or was trained with another model config.
class MissingStageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int stage = 1;
  int batch_size = 16;
  int steps = 3000;
  nn::AdamConfig adam;
  double snr_min_db = 0.0;
  double snr_max_db = 12.0;
  channel::ChannelKind channel = channel::ChannelKind::awgn;
  std::uint64_t seed = 1;
  int k_g = 1;  // generator steps per discriminator step
  losses::LossConfig loss;
  data::CorruptionSpec corruption;
  std::filesystem::path run_dir = "run";
  int checkpoint_every = 500;
  int eval_every = 250;         // stage 2 validation cadence
  int validation_size = 200;    // utterances of the test split used for validation
  double collapse_ratio = 0.9;  // stage 2 must beat this fraction of the untrained MSE ...
  int collapse_patience = 8;    // ... within this many validations
  bool oracle_probe = false;    // stage 3: feed ground-truth C to the compensator
  bool resume = false;

  void validate() const;
};

/// Parameters of every network; stores of stages not yet trained are empty.
struct Bundle {
  models::ModelConfig model;
  nn::ParamStore encoder, codec, decoder;  // stage 1
  nn::ParamStore generator, discriminator; // stage 2
  nn::ParamStore probe, compensator;       // stage 3
  int stages = 0;                          // highest stage loaded

  /// Loads stage1.ckpt .. stage<upto>.ckpt from `run_dir`.
  static Bundle load(const std::filesystem::path& run_dir, int upto);
};

std::filesystem::path stage_checkpoint(const std::filesystem::path& run_dir, int stage);
std::filesystem::path loss_csv(const std::filesystem::path& run_dir, int stage);

void put_model_config(nn::Checkpoint& ckpt, const models::ModelConfig& cfg);
models::ModelConfig get_model_config(const nn::Checkpoint& ckpt);

struct StageReport {
  int stage = 0;
  int steps_run = 0;
  int start_step = 0;
  double seconds = 0.0;
  std::map<std::string, double> metrics;
  std::vector<std::string> warnings;
};

/// Optional per-step hook (step, metrics of that step), e.g. for progress output.
using StepHook = std::function<void(int, const std::map<std::string, double>&)>;

StageReport train_stage1(const TrainConfig& cfg, const models::ModelConfig& model, const data::Corpus& corpus,
                         const StepHook& hook = {});
StageReport train_stage2(const TrainConfig& cfg, const data::Corpus& corpus, const StepHook& hook = {});
StageReport train_stage3(const TrainConfig& cfg, const data::Corpus& corpus, const StepHook& hook = {});
/// Dispatches on cfg.stage.
StageReport train(const TrainConfig& cfg, const models::ModelConfig& model, const data::Corpus& corpus,
                  const StepHook& hook = {});

enum class InferMode {
  full,            // generator, probe, channel, probe-aided compensator, decoder
  generator_only,  // generator, channel, decoder (C = 0 everywhere)
  bypass,          // stage-1 encoder, channel, decoder
};

InferMode parse_infer_mode(const std::string& name);
std::string infer_mode_name(InferMode mode);

struct Inference {
  std::vector<int> tokens;  // BOS ... EOS
  std::vector<int> probe;   // C, empty unless mode is full
};

/// One utterance through the testing path. `oracle_probe`, if given, replaces the probe network's C.
Inference infer(const Bundle& bundle, const data::FrameMatrix& frames, InferMode mode,
                const channel::ChannelConfig& channel, std::uint64_t block_index,
                const std::vector<int>* oracle_probe = nullptr);

/// Greedy decoding of already channel-decoded features. Shared with the digital baseline.
std::vector<int> decode_tokens(const Bundle& bundle, const ad::Tensor& f_hat);

/// Binarized probe for an utterance, from the frozen generator and probe network.
std::vector<int> predict_probe(const Bundle& bundle, const data::FrameMatrix& frames);

/// Precision/recall/F1 of predicted probe bits against ground truth, pooled over utterances.
struct ProbeScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  long tp = 0, fp = 0, fn = 0;
};
ProbeScore score_probe(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& truth);

/// Mean over utterances of mean((F - F~)^2) for corrupted validation utterances.
double generator_mse(const Bundle& bundle, const std::vector<data::Utterance>& clean,
                     const std::vector<data::Utterance>& corrupted);

/// The validation slice: the first n test utterances, corrupted with a stream tied to `seed`.
std::vector<data::Utterance> corrupted_validation(const data::Corpus& corpus, const data::CorruptionSpec& spec,
                                                  int n, std::uint64_t seed);

}  // namespace rosslink::pipeline
