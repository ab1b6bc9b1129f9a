#include "rosslink/pipeline/pipeline.hpp"

#include <algorithm>

namespace rosslink::pipeline {

using ad::Tensor;
using ad::Var;

std::filesystem::path stage_checkpoint(const std::filesystem::path& run_dir, int stage) {
  return run_dir / ("stage" + std::to_string(stage) + ".ckpt");
}

std::filesystem::path loss_csv(const std::filesystem::path& run_dir, int stage) {
  return run_dir / ("losses_stage" + std::to_string(stage) + ".csv");
}

void put_model_config(nn::Checkpoint& ckpt, const models::ModelConfig& cfg) {
  for (const auto& f : models::model_fields()) {
    ckpt.meta["model/" + std::string(f.name)] = static_cast<std::uint64_t>(cfg.*f.member);
  }
}

models::ModelConfig get_model_config(const nn::Checkpoint& ckpt) {
  models::ModelConfig cfg;
  for (const auto& f : models::model_fields()) {
    const auto it = ckpt.meta.find("model/" + std::string(f.name));
    if (it == ckpt.meta.end()) throw std::runtime_error("checkpoint lacks model/" + std::string(f.name));
    cfg.*f.member = static_cast<int>(it->second);
  }
  cfg.validate();
  return cfg;
}

namespace {

bool same_model(const models::ModelConfig& a, const models::ModelConfig& b) {
  for (const auto& f : models::model_fields()) {
    if (a.*f.member != b.*f.member) return false;
  }
  return true;
}

nn::Checkpoint load_stage(const std::filesystem::path& run_dir, int stage) {
  const auto path = stage_checkpoint(run_dir, stage);
  if (!std::filesystem::exists(path)) {
    throw MissingStageError("stage " + std::to_string(stage) + " checkpoint not found: " + path.string());
  }
  return nn::Checkpoint::load(path);
}

int required_stage(InferMode mode) {
  switch (mode) {
    case InferMode::bypass: return 1;
    case InferMode::generator_only: return 2;
    case InferMode::full: return 3;
  }
  return 3;
}

}  // namespace

Bundle Bundle::load(const std::filesystem::path& run_dir, int upto) {
  if (upto < 1 || upto > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
  Bundle b;
  const nn::Checkpoint s1 = load_stage(run_dir, 1);
  b.model = get_model_config(s1);
  b.encoder = s1.get_store("encoder");
  b.codec = s1.get_store("codec");
  b.decoder = s1.get_store("decoder");
  b.stages = 1;
  for (int stage = 2; stage <= upto; ++stage) {
    const nn::Checkpoint ck = load_stage(run_dir, stage);
    if (!same_model(get_model_config(ck), b.model)) {
      throw MissingStageError("stage " + std::to_string(stage) + " checkpoint was trained with another model config");
    }
    if (stage == 2) {
      b.generator = ck.get_store("generator");
      b.discriminator = ck.get_store("discriminator");
    } else {
      b.probe = ck.get_store("probe");
      b.compensator = ck.get_store("compensator");
    }
    b.stages = stage;
  }
  return b;
}

InferMode parse_infer_mode(const std::string& name) {
  if (name == "full") return InferMode::full;
  if (name == "generator_only") return InferMode::generator_only;
  if (name == "bypass") return InferMode::bypass;
  throw std::invalid_argument("unknown inference mode '" + name + "' (full, generator_only, bypass)");
}

std::string infer_mode_name(InferMode mode) {
  switch (mode) {
    case InferMode::full: return "full";
    case InferMode::generator_only: return "generator_only";
    case InferMode::bypass: return "bypass";
  }
  return "?";
}

std::vector<int> decode_tokens(const Bundle& bundle, const Tensor& f_hat) {
  return models::greedy_decode(bundle.model, bundle.decoder, f_hat);
}

std::vector<int> predict_probe(const Bundle& bundle, const data::FrameMatrix& frames) {
  if (bundle.stages < 3) throw MissingStageError("probe needs the stage 3 checkpoint");
  ad::Tape tape;
  nn::Binder pg(tape, bundle.generator, false), pp(tape, bundle.probe, false);
  Var inter = models::generator_intermediate(bundle.model, pg, tape.constant(models::pad_frames(frames, bundle.model)));
  return models::binarize(models::probe_forward(bundle.model, pp, inter).value());
}

Inference infer(const Bundle& bundle, const data::FrameMatrix& frames, InferMode mode,
                const channel::ChannelConfig& channel, std::uint64_t block_index, const std::vector<int>* oracle_probe) {
  const int need = required_stage(mode);
  if (bundle.stages < need) {
    throw MissingStageError("inference mode " + infer_mode_name(mode) + " needs the stage " + std::to_string(need) +
                            " checkpoint");
  }
  const auto& m = bundle.model;
  ad::Tape tape;
  Var x = tape.constant(models::pad_frames(frames, m));
  Inference out;
  Var f;
  if (mode == InferMode::bypass) {
    nn::Binder pe(tape, bundle.encoder, false);
    f = models::deep_semantic_encode(m, pe, x);
  } else {
    nn::Binder pg(tape, bundle.generator, false);
    const auto g = models::generator_forward(m, pg, x);
    f = g.f_tilde;
    if (mode == InferMode::full) {
      if (oracle_probe != nullptr) {
        out.probe = *oracle_probe;
      } else {
        nn::Binder pp(tape, bundle.probe, false);
        out.probe = models::binarize(models::probe_forward(m, pp, g.intermediate).value());
      }
    }
  }
  nn::Binder pc(tape, bundle.codec, false);
  const Tensor sent = models::channel_encode(m, pc, f).value();
  Var f_hat = models::channel_decode(m, pc, tape.constant(channel::transmit(sent, channel, block_index)));
  if (mode == InferMode::full) {
    nn::Binder pk(tape, bundle.compensator, false);
    f_hat = models::probe_compensate(m, pk, f_hat, out.probe);
  }
  out.tokens = decode_tokens(bundle, f_hat.value());
  return out;
}

ProbeScore score_probe(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("score_probe: utterance counts differ");
  ProbeScore s;
  for (std::size_t u = 0; u < predicted.size(); ++u) {
    if (predicted[u].size() != truth[u].size()) throw std::invalid_argument("score_probe: probe lengths differ");
    for (std::size_t l = 0; l < truth[u].size(); ++l) {
      const bool p = predicted[u][l] != 0, t = truth[u][l] != 0;
      s.tp += p && t;
      s.fp += p && !t;
      s.fn += !p && t;
    }
  }
  s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double generator_mse(const Bundle& bundle, const std::vector<data::Utterance>& clean,
                     const std::vector<data::Utterance>& corrupted) {
  if (clean.size() != corrupted.size() || clean.empty()) {
    throw std::invalid_argument("generator_mse needs equally many clean and corrupted utterances");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    ad::Tape tape;
    nn::Binder pe(tape, bundle.encoder, false), pg(tape, bundle.generator, false);
    const Tensor f =
        models::deep_semantic_encode(bundle.model, pe, tape.constant(models::pad_frames(clean[i].frames, bundle.model)))
            .value();
    const Tensor ft =
        models::generator_forward(bundle.model, pg, tape.constant(models::pad_frames(corrupted[i].frames, bundle.model)))
            .f_tilde.value();
    total += (f.data - ft.data).squaredNorm() / static_cast<double>(f.numel());
  }
  return total / static_cast<double>(clean.size());
}

std::vector<data::Utterance> corrupted_validation(const data::Corpus& corpus, const data::CorruptionSpec& spec, int n,
                                                  std::uint64_t seed) {
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(n), corpus.test.size());
  std::vector<data::Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(data::corrupt_in_split(corpus, data::Split::test, i, spec, seed));
  return out;
}

}  // namespace rosslink::pipeline
