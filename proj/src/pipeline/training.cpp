#include "rosslink/common/seeding.hpp"
#include "rosslink/pipeline/pipeline.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace rosslink::pipeline {

using ad::Tensor;
using ad::Var;
using models::Network;

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("train config: " + what);
  };
  need(stage >= 1 && stage <= 3, "stage must be 1, 2 or 3");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(steps >= 0, "steps must be >= 0");
  need(std::isfinite(snr_min_db) && std::isfinite(snr_max_db) && snr_min_db <= snr_max_db,
       "SNR range must be finite and non-empty");
  need(k_g >= 1, "k_G must be >= 1");
  need(adam.lr > 0 && adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
       "invalid Adam settings");
  need(checkpoint_every >= 1 && eval_every >= 1 && validation_size >= 1 && collapse_patience >= 1,
       "cadences and sizes must be >= 1");
  need(collapse_ratio > 0, "collapse_ratio must be positive");
  loss.validate();
  corruption.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

// Stream tags, so the stages never share random numbers.
constexpr std::uint64_t kBatchTag = 0xBA7C;
constexpr std::uint64_t kSnrTag = 0x5A12;
constexpr std::uint64_t kChannelTag = 0xC4A1;
constexpr std::uint64_t kCorruptTag = 0xC022;
constexpr std::uint64_t kValidationTag = 0x7A11;

std::uint64_t network_seed(std::uint64_t seed, Network n) {
  return derive_seed(seed, {fnv1a("init"), fnv1a(models::network_name(n))});
}

std::vector<std::size_t> sample_batch(const TrainConfig& cfg, std::size_t population, int step) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {kBatchTag, static_cast<std::uint64_t>(cfg.stage),
                                             static_cast<std::uint64_t>(step)}));
  std::uniform_int_distribution<std::size_t> pick(0, population - 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch_size));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

channel::ChannelConfig step_channel(const TrainConfig& cfg, int step) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {kSnrTag, static_cast<std::uint64_t>(cfg.stage),
                                             static_cast<std::uint64_t>(step)}));
  std::uniform_real_distribution<double> snr(cfg.snr_min_db, cfg.snr_max_db);
  channel::ChannelConfig ch;
  ch.kind = cfg.channel;
  ch.snr_db = cfg.snr_min_db == cfg.snr_max_db ? cfg.snr_min_db : snr(rng);
  ch.seed = derive_seed(cfg.seed, {kChannelTag, static_cast<std::uint64_t>(cfg.stage), static_cast<std::uint64_t>(step)});
  return ch;
}

std::uint64_t step_corruption_seed(const TrainConfig& cfg, int step) {
  return derive_seed(cfg.seed, {kCorruptTag, static_cast<std::uint64_t>(cfg.stage), static_cast<std::uint64_t>(step)});
}

nn::AdamState fresh_adam(const TrainConfig& cfg) {
  nn::AdamState s;
  s.config = cfg.adam;
  return s;
}

void zero_grads(nn::ParamStore& store) {
  for (auto& [name, t] : store) t.ensure_grad().setZero();
}

std::span<const int> teacher_of(const data::Utterance& u, int decode_len) {
  return std::span<const int>(u.target).first(static_cast<std::size_t>(decode_len));
}

std::span<const int> labels_of(const data::Utterance& u, int decode_len) {
  return std::span<const int>(u.target).subspan(1, static_cast<std::size_t>(decode_len));
}

// Loss CSV that survives resumption: rows from steps at or after the resume point are dropped.
class LossLog {
 public:
  LossLog(const std::filesystem::path& path, int resume_step) : path_(path) {
    std::vector<std::string> kept;
    if (resume_step > 0 && std::filesystem::exists(path)) {
      std::ifstream is(path);
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        if (std::stoi(line.substr(0, line.find(','))) < resume_step) kept.push_back(line);
      }
    }
    os_.open(path, std::ios::trunc);
    if (!os_) throw std::runtime_error("cannot write " + path.string());
    os_ << "step,stage,loss_name,value\n";
    for (const auto& l : kept) os_ << l << '\n';
  }

  void add(int step, int stage, const std::string& name, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    os_ << step << ',' << stage << ',' << name << ',' << buf << '\n';
  }

  void flush() {
    os_.flush();
    if (!os_) throw std::runtime_error("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
};

struct Trained {
  std::string name;
  nn::ParamStore* store;
  nn::AdamState* adam;
};

void save_stage(const TrainConfig& cfg, const models::ModelConfig& model, int next_step,
                const std::vector<Trained>& nets, const std::map<std::string, std::uint64_t>& extra = {}) {
  nn::Checkpoint ck;
  put_model_config(ck, model);
  ck.meta["train/stage"] = static_cast<std::uint64_t>(cfg.stage);
  ck.meta["train/step"] = static_cast<std::uint64_t>(next_step);
  ck.meta["train/seed"] = cfg.seed;
  for (const auto& [k, v] : extra) ck.meta[k] = v;
  for (const auto& t : nets) {
    ck.put_store(t.name, *t.store);
    ck.put_adam("adam/" + t.name, *t.adam);
  }
  ck.save(stage_checkpoint(cfg.run_dir, cfg.stage));
}

// Restores networks and optimizer state when resuming; returns the step to continue from.
int maybe_resume(const TrainConfig& cfg, const models::ModelConfig& model, const std::vector<Trained>& nets,
                 std::map<std::string, std::uint64_t>* extra = nullptr) {
  const auto path = stage_checkpoint(cfg.run_dir, cfg.stage);
  if (!cfg.resume || !std::filesystem::exists(path)) return 0;
  const nn::Checkpoint ck = nn::Checkpoint::load(path);
  const models::ModelConfig saved = get_model_config(ck);
  for (const auto& f : models::model_fields()) {
    if (saved.*f.member != model.*f.member) {
      throw std::runtime_error("cannot resume " + path.string() + ": model field " + std::string(f.name) + " differs");
    }
  }
  if (ck.meta.at("train/seed") != cfg.seed) throw std::runtime_error("cannot resume " + path.string() + ": seed differs");
  for (const auto& t : nets) {
    *t.store = ck.get_store(t.name);
    *t.adam = ck.get_adam("adam/" + t.name, cfg.adam);
  }
  if (extra != nullptr) {
    for (const auto& [k, v] : ck.meta) {
      if (k.rfind("guard/", 0) == 0) (*extra)[k] = v;
    }
  }
  return static_cast<int>(ck.meta.at("train/step"));
}

[[noreturn]] void diverged(const TrainConfig& cfg, const models::ModelConfig& model, int step,
                           const std::vector<Trained>& nets, const std::string& what) {
  save_stage(cfg, model, step, nets);
  throw DivergenceError("stage " + std::to_string(cfg.stage) + " diverged at step " + std::to_string(step) + ": " +
                            what + "; last good parameters kept in " +
                            stage_checkpoint(cfg.run_dir, cfg.stage).string(),
                        stage_checkpoint(cfg.run_dir, cfg.stage));
}

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw ad::NonFiniteError(std::string(name) + " is " + std::to_string(v));
}

// Runs one step; on a non-finite value the networks are rolled back to their state
// before the step and saved, then DivergenceError is raised.
template <class Body>
void guarded_step(const TrainConfig& cfg, const models::ModelConfig& model, int step, const std::vector<Trained>& nets,
                  Body&& body) {
  std::vector<std::pair<nn::ParamStore, nn::AdamState>> before;
  for (const auto& t : nets) before.emplace_back(*t.store, *t.adam);
  try {
    body();
  } catch (const ad::NonFiniteError& e) {
    for (std::size_t i = 0; i < nets.size(); ++i) {
      *nets[i].store = before[i].first;
      *nets[i].adam = before[i].second;
    }
    diverged(cfg, model, step, nets, e.what());
  }
}

std::vector<Tensor> padded_frames(const std::vector<data::Utterance>& utts, const models::ModelConfig& m) {
  std::vector<Tensor> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(models::pad_frames(u.frames, m));
  return out;
}

void check_corpus(const data::Corpus& corpus, const models::ModelConfig& m) {
  if (corpus.train.empty()) throw std::invalid_argument("training split is empty");
  const auto& s = corpus.spec;
  if (s.frame_dim != m.frame_dim || s.frames_per_token != m.frames_per_token || s.max_target_len != m.max_target_len ||
      s.vocab_size() != m.vocab) {
    throw std::invalid_argument("corpus shape (frame_dim, frames_per_token, max_target_len, vocab) does not match model");
  }
}

std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }
double double_of(std::uint64_t v) { return std::bit_cast<double>(v); }

}  // namespace

StageReport train_stage1(const TrainConfig& cfg_in, const models::ModelConfig& model, const data::Corpus& corpus,
                         const StepHook& hook) {
  TrainConfig cfg = cfg_in;
  cfg.stage = 1;
  cfg.validate();
  model.validate();
  check_corpus(corpus, model);
  std::filesystem::create_directories(cfg.run_dir);
  const auto t0 = Clock::now();

  nn::ParamStore enc = models::init_network(Network::encoder, model, network_seed(cfg.seed, Network::encoder));
  nn::ParamStore codec =
      models::init_network(Network::channel_codec, model, network_seed(cfg.seed, Network::channel_codec));
  nn::ParamStore dec = models::init_network(Network::decoder, model, network_seed(cfg.seed, Network::decoder));
  nn::AdamState a_enc = fresh_adam(cfg), a_codec = fresh_adam(cfg), a_dec = fresh_adam(cfg);
  const std::vector<Trained> nets{{"encoder", &enc, &a_enc}, {"codec", &codec, &a_codec}, {"decoder", &dec, &a_dec}};

  StageReport report;
  report.stage = 1;
  report.start_step = maybe_resume(cfg, model, nets);
  LossLog log(loss_csv(cfg.run_dir, 1), report.start_step);
  const auto frames = padded_frames(corpus.train, model);
  const int n = model.decode_len();
  double lsr_sum = 0.0, ce_sum = 0.0;
  int tail_steps = 0;
  const int tail_from = std::max(report.start_step, cfg.steps - 50);

  for (int step = report.start_step; step < cfg.steps; ++step) {
    guarded_step(cfg, model, step, nets, [&] {
      const auto batch = sample_batch(cfg, corpus.train.size(), step);
      const auto ch = step_channel(cfg, step);
      int positions = 0;
      for (std::size_t i : batch) positions += losses::active_positions(labels_of(corpus.train[i], n));
      const double scale = 1.0 / std::max(positions, 1);
      for (const auto& t : nets) zero_grads(*t.store);
      double lsr = 0.0, ce = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& u = corpus.train[batch[b]];
        ad::Tape tape;
        nn::Binder pe(tape, enc, true), pc(tape, codec, true), pd(tape, dec, true);
        Var f = models::deep_semantic_encode(model, pe, tape.constant(frames[batch[b]]));
        Var y = channel::transmit_on_tape(models::channel_encode(model, pc, f), ch, b);
        Var pred = models::decode_teacher(model, pd, models::channel_decode(model, pc, y), teacher_of(u, n));
        Var loss = losses::lsr_ce(pred, labels_of(u, n), cfg.loss);
        lsr += loss.item() * scale;
        ce += losses::cross_entropy(pred, labels_of(u, n)).item() * scale;
        check_finite(lsr, "lsr_ce");
        tape.backward(scale * loss);
        pe.accumulate_grads(enc);
        pc.accumulate_grads(codec);
        pd.accumulate_grads(dec);
      }
      for (const auto& t : nets) nn::adam_step(*t.adam, *t.store);

      log.add(step, 1, "lsr_ce", lsr);
      log.add(step, 1, "ce", ce);
      if (step == 0) {
        report.metrics["lsr_ce_first"] = lsr;
        report.metrics["ce_first"] = ce;
      }
      if (step >= tail_from) {
        lsr_sum += lsr;
        ce_sum += ce;
        ++tail_steps;
      }
      if (hook) hook(step, {{"lsr_ce", lsr}, {"ce", ce}, {"snr_db", ch.snr_db}});
      ++report.steps_run;
      if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
        log.flush();
        save_stage(cfg, model, step + 1, nets);
      }
    });
  }
  log.flush();
  save_stage(cfg, model, cfg.steps, nets);
  if (tail_steps > 0) {
    report.metrics["lsr_ce_last"] = lsr_sum / tail_steps;
    report.metrics["ce_last"] = ce_sum / tail_steps;
  }
  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

StageReport train_stage2(const TrainConfig& cfg_in, const data::Corpus& corpus, const StepHook& hook) {
  TrainConfig cfg = cfg_in;
  cfg.stage = 2;
  cfg.validate();
  Bundle bundle = Bundle::load(cfg.run_dir, 1);
  const auto& model = bundle.model;
  check_corpus(corpus, model);
  const auto t0 = Clock::now();
  const nn::ParamStore encoder_before = bundle.encoder;

  bundle.generator = models::init_network(Network::generator, model, network_seed(cfg.seed, Network::generator));
  bundle.discriminator =
      models::init_network(Network::discriminator, model, network_seed(cfg.seed, Network::discriminator));
  nn::AdamState a_gen = fresh_adam(cfg), a_disc = fresh_adam(cfg);
  const std::vector<Trained> nets{{"generator", &bundle.generator, &a_gen},
                                  {"discriminator", &bundle.discriminator, &a_disc}};

  // Validation slice and the untrained generator's MSE on it, the reference for the collapse guard.
  const auto val_corrupt = corrupted_validation(corpus, cfg.corruption, cfg.validation_size,
                                                derive_seed(cfg.seed, {kValidationTag}));
  const std::vector<data::Utterance> val_clean(corpus.test.begin(), corpus.test.begin() + val_corrupt.size());
  if (val_corrupt.empty()) throw std::invalid_argument("stage 2 needs a non-empty test split for validation");
  const double untrained_mse = generator_mse(bundle, val_clean, val_corrupt);

  StageReport report;
  report.stage = 2;
  std::map<std::string, std::uint64_t> guard{{"guard/best", bits_of(untrained_mse)}, {"guard/evals", 0}};
  report.start_step = maybe_resume(cfg, model, nets, &guard);
  LossLog log(loss_csv(cfg.run_dir, 2), report.start_step);

  // Real features never change in this stage, so they are computed once.
  const auto frames = padded_frames(corpus.train, model);
  std::vector<Tensor> real(corpus.train.size());
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    ad::Tape tape;
    nn::Binder pe(tape, bundle.encoder, false);
    real[i] = models::deep_semantic_encode(model, pe, tape.constant(frames[i])).value();
  }

  double best = double_of(guard["guard/best"]);
  int evals = static_cast<int>(guard["guard/evals"]);
  const double scale = 1.0 / cfg.batch_size;
  for (int step = report.start_step; step < cfg.steps; ++step) {
    guarded_step(cfg, model, step, nets, [&] {
      const auto batch = sample_batch(cfg, corpus.train.size(), step);
      const std::uint64_t cseed = step_corruption_seed(cfg, step);
      std::vector<Tensor> fake_in;
      for (std::size_t i : batch) {
        fake_in.push_back(models::pad_frames(
            data::corrupt_in_split(corpus, data::Split::train, i, cfg.corruption, cseed).frames, model));
      }

      zero_grads(bundle.discriminator);
      double d_loss = 0.0, d_real = 0.0, d_fake = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        ad::Tape tape;
        nn::Binder pg(tape, bundle.generator, false), pd(tape, bundle.discriminator, true);
        Var ft = tape.constant(models::generator_forward(model, pg, tape.constant(fake_in[b])).f_tilde.value());
        Var dr = models::discriminate(model, pd, tape.constant(real[batch[b]]));
        Var df = models::discriminate(model, pd, ft);
        Var loss = losses::disc_loss(dr, df);
        d_loss += loss.item() * scale;
        d_real += dr.item() * scale;
        d_fake += df.item() * scale;
        check_finite(d_loss, "disc_loss");
        tape.backward(scale * loss);
        pd.accumulate_grads(bundle.discriminator);
      }
      nn::adam_step(a_disc, bundle.discriminator);

      double g_loss = 0.0, mse = 0.0;
      for (int k = 0; k < cfg.k_g; ++k) {
        zero_grads(bundle.generator);
        g_loss = 0.0;
        mse = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          ad::Tape tape;
          nn::Binder pg(tape, bundle.generator, true), pd(tape, bundle.discriminator, false);
          Var ft = models::generator_forward(model, pg, tape.constant(fake_in[b])).f_tilde;
          Var f = tape.constant(real[batch[b]]);
          Var loss = losses::gen_loss(f, ft, models::discriminate(model, pd, ft), cfg.loss);
          g_loss += loss.item() * scale;
          mse += (real[batch[b]].data - ft.value().data).squaredNorm() / static_cast<double>(ft.numel()) * scale;
          check_finite(g_loss, "gen_loss");
          tape.backward(scale * loss);
          pg.accumulate_grads(bundle.generator);
        }
        nn::adam_step(a_gen, bundle.generator);
      }

      log.add(step, 2, "disc", d_loss);
      log.add(step, 2, "gen", g_loss);
      log.add(step, 2, "mse", mse);
      log.add(step, 2, "d_real", d_real);
      log.add(step, 2, "d_fake", d_fake);
      std::map<std::string, double> m{{"disc", d_loss}, {"gen", g_loss}, {"mse", mse}, {"d_real", d_real},
                                      {"d_fake", d_fake}};

      if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
        const double val = generator_mse(bundle, val_clean, val_corrupt);
        log.add(step, 2, "val_mse", val);
        m["val_mse"] = val;
        ++evals;
        best = std::min(best, val);
        if (evals >= cfg.collapse_patience && best > cfg.collapse_ratio * untrained_mse) {
          log.flush();
          save_stage(cfg, model, step + 1, nets);
          throw CollapseError("stage 2 stalled: best validation MSE " + std::to_string(best) + " after " +
                              std::to_string(evals) + " evaluations is above " + std::to_string(cfg.collapse_ratio) +
                              " x untrained " + std::to_string(untrained_mse));
        }
      }
      if (hook) hook(step, m);
      ++report.steps_run;
      if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
        log.flush();
        save_stage(cfg, model, step + 1, nets, {{"guard/best", bits_of(best)}, {"guard/evals", evals}});
      }
    });
  }
  log.flush();
  save_stage(cfg, model, cfg.steps, nets, {{"guard/best", bits_of(best)}, {"guard/evals", evals}});

  if (!encoder_before.bit_identical(bundle.encoder)) throw std::logic_error("stage 2 modified the frozen encoder");
  report.metrics["val_mse_untrained"] = untrained_mse;
  report.metrics["val_mse"] = generator_mse(bundle, val_clean, val_corrupt);
  double dr = 0.0, df = 0.0;
  for (std::size_t i = 0; i < val_clean.size(); ++i) {
    ad::Tape tape;
    nn::Binder pe(tape, bundle.encoder, false), pg(tape, bundle.generator, false),
        pd(tape, bundle.discriminator, false);
    Var f = models::deep_semantic_encode(model, pe, tape.constant(models::pad_frames(val_clean[i].frames, model)));
    Var ft = models::generator_forward(model, pg, tape.constant(models::pad_frames(val_corrupt[i].frames, model)))
                 .f_tilde;
    dr += models::discriminate(model, pd, f).item();
    df += models::discriminate(model, pd, ft).item();
  }
  report.metrics["d_real"] = dr / static_cast<double>(val_clean.size());
  report.metrics["d_fake"] = df / static_cast<double>(val_clean.size());
  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

StageReport train_stage3(const TrainConfig& cfg_in, const data::Corpus& corpus, const StepHook& hook) {
  TrainConfig cfg = cfg_in;
  cfg.stage = 3;
  cfg.validate();
  Bundle bundle = Bundle::load(cfg.run_dir, 2);
  const auto& model = bundle.model;
  check_corpus(corpus, model);
  const auto t0 = Clock::now();
  const Bundle frozen = bundle;

  bundle.probe = models::init_network(Network::probe, model, network_seed(cfg.seed, Network::probe));
  bundle.compensator = models::init_network(Network::compensator, model, network_seed(cfg.seed, Network::compensator));
  bundle.stages = 3;
  nn::AdamState a_probe = fresh_adam(cfg), a_comp = fresh_adam(cfg);
  const std::vector<Trained> nets{{"probe", &bundle.probe, &a_probe}, {"compensator", &bundle.compensator, &a_comp}};

  StageReport report;
  report.stage = 3;
  report.start_step = maybe_resume(cfg, model, nets);
  LossLog log(loss_csv(cfg.run_dir, 3), report.start_step);

  const auto frames = padded_frames(corpus.train, model);
  // Clean intermediate representation I per training utterance, from the frozen generator.
  std::vector<Tensor> clean_inter(corpus.train.size());
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    ad::Tape tape;
    nn::Binder pg(tape, bundle.generator, false);
    clean_inter[i] = models::generator_intermediate(model, pg, tape.constant(frames[i])).value();
  }

  const int n = model.decode_len();
  const double scale = 1.0 / cfg.batch_size;
  const int steps_per_epoch =
      std::max(1, static_cast<int>((corpus.train.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size)));
  long epoch_ones = 0;
  for (int step = report.start_step; step < cfg.steps; ++step) {
    guarded_step(cfg, model, step, nets, [&] {
      const auto batch = sample_batch(cfg, corpus.train.size(), step);
      const auto ch = step_channel(cfg, step);
      const std::uint64_t cseed = step_corruption_seed(cfg, step);
      zero_grads(bundle.probe);
      zero_grads(bundle.compensator);

      // Probe-aided compensator loss is normalized by the probed positions of the whole batch.
      struct Item {
        Tensor f_hat_tilde;
        std::vector<int> probe;
        std::size_t index;
      };
      std::vector<Item> items;
      double probe_loss = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const data::Utterance bad = data::corrupt_in_split(corpus, data::Split::train, batch[b], cfg.corruption, cseed);
        ad::Tape tape;
        nn::Binder pg(tape, bundle.generator, false), pp(tape, bundle.probe, true), pc(tape, bundle.codec, false);
        const auto g = models::generator_forward(model, pg, tape.constant(models::pad_frames(bad.frames, model)));
        Var inter_t = tape.constant(g.intermediate.value());
        Var inter = tape.constant(clean_inter[batch[b]]);
        Var c = models::probe_forward(model, pp, inter_t);
        Var i = losses::row_norms(ad::sub(inter_t, inter));
        Var i_t = losses::row_norms(inter_t);
        Var loss = losses::probe_net_loss(tape.constant(i.value()), tape.constant(i_t.value()), c);
        probe_loss += loss.item() * scale;
        check_finite(probe_loss, "probe_net_loss");
        tape.backward(scale * loss);
        pp.accumulate_grads(bundle.probe);

        Item item;
        item.index = batch[b];
        item.probe = cfg.oracle_probe ? data::frame_mask_to_probe_truth(bad.mask, model.frames_per_token,
                                                                        model.max_target_len)
                                      : models::binarize(c.value());
        const Tensor sent = models::channel_encode(model, pc, g.f_tilde).value();
        item.f_hat_tilde = models::channel_decode(model, pc, tape.constant(channel::transmit(sent, ch, b))).value();
        items.push_back(std::move(item));
      }

      int probed = 0;
      for (const auto& it : items) {
        const auto labels = labels_of(corpus.train[it.index], n);
        const int active = losses::active_positions(labels);
        for (int l = 0; l < active; ++l) probed += it.probe[l] != 0;
      }
      epoch_ones += probed;
      double comp_loss = 0.0;
      if (probed > 0) {
        const double cscale = 1.0 / probed;
        for (const auto& it : items) {
          const auto& u = corpus.train[it.index];
          ad::Tape tape;
          nn::Binder pk(tape, bundle.compensator, true), pd(tape, bundle.decoder, false);
          Var f_hat = models::probe_compensate(model, pk, tape.constant(it.f_hat_tilde), it.probe);
          Var pred = models::decode_teacher(model, pd, f_hat, teacher_of(u, n));
          Var loss = losses::probe_comp_loss(pred, labels_of(u, n), std::span<const int>(it.probe).first(n));
          comp_loss += loss.item() * cscale;
          check_finite(comp_loss, "probe_comp_loss");
          tape.backward(cscale * loss);
          pk.accumulate_grads(bundle.compensator);
        }
      }
      nn::adam_step(a_probe, bundle.probe);
      nn::adam_step(a_comp, bundle.compensator);

      log.add(step, 3, "probe_net", probe_loss);
      log.add(step, 3, "probe_comp", comp_loss);
      if (hook) hook(step, {{"probe_net", probe_loss}, {"probe_comp", comp_loss}, {"probed", probed}});
      if ((step + 1) % steps_per_epoch == 0) {
        if (epoch_ones == 0) {
          report.warnings.push_back("probe degenerate: C was all zero for the epoch ending at step " +
                                    std::to_string(step));
        }
        epoch_ones = 0;
      }
      ++report.steps_run;
      if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
        log.flush();
        save_stage(cfg, model, step + 1, nets);
      }
    });
  }
  log.flush();
  save_stage(cfg, model, cfg.steps, nets);

  if (!frozen.encoder.bit_identical(bundle.encoder) || !frozen.codec.bit_identical(bundle.codec) ||
      !frozen.decoder.bit_identical(bundle.decoder) || !frozen.generator.bit_identical(bundle.generator)) {
    throw std::logic_error("stage 3 modified a frozen network");
  }

  // Probe quality on the validation slice.
  const auto val = corrupted_validation(corpus, cfg.corruption, cfg.validation_size,
                                        derive_seed(cfg.seed, {kValidationTag}));
  std::vector<std::vector<int>> predicted, truth;
  for (const auto& u : val) {
    predicted.push_back(predict_probe(bundle, u.frames));
    truth.push_back(data::frame_mask_to_probe_truth(u.mask, model.frames_per_token, model.max_target_len));
  }
  const ProbeScore ps = score_probe(predicted, truth);
  report.metrics["probe_precision"] = ps.precision;
  report.metrics["probe_recall"] = ps.recall;
  report.metrics["probe_f1"] = ps.f1;
  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

StageReport train(const TrainConfig& cfg, const models::ModelConfig& model, const data::Corpus& corpus,
                  const StepHook& hook) {
  switch (cfg.stage) {
    case 1: return train_stage1(cfg, model, corpus, hook);
    case 2: return train_stage2(cfg, corpus, hook);
    case 3: return train_stage3(cfg, corpus, hook);
    default: throw std::invalid_argument("stage must be 1, 2 or 3");
  }
}

}  // namespace rosslink::pipeline
