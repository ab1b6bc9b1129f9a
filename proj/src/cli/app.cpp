#include "rosslink/cli/app.hpp"

#include "rosslink/cli/config.hpp"
#include "rosslink/diagnostics/gradsuite.hpp"
#include "rosslink/diagnostics/oracles.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace rosslink::cli {

namespace {

namespace fs = std::filesystem;

// A missing input file or stage. Maps to exit code 2 with the path in the message.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string seed;
};

RunConfig build_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (!c.seed.empty()) apply_setting(cfg, "run", "seed", c.seed);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  cfg.resolve();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << text;
    if (!os.flush()) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void echo_config(const RunConfig& cfg, const std::string& name) {
  write_text(cfg.out_dir / (name + ".cfg"), render_config(cfg));
}

data::Corpus load_corpus(const RunConfig& cfg) {
  const fs::path path = cfg.corpus_path();
  if (!fs::exists(path)) throw MissingInput("corpus not found: " + path.string() + " (run gen-data first)");
  return data::load_corpus(path);
}

// The model shape follows the corpus that was actually generated.
models::ModelConfig model_for(const RunConfig& cfg, const data::Corpus& corpus) {
  models::ModelConfig m = cfg.model;
  m.frame_dim = corpus.spec.frame_dim;
  m.frames_per_token = corpus.spec.frames_per_token;
  m.vocab = corpus.spec.vocab_size();
  m.max_target_len = corpus.spec.max_target_len;
  m.validate();
  return m;
}

int highest_stage(const fs::path& dir) {
  int s = 0;
  while (s < 3 && fs::exists(pipeline::stage_checkpoint(dir, s + 1))) ++s;
  return s;
}

pipeline::Bundle load_bundle(const RunConfig& cfg) {
  const int s = highest_stage(cfg.out_dir);
  if (s == 0) {
    throw MissingInput("stage 1 checkpoint not found: " + pipeline::stage_checkpoint(cfg.out_dir, 1).string());
  }
  return pipeline::Bundle::load(cfg.out_dir, s);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const data::Corpus corpus = data::generate_corpus(cfg.data);
  const fs::path path = cfg.corpus_path();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::save_corpus(corpus, path);
  echo_config(cfg, "gen-data");
  out << "corpus: " << corpus.train.size() << " train, " << corpus.test.size() << " test -> " << path.string()
      << "\n";
  return kOk;
}

int cmd_train(RunConfig cfg, int stage, std::ostream& out) {
  const data::Corpus corpus = load_corpus(cfg);
  for (int s = 1; s < stage; ++s) {
    const fs::path need = pipeline::stage_checkpoint(cfg.out_dir, s);
    if (!fs::exists(need)) throw MissingInput("stage " + std::to_string(s) + " checkpoint not found: " + need.string());
  }
  cfg.train.stage = stage;
  fs::create_directories(cfg.out_dir);
  echo_config(cfg, "train_stage" + std::to_string(stage));
  const int every = std::max(1, cfg.train.steps / 20);
  const auto report = pipeline::train(cfg.train, model_for(cfg, corpus), corpus,
                                      [&](int step, const std::map<std::string, double>& m) {
                                        if (step % every != 0 && step + 1 != cfg.train.steps) return;
                                        out << "stage " << stage << " step " << step;
                                        for (const auto& [k, v] : m) out << ' ' << k << '=' << fixed(v);
                                        out << '\n' << std::flush;
                                      });
  out << "stage " << stage << ": " << report.steps_run << " steps from " << report.start_step << " in "
      << fixed(report.seconds, 1) << " s\n";
  for (const auto& [k, v] : report.metrics) out << "  " << k << " = " << fixed(v, 6) << '\n';
  for (const auto& w : report.warnings) out << "  warning: " << w << '\n';
  out << "checkpoint: " << pipeline::stage_checkpoint(cfg.out_dir, stage).string() << '\n';
  return kOk;
}

void print_rows(const std::vector<eval::MetricReport>& rows, std::ostream& out) {
  out << std::left << std::setw(26) << "system" << std::setw(10) << "channel" << std::setw(8) << "snr_db"
      << std::setw(10) << "token_acc" << std::setw(10) << "ngram" << std::setw(10) << "sts_proxy"
      << "n\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(26) << r.system << std::setw(10) << r.channel << std::setw(8) << fixed(r.snr_db, 1)
        << std::setw(10) << fixed(r.token_acc) << std::setw(10) << fixed(r.ngram) << std::setw(10)
        << fixed(r.sts_proxy) << r.n << '\n';
  }
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const data::Corpus corpus = load_corpus(cfg);
  const auto bundle = load_bundle(cfg);
  eval::SweepConfig sc = cfg.sweep;
  sc.count = cfg.eval.count;
  sc.corrupted = cfg.eval.corrupted;
  const auto inputs = eval::sweep_inputs(corpus, sc);
  const channel::ChannelConfig ch{.kind = cfg.eval.channel,
                                  .snr_db = cfg.eval.snr_db,
                                  .seed = eval::sweep_channel_seed(cfg.seed, cfg.eval.channel, cfg.eval.snr_db)};
  const auto row = eval::evaluate_point(bundle, cfg.eval.system, ch, inputs, cfg.sweep.sts_seed);
  echo_config(cfg, "eval");
  eval::write_sweep_csv({row}, cfg.out_dir / "eval.csv");
  print_rows({row}, out);
  return kOk;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  const data::Corpus corpus = load_corpus(cfg);
  const auto bundle = load_bundle(cfg);
  const auto rows = eval::snr_sweep(cfg.sweep, bundle, corpus);
  echo_config(cfg, "sweep");
  const fs::path csv = cfg.out_dir / "sweep.csv";
  eval::write_sweep_csv(rows, csv);
  print_rows(rows, out);
  out << "csv: " << csv.string() << '\n';
  return kOk;
}

struct GradArgs {
  int points = 100;
  std::size_t coords = 2;
  std::vector<std::string> groups;
  std::string fault;
  std::uint64_t seed = 1;
};

diagnostics::GradSuiteOptions grad_options(const GradArgs& a) {
  diagnostics::GradSuiteOptions o;
  o.points = a.points;
  o.coords_per_input = a.coords;
  o.groups = a.groups;
  o.seed = a.seed;
  if (!a.fault.empty()) {
    for (auto k : ad::all_op_kinds()) {
      if (ad::op_name(k) == a.fault) o.fault = k;
    }
    if (!o.fault) throw ConfigError("unknown op for --inject-fault: " + a.fault);
  }
  return o;
}

void print_check(std::ostream& out, bool passed, const std::string& name, const std::string& detail) {
  out << (passed ? "PASS  " : "FAIL  ") << std::left << std::setw(52) << name << ' ' << detail << '\n';
}

bool run_grad_rows(const diagnostics::GradSuiteOptions& o, std::ostream& out) {
  const auto result = diagnostics::run_grad_suite(o, [&](const diagnostics::GradItemResult& r) {
    std::ostringstream d;
    d << "points=" << r.points << " coords=" << r.coords << " max_rel=" << std::scientific << std::setprecision(2)
      << r.max_rel_error << std::defaultfloat << " kinks=" << r.kinks << " t=" << fixed(r.seconds, 2) << "s";
    if (!r.passed) d << "  " << r.failure;
    print_check(out, r.passed, "grad " + r.group + "/" + r.name, d.str());
  });
  out << "grad-check total " << fixed(result.seconds, 1) << " s\n";
  return result.passed();
}

int cmd_grad_check(const GradArgs& a, std::ostream& out) {
  return run_grad_rows(grad_options(a), out) ? kOk : kCheckFailed;
}

int cmd_self_test(const GradArgs& a, std::ostream& out) {
  bool ok = run_grad_rows(grad_options(a), out);
  std::vector<diagnostics::CheckRow> rows = diagnostics::loss_oracle_checks();
  for (auto& r : diagnostics::channel_checks(200'000, 50'000)) rows.push_back(std::move(r));
  for (auto& r : diagnostics::coding_checks()) rows.push_back(std::move(r));
  for (const auto& r : rows) {
    std::ostringstream d;
    d << "measured=" << std::setprecision(4) << r.measured << " tol=" << r.tolerance;
    if (!r.detail.empty()) d << " (" << r.detail << ")";
    print_check(out, r.passed, r.name, d.str());
  }
  ok = ok && diagnostics::all_passed(rows);
  out << (ok ? "self-test: all checks passed\n" : "self-test: FAILED\n");
  return ok ? kOk : kCheckFailed;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "config file ([section] key = value)");
  sub->add_option("-s,--set", c.overrides, "override section.key=value (repeatable, last wins)");
  sub->add_option("-o,--out", c.out_dir, "output directory (run.out_dir)");
  sub->add_option("--seed", c.seed, "master seed (run.seed)");
}

void add_grad(CLI::App* sub, GradArgs& g) {
  sub->add_option("--points", g.points, "random points per item")->check(CLI::PositiveNumber);
  sub->add_option("--coords", g.coords, "sampled coordinates per tensor for blocks and networks");
  sub->add_option("--group", g.groups, "restrict to op, block, network or loss (repeatable)")
      ->check(CLI::IsMember({"op", "block", "network", "loss"}));
  sub->add_option("--inject-fault", g.fault, "scale one op's backward rule, to exercise failure reporting");
  sub->add_option("--seed", g.seed, "seed of the random points");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"rosslink: robust semantic speech-to-text translation link simulator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  Common common;
  GradArgs grad;
  int stage = 0;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  auto* train = app.add_subcommand("train", "train one stage");
  auto* ev = app.add_subcommand("eval", "evaluate one system at one channel point");
  auto* sweep = app.add_subcommand("sweep", "SNR sweep over systems and channels, written as CSV");
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suite");
  auto* st = app.add_subcommand("self-test", "gradient suite, loss, channel and coding oracles");
  for (auto* s : {gen, train, ev, sweep}) add_common(s, common);
  train->add_option("--stage", stage, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
  add_grad(gc, grad);
  add_grad(st, grad);

  std::vector<const char*> argv{"rosslink"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gc) return cmd_grad_check(grad, out);
    if (*st) return cmd_self_test(grad, out);
    const RunConfig cfg = build_config(common);
    if (*gen) return cmd_gen_data(cfg, out);
    if (*train) return cmd_train(cfg, stage, out);
    if (*ev) return cmd_eval(cfg, out);
    if (*sweep) return cmd_sweep(cfg, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const pipeline::DivergenceError& e) {
    err << "error: " << e.what() << " (state saved to " << e.checkpoint.string() << ")\n";
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace rosslink::cli
