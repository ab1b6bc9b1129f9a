#include "rosslink/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace rosslink::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string format(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_int(T v) {
  return std::to_string(v);
}

struct Key {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Key int_key(std::string section, std::string name, Get member) {
  return {std::move(section), std::move(name),
          [member](RunConfig& c, const std::string& v) { member(c) = parse_number<int>(v); },
          [member](const RunConfig& c) { return format_int(member(c)); }};
}

template <typename Get>
Key u64_key(std::string section, std::string name, Get member) {
  return {std::move(section), std::move(name),
          [member](RunConfig& c, const std::string& v) { member(c) = parse_number<std::uint64_t>(v); },
          [member](const RunConfig& c) { return format_int(member(c)); }};
}

template <typename Get>
Key double_key(std::string section, std::string name, Get member) {
  return {std::move(section), std::move(name),
          [member](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(v); },
          [member](const RunConfig& c) { return format(member(c)); }};
}

template <typename Get>
Key bool_key(std::string section, std::string name, Get member) {
  return {std::move(section), std::move(name),
          [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); },
          [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); }};
}

template <typename Get>
Key path_key(std::string section, std::string name, Get member) {
  return {std::move(section), std::move(name), [member](RunConfig& c, const std::string& v) { member(c) = v; },
          [member](const RunConfig& c) { return member(c).string(); }};
}

template <typename Get, typename Parse, typename Name>
Key enum_key(std::string section, std::string name, Get member, Parse parse, Name print) {
  return {std::move(section), std::move(name),
          [member, parse](RunConfig& c, const std::string& v) { member(c) = parse(v); },
          [member, print](const RunConfig& c) { return std::string(print(member(c))); }};
}

template <typename Get, typename Parse, typename Name>
Key list_key(std::string section, std::string name, Get member, Parse parse, Name print) {
  return {std::move(section), std::move(name),
          [member, parse](RunConfig& c, const std::string& v) {
            auto& list = member(c);
            list.clear();
            for (const auto& item : split_list(v)) list.push_back(parse(item));
          },
          [member, print](const RunConfig& c) {
            std::string out;
            for (const auto& item : member(c)) {
              if (!out.empty()) out += ", ";
              out += print(item);
            }
            return out;
          }};
}

// Model fields that follow from the corpus and are filled in by resolve().
bool derived_model_field(std::string_view name) {
  return name == "frame_dim" || name == "frames_per_token" || name == "vocab" || name == "max_target_len";
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
#define M(expr) [](auto& c) -> auto& { return c.expr; }
    k.push_back(path_key("run", "out_dir", M(out_dir)));
    k.push_back(path_key("run", "corpus", M(corpus)));
    k.push_back(u64_key("run", "seed", M(seed)));

    k.push_back(int_key("data", "content_tokens", M(data.content_tokens)));
    k.push_back(int_key("data", "frames_per_token", M(data.frames_per_token)));
    k.push_back(int_key("data", "frame_dim", M(data.frame_dim)));
    k.push_back(double_key("data", "frame_noise", M(data.frame_noise)));
    k.push_back(u64_key("data", "rule_seed", M(data.rule_seed)));
    k.push_back(int_key("data", "min_len", M(data.min_len)));
    k.push_back(int_key("data", "max_len", M(data.max_len)));
    k.push_back(int_key("data", "max_target_len", M(data.max_target_len)));
    k.push_back(int_key("data", "successors", M(data.successors)));
    k.push_back(int_key("data", "train_size", M(data.train_size)));
    k.push_back(int_key("data", "test_size", M(data.test_size)));

    k.push_back(enum_key("corruption", "kind", M(corruption.kind), data::parse_corruption_kind,
                         data::corruption_kind_name));
    k.push_back(double_key("corruption", "fraction", M(corruption.fraction)));
    k.push_back(int_key("corruption", "spans", M(corruption.spans)));
    k.push_back(double_key("corruption", "burst_sigma", M(corruption.burst_sigma)));

    for (const auto& f : models::model_fields()) {
      if (derived_model_field(f.name)) continue;
      const auto member = f.member;
      k.push_back(int_key("model", std::string(f.name), [member](auto& c) -> auto& { return c.model.*member; }));
    }

    k.push_back(int_key("train", "batch_size", M(train.batch_size)));
    k.push_back(int_key("train", "steps", M(train.steps)));
    k.push_back(double_key("train", "lr", M(train.adam.lr)));
    k.push_back(double_key("train", "beta1", M(train.adam.beta1)));
    k.push_back(double_key("train", "beta2", M(train.adam.beta2)));
    k.push_back(double_key("train", "adam_eps", M(train.adam.eps)));
    k.push_back(double_key("train", "snr_min_db", M(train.snr_min_db)));
    k.push_back(double_key("train", "snr_max_db", M(train.snr_max_db)));
    k.push_back(enum_key("train", "channel", M(train.channel), channel::parse_channel_kind, channel::channel_name));
    k.push_back(int_key("train", "k_g", M(train.k_g)));
    k.push_back(double_key("train", "kappa", M(train.loss.kappa)));
    k.push_back(double_key("train", "xi", M(train.loss.xi)));
    k.push_back(enum_key("train", "smoothing_rule", M(train.loss.rule), losses::parse_smoothing_rule,
                         losses::smoothing_rule_name));
    k.push_back(int_key("train", "checkpoint_every", M(train.checkpoint_every)));
    k.push_back(int_key("train", "eval_every", M(train.eval_every)));
    k.push_back(int_key("train", "validation_size", M(train.validation_size)));
    k.push_back(double_key("train", "collapse_ratio", M(train.collapse_ratio)));
    k.push_back(int_key("train", "collapse_patience", M(train.collapse_patience)));
    k.push_back(bool_key("train", "oracle_probe", M(train.oracle_probe)));
    k.push_back(bool_key("train", "resume", M(train.resume)));

    k.push_back(list_key("sweep", "snrs", M(sweep.snrs), parse_number<double>, format));
    k.push_back(list_key("sweep", "channels", M(sweep.channels), channel::parse_channel_kind,
                         [](channel::ChannelKind c) { return std::string(channel::channel_name(c)); }));
    k.push_back(list_key("sweep", "systems", M(sweep.systems), eval::parse_system, eval::system_name));
    k.push_back(int_key("sweep", "count", M(sweep.count)));
    k.push_back(bool_key("sweep", "corrupted", M(sweep.corrupted)));
    k.push_back(u64_key("sweep", "sts_seed", M(sweep.sts_seed)));

    k.push_back(enum_key("eval", "system", M(eval.system), eval::parse_system, eval::system_name));
    k.push_back(enum_key("eval", "channel", M(eval.channel), channel::parse_channel_kind, channel::channel_name));
    k.push_back(double_key("eval", "snr_db", M(eval.snr_db)));
    k.push_back(int_key("eval", "count", M(eval.count)));
    k.push_back(bool_key("eval", "corrupted", M(eval.corrupted)));
#undef M
    return k;
  }();
  return table;
}

std::string key_list() {
  std::string out;
  for (const auto& k : config_keys()) out += "\n  " + k;
  return out;
}

}  // namespace

std::filesystem::path RunConfig::corpus_path() const { return corpus.empty() ? out_dir / "corpus.txt" : corpus; }

void RunConfig::resolve() {
  data.seed = seed;
  train.seed = seed;
  sweep.seed = seed;
  train.run_dir = out_dir;
  train.corruption = corruption;
  sweep.corruption = corruption;
  model.frame_dim = data.frame_dim;
  model.frames_per_token = data.frames_per_token;
  model.vocab = data.vocab_size();
  model.max_target_len = data.max_target_len;
  try {
    data.validate();
    corruption.validate();
    model.validate();
    train.validate();
    sweep.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (eval.count < 1) throw ConfigError("eval.count must be >= 1");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.section + "." + k.name);
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  const auto& table = keys();
  const auto it = std::find_if(table.begin(), table.end(),
                               [&](const Key& k) { return k.section == section && k.name == key; });
  if (it == table.end()) throw ConfigError("unknown key '" + section + "." + key + "'; valid keys:" + key_list());
  try {
    it->set(cfg, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  apply_setting(cfg, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
                trim(assignment.substr(eq + 1)));
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line, section;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of any [section]");
    try {
      apply_setting(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << k.name << " = " << k.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace rosslink::cli
