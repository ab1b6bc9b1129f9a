#include "rosslink/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rosslink::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'S', 'L', 'K', 'C', 'K', 'P', 'T'};
// Refuse absurd headers before allocating.
constexpr std::uint64_t kMaxName = 4096;
constexpr std::uint64_t kMaxRank = 8;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v{};
    bytes(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > kMaxName) fail("name length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void bytes(char* dst, std::size_t n) {
    if (!is_.read(dst, static_cast<std::streamsize>(n))) fail("truncated file");
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("checkpoint " + path_ + ": " + why);
  }

 private:
  std::istream& is_;
  std::string path_;
};

std::string seed_key(const std::string& prefix) { return prefix + "/@seed"; }
std::string step_key(const std::string& prefix) { return prefix + "/@step"; }

}  // namespace

void Checkpoint::put_store(const std::string& prefix, const ParamStore& store) {
  meta[seed_key(prefix)] = store.seed();
  for (const auto& [name, t] : store) tensors[prefix + "/" + name] = ad::Tensor{t.shape, t.data};
}

bool Checkpoint::has_store(const std::string& prefix) const { return meta.count(seed_key(prefix)) != 0; }

ParamStore Checkpoint::get_store(const std::string& prefix) const {
  auto it = meta.find(seed_key(prefix));
  if (it == meta.end()) throw std::runtime_error("checkpoint has no parameter group '" + prefix + "'");
  ParamStore store(it->second);
  const std::string head = prefix + "/";
  for (auto t = tensors.lower_bound(head); t != tensors.end() && t->first.starts_with(head); ++t) {
    store.add(t->first.substr(head.size()), ad::Tensor{t->second.shape, t->second.data});
  }
  return store;
}

void Checkpoint::put_adam(const std::string& prefix, const AdamState& state) {
  meta[step_key(prefix)] = static_cast<std::uint64_t>(state.step);
  for (const auto& [name, m] : state.m) tensors[prefix + "/m/" + name] = ad::Tensor{{m.size()}, m};
  for (const auto& [name, v] : state.v) tensors[prefix + "/v/" + name] = ad::Tensor{{v.size()}, v};
}

AdamState Checkpoint::get_adam(const std::string& prefix, const AdamConfig& config) const {
  auto it = meta.find(step_key(prefix));
  if (it == meta.end()) throw std::runtime_error("checkpoint has no optimizer state '" + prefix + "'");
  AdamState state{config, static_cast<std::int64_t>(it->second), {}, {}};
  for (auto [sub, dst] : {std::pair{"/m/", &state.m}, std::pair{"/v/", &state.v}}) {
    const std::string head = prefix + sub;
    for (auto t = tensors.lower_bound(head); t != tensors.end() && t->first.starts_with(head); ++t) {
      (*dst)[t->first.substr(head.size())] = t->second.data;
    }
  }
  return state;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [key, value] : meta) {
      put_string(os, key);
      put<std::uint64_t>(os, value);
    }
    put<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
      put_string(os, name);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (auto e : t.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
      os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os.flush()) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) r.fail("unsupported version " + std::to_string(v));

  Checkpoint ck;
  const auto meta_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = r.get_string();
    ck.meta[key] = r.get<std::uint64_t>();
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > kMaxRank) r.fail("tensor '" + name + "' has rank " + std::to_string(rank));
    ad::Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      const auto ext = r.get<std::uint64_t>();
      if (ext == 0 || ext > (1ULL << 32)) r.fail("tensor '" + name + "' has invalid extent");
      e = static_cast<std::int64_t>(ext);
      numel *= ext;
      if (numel > (1ULL << 32)) r.fail("tensor '" + name + "' is too large");
    }
    ad::Tensor t{shape};
    r.bytes(reinterpret_cast<char*>(t.data.data()), numel * sizeof(double));
    if (!ck.tensors.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return ck;
}

}  // namespace rosslink::nn
