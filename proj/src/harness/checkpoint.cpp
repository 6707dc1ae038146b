#include "sma/harness/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sma::harness {
namespace {

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string origin)
      : b_(bytes), end_(end), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, b_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("corrupt checkpoint '" + origin_ + "': " + what);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) fail("truncated");
  }

  const std::string& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

std::string Checkpoint::stage() const {
  const auto it = meta.find("stage");
  return it == meta.end() ? "" : it->second;
}

std::string encode_checkpoint(const pipeline::Model& model,
                              const std::map<std::string, std::string>& meta) {
  std::string out(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(out, k);
    put_str(out, v);
  }
  const auto& leaves = model.params.leaves();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(leaves.size()));
  for (const auto& leaf : leaves) {
    put_str(out, leaf.name);
    put_str(out, leaf.group);
    put<std::int64_t>(out, leaf.value.rows());
    put<std::int64_t>(out, leaf.value.cols());
    out.append(reinterpret_cast<const char*>(leaf.value.data()),
               static_cast<std::size_t>(leaf.value.size()) * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 + 4 + 8 || bytes.compare(0, 8, kCheckpointMagic) != 0) {
    throw CheckpointError("'" + origin + "' is not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  Reader r(bytes, body, origin);
  if (stored != fnv1a(bytes.data(), body)) r.fail("checksum mismatch");

  r.skip(8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.meta[k] = r.str();
  }
  const auto n_leaves = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_leaves; ++i) {
    std::string name = r.str();
    std::string group = r.str();
    const auto rows = r.get<std::int64_t>();
    const auto cols = r.get<std::int64_t>();
    if (rows < 0 || cols < 0 || (rows > 0 && cols > (1LL << 40) / rows)) r.fail("bad shape");
    Mat m(rows, cols);
    r.read(m.data(), static_cast<std::size_t>(m.size()));
    try {
      ck.model.params.add(std::move(name), std::move(m), std::move(group));
    } catch (const ContractError& e) {
      r.fail(e.what());
    }
  }
  if (r.pos() != body) r.fail("trailing bytes");
  try {
    ck.model.agent = pipeline::AgentConfig::from_map(ck.meta);
  } catch (const std::exception& e) {
    r.fail(std::string("agent metadata: ") + e.what());
  }
  // The parameter layout must be exactly what the agent would create.
  meta::ParameterSet expect;
  std::mt19937_64 rng(0);
  pipeline::Agent(ck.model.agent).init(expect, rng);
  if (!expect.same_layout(ck.model.params)) r.fail("parameters do not match the agent config");
  return ck;
}

void save_checkpoint(const std::string& path, const pipeline::Model& model,
                     const std::string& stage, const std::map<std::string, std::string>& extra) {
  auto meta = model.agent.to_map();
  meta["stage"] = stage;
  for (const auto& [k, v] : extra) meta[k] = v;
  const std::string bytes = encode_checkpoint(model, meta);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint '" + path + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("cannot write checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str(), path);
}

}  // namespace sma::harness
