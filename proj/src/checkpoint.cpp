#include "pgsu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "pgsu/error.hpp"

namespace pgsu {

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(char* out, std::size_t n, const char* what) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      fail(ErrorKind::data, "checkpoint truncated at offset " + std::to_string(offset_) +
                                " while reading " + what);
    offset_ += n;
  }

  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::uint64_t offset_ = 0;
};

[[noreturn]] void corrupt(std::uint64_t offset, const std::string& what) {
  fail(ErrorKind::data, "corrupt checkpoint at offset " + std::to_string(offset) + ": " + what);
}

// Generous bounds that still catch garbage lengths before allocating.
constexpr std::uint64_t kMaxNameLength = 4096;
constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 32;

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.values.size();
  return n;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u64(os, ckpt.entries.size());
  for (const auto& e : ckpt.entries) {
    put_u64(os, e.name.size());
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u64(os, e.shape.size());
    for (std::size_t d : e.shape) put_u64(os, d);
    for (double v : e.values) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  put_u64(os, ckpt.step);
  put_u64(os, ckpt.config_hash);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::data, "cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, ckpt);
  os.flush();
  if (!os) fail(ErrorKind::data, "failed writing checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(std::istream& is) {
  Reader r(is);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) corrupt(0, "bad magic bytes");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion)
    corrupt(version_at, "unsupported format version " + std::to_string(version));
  const std::uint64_t count_at = r.offset();
  const std::uint64_t count = r.u64("entry count");
  if (count == 0) corrupt(count_at, "empty parameter name table");

  Checkpoint ckpt;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint64_t len_at = r.offset();
    const std::uint64_t len = r.u64("name length");
    if (len == 0 || len > kMaxNameLength)
      corrupt(len_at, "invalid name length " + std::to_string(len));
    e.name.resize(len);
    r.bytes(e.name.data(), len, "name");
    const std::uint64_t rank_at = r.offset();
    const std::uint64_t rank = r.u64("rank");
    if (rank > kMaxRank) corrupt(rank_at, "invalid rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const std::uint64_t dim_at = r.offset();
      const std::uint64_t dim = r.u64("dimension");
      if (dim != 0 && n > kMaxValues / dim) corrupt(dim_at, "tensor too large");
      n *= dim;
      e.shape.push_back(static_cast<std::size_t>(dim));
    }
    e.values.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<double>(r.u64("payload"));
    if (ckpt.find(e.name)) corrupt(len_at, "duplicate parameter name '" + e.name + "'");
    ckpt.entries.push_back(std::move(e));
  }
  ckpt.step = r.u64("metadata step");
  ckpt.config_hash = r.u64("metadata config hash");
  if (is.peek() != std::char_traits<char>::eof())
    corrupt(r.offset(), "trailing bytes after metadata");
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::data, "cannot open checkpoint '" + path.string() + "'");
  try {
    return read_checkpoint(is);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

Checkpoint snapshot(const ParameterStore& store, std::uint64_t step, std::uint64_t config_hash) {
  Checkpoint c;
  c.step = step;
  c.config_hash = config_hash;
  for (const auto& p : store.params()) {
    const auto v = p.tensor.values();
    c.entries.push_back({p.name, p.tensor.shape(), std::vector<double>(v.begin(), v.end())});
  }
  return c;
}

void load_parameters(ParameterStore& store, const Checkpoint& ckpt,
                     const std::vector<std::string>& prefixes) {
  std::vector<std::string> problems;
  for (auto& p : store.params()) {
    const bool selected =
        prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& pre) {
          return p.name.starts_with(pre);
        });
    if (!selected) continue;
    const CheckpointEntry* e = ckpt.find(p.name);
    if (!e) {
      problems.push_back(p.name + " (missing)");
      continue;
    }
    if (e->shape != p.tensor.shape()) {
      problems.push_back(p.name + " (shape " + shape_string(e->shape) + " vs model " +
                         shape_string(p.tensor.shape()) + ")");
      continue;
    }
    auto dst = p.tensor.mutable_values();
    std::copy(e->values.begin(), e->values.end(), dst.begin());
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "checkpoint does not match model: ";
    for (std::size_t i = 0; i < problems.size(); ++i) os << (i ? ", " : "") << problems[i];
    fail(ErrorKind::data, os.str());
  }
}

Checkpoint snapshot_optimizer(const ParameterStore& store, const OptimizerState& state) {
  Checkpoint c;
  c.step = state.step;
  const auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.entries.push_back({"adam.m." + params[i].name, params[i].tensor.shape(), state.m[i]});
    c.entries.push_back({"adam.v." + params[i].name, params[i].tensor.shape(), state.v[i]});
  }
  return c;
}

void load_optimizer(const ParameterStore& store, OptimizerState& state, const Checkpoint& ckpt) {
  const auto& params = store.params();
  state.m.assign(params.size(), {});
  state.v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* m = ckpt.find("adam.m." + params[i].name);
    const auto* v = ckpt.find("adam.v." + params[i].name);
    if (!m || !v || m->values.size() != params[i].tensor.size() ||
        v->values.size() != params[i].tensor.size())
      fail(ErrorKind::data, "optimizer state does not match parameter " + params[i].name);
    state.m[i] = m->values;
    state.v[i] = v->values;
  }
  state.step = ckpt.step;
}

}  // namespace pgsu
