#include <cstring>
#include <sstream>

#include "doctest.h"
#include "pgsu/checkpoint.hpp"
#include "pgsu/error.hpp"

using namespace pgsu;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.entries.push_back({"a.w", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.entries.push_back({"b", {}, {-0.25}});
  c.entries.push_back({"empty", {0, 4}, {}});
  c.step = 1234;
  c.config_hash = 0xfeedfacecafebeefULL;
  return c;
}

std::string serialize(const Checkpoint& c) {
  std::ostringstream os;
  write_checkpoint(os, c);
  return os.str();
}

std::uint64_t u64_at(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

ErrorKind read_error(const std::string& bytes) {
  std::istringstream is(bytes);
  try {
    read_checkpoint(is);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::internal;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const Checkpoint c = sample_checkpoint();
  std::istringstream is(serialize(c));
  const Checkpoint d = read_checkpoint(is);
  REQUIRE(d.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(d.entries[i].name == c.entries[i].name);
    CHECK(d.entries[i].shape == c.entries[i].shape);
    CHECK(d.entries[i].values == c.entries[i].values);
  }
  CHECK(d.step == 1234);
  CHECK(d.config_hash == c.config_hash);
  CHECK(d.parameter_count() == 7);
  CHECK(d.find("b") != nullptr);
  CHECK(d.find("zzz") == nullptr);
}

TEST_CASE("checkpoint byte layout is little-endian") {
  const std::string s = serialize(sample_checkpoint());
  CHECK(s.substr(0, 4) == "PGSU");
  CHECK(static_cast<unsigned char>(s[4]) == kCheckpointVersion);
  CHECK(s[5] == 0);
  CHECK(u64_at(s, 8) == 3);      // entry count
  CHECK(u64_at(s, 16) == 3);     // name length of "a.w"
  CHECK(s.substr(24, 3) == "a.w");
  CHECK(u64_at(s, 27) == 2);     // rank
  CHECK(u64_at(s, 35) == 2);
  CHECK(u64_at(s, 43) == 3);
  double first = 0.0;
  const std::uint64_t bits = u64_at(s, 51);
  std::memcpy(&first, &bits, 8);
  CHECK(first == 1.0);
  CHECK(u64_at(s, s.size() - 16) == 1234);
  CHECK(u64_at(s, s.size() - 8) == 0xfeedfacecafebeefULL);
}

TEST_CASE("malformed checkpoints fail loudly") {
  const std::string good = serialize(sample_checkpoint());
  CHECK(read_error("") == ErrorKind::data);
  CHECK(read_error("XXXX" + good.substr(4)) == ErrorKind::data);
  for (std::size_t cut : {3ul, 10ul, 20ul, 30ul, 60ul, good.size() - 1})
    CHECK(read_error(good.substr(0, cut)) == ErrorKind::data);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK(read_error(bad_version) == ErrorKind::data);
  CHECK(read_error(good + "junk") == ErrorKind::data);
  std::string zero_name = good;
  for (int i = 0; i < 8; ++i) zero_name[16 + i] = 0;
  CHECK(read_error(zero_name) == ErrorKind::data);
}

TEST_CASE("load_parameters matches names and shapes") {
  Rng rng(1);
  ParameterStore store;
  Tensor w = store.add_glorot("a.w", 2, 3, rng);
  Tensor b = store.add_constant("b", {}, 0.0);
  const Checkpoint c = sample_checkpoint();
  load_parameters(store, c);
  CHECK(w[5] == 6.0);
  CHECK(b.item() == -0.25);

  ParameterStore other;
  other.add_glorot("a.w", 3, 2, rng);
  other.add_constant("missing", {2}, 0.0);
  try {
    load_parameters(other, c);
    FAIL("expected a mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    const std::string what = e.what();
    CHECK(what.find("a.w") != std::string::npos);
    CHECK(what.find("missing") != std::string::npos);
  }
  // Restricting to a prefix skips the unrelated names.
  ParameterStore partial;
  Tensor pw = partial.add_glorot("a.w", 2, 3, rng);
  partial.add_constant("head.x", {5}, 0.0);
  load_parameters(partial, c, {"a."});
  CHECK(pw[0] == 1.0);
}

TEST_CASE("snapshot then load restores every value") {
  Rng rng(2);
  ParameterStore a;
  a.add_glorot("x.w", 4, 5, rng);
  a.add_constant("x.b", {5}, 0.5);
  ParameterStore b;
  b.add_glorot("x.w", 4, 5, rng);
  b.add_constant("x.b", {5}, 0.0);
  const Checkpoint snap = snapshot(a, 7, 99);
  CHECK(snap.step == 7);
  CHECK(snap.config_hash == 99);
  load_parameters(b, snap);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto va = a.params()[i].tensor.values();
    const auto vb = b.params()[i].tensor.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin(), vb.end()));
  }
}

TEST_CASE("optimizer state round trip") {
  Rng rng(3);
  ParameterStore store;
  Tensor w = store.add_glorot("w", 2, 2, rng);
  OptimizerState opt = make_optimizer(store);
  store.zero_grad();
  backward(sum(mul(w, w)));
  adam_step(store, opt, 0.1);
  const Checkpoint c = snapshot_optimizer(store, opt);
  OptimizerState back = make_optimizer(store);
  load_optimizer(store, back, c);
  CHECK(back.step == opt.step);
  CHECK(back.m == opt.m);
  CHECK(back.v == opt.v);
}
