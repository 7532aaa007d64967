// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "opflow/oracle.hpp"

using namespace opflow;
using namespace opflow::testing;

namespace {

std::string words(Rng& rng, size_t n, const std::string& stem) {
  std::string s;
  for (size_t i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(rng.below(500));
  return s;
}

double mean_abs_diff(const KVTensor& a, const KVTensor& b) {
  double s = 0;
  for (size_t i = 0; i < a.elements(); ++i)
    s += std::abs(static_cast<double>(a.keys[i]) - b.keys[i]) + std::abs(static_cast<double>(a.values[i]) - b.values[i]);
  return s / (2.0 * static_cast<double>(a.elements()));
}

// mean |delta| at token t over all layers, heads and dims
double token_delta(const KVTensor& a, const KVTensor& b, uint32_t t) {
  double s = 0;
  for (uint32_t l = 0; l < a.layers; ++l)
    for (uint32_t h = 0; h < a.heads; ++h)
      for (uint32_t c = 0; c < a.head_dim; ++c) {
        size_t i = a.index(l, h, t, c);
        s += std::abs(static_cast<double>(a.keys[i]) - b.keys[i]);
      }
  return s;
}

}  // namespace

TEST_CASE("tokenizer") {
  CHECK(tokenize("").empty());
  auto t = tokenize("a b a");
  REQUIRE(t.size() == 3);
  CHECK(t[0] == t[2]);
  CHECK(t[0] != t[1]);
  CHECK(tokenize("A  B\tA") == t);
  Rng rng(1);
  CHECK(tokenize(words(rng, 135, "p")).size() == 135);
  CHECK(tokenize(words(rng, 65, "o")).size() == 65);
}

TEST_CASE("kv_states is deterministic and quantized") {
  OracleConfig cfg;
  Oracle o(cfg);
  auto toks = tokenize("solve the system of equations using substitution");
  KVTensor a = o.kv_states(toks, 3), b = kv_states(cfg, toks, 3);
  CHECK(a == b);
  CHECK(a.layers == 4);
  CHECK(a.heads == 4);
  CHECK(a.head_dim == 16);
  CHECK(a.tokens == toks.size());
  CHECK(a.position_offset == 3);
  for (float x : a.keys) {
    double scaled = static_cast<double>(x) * 65536.0;
    REQUIRE(scaled == std::round(scaled));
    REQUIRE(std::abs(x) <= 127.0f);
  }
  CHECK(quantize_kv(1e9) == 127.0);
  CHECK(quantize_kv(-1e9) == -127.0);
  CHECK_FALSE(std::signbit(quantize_kv(-1e-9)));
  CHECK(quantize_kv(1.0 / 131072.0 + 1e-12) == 1.0 / 65536.0);
  CHECK_THROWS_AS(o.kv_states({}, 0), ValidationError);
}

TEST_CASE("without decay the op segment ignores the prefix") {
  OracleConfig cfg;
  cfg.lambda = 0.0;
  Oracle o(cfg);
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    auto pre = tokenize(words(rng, 1 + rng.below(30), "p")), op = tokenize(words(rng, 1 + rng.below(20), "o"));
    REQUIRE(o.op_segment(pre, op) == o.kv_states(op, pre.size()));
  }
}

TEST_CASE("prefix influence decays along the op") {
  OracleConfig cfg;
  Oracle o(cfg);
  Rng rng(3);
  auto p1 = tokenize(words(rng, 135, "a")), p2 = tokenize(words(rng, 135, "b")), op = tokenize(words(rng, 65, "o"));
  KVTensor s1 = o.op_segment(p1, op), s2 = o.op_segment(p2, op);
  CHECK_FALSE(s1 == s2);
  CHECK(s1.tokens == 65);
  double head = 0, tail = 0;
  for (uint32_t t = 0; t < 8; ++t) head += token_delta(s1, s2, t);
  for (uint32_t t = 57; t < 65; ++t) tail += token_delta(s1, s2, t);
  CHECK(head > 10 * tail);
  // trend check over consecutive blocks of 8 tokens
  double prev = 1e300;
  for (uint32_t b = 0; b + 8 <= 64; b += 8) {
    double s = 0;
    for (uint32_t t = b; t < b + 8; ++t) s += token_delta(s1, s2, t);
    CHECK(s <= prev);
    prev = s;
  }
}

TEST_CASE("stateful and base segments") {
  OracleConfig cfg;
  Oracle o(cfg);
  auto op = tokenize("Solve the system of equations using substitution or elimination techniques.");
  CHECK(o.op_segment({}, op) == o.base_segment(0, op));
  auto pre = tokenize("one two three four five");
  KVTensor s = o.op_segment(pre, op), b = o.base_segment(pre.size(), op);
  CHECK(s.same_shape(b));
  CHECK(s.position_offset == 5);
  auto swapped = pre;
  std::swap(swapped[1], swapped[3]);
  CHECK_FALSE(o.op_segment(swapped, op) == s);
  CHECK(o.base_segment(swapped.size(), op) == b);
}

TEST_CASE("residual magnitude grows with lambda") {
  Rng rng(4);
  auto pre = tokenize(words(rng, 40, "p")), op = tokenize(words(rng, 30, "o"));
  double prev = -1;
  for (double lam : {0.0, 0.4, 0.8}) {
    OracleConfig cfg;
    cfg.lambda = lam;
    Oracle o(cfg);
    double d = mean_abs_diff(o.op_segment(pre, op), o.base_segment(pre.size(), op));
    if (lam == 0.0) CHECK(d == 0.0);
    CHECK(d >= prev);
    prev = d;
  }
  CHECK(prev > 0);
}

TEST_CASE("algebra operation segment is pinned") {
  Workflow wf = parse_workflow(math_doc());
  OracleConfig cfg;
  Oracle o(cfg);
  auto pre = tokenize(wf.operations.at("OP_02").instruction);
  auto op = tokenize(wf.operations.at("OP_04").instruction);
  KVTensor s = o.op_segment(pre, op);
  CHECK(op.size() == 10);
  CHECK(s.layers == 4);
  CHECK(s.heads == 4);
  CHECK(s.tokens == 10);
  CHECK(s.head_dim == 16);
  CHECK(s.position_offset == pre.size());
  std::stringstream ss;
  save_kv(ss, s);
  // pinned from the first run
  CHECK(hex64(fnv1a64(ss.str())) == "c321d8fac4065679");
}

TEST_CASE("KV file round trip") {
  OracleConfig cfg;
  cfg.layers = 2;
  cfg.heads = 3;
  cfg.head_dim = 4;
  KVTensor t = kv_states(cfg, tokenize("alpha beta gamma"), 7);
  std::stringstream ss;
  save_kv(ss, t);
  std::string bytes = ss.str();
  CHECK(bytes.size() == t.bytes());
  std::stringstream in(bytes);
  KVTensor u = load_kv(in);
  CHECK(u == t);
  std::stringstream again;
  save_kv(again, u);
  CHECK(again.str() == bytes);
  std::string bad = bytes;
  bad[1] = 'X';
  std::stringstream bs(bad);
  CHECK_THROWS(load_kv(bs));
  std::stringstream trunc(bytes.substr(0, 40));
  CHECK_THROWS(load_kv(trunc));
}

TEST_CASE("oracle configuration is validated") {
  OracleConfig c;
  c.lambda = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.lambda = 0.5;
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
