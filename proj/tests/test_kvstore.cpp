// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <thread>

#include "helpers.hpp"
#include "opflow/kvstore.hpp"

using namespace opflow;
using namespace opflow::testing;

namespace {

std::shared_ptr<const WGraph> math_graph() {
  return std::make_shared<const WGraph>(merge_into_wgraph({parse_workflow(math_doc())}));
}

KVTensor random_tensor(Rng& rng, uint32_t L, uint32_t H, uint32_t T, uint32_t d, double scale) {
  KVTensor t;
  t.layers = L;
  t.heads = H;
  t.tokens = T;
  t.head_dim = d;
  t.keys.resize(t.elements());
  t.values.resize(t.elements());
  for (auto& x : t.keys) x = static_cast<float>(quantize_kv(rng.uniform(-scale, scale)));
  for (auto& x : t.values) x = static_cast<float>(quantize_kv(rng.uniform(-scale, scale)));
  return t;
}

double energy(const KVTensor& a, const KVTensor& b) {
  double s = 0;
  for (size_t i = 0; i < a.elements(); ++i) {
    double k = static_cast<double>(a.keys[i]) - b.keys[i], v = static_cast<double>(a.values[i]) - b.values[i];
    s += k * k + v * v;
  }
  return s;
}

const std::vector<PairKey> kMathPairs = {
    {{}, "OP_01"},
    {{"OP_01"}, "OP_02"},
    {{"OP_01"}, "OP_03"},
    {{"OP_01", "OP_02"}, "OP_04"},
    {{"OP_01", "OP_03"}, "OP_04"},
    {{"OP_01", "OP_02", "OP_04"}, "OP_05"},
    {{"OP_01", "OP_03", "OP_04"}, "OP_05"},
};

}  // namespace

TEST_CASE("base caches are memoized per offset") {
  CacheStore s(math_graph(), OracleConfig{}, StoreMode::differential);
  auto a = s.compute_base("OP_04", 20);
  auto b = s.compute_base("OP_04", 20);
  CHECK(a.get() == b.get());
  CHECK(s.base_count() == 1);
  auto c = s.compute_base("OP_04", 21);
  CHECK(s.base_count() == 2);
  CHECK_FALSE(*a == *c);
  uint64_t T = s.op_tokens("OP_04").size();
  CHECK(a->bytes() == 36 + 2ull * 4 * 4 * T * 16 * 4);
  CHECK(s.memory_footprint().bases == 2 * a->bytes());
  CHECK(s.memory_footprint().total() == s.memory_footprint().bases);
  CHECK_THROWS_AS(s.compute_base("OP_99", 0), ValidationError);
}

TEST_CASE("sparsify edge cases") {
  Rng rng(1);
  KVTensor t = random_tensor(rng, 2, 2, 3, 4, 1.0);
  SparseDelta d = sparsify(t, t, 0.95);
  CHECK(d.entry_count() == 0);
  CHECK(d.kept_energy_fraction == 1.0);
  CHECK(reconstruct(t, d) == t);

  KVTensor u = t;
  u.values[7] += 0.5f;
  SparseDelta one = sparsify(u, t, 0.3);
  REQUIRE(one.entry_count() == 1);
  CHECK(one.values.size() == 1);
  CHECK(one.values[0].value == u.values[7] - t.values[7]);
  CHECK(reconstruct(t, one) == u);

  KVTensor other = t;
  other.position_offset = 1;
  CHECK_THROWS_AS(sparsify(u, other, 0.9), ValidationError);
  CHECK_THROWS_AS(sparsify(u, t, 0.0), ValidationError);
}

TEST_CASE("kept energy is re-summed independently") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    KVTensor base = random_tensor(rng, 2, 2, 5, 4, 1.0), full = random_tensor(rng, 2, 2, 5, 4, 1.0);
    for (size_t i = 0; i < full.elements(); ++i)
      if (rng.uniform() < 0.5) full.keys[i] = base.keys[i];
    SparseDelta d = sparsify(full, base, 0.95);
    double total = energy(full, base), kept = 0, max_share = 0;
    for (const auto& e : d.keys) kept += static_cast<double>(e.value) * e.value;
    for (const auto& e : d.values) kept += static_cast<double>(e.value) * e.value;
    for (size_t i = 0; i < full.elements(); ++i) {
      double k = static_cast<double>(full.keys[i]) - base.keys[i], v = static_cast<double>(full.values[i]) - base.values[i];
      max_share = std::max({max_share, k * k / total, v * v / total});
    }
    double frac = kept / total;
    CHECK(frac >= 0.95 - 1e-12);
    CHECK(frac < 0.95 + max_share + 1e-12);
    CHECK(d.kept_energy_fraction == doctest::Approx(frac).epsilon(1e-9));
    // bounded loss
    KVTensor r = reconstruct(base, d);
    CHECK(frobenius_distance(r, full) <= std::sqrt(0.05) * delta_norm(full, base) + 1e-6);
    // exact at 1.0
    CHECK(reconstruct(base, sparsify(full, base, 1.0)) == full);
  }
}

TEST_CASE("equal magnitudes keep coordinate order") {
  KVTensor base;
  base.layers = base.heads = 1;
  base.tokens = 2;
  base.head_dim = 2;
  base.keys.assign(4, 0.0f);
  base.values.assign(4, 0.0f);
  KVTensor full = base;
  full.keys = {0.5f, -0.5f, 0.0f, 0.5f};
  full.values = {0.5f, 0.0f, 0.0f, 0.0f};
  SparseDelta d = sparsify(full, base, 0.4);  // needs 2 of 4 equal entries
  REQUIRE(d.entry_count() == 2);
  CHECK(d.keys.size() == 2);
  CHECK(d.keys[0].dim == 0);
  CHECK(d.keys[1].dim == 1);
}

TEST_CASE("delta file round trip") {
  Rng rng(3);
  KVTensor base = random_tensor(rng, 2, 3, 4, 5, 1.0), full = random_tensor(rng, 2, 3, 4, 5, 1.0);
  SparseDelta d = sparsify(full, base, 0.9);
  std::stringstream ss;
  save_delta(ss, d);
  CHECK(ss.str().size() == d.bytes());
  std::stringstream in(ss.str());
  CHECK(load_delta(in) == d);
  std::string bad = ss.str();
  bad[0] = 'Z';
  std::stringstream bs(bad);
  CHECK_THROWS(load_delta(bs));
}

TEST_CASE("residual insertion") {
  CacheStore s(math_graph(), OracleConfig{}, StoreMode::differential, 0.95);
  s.insert_residual({"OP_01", "OP_02"}, "OP_04");
  auto first = s.residual({"OP_01", "OP_02"}, "OP_04");
  REQUIRE(first);
  s.insert_residual({"OP_01", "OP_02"}, "OP_04");
  CHECK(*s.residual({"OP_01", "OP_02"}, "OP_04") == *first);
  CHECK(s.materialized().size() == 1);
  s.insert_residual({}, "OP_01");
  REQUIRE(s.residual({}, "OP_01"));
  CHECK(s.residual({}, "OP_01")->entry_count() == 0);
  CHECK(s.remove_residual({}, "OP_01"));
  CHECK_FALSE(s.remove_residual({}, "OP_01"));
  CHECK_THROWS_AS(s.insert_residual({"OP_02"}, "OP_03"), ValidationError);
  CHECK_THROWS_AS(s.insert_residual({"OP_01", "OP_01"}, "OP_02"), ValidationError);
}

TEST_CASE("stored deltas are sparser than dense on the serving corpus") {
  Rng rng(4);
  // 50 random chains over a layered graph of long operations
  std::vector<Workflow> wfs;
  for (int w = 0; w < 50; ++w) {
    Workflow wf;
    wf.id = "WF_" + std::to_string(w);
    std::string prev;
    for (int l = 0; l < 4; ++l) {
      size_t j = rng.below(3);
      std::string id = "L" + std::to_string(l) + "_" + std::to_string(j);
      wf.nodes.push_back(id);
      std::string text;
      for (int k = 0; k < 30; ++k) text += "w" + std::to_string(l * 100 + j * 10 + k % 7) + " ";
      wf.operations[id] = {id, "", text, {}, {}};
      if (!prev.empty()) wf.edges.emplace_back(prev, id);
      prev = id;
    }
    wfs.push_back(wf);
  }
  auto g = std::make_shared<const WGraph>(merge_into_wgraph(wfs));
  CacheStore s(g, OracleConfig{}, StoreMode::differential, 0.95);
  for (const auto& wf : wfs) {
    PrefixPath p{wf.nodes[0]};
    for (size_t i = 1; i < wf.nodes.size(); ++i) {
      s.insert_residual(p, wf.nodes[i]);
      auto d = s.residual(p, wf.nodes[i]);
      CHECK(d->entry_count() < d->dense_elements());
      p.push_back(wf.nodes[i]);
    }
  }
}

TEST_CASE("fetch semantics per mode") {
  auto g = math_graph();
  OracleConfig oc;
  Oracle o(oc);
  CacheStore exact(g, oc, StoreMode::differential, 1.0);
  for (const auto& [p, op] : kMathPairs) {
    KVTensor truth = o.op_segment(exact.prefix_tokens(p), exact.op_tokens(op));
    FetchResult miss = exact.fetch(p, op);
    CHECK(miss.tensor == truth);
    CHECK(miss.tensor == exact.stateful(p, op));
    CHECK(miss.hit == p.empty());
    if (!p.empty()) CHECK(miss.prefill_tokens == exact.prefix_tokens(p).size() + exact.op_tokens(op).size());
    exact.insert_residual(p, op);
    FetchResult hit = exact.fetch(p, op);
    CHECK(hit.hit);
    INFO(op << " " << p.size());
    CHECK(hit.tensor == miss.tensor);
  }

  CacheStore stateless(g, oc, StoreMode::stateless);
  FetchResult sl = stateless.fetch({"OP_01", "OP_02"}, "OP_04");
  CHECK(sl.hit);
  CHECK(sl.applied_entries == 0);
  CHECK_FALSE(sl.tensor == exact.stateful({"OP_01", "OP_02"}, "OP_04"));

  CacheStore stateful(g, oc, StoreMode::stateful);
  FetchResult f1 = stateful.fetch({"OP_01"}, "OP_03");
  FetchResult f2 = stateful.fetch({"OP_01"}, "OP_03");
  CHECK_FALSE(f1.hit);
  CHECK(f2.hit);
  CHECK(f1.tensor == f2.tensor);
  CHECK(stateful.memory_footprint().fulls == f1.tensor.bytes());

  CHECK_THROWS_AS(exact.fetch({"OP_02"}, "OP_03"), ValidationError);
}

TEST_CASE("bounded loss for every stored pair") {
  auto g = math_graph();
  for (double e : {0.5, 0.8, 0.95, 0.99}) {
    CacheStore s(g, OracleConfig{}, StoreMode::differential, e);
    for (const auto& [p, op] : kMathPairs) {
      s.insert_residual(p, op);
      FetchResult r = s.fetch(p, op);
      KVTensor truth = s.stateful(p, op);
      auto base = s.compute_base(op, s.prefix_tokens(p).size());
      CHECK(r.hit);
      CHECK(frobenius_distance(r.tensor, truth) <= std::sqrt(1 - e) * delta_norm(truth, *base) + 1e-6);
    }
  }
}

TEST_CASE("concurrent fetches agree and leave bases untouched") {
  auto g = math_graph();
  CacheStore s(g, OracleConfig{}, StoreMode::differential, 0.95);
  for (const auto& [p, op] : kMathPairs) s.insert_residual(p, op);
  auto base = s.compute_base("OP_05", s.prefix_tokens({"OP_01", "OP_02", "OP_04"}).size());
  KVTensor before = *base;
  std::vector<KVTensor> out(8);
  std::vector<std::thread> ts;
  for (int i = 0; i < 8; ++i)
    ts.emplace_back([&, i] {
      for (int k = 0; k < 20; ++k) out[i] = s.fetch({"OP_01", "OP_02", "OP_04"}, "OP_05").tensor;
    });
  for (auto& t : ts) t.join();
  for (const auto& t : out) CHECK(t == out[0]);
  CHECK(*base == before);
}

TEST_CASE("empty store footprint") {
  CacheStore s(math_graph(), OracleConfig{}, StoreMode::differential);
  MemoryReport m = s.memory_footprint();
  CHECK(m.bases == 0);
  CHECK(m.residuals == 0);
  CHECK(m.fulls == 0);
  CHECK(memory_csv_header() == "mode,bases_bytes,residuals_bytes,fulls_bytes,total_bytes\n");
  CHECK(memory_csv_row("differential", m) == "differential,0,0,0,0\n");
}

TEST_CASE("store directory round trip") {
  auto g = math_graph();
  TempDir d("kvstore_dir");
  CacheStore s(g, OracleConfig{}, StoreMode::differential, 0.9);
  for (const auto& [p, op] : kMathPairs) {
    s.compute_base(op, s.prefix_tokens(p).size());
    if (!p.empty()) s.insert_residual(p, op);
  }
  s.save(d.str("store"));
  auto t = CacheStore::load(d.str("store"), g);
  CHECK(t->mode() == StoreMode::differential);
  CHECK(t->energy_target() == 0.9);
  CHECK(t->memory_footprint().total() == s.memory_footprint().total());
  CHECK(t->materialized() == s.materialized());
  for (const auto& [p, op] : kMathPairs) CHECK(t->fetch(p, op).tensor == s.fetch(p, op).tensor);
  t->save(d.str("again"));
  for (const auto& sub : {"store.json", "paths.tsv"})
    CHECK(read_file(d.str(std::string("store/") + sub)) == read_file(d.str(std::string("again/") + sub)));
  CHECK_THROWS_AS(CacheStore::load(d.str("missing"), g), ValidationError);
}

TEST_CASE("mode names") {
  CHECK(parse_mode("stateless") == StoreMode::stateless);
  CHECK(to_string(StoreMode::stateful) == "stateful");
  CHECK_THROWS_AS(parse_mode("bogus"), ValidationError);
}
