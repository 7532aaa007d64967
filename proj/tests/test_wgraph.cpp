// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>
#include <sstream>

#include "helpers.hpp"
#include "opflow/wgraph.hpp"

using namespace opflow;
using namespace opflow::testing;

namespace {

// Transitive closure; a cycle exists iff some node reaches itself.
bool has_cycle_closure(const std::vector<std::string>& nodes, const std::vector<Edge>& edges) {
  size_t n = nodes.size();
  std::map<std::string, size_t> ix;
  for (size_t i = 0; i < n; ++i) ix[nodes[i]] = i;
  std::vector<std::vector<char>> r(n, std::vector<char>(n, 0));
  for (const auto& [a, b] : edges) r[ix[a]][ix[b]] = 1;
  for (size_t k = 0; k < n; ++k)
    for (size_t i = 0; i < n; ++i)
      if (r[i][k])
        for (size_t j = 0; j < n; ++j)
          if (r[k][j]) r[i][j] = 1;
  for (size_t i = 0; i < n; ++i)
    if (r[i][i]) return true;
  return false;
}

std::string dedup_key(const std::string& s) {
  std::istringstream in(s);
  std::string w, out;
  while (in >> w) {
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out += (out.empty() ? "" : " ") + w;
  }
  return out;
}

std::string two_node_doc(const std::string& edges) {
  return R"({"id":"W","name":"n","description":"d","patterns":{"must":[],"should":[]},
    "graph_structure":{"nodes":["OP_01","OP_02"],"edges":)" +
         edges + R"(},
    "operations":{"OP_01":{"instruction":"first step","patterns":{"must":[],"should":[]}},
                  "OP_02":{"instruction":"second step","patterns":{"must":[],"should":[]}}}})";
}

}  // namespace

TEST_CASE("parse the algebra workflow") {
  Workflow wf = parse_workflow(math_doc());
  CHECK(wf.id == "WF_MATH_001");
  CHECK(wf.nodes == std::vector<std::string>{"OP_01", "OP_02", "OP_03", "OP_04", "OP_05"});
  CHECK(wf.edges.size() == 5);
  CHECK(std::find(wf.edges.begin(), wf.edges.end(), Edge{"OP_04", "OP_05"}) != wf.edges.end());
  CHECK(wf.operations.at("OP_04").patterns_should == std::vector<std::string>{"value of x"});
  CHECK(wf.patterns_must.size() == 4);
}

TEST_CASE("empty workflow document is valid") {
  auto wf = parse_workflow(R"({"id":"E","name":"","description":"","patterns":{"must":[],"should":[]},
      "graph_structure":{"nodes":[],"edges":[]},"operations":{}})");
  CHECK(wf.nodes.empty());
  CHECK(wf.edges.empty());
}

TEST_CASE("two-cycle is rejected") {
  try {
    parse_workflow(two_node_doc(R"([["OP_02","OP_01"],["OP_01","OP_02"]])"));
    FAIL("expected a cycle error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("cycle") != std::string::npos);
  }
}

TEST_CASE("schema errors carry a path") {
  try {
    parse_workflow(two_node_doc(R"([["OP_01","OP_09"]])"));
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("$.graph_structure.edges[0]") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_workflow("{not json"), ValidationError);
  CHECK_THROWS_AS(parse_workflow(R"({"id":"x"})"), ValidationError);
}

TEST_CASE("duplicate edges: strict and lenient") {
  auto doc = two_node_doc(R"([["OP_01","OP_02"],["OP_01","OP_02"]])");
  CHECK_THROWS_AS(parse_workflow(doc), ValidationError);
  auto wf = parse_workflow(doc, {true});
  CHECK(wf.edges.size() == 1);
}

TEST_CASE("parse, serialize, parse is a fixed point") {
  Workflow a = parse_workflow(math_doc());
  std::string s1 = serialize_workflow(a);
  Workflow b = parse_workflow(s1);
  CHECK(a == b);
  CHECK(serialize_workflow(b) == s1);
}

TEST_CASE("validate_dag") {
  CHECK(validate_dag({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}}).ok);
  auto r = validate_dag({"A", "B"}, {{"A", "B"}, {"B", "A"}});
  CHECK_FALSE(r.ok);
  CHECK(r.cycle == std::vector<std::string>{"A", "B", "A"});
}

TEST_CASE("validate_dag matches a closure oracle on random digraphs") {
  Rng rng(7);
  int cyclic = 0;
  for (int t = 0; t < 1000; ++t) {
    size_t n = 1 + rng.below(8);
    std::vector<std::string> nodes;
    for (size_t i = 0; i < n; ++i) nodes.push_back(node_name(i));
    std::vector<Edge> edges;
    double p = rng.uniform(0.05, 0.35);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j)
        if (i != j && rng.uniform() < p) edges.emplace_back(nodes[i], nodes[j]);
    bool expect = has_cycle_closure(nodes, edges);
    auto r = validate_dag(nodes, edges);
    REQUIRE(r.ok == !expect);
    if (!r.ok) {
      ++cyclic;
      REQUIRE(r.cycle.size() >= 3);
      REQUIRE(r.cycle.front() == r.cycle.back());
      std::set<Edge> es(edges.begin(), edges.end());
      for (size_t i = 0; i + 1 < r.cycle.size(); ++i) REQUIRE(es.count({r.cycle[i], r.cycle[i + 1]}));
    }
  }
  CHECK(cyclic > 100);
  CHECK(cyclic < 900);
}

TEST_CASE("topological order is smallest-first Kahn") {
  auto o = topological_order({"C", "B", "A", "D"}, {{"B", "D"}, {"A", "D"}});
  CHECK(o == std::vector<std::string>{"A", "B", "C", "D"});
}

TEST_CASE("identical instructions merge into one node") {
  const std::string instr = "Isolate the variable by applying inverse operations to both sides.";
  Workflow a, b;
  a.id = "WF_A";
  b.id = "WF_B";
  a.nodes = {"OP_X", "OP_Y"};
  a.edges = {{"OP_X", "OP_Y"}};
  a.operations["OP_X"] = {"OP_X", "", "Read the problem.", {}, {}};
  a.operations["OP_Y"] = {"OP_Y", "", instr, {}, {}};
  b.nodes = {"OP_Q", "OP_R"};
  b.edges = {{"OP_Q", "OP_R"}};
  b.operations["OP_Q"] = {"OP_Q", "", "Check the units.", {}, {}};
  b.operations["OP_R"] = {"OP_R", "", "  isolate THE variable by applying inverse operations to both   sides.", {}, {}};
  MergeStats st;
  WGraph g = merge_into_wgraph({a, b}, {}, &st);
  CHECK(g.nodes.size() == 3);
  CHECK(st.merged() == 1);
  CHECK(g.has_node("OP_R"));  // smallest contributing id
  CHECK_FALSE(g.has_node("OP_Y"));
  CHECK(g.has_edge("OP_X", "OP_R"));
  CHECK(g.has_edge("OP_Q", "OP_R"));
  CHECK(g.node_provenance.at("OP_R") == std::set<std::string>{"WF_A/OP_Y", "WF_B/OP_R"});
}

TEST_CASE("single workflow merges to itself") {
  Workflow wf = parse_workflow(math_doc());
  WGraph g = merge_into_wgraph({wf});
  CHECK(g.node_ids() == wf.nodes);
  CHECK(g.edges == std::set<Edge>(wf.edges.begin(), wf.edges.end()));
}

TEST_CASE("merge is idempotent") {
  Rng rng(3);
  std::vector<Workflow> wfs;
  for (int i = 0; i < 4; ++i) wfs.push_back(random_dag(rng, 6, 0.4, "WF_" + std::to_string(i)));
  WGraph g = merge_into_wgraph(wfs);
  WGraph g2 = merge_into_wgraph({as_workflow(g)});
  CHECK(g2.nodes == g.nodes);
  CHECK(g2.edges == g.edges);
}

TEST_CASE("node count matches an exact-dedup oracle") {
  Rng rng(11);
  std::vector<std::string> vocab;
  for (int i = 0; i < 20; ++i) vocab.push_back("Step " + std::to_string(i) + " handles part " + std::to_string(i * 7));
  std::vector<Workflow> wfs;
  std::set<std::string> distinct;
  std::map<std::string, size_t> uses;
  for (int w = 0; w < 10; ++w) {
    Workflow wf;
    wf.id = "WF_" + std::to_string(w);
    // chain over increasing vocab indices keeps every merge acyclic
    std::set<size_t> pick;
    while (pick.size() < 4) pick.insert(rng.below(vocab.size()));
    std::string prev;
    int k = 0;
    for (size_t v : pick) {
      std::string id = "W" + std::to_string(w) + "_" + std::to_string(k++);
      std::string text = rng.uniform() < 0.5 ? vocab[v] : "  " + to_lower(vocab[v]);
      wf.nodes.push_back(id);
      wf.operations[id] = {id, "", text, {}, {}};
      if (!prev.empty()) wf.edges.emplace_back(prev, id);
      prev = id;
      distinct.insert(dedup_key(text));
      ++uses[dedup_key(text)];
    }
    wfs.push_back(wf);
  }
  size_t reused = 0, total = 0;
  for (const auto& [k, c] : uses) {
    total += c;
    if (c > 1) reused += c;
  }
  CHECK(static_cast<double>(reused) / static_cast<double>(total) >= 0.4);
  MergeStats st;
  WGraph g = merge_into_wgraph(wfs, {}, &st);
  CHECK(g.nodes.size() == distinct.size());
  CHECK(st.raw_operations == 40);
}

TEST_CASE("opposite orderings across workflows are an error") {
  Workflow a, b;
  a.id = "WF_A";
  b.id = "WF_B";
  for (auto* wf : {&a, &b}) {
    wf->nodes = {"P", "Q"};
    wf->operations["P"] = {"P", "", "alpha", {}, {}};
    wf->operations["Q"] = {"Q", "", "beta", {}, {}};
  }
  a.edges = {{"P", "Q"}};
  b.edges = {{"Q", "P"}};
  CHECK_THROWS_AS(merge_into_wgraph({a, b}), ValidationError);
}

TEST_CASE("colliding raw ids with different text are qualified") {
  Workflow a, b;
  a.id = "WF_A";
  b.id = "WF_B";
  a.nodes = {"OP_01"};
  b.nodes = {"OP_01"};
  a.operations["OP_01"] = {"OP_01", "", "alpha", {}, {}};
  b.operations["OP_01"] = {"OP_01", "", "beta", {}, {}};
  WGraph g = merge_into_wgraph({a, b});
  CHECK(g.nodes.size() == 2);
  CHECK(g.has_node("WF_A.OP_01"));
  CHECK(g.has_node("WF_B.OP_01"));
}

TEST_CASE("task conditioning counts") {
  WGraph g = merge_into_wgraph({parse_workflow(math_doc())});
  TaskGraph tg = condition_on_task(g, "solve the system");
  CHECK(tg.node_count() == 6);
  CHECK(tg.edge_count() == 15);
  CHECK(tg.node_order().back() == std::string(kTaskNodeId));

  WGraph empty;
  TaskGraph te = condition_on_task(empty, "anything");
  CHECK(te.node_count() == 1);
  CHECK(te.edge_count() == 0);

  Rng rng(5);
  for (size_t n = 1; n <= 50; ++n) {
    WGraph r = graph_of(random_dag(rng, n, 0.1));
    TaskGraph t = condition_on_task(r, "t");
    REQUIRE(t.node_count() == n + 1);
    REQUIRE(t.edge_count() == r.edges.size() + 2 * n);
    // dropping the task node recovers E_op
    std::set<Edge> back;
    for (const auto& e : t.edges)
      if (e.first != t.task_node_id && e.second != t.task_node_id) back.insert(e);
    REQUIRE(back == r.edges);
  }
}

TEST_CASE("graph file round trip") {
  Rng rng(9);
  std::vector<Workflow> wfs{random_dag(rng, 5, 0.5, "WF_1"), random_dag(rng, 4, 0.5, "WF_2")};
  wfs.push_back(parse_workflow(math_doc()));
  WGraph g = merge_into_wgraph(wfs);
  std::string s = serialize_wgraph(g);
  WGraph h = parse_wgraph(s);
  CHECK(h.nodes == g.nodes);
  CHECK(h.edges == g.edges);
  CHECK(h.provenance == g.provenance);
  CHECK(h.node_provenance == g.node_provenance);
  CHECK(serialize_wgraph(h) == s);
}

TEST_CASE("load a workflow directory") {
  TempDir d("wgraph_dir");
  write_file(d.str("b.workflow.json"), math_doc());
  write_file(d.str("ignored.json"), "{}");
  auto wfs = load_workflow_dir(d.str());
  CHECK(wfs.size() == 1);
  write_file(d.str("a.workflow.json"), "{broken");
  try {
    load_workflow_dir(d.str());
    FAIL("expected failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("a.workflow.json") != std::string::npos);
  }
}
