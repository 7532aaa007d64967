// SPDX-License-Identifier: Apache-2.0
#include "opflow/wgraph.hpp"

#include <algorithm>
#include <filesystem>
#include <queue>

#include "json.hpp"
#include "opflow/util.hpp"

namespace opflow {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<std::string> WGraph::node_ids() const {
  std::vector<std::string> out;
  out.reserve(nodes.size());
  for (const auto& [id, _] : nodes) out.push_back(id);
  return out;
}

size_t WGraph::in_degree(const std::string& id) const {
  size_t n = 0;
  for (const auto& e : edges)
    if (e.second == id) ++n;
  return n;
}

const Operation& WGraph::op(const std::string& id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw ValidationError("unknown operation '" + id + "'");
  return it->second;
}

std::vector<std::string> TaskGraph::node_order() const {
  auto ids = base->node_ids();
  ids.push_back(task_node_id);
  return ids;
}

// ---- parsing ----

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ValidationError(path + ": " + msg);
}

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(path, "missing required field '" + key + "'");
  return *it;
}

std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected string");
  return v.get<std::string>();
}

std::vector<std::string> get_strings(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected array of strings");
  std::vector<std::string> out;
  for (size_t i = 0; i < v.size(); ++i)
    out.push_back(get_string(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

void get_patterns(const json& obj, const std::string& path, std::vector<std::string>& must,
                  std::vector<std::string>& should) {
  const json& p = field(obj, "patterns", path);
  must = get_strings(field(p, "must", path + ".patterns"), path + ".patterns.must");
  should = get_strings(field(p, "should", path + ".patterns"), path + ".patterns.should");
}

json patterns_json(const std::vector<std::string>& must, const std::vector<std::string>& should) {
  return json{{"must", must}, {"should", should}};
}

json operation_json(const Operation& op) {
  json o{{"instruction", op.instruction},
         {"patterns", patterns_json(op.patterns_must, op.patterns_should)}};
  if (!op.name.empty()) o["name"] = op.name;
  return o;
}

Operation parse_operation(const std::string& id, const json& o, const std::string& path) {
  Operation op;
  op.id = id;
  if (id.empty()) fail(path, "empty operation id");
  if (o.contains("name")) op.name = get_string(o["name"], path + ".name");
  op.instruction = get_string(field(o, "instruction", path), path + ".instruction");
  if (trim(op.instruction).empty()) fail(path + ".instruction", "empty instruction");
  get_patterns(o, path, op.patterns_must, op.patterns_should);
  return op;
}

std::string cycle_text(const std::vector<std::string>& c) { return join(c, " -> "); }

}  // namespace

Workflow parse_workflow(std::string_view doc, const ParseOptions& opt) {
  json j;
  try {
    j = json::parse(doc);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("$: malformed document: ") + e.what());
  }
  Workflow wf;
  wf.id = get_string(field(j, "id", "$"), "$.id");
  if (wf.id.empty()) fail("$.id", "empty workflow id");
  wf.name = get_string(field(j, "name", "$"), "$.name");
  wf.description = get_string(field(j, "description", "$"), "$.description");
  get_patterns(j, "$", wf.patterns_must, wf.patterns_should);

  const json& gs = field(j, "graph_structure", "$");
  wf.nodes = get_strings(field(gs, "nodes", "$.graph_structure"), "$.graph_structure.nodes");
  std::set<std::string> node_set;
  for (size_t i = 0; i < wf.nodes.size(); ++i) {
    if (!node_set.insert(wf.nodes[i]).second)
      fail("$.graph_structure.nodes[" + std::to_string(i) + "]", "duplicate node '" + wf.nodes[i] + "'");
  }

  const json& edges = field(gs, "edges", "$.graph_structure");
  if (!edges.is_array()) fail("$.graph_structure.edges", "expected array");
  std::set<Edge> seen;
  for (size_t i = 0; i < edges.size(); ++i) {
    std::string p = "$.graph_structure.edges[" + std::to_string(i) + "]";
    auto pair = get_strings(edges[i], p);
    if (pair.size() != 2) fail(p, "edge must have exactly two endpoints");
    for (int k = 0; k < 2; ++k)
      if (!node_set.count(pair[k]))
        fail(p + "[" + std::to_string(k) + "]", "edge references unknown node '" + pair[k] + "'");
    Edge e{pair[0], pair[1]};
    if (!seen.insert(e).second) {
      if (opt.lenient_duplicates) continue;
      fail(p, "duplicate edge " + e.first + " -> " + e.second);
    }
    wf.edges.push_back(e);
  }

  const json& ops = field(j, "operations", "$");
  if (!ops.is_object()) fail("$.operations", "expected object");
  for (auto it = ops.begin(); it != ops.end(); ++it) {
    std::string p = "$.operations." + it.key();
    if (!node_set.count(it.key())) fail(p, "operation not listed in graph_structure.nodes");
    wf.operations.emplace(it.key(), parse_operation(it.key(), it.value(), p));
  }
  for (const auto& n : wf.nodes)
    if (!wf.operations.count(n)) fail("$.operations", "missing operation for node '" + n + "'");

  auto dag = validate_dag(wf.nodes, wf.edges);
  if (!dag.ok) fail("$.graph_structure.edges", "cycle detected: " + cycle_text(dag.cycle));
  return wf;
}

std::string serialize_workflow(const Workflow& wf) {
  json j;
  j["id"] = wf.id;
  j["name"] = wf.name;
  j["description"] = wf.description;
  j["patterns"] = patterns_json(wf.patterns_must, wf.patterns_should);
  json edges = json::array();
  for (const auto& e : wf.edges) edges.push_back(json::array({e.first, e.second}));
  j["graph_structure"] = json{{"nodes", wf.nodes}, {"edges", edges}};
  json ops = json::object();
  for (const auto& [id, op] : wf.operations) ops[id] = operation_json(op);
  j["operations"] = ops;
  return j.dump(2) + "\n";
}

Workflow load_workflow_file(const std::string& path, const ParseOptions& opt) {
  try {
    return parse_workflow(read_file(path), opt);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::vector<Workflow> load_workflow_dir(const std::string& dir, const ParseOptions& opt) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
  std::vector<std::string> files;
  const std::string ext = ".workflow.json";
  for (const auto& ent : fs::directory_iterator(dir)) {
    std::string name = ent.path().filename().string();
    if (ent.is_regular_file() && name.size() > ext.size() &&
        name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
      files.push_back(ent.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<Workflow> out;
  for (const auto& f : files) out.push_back(load_workflow_file(f, opt));
  return out;
}

// ---- DAG utilities ----

DagCheck validate_dag(const std::vector<std::string>& nodes, const std::vector<Edge>& edges) {
  std::map<std::string, size_t> idx;
  for (size_t i = 0; i < nodes.size(); ++i) idx.emplace(nodes[i], i);
  std::vector<std::vector<size_t>> adj(nodes.size());
  for (const auto& e : edges) {
    auto a = idx.find(e.first), b = idx.find(e.second);
    if (a == idx.end() || b == idx.end())
      throw ValidationError("dangling edge " + e.first + " -> " + e.second);
    adj[a->second].push_back(b->second);
  }
  // iterative DFS with colors; parent links give the witness
  std::vector<int> color(nodes.size(), 0);
  std::vector<size_t> parent(nodes.size(), SIZE_MAX);
  for (size_t s = 0; s < nodes.size(); ++s) {
    if (color[s]) continue;
    std::vector<std::pair<size_t, size_t>> st{{s, 0}};
    color[s] = 1;
    while (!st.empty()) {
      auto& [u, k] = st.back();
      if (k < adj[u].size()) {
        size_t v = adj[u][k++];
        if (color[v] == 0) {
          color[v] = 1;
          parent[v] = u;
          st.push_back({v, 0});
        } else if (color[v] == 1) {
          DagCheck r;
          r.ok = false;
          std::vector<std::string> rev{nodes[v]};
          for (size_t w = u; w != v; w = parent[w]) rev.push_back(nodes[w]);
          rev.push_back(nodes[v]);
          r.cycle.assign(rev.rbegin(), rev.rend());
          return r;
        }
      } else {
        color[u] = 2;
        st.pop_back();
      }
    }
  }
  return {};
}

std::vector<std::string> topological_order(const std::vector<std::string>& nodes,
                                           const std::vector<Edge>& edges) {
  std::map<std::string, size_t> indeg;
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& n : nodes) indeg[n] = 0;
  for (const auto& e : edges) {
    ++indeg[e.second];
    out[e.first].push_back(e.second);
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [n, d] : indeg)
    if (d == 0) ready.push(n);
  std::vector<std::string> order;
  while (!ready.empty()) {
    std::string u = ready.top();
    ready.pop();
    order.push_back(u);
    for (const auto& v : out[u])
      if (--indeg[v] == 0) ready.push(v);
  }
  if (order.size() != indeg.size()) throw ValidationError("graph has a cycle");
  return order;
}

// ---- merge ----

std::string normalize_instruction(std::string_view text) {
  return join(split_ws(to_lower(text)), " ");
}

WGraph merge_into_wgraph(const std::vector<Workflow>& workflows, const MergeOptions& opt,
                         MergeStats* stats) {
  struct Member {
    std::string wf, raw;
    const Operation* op;
  };
  std::vector<std::vector<Member>> groups;
  std::map<std::string, size_t> by_key;
  std::map<std::pair<std::string, std::string>, size_t> group_of;  // (wf, raw) -> group
  size_t raw = 0;

  for (const auto& wf : workflows) {
    for (const auto& n : wf.nodes) {
      const Operation& op = wf.operations.at(n);
      ++raw;
      std::string key = normalize_instruction(op.instruction);
      size_t g;
      auto it = by_key.find(key);
      if (it != by_key.end()) {
        g = it->second;
      } else {
        g = groups.size();
        if (opt.similar) {
          for (size_t k = 0; k < groups.size(); ++k)
            if (opt.similar(*groups[k].front().op, op)) {
              g = k;
              break;
            }
        }
        if (g == groups.size()) groups.emplace_back();
        by_key.emplace(key, g);
      }
      groups[g].push_back({wf.id, n, &op});
      group_of[{wf.id, n}] = g;
    }
  }

  // canonical id: smallest raw id; colliding groups are qualified as wf.op
  std::vector<std::string> canon(groups.size());
  std::vector<const Member*> rep(groups.size());
  std::map<std::string, std::vector<size_t>> claims;
  for (size_t g = 0; g < groups.size(); ++g) {
    const Member* best = &groups[g].front();
    for (const auto& m : groups[g])
      if (std::tie(m.raw, m.wf) < std::tie(best->raw, best->wf)) best = &m;
    rep[g] = best;
    canon[g] = best->raw;
    claims[best->raw].push_back(g);
  }
  for (auto& [id, gs] : claims) {
    if (gs.size() < 2) continue;
    for (size_t g : gs) {
      const Member* best = nullptr;
      std::string q;
      for (const auto& m : groups[g]) {
        std::string cand = m.wf + "." + m.raw;
        if (!best || cand < q) {
          best = &m;
          q = cand;
        }
      }
      rep[g] = best;
      canon[g] = q;
    }
  }
  {
    std::set<std::string> uniq(canon.begin(), canon.end());
    if (uniq.size() != canon.size())
      throw ValidationError("canonical operation ids collide after qualification");
  }

  WGraph g;
  for (size_t k = 0; k < groups.size(); ++k) {
    Operation op = *rep[k]->op;
    op.id = canon[k];
    g.nodes.emplace(op.id, op);
    for (const auto& m : groups[k]) g.node_provenance[op.id].insert(m.wf + "/" + m.raw);
  }

  // add edges one by one so the first edge closing a cycle can be named
  std::map<std::string, std::set<std::string>> succ;
  auto reaches = [&](const std::string& from, const std::string& to) {
    std::vector<std::string> st{from};
    std::set<std::string> seen{from};
    while (!st.empty()) {
      std::string u = st.back();
      st.pop_back();
      if (u == to) return true;
      for (const auto& v : succ[u])
        if (seen.insert(v).second) st.push_back(v);
    }
    return false;
  };
  for (const auto& wf : workflows) {
    for (const auto& e : wf.edges) {
      const std::string& a = canon[group_of.at({wf.id, e.first})];
      const std::string& b = canon[group_of.at({wf.id, e.second})];
      Edge ce{a, b};
      if (!g.edges.count(ce)) {
        if (a == b || reaches(b, a))
          throw ValidationError("merge creates a cycle at edge (" + a + ", " + b + ") from workflow " +
                                wf.id + " (" + e.first + " -> " + e.second + ")");
        g.edges.insert(ce);
        succ[a].insert(b);
      }
      g.provenance[ce].insert(wf.id);
    }
  }
  if (stats) {
    stats->raw_operations = raw;
    stats->canonical_operations = g.nodes.size();
  }
  return g;
}

Workflow as_workflow(const WGraph& g, const std::string& id) {
  Workflow wf;
  wf.id = id;
  wf.name = id;
  wf.nodes = g.node_ids();
  wf.edges = g.edge_list();
  wf.operations = g.nodes;
  return wf;
}

TaskGraph condition_on_task(const WGraph& g, std::string task) {
  TaskGraph tg;
  tg.base = &g;
  tg.task_text = std::move(task);
  tg.edges = g.edge_list();
  for (const auto& id : g.node_ids()) {
    tg.edges.emplace_back(tg.task_node_id, id);
    tg.edges.emplace_back(id, tg.task_node_id);
  }
  return tg;
}

// ---- graph file ----

std::string serialize_wgraph(const WGraph& g) {
  json j = json::parse(serialize_workflow(as_workflow(g)));
  json prov = json::array();
  for (const auto& [e, wfs] : g.provenance)
    prov.push_back(json{{"edge", json::array({e.first, e.second})},
                        {"workflows", std::vector<std::string>(wfs.begin(), wfs.end())}});
  j["provenance"] = prov;
  json nprov = json::object();
  for (const auto& [id, src] : g.node_provenance)
    nprov[id] = std::vector<std::string>(src.begin(), src.end());
  j["node_provenance"] = nprov;
  return j.dump(2) + "\n";
}

WGraph parse_wgraph(std::string_view doc) {
  Workflow wf = parse_workflow(doc);
  WGraph g;
  g.nodes = wf.operations;
  g.edges.insert(wf.edges.begin(), wf.edges.end());
  json j = json::parse(doc);
  if (j.contains("provenance")) {
    const json& p = j["provenance"];
    for (size_t i = 0; i < p.size(); ++i) {
      std::string path = "$.provenance[" + std::to_string(i) + "]";
      auto e = get_strings(field(p[i], "edge", path), path + ".edge");
      if (e.size() != 2 || !g.has_edge(e[0], e[1])) fail(path, "provenance for unknown edge");
      auto w = get_strings(field(p[i], "workflows", path), path + ".workflows");
      g.provenance[{e[0], e[1]}].insert(w.begin(), w.end());
    }
  }
  if (j.contains("node_provenance")) {
    for (auto it = j["node_provenance"].begin(); it != j["node_provenance"].end(); ++it) {
      auto w = get_strings(it.value(), "$.node_provenance." + it.key());
      g.node_provenance[it.key()].insert(w.begin(), w.end());
    }
  }
  return g;
}

}  // namespace opflow
