// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace opflow {

using Edge = std::pair<std::string, std::string>;

struct Operation {
  std::string id;
  std::string name;  // optional display name
  std::string instruction;
  std::vector<std::string> patterns_must;
  std::vector<std::string> patterns_should;

  bool operator==(const Operation&) const = default;
};

struct Workflow {
  std::string id;
  std::string name;
  std::string description;
  std::vector<std::string> patterns_must;
  std::vector<std::string> patterns_should;
  std::vector<std::string> nodes;
  std::vector<Edge> edges;
  std::map<std::string, Operation> operations;

  bool operator==(const Workflow&) const = default;
};

// Global operation graph. Nodes are kept in canonical (lexicographic) id
// order, which is also the row order of every feature matrix.
struct WGraph {
  std::map<std::string, Operation> nodes;
  std::set<Edge> edges;
  std::map<Edge, std::set<std::string>> provenance;             // edge -> workflow ids
  std::map<std::string, std::set<std::string>> node_provenance;  // id -> "wf/raw_id"

  std::vector<std::string> node_ids() const;
  std::vector<Edge> edge_list() const { return {edges.begin(), edges.end()}; }
  bool has_node(const std::string& id) const { return nodes.count(id) != 0; }
  bool has_edge(const std::string& a, const std::string& b) const {
    return edges.count({a, b}) != 0;
  }
  size_t in_degree(const std::string& id) const;
  const Operation& op(const std::string& id) const;
};

inline constexpr std::string_view kTaskNodeId = "__task__";

struct TaskGraph {
  const WGraph* base = nullptr;
  std::string task_text;
  std::string task_node_id{kTaskNodeId};
  std::vector<Edge> edges;  // E_op (canonical order) then task->v, v->task pairs

  size_t node_count() const { return base->nodes.size() + 1; }
  size_t edge_count() const { return edges.size(); }
  std::vector<std::string> node_order() const;  // operations, then the task node
};

struct ParseOptions {
  bool lenient_duplicates = false;  // drop repeated edges instead of failing
};

Workflow parse_workflow(std::string_view doc, const ParseOptions& opt = {});
std::string serialize_workflow(const Workflow& wf);
Workflow load_workflow_file(const std::string& path, const ParseOptions& opt = {});
// Every *.workflow.json in dir, in file-name order.
std::vector<Workflow> load_workflow_dir(const std::string& dir, const ParseOptions& opt = {});

struct MergeOptions {
  // Extra equivalence beyond the normalized-text key. Off when empty.
  std::function<bool(const Operation&, const Operation&)> similar;
};

struct MergeStats {
  size_t raw_operations = 0;
  size_t canonical_operations = 0;
  size_t merged() const { return raw_operations - canonical_operations; }
};

std::string normalize_instruction(std::string_view text);
WGraph merge_into_wgraph(const std::vector<Workflow>& workflows, const MergeOptions& opt = {},
                         MergeStats* stats = nullptr);
Workflow as_workflow(const WGraph& g, const std::string& id = "wgraph");

TaskGraph condition_on_task(const WGraph& g, std::string task);

struct DagCheck {
  bool ok = true;
  std::vector<std::string> cycle;  // first node repeated at the end
};
DagCheck validate_dag(const std::vector<std::string>& nodes, const std::vector<Edge>& edges);

// Kahn's algorithm, smallest available id first.
std::vector<std::string> topological_order(const std::vector<std::string>& nodes,
                                           const std::vector<Edge>& edges);

// Graph file: workflow schema plus a provenance table.
std::string serialize_wgraph(const WGraph& g);
WGraph parse_wgraph(std::string_view doc);

}  // namespace opflow
