// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "opflow/kvstore.hpp"
#include "opflow/wgraph.hpp"

namespace opflow {

// Per-edge execution counts over E_op plus the distinct traces seen so far.
// Counters are atomics so serving threads never block on each other.
class TransitionStats {
 public:
  explicit TransitionStats(std::shared_ptr<const WGraph> graph);

  void record_execution(const std::vector<std::string>& trace);
  void record_transition(const std::string& from, const std::string& to);

  uint64_t count(const std::string& from, const std::string& to) const;
  uint64_t total_observations() const;
  std::map<Edge, uint64_t> counts() const;
  std::set<std::vector<std::string>> traces() const;
  const WGraph& graph() const { return *graph_; }

 private:
  size_t edge_index(const std::string& from, const std::string& to) const;
  std::shared_ptr<const WGraph> graph_;
  std::vector<Edge> edges_;
  std::map<Edge, size_t> index_;
  std::unique_ptr<std::atomic<uint64_t>[]> counts_;
  mutable std::mutex trace_mu_;
  std::set<std::vector<std::string>> traces_;
};

struct PrunePolicy {
  uint64_t min_count = 2;
  size_t max_materialized = 0;  // 0: unlimited
};

struct PlannedPair {
  PrefixPath path;
  std::string op;
  uint64_t min_edge_count = 0;
  bool operator==(const PlannedPair&) const = default;
};

std::vector<PlannedPair> plan_materialization(const WGraph& g, const TransitionStats& stats,
                                              const PrunePolicy& policy);

struct MaterializationReport {
  uint64_t bytes_before = 0, bytes_after = 0;
  size_t inserted = 0, dropped = 0, kept = 0;
  struct Row {
    std::string path_hash, op;
    uint64_t min_edge_count, bytes;
  };
  std::vector<Row> rows;
};

MaterializationReport apply_plan(CacheStore& store, const std::vector<PlannedPair>& plan);
std::string plan_report_csv(const MaterializationReport& r);

// task_id<TAB>op,op,... per line
struct TraceRecord {
  std::string task_id;
  std::vector<std::string> ops;
};
void append_trace_log(const std::string& path, const std::vector<TraceRecord>& traces);
std::vector<TraceRecord> load_trace_log(const std::string& path);

}  // namespace opflow
