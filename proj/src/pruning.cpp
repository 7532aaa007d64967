// SPDX-License-Identifier: Apache-2.0
#include "opflow/pruning.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "opflow/util.hpp"

namespace opflow {

TransitionStats::TransitionStats(std::shared_ptr<const WGraph> graph) : graph_(std::move(graph)) {
  if (!graph_) throw ValidationError("TransitionStats: null graph");
  edges_ = graph_->edge_list();
  for (size_t i = 0; i < edges_.size(); ++i) index_[edges_[i]] = i;
  counts_ = std::make_unique<std::atomic<uint64_t>[]>(edges_.size());
  for (size_t i = 0; i < edges_.size(); ++i) counts_[i].store(0);
}

size_t TransitionStats::edge_index(const std::string& from, const std::string& to) const {
  auto it = index_.find({from, to});
  if (it == index_.end()) throw ValidationError("trace step (" + from + ", " + to + ") is not a wGraph edge");
  return it->second;
}

void TransitionStats::record_execution(const std::vector<std::string>& trace) {
  if (trace.empty()) return;
  if (trace.size() == 1 && !graph_->has_node(trace[0]))
    throw ValidationError("trace contains unknown operation '" + trace[0] + "'");
  std::vector<size_t> idx;
  for (size_t i = 0; i + 1 < trace.size(); ++i) idx.push_back(edge_index(trace[i], trace[i + 1]));
  for (size_t i : idx) counts_[i].fetch_add(1, std::memory_order_relaxed);
  std::lock_guard<std::mutex> lk(trace_mu_);
  traces_.insert(trace);
}

void TransitionStats::record_transition(const std::string& from, const std::string& to) {
  counts_[edge_index(from, to)].fetch_add(1, std::memory_order_relaxed);
}

uint64_t TransitionStats::count(const std::string& from, const std::string& to) const {
  auto it = index_.find({from, to});
  return it == index_.end() ? 0 : counts_[it->second].load(std::memory_order_relaxed);
}

uint64_t TransitionStats::total_observations() const {
  uint64_t s = 0;
  for (size_t i = 0; i < edges_.size(); ++i) s += counts_[i].load(std::memory_order_relaxed);
  return s;
}

std::map<Edge, uint64_t> TransitionStats::counts() const {
  std::map<Edge, uint64_t> out;
  for (size_t i = 0; i < edges_.size(); ++i) out[edges_[i]] = counts_[i].load(std::memory_order_relaxed);
  return out;
}

std::set<std::vector<std::string>> TransitionStats::traces() const {
  std::lock_guard<std::mutex> lk(trace_mu_);
  return traces_;
}

std::vector<PlannedPair> plan_materialization(const WGraph& g, const TransitionStats& stats,
                                              const PrunePolicy& policy) {
  if (policy.min_count < 1) throw ValidationError("min_count must be at least 1");
  std::map<PairKey, uint64_t> planned;
  for (const auto& trace : stats.traces()) {
    uint64_t mn = std::numeric_limits<uint64_t>::max();
    // prefix trace[0..i) feeding trace[i]; the empty prefix needs no residual
    for (size_t i = 1; i < trace.size(); ++i) {
      if (!g.has_edge(trace[i - 1], trace[i])) break;
      mn = std::min(mn, stats.count(trace[i - 1], trace[i]));
      if (mn < policy.min_count) break;
      PrefixPath p(trace.begin(), trace.begin() + static_cast<std::ptrdiff_t>(i));
      planned[{p, trace[i]}] = mn;
    }
  }
  std::vector<PlannedPair> out;
  for (const auto& [k, c] : planned) out.push_back({k.first, k.second, c});
  std::stable_sort(out.begin(), out.end(),
                   [](const PlannedPair& a, const PlannedPair& b) { return a.min_edge_count > b.min_edge_count; });
  if (policy.max_materialized && out.size() > policy.max_materialized) out.resize(policy.max_materialized);
  return out;
}

MaterializationReport apply_plan(CacheStore& store, const std::vector<PlannedPair>& plan) {
  MaterializationReport r;
  r.bytes_before = store.memory_footprint().total();
  std::set<PairKey> want;
  for (const auto& p : plan) {
    store.validate(p.path, p.op);
    want.insert({p.path, p.op});
  }
  for (const auto& k : store.materialized())
    if (!want.count(k)) {
      store.remove_residual(k.first, k.second);
      ++r.dropped;
    }
  for (const auto& p : plan) {
    if (store.has_residual(p.path, p.op)) {
      ++r.kept;
    } else {
      store.insert_residual(p.path, p.op);
      ++r.inserted;
    }
    uint64_t bytes = 0;
    if (auto d = store.residual(p.path, p.op)) bytes = d->bytes();
    r.rows.push_back({path_hash(p.path), p.op, p.min_edge_count, bytes});
  }
  r.bytes_after = store.memory_footprint().total();
  return r;
}

std::string plan_report_csv(const MaterializationReport& r) {
  std::string out = "path_hash,op_id,min_edge_count,bytes\n";
  for (const auto& row : r.rows)
    out += row.path_hash + "," + row.op + "," + std::to_string(row.min_edge_count) + "," + std::to_string(row.bytes) +
           "\n";
  return out;
}

void append_trace_log(const std::string& path, const std::vector<TraceRecord>& traces) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + path);
  for (const auto& t : traces) out << t.task_id << '\t' << join(t.ops, ",") << '\n';
}

std::vector<TraceRecord> load_trace_log(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<TraceRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw ValidationError(path + ":" + std::to_string(lineno) + ": expected task<TAB>ops");
    out.push_back({cols[0], cols[1].empty() ? std::vector<std::string>{} : split(cols[1], ',')});
  }
  return out;
}

}  // namespace opflow
