// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "opflow/construct.hpp"
#include "opflow/kvstore.hpp"
#include "opflow/oracle.hpp"
#include "opflow/pruning.hpp"

namespace opflow {

struct Request {
  std::string task_id;
  std::string task_text;
  Workflow target;  // planted ground truth; empty when unknown
};

struct Workload {
  std::vector<Request> requests;
  std::vector<size_t> batch_sizes{10, 20, 30, 40, 50};
  uint64_t seed = 42;
  double overlap = 0.5;
};

// Arbitrary units, not wall clock.
struct CostModel {
  double prefill_per_token = 1.0;
  double apply_per_entry = 0.01;
  double hit_fixed = 5.0;
};

struct RunOptions {
  OracleConfig oracle;
  double energy_target = 0.95;
  bool warm = true;           // differential: materialize from the workload's own traces first
  PrunePolicy policy;         // used for the warm-up plan
  bool measure_fidelity = true;
};

struct RunReport {
  StoreMode mode = StoreMode::differential;
  double total_cost = 0.0, mean_cost = 0.0, p90_cost = 0.0;
  MemoryReport memory;
  std::vector<double> costs;
  std::vector<size_t> hits, fallbacks;
  double task_score = 0.0;       // mean edge-F1 against planted targets
  double kv_relative_error = 0.0;  // mean ||fetched - stateful|| / ||stateful||
  size_t total_hits() const;
  size_t total_fallbacks() const;
  double hit_rate() const;
};

using Planner = std::function<Workflow(const Request&)>;
Planner model_planner(const WGraph& g, const ModelParams& params, DecodeConfig decode = {});
Planner target_planner();

double p90_nearest_rank(std::vector<double> v);
double linear_slope(const std::vector<double>& x, const std::vector<double>& y);

// (prefix path, op) pairs in execution order: lexicographic topological order,
// each op's prefix following its smallest-id predecessor back to the root.
std::vector<PairKey> execution_steps(const Workflow& wf);
// One trace per leaf of that predecessor tree; every step is a trace prefix.
std::vector<std::vector<std::string>> workflow_traces(const Workflow& wf);

// Base caches for every (op, prefix length) reachable from an entry operation.
void prepare_bases(CacheStore& store);

RunReport run_serving_sim(const WGraph& g, const Workload& w, const Planner& planner, StoreMode mode,
                          const CostModel& cost, const RunOptions& opt = {});
RunReport run_serving_sim(const WGraph& g, const ModelParams& params, const Workload& w, StoreMode mode,
                          const CostModel& cost, const RunOptions& opt = {});

struct SweepRow {
  size_t batch = 0;
  StoreMode mode = StoreMode::stateful;
  MemoryReport memory;
};
struct SweepResult {
  std::vector<SweepRow> rows;
  double slope(StoreMode m) const;
  uint64_t total(size_t batch, StoreMode m) const;
  std::string csv() const;
};
SweepResult sweep_batch_sizes(const WGraph& g, const Workload& w, const Planner& planner,
                              const RunOptions& opt = {});

struct AblationReport {
  uint64_t bytes_unpruned = 0, bytes_pruned = 0;
  size_t pairs_unpruned = 0, pairs_pruned = 0;
  size_t fetches = 0;
  size_t hits_unpruned = 0, hits_pruned = 0;
  size_t contract_violations = 0;
  size_t bitwise_identical = 0;  // fetches whose two outputs match bit for bit
  bool contract_ok() const { return contract_violations == 0; }
  std::string csv() const;
};
AblationReport ablate_pruning(const WGraph& g, const Workload& w, const Planner& planner, uint64_t k,
                              const RunOptions& opt = {});

struct SparsityPair {
  std::string name, prefix, op;
};
struct SparsityRow {
  std::string pair;
  uint32_t layer = 0, head = 0;
  std::string half;  // key | value
  size_t elements = 0;
  double frac_below_10pct = 0.0;  // relative to the pair's max |delta| in this half
  double frac_zero = 0.0;
  double frobenius = 0.0;
  double frac_kept_95 = 0.0;  // entries kept when retaining 95% of energy
};
struct SparsityReport {
  std::vector<SparsityRow> rows;
  std::string csv() const;
  double mean_below(const std::string& half) const;
};
SparsityReport sparsity_report(const OracleConfig& cfg, const std::vector<SparsityPair>& corpus);
// |delta| for one (layer, head, half) as a token x dim grid
std::vector<std::vector<double>> delta_heatmap(const OracleConfig& cfg, const SparsityPair& pair, uint32_t layer,
                                               uint32_t head, bool values);

// Layered repository of fixed-length operations for memory experiments.
struct ServingCorpusConfig {
  size_t n_workflows = 50;
  size_t layers = 6;
  size_t ops_per_layer = 6;
  size_t op_words = 40;
  double overlap = 0.5;  // chance a step picks from the layer's two core operations
  uint64_t seed = 42;
};
struct ServingCorpus {
  std::vector<Workflow> workflows;  // source documents
  WGraph graph;
  std::vector<Workflow> targets;  // canonical ids
  double reuse = 0.0;
};
ServingCorpus generate_serving_corpus(const ServingCorpusConfig& cfg);

// zipf_s == 0: requests walk the targets in order; otherwise draw ranks with
// probability proportional to 1 / rank^zipf_s.
Workload make_workload(const std::vector<Workflow>& targets, size_t n_requests, double zipf_s, uint64_t seed);
Workload make_workload(const std::vector<TrainSample>& samples, size_t n_requests, uint64_t seed);
std::vector<SparsityPair> default_sparsity_corpus(const ServingCorpus& c, size_t n_pairs);

std::string run_report_csv_header();
std::string run_report_csv_row(const RunReport& r);

}  // namespace opflow
