// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "opflow/oracle.hpp"
#include "opflow/wgraph.hpp"

namespace opflow {

class TransitionStats;

using PrefixPath = std::vector<std::string>;
using PairKey = std::pair<PrefixPath, std::string>;  // (prefix path, op id)

struct DeltaEntry {
  uint32_t layer, head, token, dim;
  float value;
  bool operator==(const DeltaEntry&) const = default;
};

inline constexpr uint32_t kDeltaHeaderBytes = 56;
inline constexpr uint32_t kDeltaEntryBytes = 20;

struct SparseDelta {
  uint32_t layers = 0, heads = 0, tokens = 0, head_dim = 0;
  uint64_t position_offset = 0;
  std::vector<DeltaEntry> keys, values;
  double kept_energy_fraction = 1.0;

  size_t entry_count() const { return keys.size() + values.size(); }
  uint64_t bytes() const { return kDeltaHeaderBytes + kDeltaEntryBytes * entry_count(); }
  size_t dense_elements() const { return 2ull * layers * heads * tokens * head_dim; }
  bool operator==(const SparseDelta&) const = default;
};

SparseDelta sparsify(const KVTensor& full, const KVTensor& base, double energy_target);
KVTensor reconstruct(const KVTensor& base, const SparseDelta& delta);
double frobenius_distance(const KVTensor& a, const KVTensor& b);
// ||full - base||_F
double delta_norm(const KVTensor& full, const KVTensor& base);

void save_delta(std::ostream& os, const SparseDelta& d);
SparseDelta load_delta(std::istream& is);
void save_delta(const std::string& path, const SparseDelta& d);
SparseDelta load_delta(const std::string& path);

enum class StoreMode { stateful, differential, stateless };
std::string to_string(StoreMode m);
StoreMode parse_mode(const std::string& s);

struct MemoryReport {
  uint64_t bases = 0, residuals = 0, fulls = 0;
  uint64_t total() const { return bases + residuals + fulls; }
};
std::string memory_csv_header();
std::string memory_csv_row(const std::string& mode, const MemoryReport& r);

struct FetchResult {
  KVTensor tensor;
  bool hit = false;
  size_t applied_entries = 0;  // residual entries scattered onto the base
  size_t prefill_tokens = 0;   // tokens recomputed on a miss
};

std::string path_hash(const PrefixPath& path);

// Base caches, residuals and (stateful mode) full tensors for one wGraph.
// fetch() may run concurrently; insert/remove take the writer lock.
class CacheStore {
 public:
  CacheStore(std::shared_ptr<const WGraph> graph, const OracleConfig& cfg, StoreMode mode,
             double energy_target = 0.95);

  StoreMode mode() const { return mode_; }
  double energy_target() const { return energy_target_; }
  const Oracle& oracle() const { return *oracle_; }
  const WGraph& graph() const { return *graph_; }
  std::shared_ptr<const WGraph> graph_ptr() const { return graph_; }

  const TokenSeq& op_tokens(const std::string& op) const;
  TokenSeq prefix_tokens(const PrefixPath& path) const;
  void validate(const PrefixPath& path, const std::string& op) const;

  std::shared_ptr<const KVTensor> compute_base(const std::string& op, uint64_t position_offset);
  KVTensor stateful(const PrefixPath& path, const std::string& op) const;

  void insert_residual(const PrefixPath& path, const std::string& op);
  bool remove_residual(const PrefixPath& path, const std::string& op);
  bool has_residual(const PrefixPath& path, const std::string& op) const;
  std::shared_ptr<const SparseDelta> residual(const PrefixPath& path, const std::string& op) const;
  std::vector<PairKey> materialized() const;

  FetchResult fetch(const PrefixPath& path, const std::string& op, TransitionStats* stats = nullptr);

  MemoryReport memory_footprint() const;
  size_t base_count() const;

  // bases/<op>@<offset>.kv, residuals/<path-hash>/<op>.delta, fulls/<path-hash>/<op>.kv
  void save(const std::string& dir) const;
  static std::unique_ptr<CacheStore> load(const std::string& dir, std::shared_ptr<const WGraph> graph);

 private:
  std::shared_ptr<const WGraph> graph_;
  std::shared_ptr<const Oracle> oracle_;
  StoreMode mode_;
  double energy_target_;
  std::map<std::string, TokenSeq> tokens_;

  mutable std::mutex base_mu_;
  std::map<std::pair<std::string, uint64_t>, std::shared_ptr<const KVTensor>> bases_;
  mutable std::shared_mutex res_mu_;
  std::map<PairKey, std::shared_ptr<const SparseDelta>> residuals_;
  mutable std::mutex full_mu_;
  std::map<PairKey, std::shared_ptr<const KVTensor>> fulls_;
};

}  // namespace opflow
