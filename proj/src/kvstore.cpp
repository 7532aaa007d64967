// SPDX-License-Identifier: Apache-2.0
#include "opflow/kvstore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"
#include "opflow/pruning.hpp"
#include "opflow/util.hpp"

namespace opflow {

namespace fs = std::filesystem;

// ---- sparse residuals ----

SparseDelta sparsify(const KVTensor& full, const KVTensor& base, double energy_target) {
  if (!full.same_shape(base)) throw ValidationError("sparsify: shape or offset mismatch");
  if (!(energy_target > 0.0 && energy_target <= 1.0)) throw ValidationError("energy target must lie in (0, 1]");
  struct Cand {
    double mag;
    uint32_t half;
    size_t idx;
    float v;
  };
  std::vector<Cand> c;
  const size_t n = full.elements();
  for (uint32_t half = 0; half < 2; ++half) {
    const auto& f = half ? full.values : full.keys;
    const auto& b = half ? base.values : base.keys;
    for (size_t i = 0; i < n; ++i) {
      float d = f[i] - b[i];
      if (d != 0.0f) c.push_back({std::abs(static_cast<double>(d)), half, i, d});
    }
  }
  // flat index order equals (layer, head, token, dim) order
  std::sort(c.begin(), c.end(), [](const Cand& a, const Cand& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    if (a.half != b.half) return a.half < b.half;
    return a.idx < b.idx;
  });
  double total = 0.0;
  for (const auto& x : c) total += x.mag * x.mag;

  SparseDelta d;
  d.layers = full.layers;
  d.heads = full.heads;
  d.tokens = full.tokens;
  d.head_dim = full.head_dim;
  d.position_offset = full.position_offset;
  if (c.empty()) {
    d.kept_energy_fraction = 1.0;
    return d;
  }
  const double need = energy_target * total;
  double kept = 0.0;
  size_t m = 0;
  if (energy_target >= 1.0) {
    m = c.size();
    kept = total;
  } else {
    while (m < c.size()) {
      kept += c[m].mag * c[m].mag;
      ++m;
      if (kept >= need) break;
    }
  }
  d.kept_energy_fraction = kept / total;
  for (size_t k = 0; k < m; ++k) {
    size_t i = c[k].idx;
    DeltaEntry e;
    e.dim = static_cast<uint32_t>(i % full.head_dim);
    i /= full.head_dim;
    e.token = static_cast<uint32_t>(i % full.tokens);
    i /= full.tokens;
    e.head = static_cast<uint32_t>(i % full.heads);
    e.layer = static_cast<uint32_t>(i / full.heads);
    e.value = c[k].v;
    (c[k].half ? d.values : d.keys).push_back(e);
  }
  return d;
}

KVTensor reconstruct(const KVTensor& base, const SparseDelta& delta) {
  if (base.layers != delta.layers || base.heads != delta.heads || base.tokens != delta.tokens ||
      base.head_dim != delta.head_dim || base.position_offset != delta.position_offset)
    throw ValidationError("reconstruct: delta shape does not match base");
  KVTensor out = base;
  auto scatter = [&](std::vector<float>& dst, const std::vector<DeltaEntry>& es) {
    for (const auto& e : es) {
      if (e.layer >= base.layers || e.head >= base.heads || e.token >= base.tokens || e.dim >= base.head_dim)
        throw ValidationError("reconstruct: coordinate out of bounds");
      dst[out.index(e.layer, e.head, e.token, e.dim)] += e.value;
    }
  };
  scatter(out.keys, delta.keys);
  scatter(out.values, delta.values);
  return out;
}

double frobenius_distance(const KVTensor& a, const KVTensor& b) {
  if (a.elements() != b.elements()) throw ValidationError("frobenius_distance: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.elements(); ++i) {
    double dk = static_cast<double>(a.keys[i]) - b.keys[i];
    double dv = static_cast<double>(a.values[i]) - b.values[i];
    s += dk * dk + dv * dv;
  }
  return std::sqrt(s);
}

double delta_norm(const KVTensor& full, const KVTensor& base) { return frobenius_distance(full, base); }

void save_delta(std::ostream& os, const SparseDelta& d) {
  os.write("OPDL", 4);
  put_u32(os, 1);
  put_u32(os, d.layers);
  put_u32(os, d.heads);
  put_u32(os, d.tokens);
  put_u32(os, d.head_dim);
  put_u64(os, d.position_offset);
  put_f64(os, d.kept_energy_fraction);
  put_u64(os, d.keys.size());
  put_u64(os, d.values.size());
  for (const auto* list : {&d.keys, &d.values})
    for (const auto& e : *list) {
      put_u32(os, e.layer);
      put_u32(os, e.head);
      put_u32(os, e.token);
      put_u32(os, e.dim);
      put_f32(os, e.value);
    }
}

SparseDelta load_delta(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "OPDL", 4) != 0) throw ValidationError("not a delta file");
  if (get_u32(is) != 1) throw ValidationError("unsupported delta file version");
  SparseDelta d;
  d.layers = get_u32(is);
  d.heads = get_u32(is);
  d.tokens = get_u32(is);
  d.head_dim = get_u32(is);
  d.position_offset = get_u64(is);
  d.kept_energy_fraction = get_f64(is);
  uint64_t nk = get_u64(is), nv = get_u64(is);
  if (nk + nv > d.dense_elements()) throw ValidationError("delta has more entries than its dense shape");
  for (uint64_t k = 0; k < nk + nv; ++k) {
    DeltaEntry e;
    e.layer = get_u32(is);
    e.head = get_u32(is);
    e.token = get_u32(is);
    e.dim = get_u32(is);
    e.value = get_f32(is);
    if (e.layer >= d.layers || e.head >= d.heads || e.token >= d.tokens || e.dim >= d.head_dim)
      throw ValidationError("delta coordinate out of bounds");
    (k < nk ? d.keys : d.values).push_back(e);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes in delta file");
  return d;
}

void save_delta(const std::string& path, const SparseDelta& d) {
  std::ostringstream os;
  save_delta(os, d);
  write_file(path, os.str());
}

SparseDelta load_delta(const std::string& path) {
  std::istringstream is(read_file(path));
  try {
    return load_delta(is);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string to_string(StoreMode m) {
  switch (m) {
    case StoreMode::stateful: return "stateful";
    case StoreMode::differential: return "differential";
    case StoreMode::stateless: return "stateless";
  }
  return "?";
}

StoreMode parse_mode(const std::string& s) {
  if (s == "stateful") return StoreMode::stateful;
  if (s == "differential") return StoreMode::differential;
  if (s == "stateless") return StoreMode::stateless;
  throw ValidationError("unknown mode '" + s + "' (expected stateful, differential or stateless)");
}

std::string memory_csv_header() { return "mode,bases_bytes,residuals_bytes,fulls_bytes,total_bytes\n"; }

std::string memory_csv_row(const std::string& mode, const MemoryReport& r) {
  return mode + "," + std::to_string(r.bases) + "," + std::to_string(r.residuals) + "," + std::to_string(r.fulls) +
         "," + std::to_string(r.total()) + "\n";
}

std::string path_hash(const PrefixPath& path) { return hex64(fnv1a64(join(path, "\x1f"))); }

// ---- store ----

CacheStore::CacheStore(std::shared_ptr<const WGraph> graph, const OracleConfig& cfg, StoreMode mode,
                       double energy_target)
    : graph_(std::move(graph)), oracle_(std::make_shared<Oracle>(cfg)), mode_(mode), energy_target_(energy_target) {
  if (!graph_) throw ValidationError("CacheStore: null graph");
  if (!(energy_target > 0.0 && energy_target <= 1.0)) throw ValidationError("energy target must lie in (0, 1]");
  for (const auto& [id, op] : graph_->nodes) tokens_[id] = tokenize(op.instruction);
}

const TokenSeq& CacheStore::op_tokens(const std::string& op) const {
  auto it = tokens_.find(op);
  if (it == tokens_.end()) throw ValidationError("unknown operation '" + op + "'");
  if (it->second.empty()) throw ValidationError("operation '" + op + "' tokenizes to an empty sequence");
  return it->second;
}

TokenSeq CacheStore::prefix_tokens(const PrefixPath& path) const {
  TokenSeq out;
  for (const auto& p : path) {
    const auto& t = op_tokens(p);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

void CacheStore::validate(const PrefixPath& path, const std::string& op) const {
  if (!graph_->has_node(op)) throw ValidationError("unknown operation '" + op + "'");
  std::set<std::string> seen;
  for (size_t i = 0; i < path.size(); ++i) {
    if (!graph_->has_node(path[i])) throw ValidationError("invalid path: unknown operation '" + path[i] + "'");
    if (!seen.insert(path[i]).second) throw ValidationError("invalid path: repeated operation '" + path[i] + "'");
    const std::string& next = i + 1 < path.size() ? path[i + 1] : op;
    if (!graph_->has_edge(path[i], next))
      throw ValidationError("invalid path edge (" + path[i] + ", " + next + ")");
  }
  if (seen.count(op)) throw ValidationError("invalid path: operation repeats its own prefix");
}

std::shared_ptr<const KVTensor> CacheStore::compute_base(const std::string& op, uint64_t position_offset) {
  const TokenSeq& toks = op_tokens(op);
  std::lock_guard<std::mutex> lk(base_mu_);
  auto key = std::make_pair(op, position_offset);
  auto it = bases_.find(key);
  if (it != bases_.end()) return it->second;
  auto t = std::make_shared<const KVTensor>(oracle_->base_segment(position_offset, toks));
  bases_.emplace(key, t);
  return t;
}

KVTensor CacheStore::stateful(const PrefixPath& path, const std::string& op) const {
  return oracle_->op_segment(prefix_tokens(path), op_tokens(op));
}

void CacheStore::insert_residual(const PrefixPath& path, const std::string& op) {
  validate(path, op);
  if (mode_ == StoreMode::stateless) return;
  if (mode_ == StoreMode::stateful) {
    auto full = std::make_shared<const KVTensor>(stateful(path, op));
    std::lock_guard<std::mutex> lk(full_mu_);
    fulls_[{path, op}] = full;
    return;
  }
  TokenSeq prefix = prefix_tokens(path);
  auto base = compute_base(op, prefix.size());
  KVTensor full = oracle_->op_segment(prefix, op_tokens(op));
  auto d = std::make_shared<const SparseDelta>(sparsify(full, *base, energy_target_));
  std::unique_lock<std::shared_mutex> lk(res_mu_);
  residuals_[{path, op}] = d;
}

bool CacheStore::remove_residual(const PrefixPath& path, const std::string& op) {
  if (mode_ == StoreMode::stateful) {
    std::lock_guard<std::mutex> lk(full_mu_);
    return fulls_.erase({path, op}) != 0;
  }
  std::unique_lock<std::shared_mutex> lk(res_mu_);
  return residuals_.erase({path, op}) != 0;
}

bool CacheStore::has_residual(const PrefixPath& path, const std::string& op) const {
  if (mode_ == StoreMode::stateful) {
    std::lock_guard<std::mutex> lk(full_mu_);
    return fulls_.count({path, op}) != 0;
  }
  std::shared_lock<std::shared_mutex> lk(res_mu_);
  return residuals_.count({path, op}) != 0;
}

std::shared_ptr<const SparseDelta> CacheStore::residual(const PrefixPath& path, const std::string& op) const {
  std::shared_lock<std::shared_mutex> lk(res_mu_);
  auto it = residuals_.find({path, op});
  return it == residuals_.end() ? nullptr : it->second;
}

std::vector<PairKey> CacheStore::materialized() const {
  std::vector<PairKey> out;
  if (mode_ == StoreMode::stateful) {
    std::lock_guard<std::mutex> lk(full_mu_);
    for (const auto& [k, _] : fulls_) out.push_back(k);
  } else {
    std::shared_lock<std::shared_mutex> lk(res_mu_);
    for (const auto& [k, _] : residuals_) out.push_back(k);
  }
  return out;
}

FetchResult CacheStore::fetch(const PrefixPath& path, const std::string& op, TransitionStats* stats) {
  validate(path, op);
  FetchResult r;
  const TokenSeq& toks = op_tokens(op);
  switch (mode_) {
    case StoreMode::stateless: {
      uint64_t offset = prefix_tokens(path).size();
      r.tensor = *compute_base(op, offset);
      r.hit = true;
      return r;
    }
    case StoreMode::stateful: {
      {
        std::lock_guard<std::mutex> lk(full_mu_);
        auto it = fulls_.find({path, op});
        if (it != fulls_.end()) {
          r.tensor = *it->second;
          r.hit = true;
          return r;
        }
      }
      TokenSeq prefix = prefix_tokens(path);
      auto full = std::make_shared<const KVTensor>(oracle_->op_segment(prefix, toks));
      r.tensor = *full;
      r.prefill_tokens = prefix.size() + toks.size();
      std::lock_guard<std::mutex> lk(full_mu_);
      fulls_.emplace(PairKey{path, op}, full);
      return r;
    }
    case StoreMode::differential: {
      TokenSeq prefix = prefix_tokens(path);
      if (path.empty()) {
        // no prefix content: the base is the stateful tensor
        r.tensor = *compute_base(op, 0);
        r.hit = true;
        return r;
      }
      auto d = residual(path, op);
      if (d) {
        auto base = compute_base(op, prefix.size());
        r.tensor = reconstruct(*base, *d);
        r.hit = true;
        r.applied_entries = d->entry_count();
        return r;
      }
      r.tensor = oracle_->op_segment(prefix, toks);
      r.prefill_tokens = prefix.size() + toks.size();
      if (stats) stats->record_transition(path.back(), op);
      return r;
    }
  }
  return r;
}

MemoryReport CacheStore::memory_footprint() const {
  MemoryReport m;
  {
    std::lock_guard<std::mutex> lk(base_mu_);
    for (const auto& [_, t] : bases_) m.bases += t->bytes();
  }
  {
    std::shared_lock<std::shared_mutex> lk(res_mu_);
    for (const auto& [_, d] : residuals_) m.residuals += d->bytes();
  }
  {
    std::lock_guard<std::mutex> lk(full_mu_);
    for (const auto& [_, t] : fulls_) m.fulls += t->bytes();
  }
  return m;
}

size_t CacheStore::base_count() const {
  std::lock_guard<std::mutex> lk(base_mu_);
  return bases_.size();
}

// ---- persistence ----

namespace {

void check_file_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\@\t\n") != std::string::npos || id == "." || id == "..")
    throw ValidationError("operation id '" + id + "' cannot be used as a file name");
}

}  // namespace

void CacheStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  for (const char* sub : {"bases", "residuals", "fulls"}) {
    fs::remove_all(fs::path(dir) / sub);
    fs::create_directories(fs::path(dir) / sub);
  }
  const OracleConfig& c = oracle_->config();
  nlohmann::json meta{{"mode", to_string(mode_)},
                      {"energy_target", energy_target_},
                      {"oracle",
                       {{"layers", c.layers},
                        {"heads", c.heads},
                        {"head_dim", c.head_dim},
                        {"lambda", c.lambda},
                        {"seed", c.seed}}}};
  write_file((fs::path(dir) / "store.json").string(), meta.dump(2) + "\n");

  std::map<std::string, PrefixPath> paths;
  {
    std::lock_guard<std::mutex> lk(base_mu_);
    for (const auto& [k, t] : bases_) {
      check_file_id(k.first);
      save_kv((fs::path(dir) / "bases" / (k.first + "@" + std::to_string(k.second) + ".kv")).string(), *t);
    }
  }
  {
    std::shared_lock<std::shared_mutex> lk(res_mu_);
    for (const auto& [k, d] : residuals_) {
      check_file_id(k.second);
      std::string h = path_hash(k.first);
      paths[h] = k.first;
      fs::create_directories(fs::path(dir) / "residuals" / h);
      save_delta((fs::path(dir) / "residuals" / h / (k.second + ".delta")).string(), *d);
    }
  }
  {
    std::lock_guard<std::mutex> lk(full_mu_);
    for (const auto& [k, t] : fulls_) {
      check_file_id(k.second);
      std::string h = path_hash(k.first);
      paths[h] = k.first;
      fs::create_directories(fs::path(dir) / "fulls" / h);
      save_kv((fs::path(dir) / "fulls" / h / (k.second + ".kv")).string(), *t);
    }
  }
  std::string idx;
  for (const auto& [h, p] : paths) idx += h + "\t" + join(p, ",") + "\n";
  write_file((fs::path(dir) / "paths.tsv").string(), idx);
}

std::unique_ptr<CacheStore> CacheStore::load(const std::string& dir, std::shared_ptr<const WGraph> graph) {
  auto meta_path = (fs::path(dir) / "store.json").string();
  if (!fs::exists(meta_path)) throw ValidationError("not a store directory: " + dir);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path + ": " + e.what());
  }
  OracleConfig c;
  try {
    c.layers = meta.at("oracle").at("layers");
    c.heads = meta.at("oracle").at("heads");
    c.head_dim = meta.at("oracle").at("head_dim");
    c.lambda = meta.at("oracle").at("lambda");
    c.seed = meta.at("oracle").at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path + ": " + e.what());
  }
  auto store = std::make_unique<CacheStore>(graph, c, parse_mode(meta.at("mode")), meta.at("energy_target"));

  std::map<std::string, PrefixPath> paths;
  auto idx_path = fs::path(dir) / "paths.tsv";
  if (fs::exists(idx_path)) {
    std::istringstream in(read_file(idx_path.string()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto cols = split(line, '\t');
      if (cols.size() != 2) throw ValidationError(idx_path.string() + ": malformed line");
      paths[cols[0]] = cols[1].empty() ? PrefixPath{} : split(cols[1], ',');
    }
  }
  auto sorted_entries = [](const fs::path& p) {
    std::vector<fs::path> v;
    if (fs::exists(p))
      for (const auto& e : fs::directory_iterator(p)) v.push_back(e.path());
    std::sort(v.begin(), v.end());
    return v;
  };
  for (const auto& f : sorted_entries(fs::path(dir) / "bases")) {
    std::string stem = f.stem().string();
    auto at = stem.rfind('@');
    if (at == std::string::npos) throw ValidationError("bad base file name " + f.string());
    auto t = std::make_shared<const KVTensor>(load_kv(f.string()));
    store->bases_[{stem.substr(0, at), std::stoull(stem.substr(at + 1))}] = t;
  }
  for (const char* sub : {"residuals", "fulls"}) {
    for (const auto& hdir : sorted_entries(fs::path(dir) / sub)) {
      auto pit = paths.find(hdir.filename().string());
      if (pit == paths.end()) throw ValidationError("no path recorded for " + hdir.string());
      for (const auto& f : sorted_entries(hdir)) {
        std::string op = f.stem().string();
        store->validate(pit->second, op);
        if (std::string(sub) == "residuals")
          store->residuals_[{pit->second, op}] = std::make_shared<const SparseDelta>(load_delta(f.string()));
        else
          store->fulls_[{pit->second, op}] = std::make_shared<const KVTensor>(load_kv(f.string()));
      }
    }
  }
  return store;
}

}  // namespace opflow
