// SPDX-License-Identifier: Apache-2.0
#include "opflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "opflow/util.hpp"

namespace opflow {

size_t RunReport::total_hits() const {
  size_t s = 0;
  for (auto h : hits) s += h;
  return s;
}

size_t RunReport::total_fallbacks() const {
  size_t s = 0;
  for (auto f : fallbacks) s += f;
  return s;
}

double RunReport::hit_rate() const {
  size_t n = total_hits() + total_fallbacks();
  return n ? static_cast<double>(total_hits()) / static_cast<double>(n) : 0.0;
}

Planner model_planner(const WGraph& g, const ModelParams& params, DecodeConfig decode) {
  auto embedder = std::make_shared<Embedder>(params.D);
  return [&g, &params, decode, embedder](const Request& r) { return generate(g, r.task_text, params, decode, *embedder); };
}

Planner target_planner() {
  return [](const Request& r) { return r.target; };
}

double p90_nearest_rank(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t rank = static_cast<size_t>(std::ceil(0.9 * static_cast<double>(v.size())));
  return v[std::max<size_t>(rank, 1) - 1];
}

double linear_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("linear_slope needs two or more points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

// ---- execution order ----

namespace {

struct PredTree {
  std::vector<std::string> order;
  std::map<std::string, std::string> parent;  // smallest predecessor
};

PredTree pred_tree(const Workflow& wf) {
  PredTree t;
  t.order = topological_order(wf.nodes, wf.edges);
  for (const auto& [a, b] : wf.edges) {
    auto it = t.parent.find(b);
    if (it == t.parent.end() || a < it->second) t.parent[b] = a;
  }
  return t;
}

PrefixPath path_to(const PredTree& t, const std::string& v) {
  PrefixPath p;
  for (auto it = t.parent.find(v); it != t.parent.end(); it = t.parent.find(it->second)) p.push_back(it->second);
  std::reverse(p.begin(), p.end());
  return p;
}

}  // namespace

std::vector<PairKey> execution_steps(const Workflow& wf) {
  PredTree t = pred_tree(wf);
  std::vector<PairKey> out;
  for (const auto& v : t.order) out.push_back({path_to(t, v), v});
  return out;
}

std::vector<std::vector<std::string>> workflow_traces(const Workflow& wf) {
  PredTree t = pred_tree(wf);
  std::set<std::string> has_child;
  for (const auto& [c, p] : t.parent) has_child.insert(p);
  std::vector<std::vector<std::string>> out;
  for (const auto& v : t.order) {
    if (has_child.count(v)) continue;
    auto p = path_to(t, v);
    p.push_back(v);
    out.push_back(p);
  }
  return out;
}

void prepare_bases(CacheStore& store) {
  const WGraph& g = store.graph();
  auto order = topological_order(g.node_ids(), g.edge_list());
  std::map<std::string, std::set<uint64_t>> offs;
  for (const auto& id : entry_operations(g)) offs[id].insert(0);
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& [a, b] : g.edges) succ[a].push_back(b);
  for (const auto& u : order) {
    uint64_t len = store.op_tokens(u).size();
    for (const auto& v : succ[u])
      for (uint64_t o : offs[u]) offs[v].insert(o + len);
  }
  for (const auto& [id, set] : offs)
    for (uint64_t o : set) store.compute_base(id, o);
}

// ---- serving ----

namespace {

void warm_store(CacheStore& store, const std::vector<Workflow>& plans, const PrunePolicy& policy) {
  TransitionStats st(store.graph_ptr());
  for (const auto& wf : plans)
    for (const auto& tr : workflow_traces(wf)) st.record_execution(tr);
  apply_plan(store, plan_materialization(store.graph(), st, policy));
}

double l2(const KVTensor& t) {
  double s = 0;
  for (size_t i = 0; i < t.elements(); ++i)
    s += static_cast<double>(t.keys[i]) * t.keys[i] + static_cast<double>(t.values[i]) * t.values[i];
  return std::sqrt(s);
}

}  // namespace

RunReport run_serving_sim(const WGraph& g, const Workload& w, const Planner& planner, StoreMode mode,
                          const CostModel& cost, const RunOptions& opt) {
  if (cost.prefill_per_token < 0 || cost.apply_per_entry < 0 || cost.hit_fixed < 0)
    throw ValidationError("cost model entries must be non-negative");
  auto gp = std::make_shared<const WGraph>(g);
  std::vector<Workflow> plans;
  for (const auto& r : w.requests) plans.push_back(planner(r));

  RunReport rep;
  rep.mode = mode;
  std::unique_ptr<CacheStore> shared;
  if (mode != StoreMode::stateful) {
    shared = std::make_unique<CacheStore>(gp, opt.oracle, mode, opt.energy_target);
    prepare_bases(*shared);
    if (mode == StoreMode::differential && opt.warm) warm_store(*shared, plans, opt.policy);
  }
  TransitionStats misses(gp);
  double err_sum = 0.0, score_sum = 0.0;
  size_t err_n = 0, score_n = 0;
  for (size_t i = 0; i < w.requests.size(); ++i) {
    std::unique_ptr<CacheStore> priv;
    if (mode == StoreMode::stateful) priv = std::make_unique<CacheStore>(gp, opt.oracle, mode, opt.energy_target);
    CacheStore& s = priv ? *priv : *shared;
    double c = 0.0;
    size_t h = 0, f = 0;
    for (const auto& [path, op] : execution_steps(plans[i])) {
      FetchResult r = s.fetch(path, op, &misses);
      if (r.hit) {
        c += cost.hit_fixed + cost.apply_per_entry * static_cast<double>(r.applied_entries);
        ++h;
      } else {
        c += cost.prefill_per_token * static_cast<double>(r.prefill_tokens);
        ++f;
      }
      if (opt.measure_fidelity) {
        KVTensor truth = s.stateful(path, op);
        double n = l2(truth);
        err_sum += n > 0 ? frobenius_distance(r.tensor, truth) / n : 0.0;
        ++err_n;
      }
    }
    if (priv) {
      MemoryReport m = priv->memory_footprint();
      rep.memory.bases += m.bases;
      rep.memory.residuals += m.residuals;
      rep.memory.fulls += m.fulls;
    }
    const Workflow& tgt = w.requests[i].target;
    if (!tgt.nodes.empty()) {
      score_sum += edge_f1(plans[i].edges, tgt.edges);
      ++score_n;
    }
    rep.costs.push_back(c);
    rep.hits.push_back(h);
    rep.fallbacks.push_back(f);
    rep.total_cost += c;
  }
  if (shared) rep.memory = shared->memory_footprint();
  rep.mean_cost = rep.costs.empty() ? 0.0 : rep.total_cost / static_cast<double>(rep.costs.size());
  rep.p90_cost = p90_nearest_rank(rep.costs);
  rep.task_score = score_n ? score_sum / static_cast<double>(score_n) : 0.0;
  rep.kv_relative_error = err_n ? err_sum / static_cast<double>(err_n) : 0.0;
  return rep;
}

RunReport run_serving_sim(const WGraph& g, const ModelParams& params, const Workload& w, StoreMode mode,
                          const CostModel& cost, const RunOptions& opt) {
  return run_serving_sim(g, w, model_planner(g, params), mode, cost, opt);
}

std::string run_report_csv_header() {
  return "mode,requests,total_cost,mean_cost,p90_cost,hits,fallbacks,hit_rate,task_score,kv_relative_error,"
         "bases_bytes,residuals_bytes,fulls_bytes,total_bytes\n";
}

std::string run_report_csv_row(const RunReport& r) {
  return to_string(r.mode) + "," + std::to_string(r.costs.size()) + "," + fmt_double(r.total_cost) + "," +
         fmt_double(r.mean_cost) + "," + fmt_double(r.p90_cost) + "," + std::to_string(r.total_hits()) + "," +
         std::to_string(r.total_fallbacks()) + "," + fmt_double(r.hit_rate()) + "," + fmt_double(r.task_score) +
         "," + fmt_double(r.kv_relative_error) + "," + std::to_string(r.memory.bases) + "," +
         std::to_string(r.memory.residuals) + "," + std::to_string(r.memory.fulls) + "," +
         std::to_string(r.memory.total()) + "\n";
}

// ---- batch sweep ----

double SweepResult::slope(StoreMode m) const {
  std::vector<double> x, y;
  for (const auto& r : rows)
    if (r.mode == m) {
      x.push_back(static_cast<double>(r.batch));
      y.push_back(static_cast<double>(r.memory.total()));
    }
  return linear_slope(x, y);
}

uint64_t SweepResult::total(size_t batch, StoreMode m) const {
  for (const auto& r : rows)
    if (r.batch == batch && r.mode == m) return r.memory.total();
  throw ValidationError("no sweep row for batch " + std::to_string(batch));
}

std::string SweepResult::csv() const {
  std::string out = "batch_size,mode,bases_bytes,residuals_bytes,fulls_bytes,total_bytes\n";
  for (const auto& r : rows)
    out += std::to_string(r.batch) + "," + to_string(r.mode) + "," + std::to_string(r.memory.bases) + "," +
           std::to_string(r.memory.residuals) + "," + std::to_string(r.memory.fulls) + "," +
           std::to_string(r.memory.total()) + "\n";
  return out;
}

SweepResult sweep_batch_sizes(const WGraph& g, const Workload& w, const Planner& planner, const RunOptions& opt) {
  if (w.batch_sizes.empty()) throw ValidationError("no batch sizes to sweep");
  for (size_t i = 0; i < w.batch_sizes.size(); ++i)
    if (w.batch_sizes[i] == 0 || (i && w.batch_sizes[i] <= w.batch_sizes[i - 1]))
      throw ValidationError("batch sizes must be positive and ascending");
  const size_t maxb = w.batch_sizes.back();
  if (maxb > w.requests.size()) throw ValidationError("workload has fewer requests than the largest batch");

  auto gp = std::make_shared<const WGraph>(g);
  std::vector<Workflow> plans;
  for (size_t i = 0; i < maxb; ++i) plans.push_back(planner(w.requests[i]));

  // stateful: each in-flight request keeps its own full tensors
  std::vector<MemoryReport> per_request;
  for (const auto& wf : plans) {
    CacheStore priv(gp, opt.oracle, StoreMode::stateful, opt.energy_target);
    for (const auto& [path, op] : execution_steps(wf)) priv.fetch(path, op);
    per_request.push_back(priv.memory_footprint());
  }

  CacheStore stateless(gp, opt.oracle, StoreMode::stateless, opt.energy_target);
  prepare_bases(stateless);
  CacheStore diff(gp, opt.oracle, StoreMode::differential, opt.energy_target);
  prepare_bases(diff);
  TransitionStats st(gp);
  PrunePolicy all{1, 0};

  SweepResult res;
  size_t done = 0;
  for (size_t b : w.batch_sizes) {
    MemoryReport sf;
    for (size_t i = 0; i < b; ++i) {
      sf.bases += per_request[i].bases;
      sf.residuals += per_request[i].residuals;
      sf.fulls += per_request[i].fulls;
    }
    for (; done < b; ++done)
      for (const auto& tr : workflow_traces(plans[done])) st.record_execution(tr);
    apply_plan(diff, plan_materialization(*gp, st, all));
    res.rows.push_back({b, StoreMode::stateful, sf});
    res.rows.push_back({b, StoreMode::differential, diff.memory_footprint()});
    res.rows.push_back({b, StoreMode::stateless, stateless.memory_footprint()});
  }
  return res;
}

// ---- pruning ablation ----

std::string AblationReport::csv() const {
  return "config,bytes,materialized_pairs,hits,fetches,contract_violations,bitwise_identical\n"
         "unpruned," +
         std::to_string(bytes_unpruned) + "," + std::to_string(pairs_unpruned) + "," + std::to_string(hits_unpruned) +
         "," + std::to_string(fetches) + "," + std::to_string(contract_violations) + "," +
         std::to_string(bitwise_identical) + "\npruned," + std::to_string(bytes_pruned) + "," +
         std::to_string(pairs_pruned) + "," + std::to_string(hits_pruned) + "," + std::to_string(fetches) + "," +
         std::to_string(contract_violations) + "," + std::to_string(bitwise_identical) + "\n";
}

AblationReport ablate_pruning(const WGraph& g, const Workload& w, const Planner& planner, uint64_t k,
                              const RunOptions& opt) {
  auto gp = std::make_shared<const WGraph>(g);
  std::vector<Workflow> plans;
  for (const auto& r : w.requests) plans.push_back(planner(r));
  TransitionStats st(gp);
  for (const auto& wf : plans)
    for (const auto& tr : workflow_traces(wf)) st.record_execution(tr);

  CacheStore unpruned(gp, opt.oracle, StoreMode::differential, opt.energy_target);
  CacheStore pruned(gp, opt.oracle, StoreMode::differential, opt.energy_target);
  prepare_bases(unpruned);
  prepare_bases(pruned);
  apply_plan(unpruned, plan_materialization(*gp, st, {1, 0}));
  apply_plan(pruned, plan_materialization(*gp, st, {k, 0}));

  AblationReport rep;
  rep.bytes_unpruned = unpruned.memory_footprint().total();
  rep.bytes_pruned = pruned.memory_footprint().total();
  rep.pairs_unpruned = unpruned.materialized().size();
  rep.pairs_pruned = pruned.materialized().size();
  const double bound = std::sqrt(std::max(0.0, 1.0 - opt.energy_target));
  auto satisfies = [&](const FetchResult& f, const KVTensor& truth, const KVTensor& base) {
    if (!f.hit) return f.tensor == truth;
    return frobenius_distance(f.tensor, truth) <= bound * delta_norm(truth, base) + 1e-6;
  };
  for (const auto& wf : plans)
    for (const auto& [path, op] : execution_steps(wf)) {
      FetchResult a = unpruned.fetch(path, op);
      FetchResult b = pruned.fetch(path, op);
      KVTensor truth = unpruned.stateful(path, op);
      auto base = unpruned.compute_base(op, unpruned.prefix_tokens(path).size());
      ++rep.fetches;
      rep.hits_unpruned += a.hit;
      rep.hits_pruned += b.hit;
      if (!satisfies(a, truth, *base) || !satisfies(b, truth, *base)) ++rep.contract_violations;
      if (a.tensor == b.tensor) ++rep.bitwise_identical;
    }
  return rep;
}

// ---- sparsity ----

std::string SparsityReport::csv() const {
  std::string out =
      "pair,layer,head,half,elements,frac_below_10pct_max,frac_zero,frobenius,frac_kept_95_energy\n";
  for (const auto& r : rows)
    out += r.pair + "," + std::to_string(r.layer) + "," + std::to_string(r.head) + "," + r.half + "," +
           std::to_string(r.elements) + "," + fmt_double(r.frac_below_10pct) + "," + fmt_double(r.frac_zero) + "," +
           fmt_double(r.frobenius) + "," + fmt_double(r.frac_kept_95) + "\n";
  return out;
}

double SparsityReport::mean_below(const std::string& half) const {
  double s = 0;
  size_t n = 0;
  for (const auto& r : rows)
    if (r.half == half) {
      s += r.frac_below_10pct;
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

SparsityReport sparsity_report(const OracleConfig& cfg, const std::vector<SparsityPair>& corpus) {
  Oracle oracle(cfg);
  SparsityReport rep;
  for (const auto& p : corpus) {
    TokenSeq pre = tokenize(p.prefix), op = tokenize(p.op);
    KVTensor full = oracle.op_segment(pre, op);
    KVTensor base = oracle.base_segment(pre.size(), op);
    for (int half = 0; half < 2; ++half) {
      const auto& f = half ? full.values : full.keys;
      const auto& b = half ? base.values : base.keys;
      double mx = 0;
      for (size_t i = 0; i < f.size(); ++i) mx = std::max(mx, std::abs(static_cast<double>(f[i]) - b[i]));
      for (uint32_t l = 0; l < full.layers; ++l)
        for (uint32_t h = 0; h < full.heads; ++h) {
          SparsityRow r;
          r.pair = p.name;
          r.layer = l;
          r.head = h;
          r.half = half ? "value" : "key";
          std::vector<double> mags;
          for (uint32_t t = 0; t < full.tokens; ++t)
            for (uint32_t c = 0; c < full.head_dim; ++c) {
              size_t i = full.index(l, h, t, c);
              mags.push_back(std::abs(static_cast<double>(f[i]) - b[i]));
            }
          r.elements = mags.size();
          size_t below = 0, zero = 0;
          double energy = 0;
          for (double m : mags) {
            below += m < 0.1 * mx || mx == 0.0;
            zero += m == 0.0;
            energy += m * m;
          }
          r.frac_below_10pct = static_cast<double>(below) / static_cast<double>(mags.size());
          r.frac_zero = static_cast<double>(zero) / static_cast<double>(mags.size());
          r.frobenius = std::sqrt(energy);
          std::sort(mags.begin(), mags.end(), std::greater<>());
          size_t kept = 0;
          double acc = 0;
          if (energy > 0)
            while (kept < mags.size() && acc < 0.95 * energy) acc += mags[kept] * mags[kept], ++kept;
          r.frac_kept_95 = static_cast<double>(kept) / static_cast<double>(mags.size());
          rep.rows.push_back(r);
        }
    }
  }
  return rep;
}

std::vector<std::vector<double>> delta_heatmap(const OracleConfig& cfg, const SparsityPair& pair, uint32_t layer,
                                               uint32_t head, bool values) {
  Oracle oracle(cfg);
  TokenSeq pre = tokenize(pair.prefix), op = tokenize(pair.op);
  KVTensor full = oracle.op_segment(pre, op);
  KVTensor base = oracle.base_segment(pre.size(), op);
  if (layer >= full.layers || head >= full.heads) throw ValidationError("heatmap layer/head out of range");
  const auto& f = values ? full.values : full.keys;
  const auto& b = values ? base.values : base.keys;
  std::vector<std::vector<double>> grid(full.tokens, std::vector<double>(full.head_dim));
  for (uint32_t t = 0; t < full.tokens; ++t)
    for (uint32_t c = 0; c < full.head_dim; ++c) {
      size_t i = full.index(layer, head, t, c);
      grid[t][c] = std::abs(static_cast<double>(f[i]) - b[i]);
    }
  return grid;
}

// ---- synthetic serving corpus ----

namespace {

const std::vector<std::string> kPool = {
    "review",  "source",   "measure", "select",  "balance", "context", "detail",   "outline", "signal",  "resolve",
    "compose", "evidence", "table",   "entry",   "refine",  "extract", "boundary", "metric",  "quantity", "assume",
    "derive",  "confirm",  "rewrite", "index",   "sketch",  "factor",  "ratio",    "sample",  "answer",  "parse",
    "filter",  "merge",    "rank",    "align",   "bound",   "search",  "verify",   "record",  "summary", "compare",
    "state",   "constant", "output",  "input",   "detect",  "label",   "order",    "group",   "scale",   "adjust"};

}  // namespace

ServingCorpus generate_serving_corpus(const ServingCorpusConfig& cfg) {
  if (cfg.layers < 2 || cfg.ops_per_layer < 1 || cfg.op_words < 1 || cfg.n_workflows < 1)
    throw ValidationError("invalid serving corpus configuration");
  if (!(cfg.overlap >= 0.0 && cfg.overlap <= 1.0)) throw ValidationError("overlap must lie in [0, 1]");
  Rng rng(mix64(cfg.seed, 0x73657276));
  std::vector<std::vector<Operation>> ops(cfg.layers);
  char buf[48];
  for (size_t l = 0; l < cfg.layers; ++l)
    for (size_t j = 0; j < cfg.ops_per_layer; ++j) {
      Operation op;
      std::snprintf(buf, sizeof buf, "L%zu_O%zu", l, j);
      op.id = buf;
      std::snprintf(buf, sizeof buf, "stage%zu task%zu", l, j);
      std::vector<std::string> words{"stage" + std::to_string(l), "variant" + std::to_string(j)};
      while (words.size() < cfg.op_words) words.push_back(kPool[rng.below(kPool.size())]);
      words.resize(cfg.op_words);
      op.instruction = join(words, " ");
      op.name = buf;
      op.patterns_must = {"stage" + std::to_string(l)};
      ops[l].push_back(op);
    }

  ServingCorpus c;
  std::set<std::vector<size_t>> seen;
  const size_t core = std::min<size_t>(2, cfg.ops_per_layer);
  size_t attempts = 0;
  while (c.workflows.size() < cfg.n_workflows) {
    if (++attempts > 100 * cfg.n_workflows) throw ValidationError("cannot draw enough distinct workflows");
    std::vector<size_t> pick;
    for (size_t l = 0; l < cfg.layers; ++l)
      pick.push_back(rng.uniform() < cfg.overlap ? rng.below(core) : rng.below(cfg.ops_per_layer));
    if (!seen.insert(pick).second) continue;
    Workflow wf;
    std::snprintf(buf, sizeof buf, "WF_SRV_%03zu", c.workflows.size());
    wf.id = buf;
    wf.name = "serving workflow " + std::to_string(c.workflows.size());
    wf.description = "request over";
    for (size_t l = 0; l < cfg.layers; ++l) {
      const Operation& op = ops[l][pick[l]];
      wf.nodes.push_back(op.id);
      wf.operations.emplace(op.id, op);
      wf.description += " " + op.id;
      if (l) wf.edges.emplace_back(ops[l - 1][pick[l - 1]].id, op.id);
    }
    c.workflows.push_back(std::move(wf));
  }
  c.graph = merge_into_wgraph(c.workflows);
  std::vector<TrainSample> as_samples;
  for (const auto& wf : c.workflows) {
    c.targets.push_back(canonicalize(wf, c.graph));
    as_samples.push_back({wf.description, c.targets.back()});
  }
  c.reuse = operation_reuse(as_samples);
  return c;
}

Workload make_workload(const std::vector<Workflow>& targets, size_t n_requests, double zipf_s, uint64_t seed) {
  if (targets.empty()) throw ValidationError("make_workload: no targets");
  Workload w;
  w.seed = seed;
  std::vector<double> cdf;
  if (zipf_s > 0) {
    double s = 0;
    for (size_t r = 0; r < targets.size(); ++r) {
      s += 1.0 / std::pow(static_cast<double>(r + 1), zipf_s);
      cdf.push_back(s);
    }
    for (double& x : cdf) x /= s;
  }
  Rng rng(mix64(seed, 0x776b6c64));
  char buf[32];
  for (size_t i = 0; i < n_requests; ++i) {
    size_t k = i % targets.size();
    if (zipf_s > 0) {
      double u = rng.uniform();
      k = static_cast<size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      k = std::min(k, targets.size() - 1);
    }
    std::snprintf(buf, sizeof buf, "req%05zu", i);
    w.requests.push_back({buf, targets[k].description.empty() ? targets[k].id : targets[k].description, targets[k]});
  }
  return w;
}

Workload make_workload(const std::vector<TrainSample>& samples, size_t n_requests, uint64_t seed) {
  if (samples.empty()) throw ValidationError("make_workload: no samples");
  Workload w;
  w.seed = seed;
  char buf[32];
  for (size_t i = 0; i < n_requests; ++i) {
    std::snprintf(buf, sizeof buf, "req%05zu", i);
    const auto& s = samples[i % samples.size()];
    w.requests.push_back({buf, s.task_text, s.target});
  }
  return w;
}

std::vector<SparsityPair> default_sparsity_corpus(const ServingCorpus& c, size_t n_pairs) {
  std::vector<SparsityPair> out;
  std::set<PairKey> seen;
  for (const auto& wf : c.targets)
    for (const auto& [path, op] : execution_steps(wf)) {
      if (path.empty() || !seen.insert({path, op}).second) continue;
      std::vector<std::string> texts;
      for (const auto& p : path) texts.push_back(c.graph.op(p).instruction);
      out.push_back({"pair" + std::to_string(out.size()), join(texts, " "), c.graph.op(op).instruction});
      if (out.size() >= n_pairs) return out;
    }
  return out;
}

}  // namespace opflow
