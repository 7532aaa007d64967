// SPDX-License-Identifier: Apache-2.0
#include "opflow/construct.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "opflow/util.hpp"

namespace opflow {

std::vector<double> build_labels(const Workflow& target, const WGraph& g) {
  std::set<Edge> pos;
  for (const auto& e : target.edges) {
    if (!g.has_edge(e.first, e.second))
      throw ValidationError("target edge (" + e.first + ", " + e.second + ") is not in the wGraph");
    pos.insert(e);
  }
  std::vector<double> y;
  y.reserve(g.edges.size());
  for (const auto& e : g.edges) y.push_back(pos.count(e) ? 1.0 : 0.0);
  return y;
}

// ---- planted corpus ----

namespace {

const std::vector<std::string> kKeywords = {
    "ledger",  "invoice", "tariff",  "voucher",  "receipt", "audit",   "payroll", "budget",  "forecast", "margin",
    "quota",   "rebate",  "glacier", "harbor",   "canyon",  "meadow",  "summit",  "lagoon",  "tundra",   "estuary",
    "plateau", "savanna", "fjord",   "quartz",   "cobalt",  "basalt",  "granite", "marble",  "obsidian", "garnet",
    "topaz",   "jasper",  "onyx",    "amber",    "opal",    "falcon",  "heron",   "osprey",  "condor",   "kestrel",
    "pelican", "sparrow", "raven",   "egret",    "puffin",  "magpie",  "plover",  "bittern"};

const std::vector<std::string> kThemes = {"finance", "terrain", "mineral", "wildlife", "logistics", "clinical"};

const std::vector<std::string> kNouns = {"column",  "segment", "interval", "category", "threshold", "sample",
                                         "channel", "record",  "cohort",   "window",   "variant",   "bucket",
                                         "vector",  "profile", "series",   "region",   "batch",     "period"};

const std::vector<std::string> kFiller = {"please", "handle",  "this",  "request", "carefully", "today",
                                          "using",  "the",     "right", "steps",   "quickly",   "now"};

const std::vector<std::string> kTemplates = {
    "Collect every {kw} record from the {theme} request and list the {n1} fields that the later steps will need.",
    "Normalize the {kw} values so that each {n1} uses one unit and one {n2} format before any comparison.",
    "Compare the {kw} entries against the {theme} reference table and flag each {n1} that falls outside tolerance.",
    "Aggregate the flagged {kw} items into a compact {n1} summary grouped by {n2} and ordered by impact.",
    "Estimate the missing {kw} quantities from the surrounding {n1} data and state the assumption behind each {n2}.",
    "Draft the {kw} section of the {theme} answer, citing the {n1} evidence and the {n2} that supports it."};

const std::vector<std::string> kTail = {
    "Verify that the final result is consistent with every constraint stated in the task and correct any step that "
    "fails the check.",
    "Write the final answer in a short report that states the result, the key steps, and the remaining "
    "uncertainty."};

std::string keyword(size_t i) {
  if (i < kKeywords.size()) return kKeywords[i];
  static const char* syl[] = {"ka", "ro", "mi", "tu", "se", "no", "vi", "la", "po", "ze", "qu", "fe"};
  std::string w;
  size_t x = i;
  do {
    w += syl[x % 12];
    x /= 12;
  } while (x);
  return w + "ix";
}

std::string fill(std::string t, const std::map<std::string, std::string>& vars) {
  for (const auto& [k, v] : vars) {
    std::string key = "{" + k + "}";
    for (size_t p; (p = t.find(key)) != std::string::npos;) t.replace(p, key.size(), v);
  }
  return t;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(int vocab_size, int n_tasks, uint64_t seed) {
  if (vocab_size < 4) throw ValidationError("vocab_size must be at least 4");
  if (n_tasks < 1) throw ValidationError("n_tasks must be at least 1");
  const int shared = vocab_size >= 8 ? 2 : 1;
  const int n_fam = std::min(3, vocab_size - shared);
  const int body = vocab_size - shared;

  SyntheticCorpus c;
  std::vector<std::vector<std::string>> fam_keywords(n_fam);
  size_t kw_index = 0;
  for (int f = 0; f < n_fam; ++f) {
    int len = body / n_fam + (f < body % n_fam ? 1 : 0);
    const std::string theme = kThemes[f % kThemes.size()];
    Workflow wf;
    char buf[32];
    std::snprintf(buf, sizeof buf, "WF_SYN_%02d", f);
    wf.id = buf;
    wf.name = "Synthetic " + theme + " pipeline";
    wf.description = "Planted " + theme + " workflow: a chain of " + std::to_string(len) +
                     " steps followed by the shared verification and report steps.";
    wf.patterns_must = {theme};
    std::vector<std::string> chain;
    for (int k = 0; k < len; ++k, ++kw_index) {
      std::snprintf(buf, sizeof buf, "F%d_S%d", f, k + 1);
      Operation op;
      op.id = buf;
      std::string kw = keyword(kw_index);
      op.name = kw + " step";
      op.instruction = fill(kTemplates[k % kTemplates.size()],
                            {{"kw", kw},
                             {"theme", theme},
                             {"n1", kNouns[kw_index % kNouns.size()]},
                             {"n2", kNouns[(kw_index * 7 + 3) % kNouns.size()]}});
      op.patterns_must = {kw, theme};
      op.patterns_should = {kNouns[kw_index % kNouns.size()]};
      fam_keywords[f].push_back(kw);
      wf.patterns_should.push_back(kw);
      chain.push_back(op.id);
      wf.operations.emplace(op.id, op);
    }
    for (int s = 0; s < shared; ++s) {
      std::snprintf(buf, sizeof buf, "F%d_T%d", f, s + 1);
      Operation op;
      op.id = buf;
      op.name = s == 0 ? "verify" : "report";
      op.instruction = kTail[s];
      op.patterns_must = {s == 0 ? "verify" : "report"};
      op.patterns_should = {s == 0 ? "check" : "answer"};
      chain.push_back(op.id);
      wf.operations.emplace(op.id, op);
    }
    wf.nodes = chain;
    for (size_t k = 0; k + 1 < chain.size(); ++k) wf.edges.emplace_back(chain[k], chain[k + 1]);
    c.workflows.push_back(std::move(wf));
  }
  c.graph = merge_into_wgraph(c.workflows);

  std::vector<Workflow> targets;
  for (const auto& wf : c.workflows) targets.push_back(canonicalize(wf, c.graph));

  Rng rng(seed);
  for (int t = 0; t < n_tasks; ++t) {
    size_t f = rng.below(n_fam);
    auto words = fam_keywords[f];
    rng.shuffle(words);
    size_t lo = words.size() > 2 ? words.size() - 2 : 1;
    size_t keep = lo + rng.below(words.size() - lo + 1);
    words.resize(keep);
    auto filler = kFiller;
    rng.shuffle(filler);
    words.push_back(filler[0]);
    words.push_back(filler[1]);
    rng.shuffle(words);
    c.samples.push_back({join(words, " "), targets[f]});
    c.sample_workflow.push_back(c.workflows[f].id);
  }
  return c;
}

double operation_reuse(const std::vector<TrainSample>& samples) {
  std::map<std::string, size_t> tasks_with;
  for (const auto& s : samples)
    for (const auto& n : std::set<std::string>(s.target.nodes.begin(), s.target.nodes.end())) ++tasks_with[n];
  size_t occ = 0, reused = 0;
  for (const auto& s : samples)
    for (const auto& n : std::set<std::string>(s.target.nodes.begin(), s.target.nodes.end())) {
      ++occ;
      if (tasks_with[n] > 1) ++reused;
    }
  return occ ? static_cast<double>(reused) / static_cast<double>(occ) : 0.0;
}

Workflow canonicalize(const Workflow& wf, const WGraph& g) {
  std::map<std::string, std::string> raw_to;
  for (const auto& [id, srcs] : g.node_provenance)
    for (const auto& s : srcs) {
      auto slash = s.find('/');
      if (s.compare(0, slash, wf.id) == 0 && slash == wf.id.size()) raw_to[s.substr(slash + 1)] = id;
    }
  auto map_id = [&](const std::string& raw) {
    auto it = raw_to.find(raw);
    if (it != raw_to.end()) return it->second;
    if (g.has_node(raw)) return raw;
    throw ValidationError("workflow " + wf.id + ": operation '" + raw + "' not in the wGraph");
  };
  Workflow out;
  out.id = wf.id;
  out.name = wf.name;
  out.description = wf.description;
  out.patterns_must = wf.patterns_must;
  out.patterns_should = wf.patterns_should;
  for (const auto& n : wf.nodes) {
    std::string id = map_id(n);
    out.nodes.push_back(id);
    out.operations.emplace(id, g.op(id));
  }
  for (const auto& [a, b] : wf.edges) {
    Edge e{map_id(a), map_id(b)};
    if (!g.has_edge(e.first, e.second))
      throw ValidationError("workflow " + wf.id + ": edge (" + a + ", " + b + ") not in the wGraph");
    out.edges.push_back(e);
  }
  return out;
}

// ---- training ----

namespace {

struct Prepared {
  Matrix op_rows;
  Matrix A;
  std::vector<std::pair<size_t, size_t>> edge_idx;
};

Prepared prepare(const WGraph& g, const Embedder& e) {
  Prepared p;
  p.op_rows = operation_features(e, g);
  TaskGraph tg = condition_on_task(g, "");
  p.A = assemble_features(p.op_rows, std::vector<double>(e.dim(), 0.0), tg).A;
  std::map<std::string, size_t> idx;
  size_t i = 0;
  for (const auto& [id, _] : g.nodes) idx[id] = i++;
  for (const auto& [a, b] : g.edges) p.edge_idx.emplace_back(idx.at(a), idx.at(b));
  return p;
}

Instance make_instance(const Prepared& pr, const std::vector<double>& task_row) {
  Instance inst;
  const size_t n = pr.op_rows.rows() + 1, D = task_row.size();
  inst.X = Matrix(n, D);
  std::copy(pr.op_rows.data(), pr.op_rows.data() + pr.op_rows.size(), inst.X.data());
  std::copy(task_row.begin(), task_row.end(), inst.X.row(n - 1));
  inst.A = pr.A;
  inst.edges = pr.edge_idx;
  return inst;
}

}  // namespace

Instance training_instance(const WGraph& g, const Embedder& e, const TrainSample& s) {
  Instance inst = make_instance(prepare(g, e), e.embed_text(s.task_text));
  inst.labels = build_labels(s.target, g);
  return inst;
}

TrainResult train(const WGraph& g, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                  const Embedder& embedder) {
  if (samples.empty()) throw ValidationError("train: no samples");
  if (cfg.epochs < 0 || cfg.batch_size <= 0 || cfg.lr < 0 || cfg.weight_decay < 0 || !(cfg.tau > 0))
    throw ValidationError("train: invalid configuration");
  if (g.nodes.empty()) throw ValidationError("train: empty wGraph");

  Prepared pr = prepare(g, embedder);
  std::vector<std::vector<double>> labels, task_rows;
  for (size_t k = 0; k < samples.size(); ++k) {
    try {
      labels.push_back(build_labels(samples[k].target, g));
    } catch (const ValidationError& e) {
      throw ValidationError("sample " + std::to_string(k) + ": " + e.what());
    }
    task_rows.push_back(embedder.embed_text(samples[k].task_text));
  }

  TrainResult r{ModelParams::create(embedder.dim(), cfg.hidden, cfg.mlp_hidden, cfg.seed, cfg.init), {}};
  OptimState st = OptimState::create(r.params, {cfg.lr, cfg.weight_decay});
  Rng rng(mix64(cfg.seed, 0x7472616e));

  std::vector<size_t> order(samples.size());
  for (size_t k = 0; k < order.size(); ++k) order[k] = k;
  size_t batch_index = 0;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    rng.shuffle(order);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<Instance> batch;
      for (size_t k = start; k < end; ++k) {
        Instance inst = make_instance(pr, task_rows[order[k]]);
        inst.labels = labels[order[k]];
        if (cfg.gumbel) {
          inst.noise.resize(inst.edges.size());
          for (double& gn : inst.noise) gn = rng.gumbel();
        }
        batch.push_back(std::move(inst));
      }
      ModelParams grads = r.params.zeros_like();
      double loss = batch_loss(r.params, batch, cfg.tau, &grads);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss at batch " + std::to_string(batch_index));
      adamw_step(r.params, grads, st);
      total += loss * static_cast<double>(end - start);
    }
    r.epoch_loss.push_back(total / static_cast<double>(samples.size()));
  }
  return r;
}

TrainResult train(const WGraph& g, const std::vector<TrainSample>& samples, const TrainConfig& cfg) {
  return train(g, samples, cfg, Embedder());
}

std::vector<EdgeScore> score_edges(const WGraph& g, const std::string& task, const ModelParams& p,
                                   const Embedder& embedder) {
  if (embedder.dim() != p.D) throw ValidationError("embedder dimension does not match the checkpoint");
  TaskGraph tg = condition_on_task(g, task);
  GraphFeatures f = assemble_features(embedder, tg);
  Matrix H = gcn_forward(f.X, f.A, p);
  std::map<std::string, size_t> idx;
  size_t i = 0;
  for (const auto& [id, _] : g.nodes) idx[id] = i++;
  const double* ht = H.row(H.rows() - 1);
  std::vector<EdgeScore> out;
  for (const auto& e : g.edges) {
    EdgeScore s;
    s.edge = e;
    s.logit = mlp_logit(H.row(idx.at(e.first)), H.row(idx.at(e.second)), ht, p);
    s.score = sigmoid(s.logit);
    out.push_back(s);
  }
  return out;
}

// ---- decoding ----

std::vector<std::string> entry_operations(const WGraph& g) {
  std::set<std::string> has_in;
  for (const auto& e : g.edges) has_in.insert(e.second);
  std::vector<std::string> out;
  for (const auto& [id, _] : g.nodes)
    if (!has_in.count(id)) out.push_back(id);
  return out;
}

Workflow instantiate_workflow(const WGraph& g, const std::map<Edge, double>& scores, const DecodeConfig& cfg) {
  if (g.nodes.empty()) throw ValidationError("instantiate_workflow: empty wGraph");
  if (!(cfg.theta_min > 0.0 && cfg.theta_min < 1.0)) throw ValidationError("theta_min must lie in (0, 1)");
  if (scores.size() != g.edges.size()) throw ValidationError("scores must cover exactly the wGraph edges");
  for (const auto& [e, s] : scores)
    if (!g.edges.count(e)) throw ValidationError("score for unknown edge (" + e.first + ", " + e.second + ")");
  const size_t max_nodes = cfg.max_nodes ? cfg.max_nodes : g.nodes.size();

  std::set<std::string> entries;
  for (const auto& id : entry_operations(g)) entries.insert(id);

  Workflow wf;
  wf.id = "generated";
  wf.name = "generated workflow";
  std::set<std::string> in_wf;
  std::set<Edge> chosen;
  for (;;) {
    const Edge* best = nullptr;
    double best_s = 0.0;
    // std::map iterates edges in (src, dst) order, so strict > keeps the
    // lexicographically smallest among equal scores
    for (const auto& [e, s] : scores) {
      if (s < cfg.theta_min || chosen.count(e)) continue;
      bool src_ok = in_wf.empty() ? entries.count(e.first) != 0 : in_wf.count(e.first) != 0;
      if (!src_ok) continue;
      size_t added = (in_wf.count(e.first) ? 0 : 1) + (in_wf.count(e.second) ? 0 : 1);
      if (in_wf.size() + added > max_nodes) continue;
      if (!best || s > best_s) {
        best = &e;
        best_s = s;
      }
    }
    if (!best) break;
    for (const auto* id : {&best->first, &best->second})
      if (in_wf.insert(*id).second) {
        wf.nodes.push_back(*id);
        wf.operations.emplace(*id, g.op(*id));
      }
    chosen.insert(*best);
    wf.edges.push_back(*best);
  }
  return wf;
}

Workflow generate(const WGraph& g, const std::string& task, const ModelParams& p, const DecodeConfig& cfg,
                  const Embedder& embedder) {
  std::map<Edge, double> scores;
  for (const auto& s : score_edges(g, task, p, embedder)) scores[s.edge] = s.score;
  return instantiate_workflow(g, scores, cfg);
}

Workflow generate(const WGraph& g, const std::string& task, const ModelParams& p, const DecodeConfig& cfg) {
  return generate(g, task, p, cfg, Embedder(p.D));
}

double edge_f1(const std::vector<Edge>& predicted, const std::vector<Edge>& target) {
  std::set<Edge> a(predicted.begin(), predicted.end()), b(target.begin(), target.end());
  if (a.empty() && b.empty()) return 1.0;
  size_t tp = 0;
  for (const auto& e : a) tp += b.count(e);
  return 2.0 * static_cast<double>(tp) / static_cast<double>(a.size() + b.size());
}

bool is_valid_subworkflow(const Workflow& wf, const WGraph& g, std::string* why) {
  auto bad = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  std::set<std::string> nodes(wf.nodes.begin(), wf.nodes.end());
  if (nodes.size() != wf.nodes.size()) return bad("duplicate node");
  for (const auto& n : nodes)
    if (!g.has_node(n)) return bad("unknown node " + n);
  std::set<Edge> es;
  for (const auto& e : wf.edges) {
    if (!g.has_edge(e.first, e.second)) return bad("edge outside E_op: " + e.first + "->" + e.second);
    if (!nodes.count(e.first) || !nodes.count(e.second)) return bad("edge endpoint not in nodes");
    if (!es.insert(e).second) return bad("duplicate edge");
  }
  if (!validate_dag(wf.nodes, wf.edges).ok) return bad("cycle");
  if (nodes.empty()) return true;
  // weakly connected and every node reachable from a root of the workflow
  std::map<std::string, std::vector<std::string>> succ;
  std::map<std::string, int> indeg;
  for (const auto& e : wf.edges) {
    succ[e.first].push_back(e.second);
    ++indeg[e.second];
  }
  std::vector<std::string> st;
  for (const auto& n : nodes)
    if (!indeg[n]) st.push_back(n);
  if (st.size() != 1) return bad("workflow has " + std::to_string(st.size()) + " roots");
  std::set<std::string> seen(st.begin(), st.end());
  while (!st.empty()) {
    auto u = st.back();
    st.pop_back();
    for (const auto& v : succ[u])
      if (seen.insert(v).second) st.push_back(v);
  }
  if (seen.size() != nodes.size()) return bad("unreachable node");
  return true;
}

// ---- files ----

void save_samples(const std::string& path, const std::vector<TrainSample>& samples,
                  const std::vector<std::string>& workflow_ids) {
  if (samples.size() != workflow_ids.size()) throw ValidationError("save_samples: size mismatch");
  std::string out;
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto& t = samples[k].task_text;
    if (t.find_first_of("\t\n") != std::string::npos) throw ValidationError("task text contains tab or newline");
    out += t + "\t" + workflow_ids[k] + "\n";
  }
  write_file(path, out);
}

std::vector<TrainSample> load_samples(const std::string& path, const std::vector<Workflow>& repo, const WGraph& g) {
  std::map<std::string, Workflow> targets;
  for (const auto& wf : repo) targets.emplace(wf.id, canonicalize(wf, g));
  std::istringstream in(read_file(path));
  std::vector<TrainSample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw ValidationError(path + ":" + std::to_string(lineno) + ": expected task<TAB>workflow_id");
    auto it = targets.find(cols[1]);
    if (it == targets.end())
      throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown workflow '" + cols[1] + "'");
    out.push_back({cols[0], it->second});
  }
  return out;
}

void save_loss_csv(const std::string& path, const std::vector<double>& epoch_loss) {
  std::string out = "epoch,mean_loss\n";
  for (size_t k = 0; k < epoch_loss.size(); ++k) out += std::to_string(k) + "," + fmt_double(epoch_loss[k]) + "\n";
  write_file(path, out);
}

}  // namespace opflow
