// SPDX-License-Identifier: Apache-2.0
#include "opflow/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "opflow/construct.hpp"
#include "opflow/harness.hpp"
#include "opflow/kvstore.hpp"
#include "opflow/plot.hpp"
#include "opflow/pruning.hpp"
#include "opflow/util.hpp"
#include "opflow/wgraph.hpp"

namespace fs = std::filesystem;

namespace opflow {

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string compact_number(double x) {
  if (x != 0.0 && std::abs(x) < 0.1) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::scientific);
    std::string s(buf, r.ptr);
    auto e = s.find('e');
    std::string mant = s.substr(0, e), ex = s.substr(e + 1);
    bool neg = ex[0] == '-';
    ex = ex.substr(ex[0] == '-' || ex[0] == '+' ? 1 : 0);
    ex.erase(0, std::min(ex.find_first_not_of('0'), ex.size() - 1));
    return mant + "e" + (neg ? "-" : "") + ex;
  }
  return fmt_double(x);
}

namespace {

struct Settings {
  uint64_t seed = 42;
  std::string config, out = "out";
  std::string workflows, samples, graph, checkpoint, store, trace_log, tasks, task, embeddings;
  // synth
  int vocab = 20, n_tasks = 600, holdout = 100;
  std::string kind = "planted";
  // serving corpus / bench
  size_t n_workflows = 50, layers = 6, ops_per_layer = 6, op_words = 40, requests = 50, zipf_requests = 200;
  double overlap = 0.5, zipf = 1.1;
  // train
  int epochs = 20, batch = 64, hidden = 256, mlp_hidden = 128, embed_dim = 384;
  double lr = 1e-4, wd = 1e-2, tau = 1.0;
  std::string init = "scaled_relu";
  bool no_gumbel = false;
  // decode
  double theta_min = 0.5;
  size_t max_nodes = 0;
  // kv
  std::string mode = "differential";
  double energy_target = 0.95, lambda = 0.8;
  uint64_t prune_k = 2;
  uint32_t oracle_layers = 4, oracle_heads = 4, head_dim = 16;
  size_t pairs = 8;
  bool plot = false;
};

OracleConfig oracle_config(const Settings& s) {
  OracleConfig c;
  c.layers = s.oracle_layers;
  c.heads = s.oracle_heads;
  c.head_dim = s.head_dim;
  c.lambda = s.lambda;
  c.seed = s.seed;
  c.validate();
  return c;
}

void need(const std::string& value, const std::string& flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
}

void need_path(const std::string& value, const std::string& flag) {
  need(value, flag);
  if (!fs::exists(value)) throw ValidationError(flag + ": no such file or directory: " + value);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

std::string in_out(const Settings& s, const std::string& name) {
  ensure_dir(s.out);
  return (fs::path(s.out) / name).string();
}

WGraph load_graph(const Settings& s) {
  if (!s.graph.empty()) {
    need_path(s.graph, "--graph");
    try {
      return parse_wgraph(read_file(s.graph));
    } catch (const ValidationError& e) {
      throw ValidationError(s.graph + ": " + e.what());
    }
  }
  need_path(s.workflows, "--graph or --workflows");
  return merge_into_wgraph(load_workflow_dir(s.workflows));
}

Embedder make_embedder(const Settings& s, int dim) {
  if (s.embeddings.empty()) return Embedder(dim);
  need_path(s.embeddings, "--embeddings");
  return Embedder::from_table(load_vector_table(s.embeddings, dim), dim);
}

ModelParams load_params(const Settings& s) {
  need_path(s.checkpoint, "--checkpoint");
  try {
    return load_checkpoint(s.checkpoint);
  } catch (const std::runtime_error& e) {
    throw ValidationError(s.checkpoint + ": " + e.what());
  }
}

// ---- commands ----

int cmd_synth(const Settings& s, std::ostream& out, std::ostream& err) {
  ensure_dir(s.out);
  auto wf_dir = fs::path(s.out) / "workflows";
  ensure_dir(wf_dir.string());
  if (s.kind == "planted") {
    if (s.holdout < 0 || s.holdout >= s.n_tasks) throw ValidationError("--holdout must lie in [0, --tasks)");
    SyntheticCorpus c = generate_synthetic_corpus(s.vocab, s.n_tasks, s.seed);
    for (const auto& wf : c.workflows) write_file((wf_dir / (wf.id + ".workflow.json")).string(), serialize_workflow(wf));
    size_t n_train = c.samples.size() - static_cast<size_t>(s.holdout);
    std::vector<TrainSample> tr(c.samples.begin(), c.samples.begin() + n_train), te(c.samples.begin() + n_train,
                                                                                     c.samples.end());
    std::vector<std::string> tr_id(c.sample_workflow.begin(), c.sample_workflow.begin() + n_train),
        te_id(c.sample_workflow.begin() + n_train, c.sample_workflow.end());
    save_samples((fs::path(s.out) / "train.tsv").string(), tr, tr_id);
    save_samples((fs::path(s.out) / "heldout.tsv").string(), te, te_id);
    out << c.workflows.size() << " workflows, " << tr.size() << " train, " << te.size() << " held-out samples\n";
  } else if (s.kind == "serving") {
    ServingCorpusConfig cfg;
    cfg.n_workflows = s.n_workflows;
    cfg.layers = s.layers;
    cfg.ops_per_layer = s.ops_per_layer;
    cfg.op_words = s.op_words;
    cfg.overlap = s.overlap;
    cfg.seed = s.seed;
    ServingCorpus c = generate_serving_corpus(cfg);
    std::vector<TrainSample> req;
    std::vector<std::string> ids;
    for (size_t i = 0; i < c.workflows.size(); ++i) {
      write_file((wf_dir / (c.workflows[i].id + ".workflow.json")).string(), serialize_workflow(c.workflows[i]));
      req.push_back({c.workflows[i].description, c.targets[i]});
      ids.push_back(c.workflows[i].id);
    }
    save_samples((fs::path(s.out) / "requests.tsv").string(), req, ids);
    out << c.workflows.size() << " workflows, operation reuse " << fmt_double(c.reuse) << "\n";
  } else {
    throw CLI::ValidationError("--kind", "expected planted or serving");
  }
  err << "wrote " << s.out << "\n";
  return 0;
}

int cmd_build_graph(const Settings& s, std::ostream& out, std::ostream& err) {
  need_path(s.workflows, "--workflows");
  auto wfs = load_workflow_dir(s.workflows);
  MergeStats st;
  WGraph g = merge_into_wgraph(wfs, {}, &st);
  out << g.nodes.size() << " nodes, " << g.edges.size() << " edges, " << st.merged() << " merged\n";
  if (!s.graph.empty()) {
    auto parent = fs::path(s.graph).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    write_file(s.graph, serialize_wgraph(g));
    err << "wrote " << s.graph << "\n";
  }
  return 0;
}

InitScheme parse_init(const std::string& s) {
  if (s == "scaled_relu") return InitScheme::scaled_relu;
  if (s == "glorot") return InitScheme::glorot;
  if (s == "zeros") return InitScheme::zeros;
  throw CLI::ValidationError("--init", "expected scaled_relu, glorot or zeros");
}

int cmd_train(const Settings& s, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  cfg.epochs = s.epochs;
  cfg.batch_size = s.batch;
  cfg.lr = s.lr;
  cfg.weight_decay = s.wd;
  cfg.tau = s.tau;
  cfg.seed = s.seed;
  cfg.hidden = s.hidden;
  cfg.mlp_hidden = s.mlp_hidden;
  cfg.init = parse_init(s.init);
  cfg.gumbel = !s.no_gumbel;
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ValidationError("--epochs must be >= 0 and --batch >= 1");
  out << "epochs=" << cfg.epochs << " batch=" << cfg.batch_size << " lr=" << compact_number(cfg.lr)
      << " wd=" << compact_number(cfg.weight_decay) << "\n";
  WGraph g = load_graph(s);
  need_path(s.workflows, "--workflows");
  need_path(s.samples, "--samples");
  auto samples = load_samples(s.samples, load_workflow_dir(s.workflows), g);
  Embedder emb = make_embedder(s, s.embed_dim);
  err << "training on " << samples.size() << " samples over " << g.nodes.size() << " operations\n";
  TrainResult r = train(g, samples, cfg, emb);
  for (size_t e = 0; e < r.epoch_loss.size(); ++e) err << "epoch " << e << " loss " << fmt_double(r.epoch_loss[e]) << "\n";
  save_checkpoint(in_out(s, "checkpoint.bin"), r.params);
  save_loss_csv(in_out(s, "loss.csv"), r.epoch_loss);
  if (!r.epoch_loss.empty())
    out << "initial_loss=" << fmt_double(r.epoch_loss.front()) << " final_loss=" << fmt_double(r.epoch_loss.back())
        << "\n";
  return 0;
}

DecodeConfig decode_config(const Settings& s) {
  DecodeConfig d;
  d.max_nodes = s.max_nodes;
  d.theta_min = s.theta_min;
  return d;
}

int cmd_generate(const Settings& s, std::ostream& out, std::ostream& err) {
  need(s.task, "--task");
  WGraph g = load_graph(s);
  ModelParams p = load_params(s);
  Embedder emb = make_embedder(s, p.D);
  Workflow wf = generate(g, s.task, p, decode_config(s), emb);
  out << serialize_workflow(wf);
  if (!s.trace_log.empty()) {
    std::vector<TraceRecord> recs;
    for (const auto& tr : workflow_traces(wf)) recs.push_back({"generate", tr});
    append_trace_log(s.trace_log, recs);
  }
  err << wf.nodes.size() << " operations, " << wf.edges.size() << " edges\n";
  return 0;
}

int cmd_simulate(const Settings& s, std::ostream& out, std::ostream& err) {
  WGraph g = load_graph(s);
  ModelParams p = load_params(s);
  need_path(s.tasks, "--tasks");
  Workload w;
  if (!s.workflows.empty()) {
    for (const auto& smp : load_samples(s.tasks, load_workflow_dir(s.workflows), g))
      w.requests.push_back({"req" + std::to_string(w.requests.size()), smp.task_text, smp.target});
  } else {
    std::istringstream in(read_file(s.tasks));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      w.requests.push_back({"req" + std::to_string(w.requests.size()), split(line, '\t')[0], {}});
    }
  }
  RunOptions opt;
  opt.oracle = oracle_config(s);
  opt.energy_target = s.energy_target;
  opt.policy.min_count = s.prune_k;
  Planner planner = model_planner(g, p, decode_config(s));
  RunReport r = run_serving_sim(g, w, planner, parse_mode(s.mode), CostModel{}, opt);
  std::string csv = run_report_csv_header() + run_report_csv_row(r);
  write_file(in_out(s, "run_" + s.mode + ".csv"), csv);
  out << csv;
  if (!s.trace_log.empty()) {
    std::vector<TraceRecord> recs;
    for (const auto& req : w.requests)
      for (const auto& tr : workflow_traces(planner(req))) recs.push_back({req.task_id, tr});
    append_trace_log(s.trace_log, recs);
    err << "appended " << recs.size() << " traces to " << s.trace_log << "\n";
  }
  return 0;
}

std::vector<std::vector<std::string>> load_traces(const Settings& s) {
  need_path(s.trace_log, "--trace-log");
  std::vector<std::vector<std::string>> out;
  for (const auto& r : load_trace_log(s.trace_log)) out.push_back(r.ops);
  return out;
}

std::string grid_csv(const std::vector<std::vector<double>>& grid) {
  std::string out = "token";
  size_t cols = grid.empty() ? 0 : grid[0].size();
  for (size_t c = 0; c < cols; ++c) out += ",d" + std::to_string(c);
  out += "\n";
  for (size_t t = 0; t < grid.size(); ++t) {
    out += std::to_string(t);
    for (double v : grid[t]) out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

int cmd_kv_analyze(const Settings& s, std::ostream& out, std::ostream& err) {
  OracleConfig oc = oracle_config(s);
  ServingCorpusConfig cc;
  cc.n_workflows = s.n_workflows;
  cc.overlap = s.overlap;
  cc.seed = s.seed;
  auto corpus = default_sparsity_corpus(generate_serving_corpus(cc), s.pairs);
  if (corpus.empty()) throw ValidationError("no (prefix, op) pairs to analyze");
  SparsityReport rep = sparsity_report(oc, corpus);
  write_file(in_out(s, "sparsity.csv"), rep.csv());
  for (bool values : {false, true}) {
    auto grid = delta_heatmap(oc, corpus[0], oc.layers - 1, 0, values);
    std::string name = values ? "heatmap_value" : "heatmap_key";
    write_file(in_out(s, name + ".csv"), grid_csv(grid));
    if (s.plot)
      write_file(in_out(s, name + ".svg"),
                 heatmap_svg(std::string("|delta| ") + (values ? "values" : "keys") + ", last layer, head 0", grid));
  }
  out << "pairs=" << corpus.size() << " key_below_10pct=" << fmt_double(rep.mean_below("key"))
      << " value_below_10pct=" << fmt_double(rep.mean_below("value")) << "\n";
  err << "wrote " << s.out << "/sparsity.csv\n";
  return 0;
}

int cmd_kv_materialize(const Settings& s, std::ostream& out, std::ostream& err) {
  need(s.store, "--store");
  auto g = std::make_shared<const WGraph>(load_graph(s));
  CacheStore store(g, oracle_config(s), parse_mode(s.mode), s.energy_target);
  prepare_bases(store);
  MaterializationReport rep;
  if (!s.trace_log.empty() && store.mode() == StoreMode::differential) {
    TransitionStats st(g);
    for (const auto& tr : load_traces(s)) st.record_execution(tr);
    rep = apply_plan(store, plan_materialization(*g, st, {s.prune_k, 0}));
  }
  store.save(s.store);
  write_file(in_out(s, "materialize.csv"), plan_report_csv(rep));
  std::string csv = memory_csv_header() + memory_csv_row(to_string(store.mode()), store.memory_footprint());
  write_file(in_out(s, "footprint.csv"), csv);
  out << csv;
  err << store.base_count() << " bases, " << store.materialized().size() << " residuals\n";
  return 0;
}

int cmd_kv_prune(const Settings& s, std::ostream& out, std::ostream& err) {
  need_path(s.store, "--store");
  auto g = std::make_shared<const WGraph>(load_graph(s));
  auto store = CacheStore::load(s.store, g);
  TransitionStats st(g);
  for (const auto& tr : load_traces(s)) st.record_execution(tr);
  auto rep = apply_plan(*store, plan_materialization(*g, st, {s.prune_k, 0}));
  store->save(s.store);
  std::string summary = "bytes_before,bytes_after,inserted,dropped,kept\n" + std::to_string(rep.bytes_before) + "," +
                        std::to_string(rep.bytes_after) + "," + std::to_string(rep.inserted) + "," +
                        std::to_string(rep.dropped) + "," + std::to_string(rep.kept) + "\n";
  write_file(in_out(s, "prune_summary.csv"), summary);
  write_file(in_out(s, "prune_plan.csv"), plan_report_csv(rep));
  out << summary;
  err << "k=" << s.prune_k << ": " << rep.rows.size() << " pairs kept\n";
  return 0;
}

int cmd_kv_footprint(const Settings& s, std::ostream& out, std::ostream&) {
  need(s.store, "--store");
  std::string csv;
  if (!fs::exists(fs::path(s.store) / "store.json")) {
    csv = memory_csv_header() + memory_csv_row("empty", MemoryReport{});
  } else {
    auto g = std::make_shared<const WGraph>(load_graph(s));
    auto store = CacheStore::load(s.store, g);
    csv = memory_csv_header() + memory_csv_row(to_string(store->mode()), store->memory_footprint());
  }
  if (s.out != "-") write_file(in_out(s, "footprint.csv"), csv);
  out << csv;
  return 0;
}

int cmd_bench(const Settings& s, std::ostream& out, std::ostream& err) {
  ServingCorpusConfig cc;
  cc.n_workflows = s.n_workflows;
  cc.layers = s.layers;
  cc.ops_per_layer = s.ops_per_layer;
  cc.op_words = s.op_words;
  cc.overlap = s.overlap;
  cc.seed = s.seed;
  ServingCorpus c = generate_serving_corpus(cc);
  RunOptions opt;
  opt.oracle = oracle_config(s);
  opt.energy_target = s.energy_target;
  opt.policy.min_count = 1;
  Planner planner = target_planner();
  err << c.workflows.size() << " workflows, " << c.graph.nodes.size() << " operations, reuse "
      << fmt_double(c.reuse) << "\n";

  // memory / fidelity trade-off across modes
  Workload w = make_workload(c.targets, s.requests, 0.0, s.seed);
  std::string tradeoff_csv = run_report_csv_header();
  std::vector<RunReport> reports;
  for (auto m : {StoreMode::stateful, StoreMode::differential, StoreMode::stateless}) {
    reports.push_back(run_serving_sim(c.graph, w, planner, m, CostModel{}, opt));
    tradeoff_csv += run_report_csv_row(reports.back());
  }
  write_file(in_out(s, "tradeoff.csv"), tradeoff_csv);

  // memory against concurrency
  Workload bw = w;
  bw.batch_sizes.clear();
  for (size_t b = 10; b <= s.requests; b += 10) bw.batch_sizes.push_back(b);
  SweepResult sweep = sweep_batch_sizes(c.graph, bw, planner, opt);
  write_file(in_out(s, "batch_memory.csv"), sweep.csv());

  // materialization with and without pruning on skewed traffic
  Workload zw = make_workload(c.targets, s.zipf_requests, s.zipf, s.seed);
  AblationReport abl = ablate_pruning(c.graph, zw, planner, s.prune_k, opt);
  write_file(in_out(s, "pruning.csv"), abl.csv());

  if (s.plot) {
    std::vector<Series> ser;
    for (auto m : {StoreMode::stateful, StoreMode::differential, StoreMode::stateless}) {
      Series se{to_string(m), {}, {}};
      for (const auto& r : sweep.rows)
        if (r.mode == m) {
          se.x.push_back(static_cast<double>(r.batch));
          se.y.push_back(static_cast<double>(r.memory.total()) / 1048576.0);
        }
      ser.push_back(se);
    }
    write_file(in_out(s, "batch_memory.svg"), line_chart_svg("Memory vs batch size", "batch size", "MiB", ser));
    std::vector<Series> pts;
    for (const auto& r : reports)
      pts.push_back({to_string(r.mode), {static_cast<double>(r.memory.total()) / 1048576.0}, {r.kv_relative_error}});
    write_file(in_out(s, "tradeoff.svg"),
               scatter_svg("Memory vs KV reconstruction error", "MiB", "mean relative KV error", pts));
    std::vector<Series> bars{{"unpruned", {0.0}, {static_cast<double>(abl.bytes_unpruned) / 1048576.0}},
                             {"pruned", {1.0}, {static_cast<double>(abl.bytes_pruned) / 1048576.0}}};
    write_file(in_out(s, "pruning.svg"), scatter_svg("Pruning ablation", "configuration", "MiB", bars));
  }

  double ratio = static_cast<double>(reports[1].memory.total()) / static_cast<double>(reports[0].memory.total());
  out << "differential/stateful memory ratio " << fmt_double(ratio) << "\n";
  out << "slopes stateful " << fmt_double(sweep.slope(StoreMode::stateful)) << " differential "
      << fmt_double(sweep.slope(StoreMode::differential)) << " stateless "
      << fmt_double(sweep.slope(StoreMode::stateless)) << "\n";
  out << "pruning bytes " << abl.bytes_unpruned << " -> " << abl.bytes_pruned << ", contract violations "
      << abl.contract_violations << "\n";
  return 0;
}

void add_oracle_flags(CLI::App* a, Settings& s) {
  a->add_option("--lambda", s.lambda, "Prefix mixing decay of the synthetic KV oracle");
  a->add_option("--oracle-layers", s.oracle_layers, "Oracle layers");
  a->add_option("--oracle-heads", s.oracle_heads, "Oracle heads");
  a->add_option("--head-dim", s.head_dim, "Oracle head dimension");
}

void add_corpus_flags(CLI::App* a, Settings& s) {
  a->add_option("--n-workflows", s.n_workflows, "Serving corpus size");
  a->add_option("--layers", s.layers, "Serving corpus chain length");
  a->add_option("--ops-per-layer", s.ops_per_layer, "Operations per layer");
  a->add_option("--op-words", s.op_words, "Words per operation instruction");
  a->add_option("--overlap", s.overlap, "Chance a step picks a shared core operation");
}

void add_decode_flags(CLI::App* a, Settings& s) {
  a->add_option("--theta-min", s.theta_min, "Minimum edge score admitted by the decoder");
  a->add_option("--max-nodes", s.max_nodes, "Node budget (0: no limit)");
  a->add_option("--embeddings", s.embeddings, "id<TAB>vector table replacing the hash embedder");
}

void apply_config(CLI::App& app, const std::map<std::string, std::string>& cfg) {
  std::map<std::string, std::vector<CLI::Option*>> by_name;
  std::vector<CLI::App*> stack{&app};
  while (!stack.empty()) {
    CLI::App* a = stack.back();
    stack.pop_back();
    for (auto* o : a->get_options()) by_name[o->get_single_name()].push_back(o);
    for (auto* sub : a->get_subcommands({})) stack.push_back(sub);
  }
  for (const auto& [k, v] : cfg) {
    auto it = by_name.find(k);
    if (it == by_name.end()) throw ValidationError("config: unknown key '" + k + "'");
    for (auto* o : it->second) {
      if (o->count() > 0) continue;  // flags win
      o->clear();
      o->add_result(v);
      o->run_callback();
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Settings s;
  CLI::App app{"opflow: operation graphs, workflow generation and differential KV caching"};
  app.name("opflow");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", s.seed, "Global seed")->capture_default_str();
  app.add_option("--config", s.config, "key=value file; flags take precedence");
  app.add_option("--out", s.out, "Output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Write a synthetic workflow repository and task samples");
  synth->add_option("--kind", s.kind, "planted | serving")->capture_default_str();
  synth->add_option("--vocab", s.vocab, "Planted corpus operation vocabulary");
  synth->add_option("--tasks", s.n_tasks, "Planted corpus task count");
  synth->add_option("--holdout", s.holdout, "Tasks held out from training");
  add_corpus_flags(synth, s);

  auto* bg = app.add_subcommand("build-graph", "Merge a workflow directory into a wGraph");
  bg->add_option("--workflows,workflows", s.workflows, "Directory of *.workflow.json");
  bg->add_option("--graph", s.graph, "Write the canonical graph here");

  auto* tr = app.add_subcommand("train", "Train the edge scorer");
  tr->add_option("--graph", s.graph, "wGraph file (default: merge --workflows)");
  tr->add_option("--workflows", s.workflows, "Workflow repository");
  tr->add_option("--samples", s.samples, "task<TAB>workflow_id file");
  tr->add_option("--epochs", s.epochs);
  tr->add_option("--batch", s.batch);
  tr->add_option("--lr", s.lr);
  tr->add_option("--wd", s.wd);
  tr->add_option("--tau", s.tau);
  tr->add_option("--hidden", s.hidden);
  tr->add_option("--mlp-hidden", s.mlp_hidden);
  tr->add_option("--embed-dim", s.embed_dim);
  tr->add_option("--init", s.init, "scaled_relu | glorot | zeros");
  tr->add_flag("--no-gumbel", s.no_gumbel, "Train on deterministic sigmoid scores");
  tr->add_option("--embeddings", s.embeddings, "id<TAB>vector table replacing the hash embedder");

  auto* gen = app.add_subcommand("generate", "Generate a workflow document for a task");
  gen->add_option("--graph", s.graph);
  gen->add_option("--workflows", s.workflows);
  gen->add_option("--checkpoint", s.checkpoint);
  gen->add_option("--task,task", s.task, "Task description");
  gen->add_option("--trace-log", s.trace_log, "Append execution traces here");
  add_decode_flags(gen, s);

  auto* sim = app.add_subcommand("simulate", "Serve a task list through one cache mode");
  sim->add_option("--graph", s.graph);
  sim->add_option("--workflows", s.workflows, "Repository resolving target ids in --tasks");
  sim->add_option("--checkpoint", s.checkpoint);
  sim->add_option("--tasks", s.tasks, "One task per line, optionally task<TAB>workflow_id");
  sim->add_option("--mode", s.mode, "stateful | differential | stateless");
  sim->add_option("--energy-target", s.energy_target);
  sim->add_option("--prune-k", s.prune_k);
  sim->add_option("--trace-log", s.trace_log);
  add_decode_flags(sim, s);
  add_oracle_flags(sim, s);

  auto* kv = app.add_subcommand("kv", "KV cache analysis and store management");
  kv->require_subcommand(1);
  auto* an = kv->add_subcommand("analyze", "Residual sparsity statistics");
  an->add_option("--pairs", s.pairs, "Number of (prefix, op) pairs");
  an->add_flag("--plot", s.plot, "Also write SVG heatmaps");
  add_corpus_flags(an, s);
  add_oracle_flags(an, s);
  auto* mat = kv->add_subcommand("materialize", "Build a store with bases and planned residuals");
  mat->add_option("--graph", s.graph);
  mat->add_option("--workflows", s.workflows);
  mat->add_option("--store", s.store);
  mat->add_option("--mode", s.mode);
  mat->add_option("--energy-target", s.energy_target);
  mat->add_option("--trace-log", s.trace_log);
  mat->add_option("--prune-k", s.prune_k);
  add_oracle_flags(mat, s);
  auto* pr = kv->add_subcommand("prune", "Re-plan residuals from a trace log");
  pr->add_option("--graph", s.graph);
  pr->add_option("--workflows", s.workflows);
  pr->add_option("--store", s.store);
  pr->add_option("--trace-log", s.trace_log);
  pr->add_option("--prune-k", s.prune_k);
  auto* fp = kv->add_subcommand("footprint", "Store memory report");
  fp->add_option("--graph", s.graph);
  fp->add_option("--workflows", s.workflows);
  fp->add_option("--store", s.store);

  auto* bench = app.add_subcommand("bench", "Memory, batch and pruning experiments as CSV");
  bench->add_option("--requests", s.requests, "Requests for the mode comparison and batch sweep");
  bench->add_option("--zipf", s.zipf, "Zipf exponent for the pruning workload");
  bench->add_option("--zipf-requests", s.zipf_requests);
  bench->add_option("--prune-k", s.prune_k);
  bench->add_option("--energy-target", s.energy_target);
  bench->add_flag("--plot", s.plot, "Also write SVG charts");
  add_corpus_flags(bench, s);
  add_oracle_flags(bench, s);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    if (!s.config.empty()) {
      if (!fs::exists(s.config)) throw ValidationError("--config: no such file: " + s.config);
      apply_config(app, parse_config_text(read_file(s.config), s.config));
    }
    if (*synth) return cmd_synth(s, out, err);
    if (*bg) return cmd_build_graph(s, out, err);
    if (*tr) return cmd_train(s, out, err);
    if (*gen) return cmd_generate(s, out, err);
    if (*sim) return cmd_simulate(s, out, err);
    if (*an) return cmd_kv_analyze(s, out, err);
    if (*mat) return cmd_kv_materialize(s, out, err);
    if (*pr) return cmd_kv_prune(s, out, err);
    if (*fp) return cmd_kv_footprint(s, out, err);
    if (*bench) return cmd_bench(s, out, err);
    return 1;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace opflow
