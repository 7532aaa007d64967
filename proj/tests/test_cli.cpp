// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "helpers.hpp"
#include "opflow/cli.hpp"
#include "opflow/construct.hpp"
#include "opflow/harness.hpp"

using namespace opflow;
using namespace opflow::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream o, e;
  int c = run_cli(args, o, e);
  return {c, o.str(), e.str()};
}

// small planted corpus plus a short training run
struct Trained {
  TempDir dir{"cli_trained"};
  std::string out = dir.str("o");
  Trained() {
    REQUIRE(run({"--out", out, "synth", "--vocab", "8", "--tasks", "40", "--holdout", "10"}).code == 0);
    REQUIRE(run({"--out", out, "build-graph", "--workflows", out + "/workflows", "--graph", out + "/graph.json"}).code ==
            0);
    Run t = run({"--out", out, "train", "--graph", out + "/graph.json", "--workflows", out + "/workflows", "--samples",
                 out + "/train.tsv", "--epochs", "2", "--batch", "8", "--embed-dim", "32", "--hidden", "16",
                 "--mlp-hidden", "8"});
    REQUIRE(t.code == 0);
  }
};

}  // namespace

TEST_CASE("build-graph on the algebra workflow") {
  TempDir d("cli_bg");
  fs::create_directories(d.str("wf"));
  write_file(d.str("wf/WF_MATH_001.workflow.json"), math_doc());
  Run r = run({"build-graph", "--workflows", d.str("wf"), "--graph", d.str("g.json")});
  CHECK(r.code == 0);
  CHECK(r.out == "5 nodes, 5 edges, 0 merged\n");
  CHECK(fs::exists(d.str("g.json")));

  fs::create_directories(d.str("empty"));
  Run e = run({"build-graph", "--workflows", d.str("empty")});
  CHECK(e.code == 0);
  CHECK(e.out.rfind("0 nodes", 0) == 0);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"build-graph", "--workflows", "/nonexistent/opflow"}).code == 2);
  TempDir d("cli_bad");
  fs::create_directories(d.str("wf"));
  write_file(d.str("wf/broken.workflow.json"), "{\"workflow_id\": 3");
  Run r = run({"build-graph", "--workflows", d.str("wf")});
  CHECK(r.code == 2);
  CHECK(r.err.find("broken.workflow.json") != std::string::npos);
}

TEST_CASE("config file sits between defaults and flags") {
  std::map<std::string, std::string> kv = parse_config_text("# comment\nseed = 7\nout=x\n", "c");
  CHECK(kv.at("seed") == "7");
  CHECK(kv.at("out") == "x");
  CHECK_THROWS_AS(parse_config_text("novalue\n", "c"), ValidationError);

  TempDir d("cli_cfg");
  write_file(d.str("c.cfg"), "epochs = 3\nlr = 0.5\n");
  // echo happens before any input is read, so the failure on missing data is fine
  Run r = run({"--config", d.str("c.cfg"), "train", "--lr", "0.25"});
  CHECK(r.out.rfind("epochs=3 batch=64 lr=0.25 wd=1e-2\n", 0) == 0);
  write_file(d.str("bad.cfg"), "no_such_key = 1\n");
  CHECK(run({"--config", d.str("bad.cfg"), "train"}).code == 2);
  CHECK(run({"--config", d.str("missing.cfg"), "train"}).code == 2);
}

TEST_CASE("compact numbers") {
  CHECK(compact_number(1e-4) == "1e-4");
  CHECK(compact_number(1e-2) == "1e-2");
  CHECK(compact_number(2.5e-3) == "2.5e-3");
  CHECK(compact_number(0.5) == "0.5");
}

TEST_CASE("train echo, zero epochs and reruns") {
  TempDir d("cli_train");
  std::string o = d.str("o");
  REQUIRE(run({"--out", o, "synth", "--vocab", "8", "--tasks", "30", "--holdout", "5"}).code == 0);
  std::vector<std::string> base = {"--out", o, "train", "--workflows", o + "/workflows", "--samples",
                                   o + "/train.tsv", "--embed-dim", "16", "--hidden", "8", "--mlp-hidden", "4"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  };
  Run def = with({"--epochs", "0"});
  REQUIRE(def.code == 0);
  CHECK(def.out == "epochs=0 batch=64 lr=1e-4 wd=1e-2\n");
  std::ostringstream init;
  save_checkpoint(init, ModelParams::create(16, 8, 4, 42));
  CHECK(read_file(o + "/checkpoint.bin") == init.str());

  REQUIRE(with({"--epochs", "2", "--batch", "8"}).code == 0);
  std::string first = read_file(o + "/checkpoint.bin"), loss = read_file(o + "/loss.csv");
  REQUIRE(with({"--epochs", "2", "--batch", "8"}).code == 0);
  CHECK(read_file(o + "/checkpoint.bin") == first);
  CHECK(read_file(o + "/loss.csv") == loss);
  CHECK(first != init.str());

  Run full = run({"train", "--workflows", "/nonexistent"});
  CHECK(full.out.rfind("epochs=20 batch=64 lr=1e-4 wd=1e-2\n", 0) == 0);
  CHECK(full.code == 2);
}

TEST_CASE("generate and simulate") {
  Trained t;
  std::string g = t.out + "/graph.json", ck = t.out + "/checkpoint.bin";
  Run r = run({"generate", "--graph", g, "--checkpoint", ck, "--task", "solve the first planted task"});
  REQUIRE(r.code == 0);
  Workflow wf = parse_workflow(r.out);
  CHECK(serialize_workflow(wf) == r.out);
  CHECK(run({"generate", "--graph", g, "--checkpoint", ck, "--task", "solve the first planted task"}).out == r.out);

  write_file(t.dir.str("junk.bin"), "not a checkpoint");
  Run bad = run({"generate", "--graph", g, "--checkpoint", t.dir.str("junk.bin"), "--task", "x"});
  CHECK(bad.code != 0);
  CHECK_FALSE(bad.err.empty());
  CHECK(bad.out.empty());

  std::string log = t.dir.str("traces.tsv");
  for (const char* m : {"stateful", "differential", "stateless"}) {
    Run s = run({"--out", t.out, "simulate", "--graph", g, "--checkpoint", ck, "--workflows", t.out + "/workflows",
                 "--tasks", t.out + "/heldout.tsv", "--mode", m, "--trace-log", log});
    REQUIRE(s.code == 0);
    CHECK(s.out.rfind("mode,requests,", 0) == 0);
    CHECK(s.out.find(std::string("\n") + m + ",10,") != std::string::npos);
  }
  CHECK(run({"simulate", "--graph", g, "--checkpoint", ck, "--tasks", t.out + "/heldout.tsv", "--mode", "bogus"})
            .code == 2);
}

TEST_CASE("kv commands") {
  TempDir d("cli_kv");
  std::string o = d.str("o");
  REQUIRE(run({"--out", o, "synth", "--kind", "serving", "--n-workflows", "12", "--layers", "3", "--ops-per-layer",
               "3", "--op-words", "10"})
              .code == 0);
  std::string wf = o + "/workflows";

  Run empty = run({"--out", o, "kv", "footprint", "--store", d.str("nothing")});
  CHECK(empty.code == 0);
  CHECK(empty.out == "mode,bases_bytes,residuals_bytes,fulls_bytes,total_bytes\nempty,0,0,0,0\n");

  // skewed traces: one chain many times, another once
  std::string log = d.str("traces.tsv");
  std::vector<Workflow> wfs = load_workflow_dir(wf);
  WGraph g = merge_into_wgraph(wfs);
  Workflow a = canonicalize(wfs[0], g), b = canonicalize(wfs[1], g);
  std::vector<TraceRecord> recs;
  auto ta = workflow_traces(a).at(0), tb = workflow_traces(b).at(0);
  for (int i = 0; i < 5; ++i) recs.push_back({"a", ta});
  recs.push_back({"b", tb});
  append_trace_log(log, recs);

  Run m = run({"--out", o, "kv", "materialize", "--workflows", wf, "--store", d.str("store"), "--trace-log", log,
               "--prune-k", "1"});
  REQUIRE(m.code == 0);
  Run p = run({"--out", o, "kv", "prune", "--workflows", wf, "--store", d.str("store"), "--trace-log", log,
               "--prune-k", "2"});
  REQUIRE(p.code == 0);
  auto lines = split(p.out, '\n');
  REQUIRE(lines.size() >= 2);
  auto cols = split(lines[1], ',');
  REQUIRE(ta != tb);
  CHECK(std::stoull(cols[0]) > std::stoull(cols[1]));
  Run f = run({"--out", o, "kv", "footprint", "--workflows", wf, "--store", d.str("store")});
  CHECK(f.code == 0);
  CHECK(f.out.substr(f.out.rfind(',') + 1) == cols[1] + "\n");

  Run an = run({"--out", o, "kv", "analyze", "--pairs", "2", "--n-workflows", "12", "--layers", "3",
                "--ops-per-layer", "3", "--op-words", "10", "--plot"});
  CHECK(an.code == 0);
  CHECK(fs::exists(o + "/sparsity.csv"));
  CHECK(fs::exists(o + "/heatmap_key.svg"));
}

TEST_CASE("bench writes one CSV per experiment") {
  TempDir d("cli_bench");
  std::vector<std::string> args = {"--out",          d.str("o"), "bench",     "--n-workflows", "12", "--layers", "3",
                                   "--ops-per-layer", "3",        "--op-words", "8",             "--requests", "50",
                                   "--zipf-requests", "40"};
  Run r = run(args);
  REQUIRE(r.code == 0);
  std::string f4 = read_file(d.str("o/tradeoff.csv")), f5 = read_file(d.str("o/batch_memory.csv"));
  for (const char* m : {"stateful", "differential", "stateless"}) {
    CHECK(f4.find(m) != std::string::npos);
    CHECK(f5.find(m) != std::string::npos);
  }
  for (const char* b : {"\n10,", "\n20,", "\n30,", "\n40,", "\n50,"}) CHECK(f5.find(b) != std::string::npos);
  CHECK(fs::exists(d.str("o/pruning.csv")));
  Run again = run(args);
  CHECK(again.out == r.out);
  CHECK(read_file(d.str("o/batch_memory.csv")) == f5);
}
