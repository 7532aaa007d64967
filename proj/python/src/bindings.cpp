// SPDX-License-Identifier: Apache-2.0
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "opflow/cli.hpp"
#include "opflow/construct.hpp"
#include "opflow/features.hpp"
#include "opflow/harness.hpp"
#include "opflow/kvstore.hpp"
#include "opflow/neural.hpp"
#include "opflow/oracle.hpp"
#include "opflow/pruning.hpp"
#include "opflow/util.hpp"
#include "opflow/wgraph.hpp"

namespace py = pybind11;
using namespace opflow;

namespace {

// [layers, heads, tokens, head_dim] float32 copy
py::array_t<float> as_array(const KVTensor& t, const std::vector<float>& v) {
  py::array_t<float> a({t.layers, t.heads, t.tokens, t.head_dim});
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

}  // namespace

PYBIND11_MODULE(_opflow, m) {
  m.doc() = "opflow core bindings";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Operation>(m, "Operation")
      .def(py::init<>())
      .def(py::init([](std::string id, std::string instruction, std::vector<std::string> must,
                       std::vector<std::string> should, std::string name) {
             return Operation{std::move(id), std::move(name), std::move(instruction), std::move(must),
                              std::move(should)};
           }),
           py::arg("id"), py::arg("instruction"), py::arg("patterns_must") = std::vector<std::string>{},
           py::arg("patterns_should") = std::vector<std::string>{}, py::arg("name") = "")
      .def_readwrite("id", &Operation::id)
      .def_readwrite("name", &Operation::name)
      .def_readwrite("instruction", &Operation::instruction)
      .def_readwrite("patterns_must", &Operation::patterns_must)
      .def_readwrite("patterns_should", &Operation::patterns_should)
      .def("__eq__", [](const Operation& a, const Operation& b) { return a == b; });

  py::class_<Workflow>(m, "Workflow")
      .def(py::init<>())
      .def_readwrite("id", &Workflow::id)
      .def_readwrite("name", &Workflow::name)
      .def_readwrite("description", &Workflow::description)
      .def_readwrite("nodes", &Workflow::nodes)
      .def_readwrite("edges", &Workflow::edges)
      .def_readwrite("operations", &Workflow::operations)
      .def("to_json", &serialize_workflow)
      .def("__eq__", [](const Workflow& a, const Workflow& b) { return a == b; })
      .def("__repr__", [](const Workflow& w) {
        return "<Workflow " + w.id + ": " + std::to_string(w.nodes.size()) + " nodes, " +
               std::to_string(w.edges.size()) + " edges>";
      });

  m.def("parse_workflow", [](const std::string& doc, bool lenient) { return parse_workflow(doc, {lenient}); },
        py::arg("doc"), py::arg("lenient_duplicates") = false);
  m.def("serialize_workflow", &serialize_workflow);
  m.def("load_workflow_dir", [](const std::string& dir) { return load_workflow_dir(dir); });
  m.def("topological_order", &topological_order);

  py::class_<WGraph>(m, "WGraph")
      .def(py::init<>())
      .def("node_ids", &WGraph::node_ids)
      .def("edge_list", &WGraph::edge_list)
      .def("has_edge", &WGraph::has_edge)
      .def("op", &WGraph::op, py::return_value_policy::copy)
      .def_readonly("provenance", &WGraph::provenance)
      .def("to_json", &serialize_wgraph)
      .def("__len__", [](const WGraph& g) { return g.nodes.size(); });

  m.def(
      "merge",
      [](const std::vector<Workflow>& wfs) {
        MergeStats st;
        WGraph g = merge_into_wgraph(wfs, {}, &st);
        return py::make_tuple(g, st.merged());
      },
      "Merge workflows; returns (graph, merged_count)");
  m.def("parse_wgraph", [](const std::string& s) { return parse_wgraph(s); });
  m.def("canonicalize", [](const Workflow& wf, const WGraph& g) { return canonicalize(wf, g); });
  m.def(
      "task_graph_counts",
      [](const WGraph& g, const std::string& task) {
        TaskGraph t = condition_on_task(g, task);
        return py::make_tuple(t.node_count(), t.edge_count());
      },
      "(|V|, |E|) of the task-conditioned graph");

  py::class_<Embedder>(m, "Embedder")
      .def(py::init<int>(), py::arg("dim") = 384)
      .def_property_readonly("dim", &Embedder::dim)
      .def("embed_text", [](const Embedder& e, const std::string& s) {
        auto v = e.embed_text(s);
        return py::array_t<double>(v.size(), v.data());
      })
      .def("embed_operation", [](const Embedder& e, const Operation& op) {
        auto v = e.embed_operation(op);
        return py::array_t<double>(v.size(), v.data());
      });

  py::class_<ModelParams>(m, "ModelParams")
      .def_static("create",
                  [](int D, int H, int M, uint64_t seed, const std::string& scheme) {
                    InitScheme s = scheme == "glorot" ? InitScheme::glorot
                                   : scheme == "zeros" ? InitScheme::zeros
                                                       : InitScheme::scaled_relu;
                    return ModelParams::create(D, H, M, seed, s);
                  },
                  py::arg("D") = 384, py::arg("H") = 256, py::arg("M") = 128, py::arg("seed") = 42,
                  py::arg("init") = "scaled_relu")
      .def_readonly("D", &ModelParams::D)
      .def_readonly("H", &ModelParams::H)
      .def_readonly("M", &ModelParams::M)
      .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint(path, p); })
      .def_static("load", [](const std::string& path) { return load_checkpoint(path); })
      .def("to_bytes", [](const ModelParams& p) {
        std::ostringstream os;
        save_checkpoint(os, p);
        return py::bytes(os.str());
      })
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  py::class_<TrainSample>(m, "TrainSample")
      .def(py::init([](std::string task, Workflow target) { return TrainSample{std::move(task), std::move(target)}; }))
      .def_readwrite("task_text", &TrainSample::task_text)
      .def_readwrite("target", &TrainSample::target);

  py::class_<SyntheticCorpus>(m, "SyntheticCorpus")
      .def_readonly("workflows", &SyntheticCorpus::workflows)
      .def_readonly("graph", &SyntheticCorpus::graph)
      .def_readonly("samples", &SyntheticCorpus::samples);
  m.def("synthetic_corpus", &generate_synthetic_corpus, py::arg("vocab") = 20, py::arg("tasks") = 600,
        py::arg("seed") = 42);

  m.def(
      "train",
      [](const WGraph& g, const std::vector<TrainSample>& samples, int epochs, int batch, double lr, double wd,
         int hidden, int mlp_hidden, int embed_dim, uint64_t seed) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.lr = lr;
        cfg.weight_decay = wd;
        cfg.hidden = hidden;
        cfg.mlp_hidden = mlp_hidden;
        cfg.seed = seed;
        TrainResult r;
        {
          py::gil_scoped_release nogil;
          r = train(g, samples, cfg, Embedder(embed_dim));
        }
        return py::make_tuple(r.params, r.epoch_loss);
      },
      py::arg("graph"), py::arg("samples"), py::arg("epochs") = 20, py::arg("batch") = 64, py::arg("lr") = 1e-4,
      py::arg("wd") = 1e-2, py::arg("hidden") = 256, py::arg("mlp_hidden") = 128, py::arg("embed_dim") = 384,
      py::arg("seed") = 42, "Returns (params, per-epoch loss)");

  m.def(
      "generate",
      [](const WGraph& g, const std::string& task, const ModelParams& p, double theta, size_t max_nodes) {
        DecodeConfig cfg;
        cfg.theta_min = theta;
        cfg.max_nodes = max_nodes;
        return generate(g, task, p, cfg, Embedder(p.D));
      },
      py::arg("graph"), py::arg("task"), py::arg("params"), py::arg("theta_min") = 0.5, py::arg("max_nodes") = 0);
  m.def("edge_f1", &edge_f1);
  m.def("is_valid_subworkflow", [](const Workflow& wf, const WGraph& g) { return is_valid_subworkflow(wf, g); });

  py::class_<OracleConfig>(m, "OracleConfig")
      .def(py::init([](uint32_t layers, uint32_t heads, uint32_t head_dim, double lambda, uint64_t seed) {
             OracleConfig c{layers, heads, head_dim, lambda, seed};
             c.validate();
             return c;
           }),
           py::arg("layers") = 4, py::arg("heads") = 4, py::arg("head_dim") = 16, py::arg("lam") = 0.8,
           py::arg("seed") = 42)
      .def_readonly("layers", &OracleConfig::layers)
      .def_readonly("heads", &OracleConfig::heads)
      .def_readonly("head_dim", &OracleConfig::head_dim)
      .def_readonly("lam", &OracleConfig::lambda);

  py::class_<KVTensor>(m, "KVTensor")
      .def_readonly("layers", &KVTensor::layers)
      .def_readonly("heads", &KVTensor::heads)
      .def_readonly("tokens", &KVTensor::tokens)
      .def_readonly("head_dim", &KVTensor::head_dim)
      .def_readonly("position_offset", &KVTensor::position_offset)
      .def_property_readonly("keys", [](const KVTensor& t) { return as_array(t, t.keys); })
      .def_property_readonly("values", [](const KVTensor& t) { return as_array(t, t.values); })
      .def("nbytes", &KVTensor::bytes)
      .def("__eq__", [](const KVTensor& a, const KVTensor& b) { return a == b; });

  py::class_<SparseDelta>(m, "SparseDelta")
      .def_property_readonly("entries", &SparseDelta::entry_count)
      .def_property_readonly("dense_elements", &SparseDelta::dense_elements)
      .def_readonly("kept_energy_fraction", &SparseDelta::kept_energy_fraction)
      .def("nbytes", &SparseDelta::bytes);

  py::class_<Oracle>(m, "Oracle")
      .def(py::init<const OracleConfig&>(), py::arg("config") = OracleConfig{})
      .def("kv_states", [](const Oracle& o, const std::string& text,
                           uint64_t offset) { return o.kv_states(tokenize(text), offset); })
      .def("op_segment", [](const Oracle& o, const std::string& prefix,
                            const std::string& op) { return o.op_segment(tokenize(prefix), tokenize(op)); })
      .def("base_segment", [](const Oracle& o, uint64_t prefix_len, const std::string& op) {
        return o.base_segment(prefix_len, tokenize(op));
      });
  m.def("tokenize", &tokenize);
  m.def("sparsify", &sparsify, py::arg("full"), py::arg("base"), py::arg("energy_target") = 0.95);
  m.def("reconstruct", &reconstruct);
  m.def("frobenius_distance", &frobenius_distance);
  m.def("delta_norm", &delta_norm);

  py::class_<FetchResult>(m, "FetchResult")
      .def_readonly("tensor", &FetchResult::tensor)
      .def_readonly("hit", &FetchResult::hit)
      .def_readonly("applied_entries", &FetchResult::applied_entries)
      .def_readonly("prefill_tokens", &FetchResult::prefill_tokens);

  py::class_<CacheStore, std::shared_ptr<CacheStore>>(m, "CacheStore")
      .def(py::init([](const WGraph& g, const std::string& mode, double energy, const OracleConfig& oc) {
             return std::make_shared<CacheStore>(std::make_shared<const WGraph>(g), oc, parse_mode(mode), energy);
           }),
           py::arg("graph"), py::arg("mode") = "differential", py::arg("energy_target") = 0.95,
           py::arg("oracle") = OracleConfig{})
      .def_property_readonly("mode", [](const CacheStore& s) { return to_string(s.mode()); })
      .def("insert_residual", &CacheStore::insert_residual)
      .def("remove_residual", &CacheStore::remove_residual)
      .def("fetch", [](CacheStore& s, const PrefixPath& p, const std::string& op) { return s.fetch(p, op); })
      .def("stateful", &CacheStore::stateful)
      .def("memory_footprint",
           [](const CacheStore& s) {
             MemoryReport r = s.memory_footprint();
             return py::dict(py::arg("bases") = r.bases, py::arg("residuals") = r.residuals,
                             py::arg("fulls") = r.fulls, py::arg("total") = r.total());
           })
      .def("save", &CacheStore::save);

  m.def("p90", &p90_nearest_rank);
  m.def(
      "bench_memory",
      [](size_t n_workflows, double overlap, size_t requests, uint64_t seed) {
        ServingCorpusConfig cc;
        cc.n_workflows = n_workflows;
        cc.overlap = overlap;
        cc.seed = seed;
        py::gil_scoped_release nogil;
        ServingCorpus c = generate_serving_corpus(cc);
        Workload w = make_workload(c.targets, requests, 0.0, seed);
        RunOptions opt;
        opt.measure_fidelity = false;
        std::map<std::string, uint64_t> out;
        for (auto mode : {StoreMode::stateful, StoreMode::differential, StoreMode::stateless})
          out[to_string(mode)] = run_serving_sim(c.graph, w, target_planner(), mode, CostModel{}, opt).memory.total();
        return out;
      },
      py::arg("n_workflows") = 50, py::arg("overlap") = 0.5, py::arg("requests") = 50, py::arg("seed") = 42,
      "Total store bytes per mode on a synthetic serving corpus");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release nogil;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Run the command line tool in-process; returns (exit_code, stdout, stderr)");
}
