// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "opflow/util.hpp"
#include "opflow/wgraph.hpp"

namespace opflow::testing {

inline std::string data_path(const std::string& name) { return std::string(OPFLOW_TEST_DATA) + "/" + name; }

inline std::string math_doc() { return read_file(data_path("WF_MATH_001.workflow.json")); }

inline std::string node_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "N%03zu", i);
  return buf;
}

// Random DAG: edges only go from lower to higher index.
inline Workflow random_dag(Rng& rng, size_t n, double p, const std::string& id = "WF_RAND") {
  Workflow wf;
  wf.id = id;
  for (size_t i = 0; i < n; ++i) {
    std::string v = node_name(i);
    wf.nodes.push_back(v);
    wf.operations[v] = Operation{v, "", "operation " + v + " of " + id, {}, {}};
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) wf.edges.emplace_back(wf.nodes[i], wf.nodes[j]);
  return wf;
}

inline WGraph graph_of(const Workflow& wf) { return merge_into_wgraph({wf}); }

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("opflow_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& sub = "") const { return sub.empty() ? path.string() : (path / sub).string(); }
};

}  // namespace opflow::testing
