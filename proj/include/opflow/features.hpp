// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "opflow/matrix.hpp"
#include "opflow/wgraph.hpp"

namespace opflow {

enum class EmbedderKind { hash, external };

// Signed feature hashing of whole tokens and character trigrams, or a fixed
// id -> vector table loaded from a sidecar file.
class Embedder {
 public:
  explicit Embedder(int dim = 384);
  static Embedder from_table(std::map<std::string, std::vector<double>> table, int dim);

  int dim() const { return dim_; }
  EmbedderKind kind() const { return kind_; }

  std::vector<double> embed_text(const std::string& text) const;
  // External tables are keyed by operation id; the hash path embeds the
  // instruction with its pattern lists.
  std::vector<double> embed_operation(const Operation& op) const;

 private:
  int dim_;
  EmbedderKind kind_ = EmbedderKind::hash;
  std::shared_ptr<const std::map<std::string, std::vector<double>>> table_;
};

std::string operation_text(const Operation& op);

struct GraphFeatures {
  Matrix X;  // |V| x D, task row last
  Matrix A;  // |V| x |V|, 0/1
};

GraphFeatures assemble_features(const Embedder& e, const TaskGraph& tg);

// Operation rows only depend on the graph, so training precomputes them once.
Matrix operation_features(const Embedder& e, const WGraph& g);
GraphFeatures assemble_features(const Matrix& op_rows, const std::vector<double>& task_row,
                                const TaskGraph& tg);

// Sidecar: id<TAB>v1<TAB>...<TAB>vD per line.
std::map<std::string, std::vector<double>> load_vector_table(const std::string& path, int dim);
void save_vector_table(const std::string& path, const std::map<std::string, std::vector<double>>& t);

}  // namespace opflow
