// SPDX-License-Identifier: Apache-2.0
#include "opflow/features.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "opflow/util.hpp"

namespace opflow {

Embedder::Embedder(int dim) : dim_(dim) {
  if (dim <= 0) throw ValidationError("embedder dimension must be positive");
}

Embedder Embedder::from_table(std::map<std::string, std::vector<double>> table, int dim) {
  Embedder e(dim);
  for (const auto& [id, v] : table)
    if (static_cast<int>(v.size()) != dim)
      throw ValidationError("vector for '" + id + "' has dimension " + std::to_string(v.size()));
  e.kind_ = EmbedderKind::external;
  e.table_ = std::make_shared<const std::map<std::string, std::vector<double>>>(std::move(table));
  return e;
}

namespace {

std::string strip_punct(const std::string& w) {
  size_t b = 0, e = w.size();
  while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
  while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
  return w.substr(b, e - b);
}

void add_feature(std::vector<double>& v, std::string_view f) {
  uint64_t h = fnv1a64(f);
  size_t bucket = h % v.size();
  v[bucket] += (h >> 63) ? -1.0 : 1.0;
}

}  // namespace

std::vector<double> Embedder::embed_text(const std::string& text) const {
  std::vector<double> v(dim_, 0.0);
  for (const auto& raw : split_ws(to_lower(text))) {
    std::string w = strip_punct(raw);
    if (w.empty()) continue;
    add_feature(v, "w:" + w);
    std::string padded = "#" + w + "#";
    for (size_t i = 0; i + 3 <= padded.size(); ++i) add_feature(v, "c:" + padded.substr(i, 3));
  }
  double n = 0.0;
  for (double x : v) n += x * x;
  if (n > 0.0) {
    n = std::sqrt(n);
    for (double& x : v) x /= n;
  }
  return v;
}

std::string operation_text(const Operation& op) {
  return op.instruction + " MUST:" + join(op.patterns_must, " ") + " SHOULD:" + join(op.patterns_should, " ");
}

std::vector<double> Embedder::embed_operation(const Operation& op) const {
  if (kind_ == EmbedderKind::external) {
    auto it = table_->find(op.id);
    if (it == table_->end()) throw ValidationError("no vector for operation '" + op.id + "'");
    return it->second;
  }
  return embed_text(operation_text(op));
}

Matrix operation_features(const Embedder& e, const WGraph& g) {
  Matrix X(g.nodes.size(), e.dim());
  size_t i = 0;
  for (const auto& [id, op] : g.nodes) {
    auto v = e.embed_operation(op);
    std::copy(v.begin(), v.end(), X.row(i++));
  }
  return X;
}

GraphFeatures assemble_features(const Matrix& op_rows, const std::vector<double>& task_row,
                                const TaskGraph& tg) {
  const size_t n = tg.node_count();
  const size_t D = task_row.size();
  if (op_rows.rows() + 1 != n || (op_rows.rows() && op_rows.cols() != D))
    throw ValidationError("feature rows do not match task graph");
  GraphFeatures f{Matrix(n, D), Matrix(n, n)};
  std::copy(op_rows.data(), op_rows.data() + op_rows.size(), f.X.data());
  std::copy(task_row.begin(), task_row.end(), f.X.row(n - 1));
  std::map<std::string, size_t> idx;
  auto order = tg.node_order();
  for (size_t i = 0; i < order.size(); ++i) idx[order[i]] = i;
  for (const auto& [a, b] : tg.edges) f.A(idx.at(a), idx.at(b)) = 1.0;
  return f;
}

GraphFeatures assemble_features(const Embedder& e, const TaskGraph& tg) {
  return assemble_features(operation_features(e, *tg.base), e.embed_text(tg.task_text), tg);
}

std::map<std::string, std::vector<double>> load_vector_table(const std::string& path, int dim) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::vector<double>> t;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    if (static_cast<int>(cols.size()) != dim + 1)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim + 1) +
                            " tab-separated fields");
    std::vector<double> v;
    for (size_t k = 1; k < cols.size(); ++k) {
      try {
        size_t used = 0;
        v.push_back(std::stod(cols[k], &used));
      } catch (const std::exception&) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": bad number '" + cols[k] + "'");
      }
    }
    t[cols[0]] = std::move(v);
  }
  return t;
}

void save_vector_table(const std::string& path, const std::map<std::string, std::vector<double>>& t) {
  std::string out;
  for (const auto& [id, v] : t) {
    out += id;
    for (double x : v) out += "\t" + fmt_double(x);
    out += "\n";
  }
  write_file(path, out);
}

}  // namespace opflow
