// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "opflow/matrix.hpp"
#include "opflow/wgraph.hpp"

namespace opflow {

enum class InitScheme {
  scaled_relu,  // Glorot bound * sqrt(2); first layer also * sqrt(D); centered output row
  glorot,       // plain Glorot uniform
  zeros,
};

struct ModelParams {
  int D = 384, H = 256, M = 128;
  uint64_t seed = 0;
  // GCN
  Matrix W1, W2;
  // scorer: 3H -> M -> M -> 1
  Matrix M1, b1, M2, b2, M3, b3;

  static ModelParams create(int D, int H, int M, uint64_t seed, InitScheme scheme = InitScheme::scaled_relu);

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  static const std::vector<std::string>& tensor_names();
  ModelParams zeros_like() const;
  bool all_finite() const;
  bool operator==(const ModelParams& o) const;
};

struct EdgeScore {
  Edge edge;
  double logit = 0.0;
  double score = 0.5;
};

inline constexpr double kBceEps = 1e-7;

double sigmoid(double x);
double gumbel_sigmoid(double logit, double tau, double g);
double bce_loss(const std::vector<double>& scores, const std::vector<double>& labels);

// D^-1/2 (S + I) D^-1/2 over the undirected support S of A.
Matrix normalized_adjacency(const Matrix& A);
Matrix gcn_forward(const Matrix& X, const Matrix& A, const ModelParams& p);

double mlp_logit(const double* h_i, const double* h_j, const double* h_task, const ModelParams& p);
EdgeScore score_edge(const std::vector<double>& h_i, const std::vector<double>& h_j,
                     const std::vector<double>& h_task, const ModelParams& p);

// One task graph with its candidate edges, given as (row i, row j) into X.
struct Instance {
  Matrix X, A;
  std::vector<std::pair<size_t, size_t>> edges;
  std::vector<double> labels;
  std::vector<double> noise;  // per-edge Gumbel sample; empty means none
};

// Recorded forward pass; backward() replays it.
struct Tape {
  const Instance* inst = nullptr;
  double tau = 1.0;
  Matrix Ahat, P1, H1, P2, H2;
  Matrix Z, A1, R1, A2, R2;
  std::vector<double> logits, scores;
  double loss = 0.0;
};

Tape forward(const ModelParams& p, const Instance& inst, double tau = 1.0);
// Accumulates scale * dLoss/dparams into grads.
void backward(const Tape& t, const ModelParams& p, double scale, ModelParams& grads);
// Mean loss over the batch; grads (if given) receive the mean gradient.
double batch_loss(const ModelParams& p, const std::vector<Instance>& batch, double tau, ModelParams* grads);

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  AdamConfig cfg;
  std::vector<Matrix> m, v;
  uint64_t t = 0;

  static OptimState create(const ModelParams& p, AdamConfig cfg = {});
};

void adamw_step(ModelParams& p, const ModelParams& grads, OptimState& st);

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t checked = 0;
  size_t kink_adjusted = 0;  // entries whose step was shrunk off a ReLU boundary
  std::string worst;         // tensor[index]
};
// Central differences over every parameter entry. The step shrinks (up to
// 1000x) while the two probes see different ReLU activation patterns.
GradCheckResult finite_difference_check(const ModelParams& p, const std::vector<Instance>& batch, double tau,
                                        double step = 1e-4);

void save_checkpoint(std::ostream& os, const ModelParams& p);
ModelParams load_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const ModelParams& p);
ModelParams load_checkpoint(const std::string& path);

}  // namespace opflow
