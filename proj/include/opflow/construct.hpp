// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "opflow/features.hpp"
#include "opflow/neural.hpp"
#include "opflow/wgraph.hpp"

namespace opflow {

struct TrainSample {
  std::string task_text;
  Workflow target;  // canonical ids of the wGraph
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double tau = 1.0;
  uint64_t seed = 42;
  int hidden = 256;
  int mlp_hidden = 128;
  InitScheme init = InitScheme::scaled_relu;
  bool gumbel = true;
};

struct DecodeConfig {
  size_t max_nodes = 0;  // 0: |V_op|
  double theta_min = 0.5;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;
};

struct SyntheticCorpus {
  std::vector<Workflow> workflows;  // source repository, raw ids
  WGraph graph;
  std::vector<TrainSample> samples;
  std::vector<std::string> sample_workflow;  // source workflow id per sample
};

std::vector<double> build_labels(const Workflow& target, const WGraph& g);

SyntheticCorpus generate_synthetic_corpus(int vocab_size, int n_tasks, uint64_t seed);
// Fraction of task-operation occurrences whose operation also appears in
// another task's target.
double operation_reuse(const std::vector<TrainSample>& samples);

// Map a source workflow onto canonical wGraph ids.
Workflow canonicalize(const Workflow& wf, const WGraph& g);

// Noise-free instance with labels, as seen by the training loop.
Instance training_instance(const WGraph& g, const Embedder& e, const TrainSample& s);

TrainResult train(const WGraph& g, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                  const Embedder& embedder);
TrainResult train(const WGraph& g, const std::vector<TrainSample>& samples, const TrainConfig& cfg);

// Deterministic (noise-free) scores over E_op in canonical edge order.
std::vector<EdgeScore> score_edges(const WGraph& g, const std::string& task, const ModelParams& p,
                                   const Embedder& embedder);

std::vector<std::string> entry_operations(const WGraph& g);
Workflow instantiate_workflow(const WGraph& g, const std::map<Edge, double>& scores, const DecodeConfig& cfg);
Workflow generate(const WGraph& g, const std::string& task, const ModelParams& p, const DecodeConfig& cfg,
                  const Embedder& embedder);
Workflow generate(const WGraph& g, const std::string& task, const ModelParams& p, const DecodeConfig& cfg = {});

double edge_f1(const std::vector<Edge>& predicted, const std::vector<Edge>& target);

// Connected (every node reachable from a zero in-degree node), acyclic,
// edges within E_op.
bool is_valid_subworkflow(const Workflow& wf, const WGraph& g, std::string* why = nullptr);

// task<TAB>workflow_id per line
void save_samples(const std::string& path, const std::vector<TrainSample>& samples,
                  const std::vector<std::string>& workflow_ids);
std::vector<TrainSample> load_samples(const std::string& path, const std::vector<Workflow>& repo, const WGraph& g);

void save_loss_csv(const std::string& path, const std::vector<double>& epoch_loss);

}  // namespace opflow
