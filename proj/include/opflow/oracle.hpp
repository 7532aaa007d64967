// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace opflow {

struct OracleConfig {
  uint32_t layers = 4;
  uint32_t heads = 4;
  uint32_t head_dim = 16;
  double lambda = 0.8;  // locality decay of prefix mixing
  uint64_t seed = 42;

  uint32_t model_dim() const { return heads * head_dim; }
  void validate() const;
};

inline constexpr uint32_t kKvHeaderBytes = 36;
inline constexpr uint32_t kDtypeF32 = 1;
inline constexpr double kKvGrid = 1.0 / 65536.0;  // stored values are multiples of this
inline constexpr double kKvClamp = 127.0;

// keys/values laid out [layer][head][token][dim]
struct KVTensor {
  uint32_t layers = 0, heads = 0, tokens = 0, head_dim = 0;
  uint64_t position_offset = 0;
  std::vector<float> keys, values;

  size_t elements() const { return static_cast<size_t>(layers) * heads * tokens * head_dim; }
  size_t index(uint32_t l, uint32_t h, uint32_t t, uint32_t c) const {
    return ((static_cast<size_t>(l) * heads + h) * tokens + t) * head_dim + c;
  }
  uint64_t bytes() const { return kKvHeaderBytes + 2ull * elements() * sizeof(float); }
  bool same_shape(const KVTensor& o) const {
    return layers == o.layers && heads == o.heads && tokens == o.tokens && head_dim == o.head_dim &&
           position_offset == o.position_offset;
  }
  bool operator==(const KVTensor& o) const;  // bitwise
};

using TokenSeq = std::vector<uint32_t>;

TokenSeq tokenize(const std::string& text);

// Seeded projections and per-channel prefix sensitivities; immutable after
// construction, safe to share between threads.
class Oracle {
 public:
  explicit Oracle(const OracleConfig& cfg);
  const OracleConfig& config() const { return cfg_; }

  KVTensor kv_states(const TokenSeq& tokens, uint64_t position_offset) const;
  // Stateful op segment: computed over prefix+op, op part sliced out.
  KVTensor op_segment(const TokenSeq& prefix, const TokenSeq& op) const;
  // Stateless base: op alone at the aligned offset.
  KVTensor base_segment(uint64_t prefix_len, const TokenSeq& op) const;

 private:
  void embed(uint32_t token, uint64_t pos, double* out) const;
  OracleConfig cfg_;
  std::vector<double> wk_, wv_;      // [layer][in][out]
  std::vector<double> gk_, gv_;      // [layer][out]
};

KVTensor kv_states(const OracleConfig& cfg, const TokenSeq& tokens, uint64_t position_offset);
KVTensor op_segment(const OracleConfig& cfg, const TokenSeq& prefix, const TokenSeq& op);

double quantize_kv(double x);

void save_kv(std::ostream& os, const KVTensor& t);
KVTensor load_kv(std::istream& is);
void save_kv(const std::string& path, const KVTensor& t);
KVTensor load_kv(const std::string& path);

}  // namespace opflow
