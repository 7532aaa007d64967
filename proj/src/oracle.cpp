// SPDX-License-Identifier: Apache-2.0
#include "opflow/oracle.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "opflow/util.hpp"

namespace opflow {

void OracleConfig::validate() const {
  if (layers == 0 || heads == 0 || head_dim == 0) throw ValidationError("oracle dimensions must be positive");
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ValidationError("oracle lambda must lie in [0, 1)");
}

bool KVTensor::operator==(const KVTensor& o) const {
  return same_shape(o) && keys.size() == o.keys.size() && values.size() == o.values.size() &&
         std::memcmp(keys.data(), o.keys.data(), keys.size() * sizeof(float)) == 0 &&
         std::memcmp(values.data(), o.values.data(), values.size() * sizeof(float)) == 0;
}

TokenSeq tokenize(const std::string& text) {
  TokenSeq out;
  for (const auto& w : split_ws(to_lower(text))) out.push_back(static_cast<uint32_t>(fnv1a64(w) & 0xfffff));
  return out;
}

double quantize_kv(double x) {
  double q = std::nearbyint(x / kKvGrid) * kKvGrid;
  if (q > kKvClamp) q = kKvClamp;
  if (q < -kKvClamp) q = -kKvClamp;
  return q + 0.0;  // no negative zero
}

namespace {

double unit_from(uint64_t& s) { return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53; }

}  // namespace

Oracle::Oracle(const OracleConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const size_t dm = cfg_.model_dim();
  const double a = std::sqrt(3.0) / std::sqrt(static_cast<double>(dm));
  wk_.resize(cfg_.layers * dm * dm);
  wv_.resize(cfg_.layers * dm * dm);
  gk_.resize(cfg_.layers * dm);
  gv_.resize(cfg_.layers * dm);
  uint64_t s = mix64(cfg_.seed, 0x6f7261636c65ULL);
  for (double& w : wk_) w = a * (2.0 * unit_from(s) - 1.0);
  for (double& w : wv_) w = a * (2.0 * unit_from(s) - 1.0);
  // most channels barely react to context, a few react strongly
  for (double& g : gk_) g = std::pow(unit_from(s), 8.0);
  for (double& g : gv_) g = std::pow(unit_from(s), 8.0);
}

void Oracle::embed(uint32_t token, uint64_t pos, double* out) const {
  const size_t dm = cfg_.model_dim();
  uint64_t s = mix64(cfg_.seed, token);
  const double r3 = std::sqrt(3.0);
  for (size_t i = 0; i < dm; ++i) {
    double pe_freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dm));
    double pe = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * pe_freq) : std::cos(static_cast<double>(pos) * pe_freq);
    out[i] = r3 * (2.0 * unit_from(s) - 1.0) + 0.5 * pe;
  }
}

KVTensor Oracle::kv_states(const TokenSeq& tokens, uint64_t position_offset) const {
  if (tokens.empty()) throw ValidationError("kv_states: empty token sequence");
  const uint64_t limit = static_cast<uint64_t>(std::numeric_limits<int32_t>::max());
  if (position_offset > limit || tokens.size() > limit - position_offset)
    throw ValidationError("kv_states: position offset overflows the position index");
  const size_t dm = cfg_.model_dim(), T = tokens.size();
  KVTensor out;
  out.layers = cfg_.layers;
  out.heads = cfg_.heads;
  out.tokens = static_cast<uint32_t>(T);
  out.head_dim = cfg_.head_dim;
  out.position_offset = position_offset;
  out.keys.resize(out.elements());
  out.values.resize(out.elements());

  std::vector<double> emb(T * dm);
  for (size_t t = 0; t < T; ++t) embed(tokens[t], position_offset + t, emb.data() + t * dm);

  std::vector<double> k(dm), v(dm), acc_k(dm), acc_v(dm), prev_k(dm), prev_v(dm);
  for (uint32_t l = 0; l < cfg_.layers; ++l) {
    const double* WK = wk_.data() + l * dm * dm;
    const double* WV = wv_.data() + l * dm * dm;
    const double* GK = gk_.data() + l * dm;
    const double* GV = gv_.data() + l * dm;
    std::fill(acc_k.begin(), acc_k.end(), 0.0);
    std::fill(acc_v.begin(), acc_v.end(), 0.0);
    for (size_t t = 0; t < T; ++t) {
      std::fill(k.begin(), k.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      const double* e = emb.data() + t * dm;
      for (size_t i = 0; i < dm; ++i) {
        const double* wk = WK + i * dm;
        const double* wv = WV + i * dm;
        for (size_t j = 0; j < dm; ++j) {
          k[j] += e[i] * wk[j];
          v[j] += e[i] * wv[j];
        }
      }
      if (t > 0)
        for (size_t j = 0; j < dm; ++j) {
          acc_k[j] = cfg_.lambda * (acc_k[j] + prev_k[j]);
          acc_v[j] = cfg_.lambda * (acc_v[j] + prev_v[j]);
        }
      for (size_t j = 0; j < dm; ++j) {
        uint32_t h = static_cast<uint32_t>(j / cfg_.head_dim), c = static_cast<uint32_t>(j % cfg_.head_dim);
        size_t idx = out.index(l, h, static_cast<uint32_t>(t), c);
        out.keys[idx] = static_cast<float>(quantize_kv(k[j] + GK[j] * acc_k[j]));
        out.values[idx] = static_cast<float>(quantize_kv(v[j] + GV[j] * acc_v[j]));
      }
      prev_k.swap(k);
      prev_v.swap(v);
    }
  }
  return out;
}

KVTensor Oracle::op_segment(const TokenSeq& prefix, const TokenSeq& op) const {
  if (op.empty()) throw ValidationError("op_segment: empty operation tokens");
  if (prefix.empty()) return kv_states(op, 0);
  TokenSeq all(prefix);
  all.insert(all.end(), op.begin(), op.end());
  KVTensor full = kv_states(all, 0);
  KVTensor seg;
  seg.layers = full.layers;
  seg.heads = full.heads;
  seg.tokens = static_cast<uint32_t>(op.size());
  seg.head_dim = full.head_dim;
  seg.position_offset = prefix.size();
  seg.keys.resize(seg.elements());
  seg.values.resize(seg.elements());
  for (uint32_t l = 0; l < seg.layers; ++l)
    for (uint32_t h = 0; h < seg.heads; ++h)
      for (uint32_t t = 0; t < seg.tokens; ++t) {
        size_t src = full.index(l, h, static_cast<uint32_t>(prefix.size()) + t, 0);
        size_t dst = seg.index(l, h, t, 0);
        std::memcpy(&seg.keys[dst], &full.keys[src], seg.head_dim * sizeof(float));
        std::memcpy(&seg.values[dst], &full.values[src], seg.head_dim * sizeof(float));
      }
  return seg;
}

KVTensor Oracle::base_segment(uint64_t prefix_len, const TokenSeq& op) const { return kv_states(op, prefix_len); }

KVTensor kv_states(const OracleConfig& cfg, const TokenSeq& tokens, uint64_t position_offset) {
  return Oracle(cfg).kv_states(tokens, position_offset);
}

KVTensor op_segment(const OracleConfig& cfg, const TokenSeq& prefix, const TokenSeq& op) {
  return Oracle(cfg).op_segment(prefix, op);
}

// ---- file format ----

void save_kv(std::ostream& os, const KVTensor& t) {
  os.write("OPKV", 4);
  put_u32(os, 1);
  put_u32(os, t.layers);
  put_u32(os, t.heads);
  put_u32(os, t.tokens);
  put_u32(os, t.head_dim);
  put_u64(os, t.position_offset);
  put_u32(os, kDtypeF32);
  for (float x : t.keys) put_f32(os, x);
  for (float x : t.values) put_f32(os, x);
}

KVTensor load_kv(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "OPKV", 4) != 0) throw ValidationError("not a KV tensor file");
  if (get_u32(is) != 1) throw ValidationError("unsupported KV file version");
  KVTensor t;
  t.layers = get_u32(is);
  t.heads = get_u32(is);
  t.tokens = get_u32(is);
  t.head_dim = get_u32(is);
  t.position_offset = get_u64(is);
  if (get_u32(is) != kDtypeF32) throw ValidationError("unsupported KV dtype");
  if (t.elements() > (1ull << 32)) throw ValidationError("KV tensor too large");
  t.keys.resize(t.elements());
  t.values.resize(t.elements());
  for (float& x : t.keys) x = get_f32(is);
  for (float& x : t.values) x = get_f32(is);
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes in KV file");
  return t;
}

void save_kv(const std::string& path, const KVTensor& t) {
  std::ostringstream os;
  save_kv(os, t);
  write_file(path, os.str());
}

KVTensor load_kv(const std::string& path) {
  std::istringstream is(read_file(path));
  try {
    return load_kv(is);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace opflow
