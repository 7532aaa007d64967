// SPDX-License-Identifier: Apache-2.0
#include "opflow/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "opflow/util.hpp"

namespace opflow {

// ---- parameters ----

namespace {

void init_uniform(Matrix& w, Rng& rng, double bound) {
  for (double& x : w.values()) x = rng.uniform(-bound, bound);
}

double glorot_bound(size_t fan_in, size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

ModelParams ModelParams::create(int D, int H, int M, uint64_t seed, InitScheme scheme) {
  if (D <= 0 || H <= 0 || M <= 0) throw ValidationError("model dimensions must be positive");
  ModelParams p;
  p.D = D;
  p.H = H;
  p.M = M;
  p.seed = seed;
  p.W1 = Matrix(D, H);
  p.W2 = Matrix(H, H);
  p.M1 = Matrix(3 * H, M);
  p.b1 = Matrix(1, M);
  p.M2 = Matrix(M, M);
  p.b2 = Matrix(1, M);
  p.M3 = Matrix(M, 1);
  p.b3 = Matrix(1, 1);
  if (scheme == InitScheme::zeros) return p;

  Rng rng(seed);
  const double gain = scheme == InitScheme::scaled_relu ? std::sqrt(2.0) : 1.0;
  for (Matrix* w : {&p.W1, &p.W2, &p.M1, &p.M2, &p.M3}) {
    double b = gain * glorot_bound(w->rows(), w->cols());
    // rows of X are unit vectors, so per-entry inputs are ~1/sqrt(D)
    if (w == &p.W1 && scheme == InitScheme::scaled_relu) b *= std::sqrt(static_cast<double>(D));
    init_uniform(*w, rng, b);
  }
  if (scheme == InitScheme::scaled_relu) {
    double mean = 0.0;
    for (double x : p.M3.values()) mean += x;
    mean /= static_cast<double>(p.M3.size());
    for (double& x : p.M3.values()) x -= mean;
  }
  return p;
}

std::vector<Matrix*> ModelParams::tensors() { return {&W1, &W2, &M1, &b1, &M2, &b2, &M3, &b3}; }

std::vector<const Matrix*> ModelParams::tensors() const { return {&W1, &W2, &M1, &b1, &M2, &b2, &M3, &b3}; }

const std::vector<std::string>& ModelParams::tensor_names() {
  static const std::vector<std::string> names{"gcn.W1", "gcn.W2", "mlp.M1", "mlp.b1",
                                              "mlp.M2", "mlp.b2", "mlp.M3", "mlp.b3"};
  return names;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = create(D, H, M, seed, InitScheme::zeros);
  return z;
}

bool ModelParams::all_finite() const {
  for (const Matrix* m : tensors())
    if (!m->all_finite()) return false;
  return true;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (D != o.D || H != o.H || M != o.M || seed != o.seed) return false;
  auto a = tensors();
  auto b = o.tensors();
  for (size_t i = 0; i < a.size(); ++i)
    if (!(*a[i] == *b[i])) return false;
  return true;
}

// ---- elementwise pieces ----

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double gumbel_sigmoid(double logit, double tau, double g) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  return sigmoid((logit + g) / tau);
}

double bce_loss(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("bce_loss: length mismatch");
  if (scores.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    double y = labels[i];
    if (y != 0.0 && y != 1.0) throw ValidationError("bce_loss: label outside {0,1}");
    double p = std::clamp(scores[i], kBceEps, 1.0 - kBceEps);
    s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return s / static_cast<double>(scores.size());
}

namespace {

void relu_inplace(const Matrix& in, Matrix& out) {
  out = in;
  for (double& x : out.values()) x = x > 0.0 ? x : 0.0;
}

void mask_relu(Matrix& grad, const Matrix& pre) {
  for (size_t k = 0; k < grad.size(); ++k)
    if (!(pre.data()[k] > 0.0)) grad.data()[k] = 0.0;
}

void add_bias(Matrix& m, const Matrix& b) {
  for (size_t i = 0; i < m.rows(); ++i) {
    double* r = m.row(i);
    for (size_t j = 0; j < m.cols(); ++j) r[j] += b(0, j);
  }
}

void accumulate(Matrix& dst, const Matrix& src, double scale = 1.0) {
  for (size_t k = 0; k < dst.size(); ++k) dst.data()[k] += scale * src.data()[k];
}

void accumulate_colsum(Matrix& dst, const Matrix& src) {
  for (size_t i = 0; i < src.rows(); ++i)
    for (size_t j = 0; j < src.cols(); ++j) dst(0, j) += src(i, j);
}

void check_gcn_inputs(const Matrix& X, const Matrix& A, const ModelParams& p) {
  if (A.rows() != A.cols() || A.rows() != X.rows())
    throw ValidationError("gcn_forward: adjacency shape does not match features");
  if (static_cast<int>(X.cols()) != p.D) throw ValidationError("gcn_forward: feature dimension mismatch");
  if (!X.all_finite()) throw NumericError("gcn_forward: non-finite input");
}

}  // namespace

Matrix normalized_adjacency(const Matrix& A) {
  const size_t n = A.rows();
  Matrix S(n, n);
  for (size_t i = 0; i < n; ++i) {
    S(i, i) = 1.0;
    for (size_t j = 0; j < n; ++j)
      if (i != j && (A(i, j) != 0.0 || A(j, i) != 0.0)) S(i, j) = 1.0;
  }
  std::vector<double> inv(n);
  for (size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (size_t j = 0; j < n; ++j) d += S(i, j);
    inv[i] = 1.0 / std::sqrt(d);
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) S(i, j) *= inv[i] * inv[j];
  return S;
}

Matrix gcn_forward(const Matrix& X, const Matrix& A, const ModelParams& p) {
  check_gcn_inputs(X, A, p);
  Matrix Ahat = normalized_adjacency(A);
  Matrix h;
  relu_inplace(matmul(Ahat, matmul(X, p.W1)), h);
  Matrix out;
  relu_inplace(matmul(Ahat, matmul(h, p.W2)), out);
  return out;
}

double mlp_logit(const double* h_i, const double* h_j, const double* h_task, const ModelParams& p) {
  const size_t H = p.H, M = p.M;
  std::vector<double> a1(p.b1.data(), p.b1.data() + M);
  const double* parts[3] = {h_i, h_j, h_task};
  for (size_t part = 0; part < 3; ++part)
    for (size_t k = 0; k < H; ++k) {
      double z = parts[part][k];
      if (z == 0.0) continue;
      const double* w = p.M1.row(part * H + k);
      for (size_t m = 0; m < M; ++m) a1[m] += z * w[m];
    }
  for (double& x : a1) x = x > 0.0 ? x : 0.0;
  std::vector<double> a2(p.b2.data(), p.b2.data() + M);
  for (size_t k = 0; k < M; ++k) {
    if (a1[k] == 0.0) continue;
    const double* w = p.M2.row(k);
    for (size_t m = 0; m < M; ++m) a2[m] += a1[k] * w[m];
  }
  double out = p.b3(0, 0);
  for (size_t k = 0; k < M; ++k) out += (a2[k] > 0.0 ? a2[k] : 0.0) * p.M3(k, 0);
  return out;
}

EdgeScore score_edge(const std::vector<double>& h_i, const std::vector<double>& h_j,
                     const std::vector<double>& h_task, const ModelParams& p) {
  const size_t H = p.H;
  if (h_i.size() != H || h_j.size() != H || h_task.size() != H)
    throw ValidationError("score_edge: embedding dimension mismatch");
  EdgeScore s;
  s.logit = mlp_logit(h_i.data(), h_j.data(), h_task.data(), p);
  s.score = sigmoid(s.logit);
  return s;
}

// ---- recorded forward / backward ----

Tape forward(const ModelParams& p, const Instance& inst, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  check_gcn_inputs(inst.X, inst.A, p);
  if (inst.labels.size() != inst.edges.size()) throw ValidationError("labels do not match edges");
  if (!inst.noise.empty() && inst.noise.size() != inst.edges.size())
    throw ValidationError("noise does not match edges");
  Tape t;
  t.inst = &inst;
  t.tau = tau;
  t.Ahat = normalized_adjacency(inst.A);
  t.P1 = matmul(t.Ahat, matmul(inst.X, p.W1));
  relu_inplace(t.P1, t.H1);
  t.P2 = matmul(t.Ahat, matmul(t.H1, p.W2));
  relu_inplace(t.P2, t.H2);

  const size_t E = inst.edges.size(), H = p.H, n = inst.X.rows();
  const size_t task = n - 1;
  t.Z = Matrix(E, 3 * H);
  for (size_t e = 0; e < E; ++e) {
    auto [i, j] = inst.edges[e];
    if (i >= n || j >= n) throw ValidationError("edge index out of range");
    std::copy(t.H2.row(i), t.H2.row(i) + H, t.Z.row(e));
    std::copy(t.H2.row(j), t.H2.row(j) + H, t.Z.row(e) + H);
    std::copy(t.H2.row(task), t.H2.row(task) + H, t.Z.row(e) + 2 * H);
  }
  t.A1 = matmul(t.Z, p.M1);
  add_bias(t.A1, p.b1);
  relu_inplace(t.A1, t.R1);
  t.A2 = matmul(t.R1, p.M2);
  add_bias(t.A2, p.b2);
  relu_inplace(t.A2, t.R2);
  Matrix w = matmul(t.R2, p.M3);
  t.logits.resize(E);
  t.scores.resize(E);
  for (size_t e = 0; e < E; ++e) {
    t.logits[e] = w(e, 0) + p.b3(0, 0);
    double g = inst.noise.empty() ? 0.0 : inst.noise[e];
    t.scores[e] = gumbel_sigmoid(t.logits[e], tau, g);
  }
  t.loss = bce_loss(t.scores, inst.labels);
  return t;
}

void backward(const Tape& t, const ModelParams& p, double scale, ModelParams& g) {
  const Instance& inst = *t.inst;
  const size_t E = inst.edges.size(), H = p.H, n = inst.X.rows();
  if (E == 0) return;
  Matrix dw(E, 1);
  for (size_t e = 0; e < E; ++e) {
    double s = t.scores[e];
    // the clamp has zero slope outside [eps, 1-eps]
    if (s < kBceEps || s > 1.0 - kBceEps) continue;
    dw(e, 0) = scale / static_cast<double>(E) * (s - inst.labels[e]) / t.tau;
  }
  accumulate(g.M3, matmul_tn(t.R2, dw));
  for (size_t e = 0; e < E; ++e) g.b3(0, 0) += dw(e, 0);

  Matrix dA2 = matmul_nt(dw, p.M3);
  mask_relu(dA2, t.A2);
  accumulate(g.M2, matmul_tn(t.R1, dA2));
  accumulate_colsum(g.b2, dA2);

  Matrix dA1 = matmul_nt(dA2, p.M2);
  mask_relu(dA1, t.A1);
  accumulate(g.M1, matmul_tn(t.Z, dA1));
  accumulate_colsum(g.b1, dA1);

  Matrix dZ = matmul_nt(dA1, p.M1);
  Matrix dH2(n, H);
  for (size_t e = 0; e < E; ++e) {
    auto [i, j] = inst.edges[e];
    const double* z = dZ.row(e);
    double* ri = dH2.row(i);
    double* rj = dH2.row(j);
    double* rt = dH2.row(n - 1);
    for (size_t k = 0; k < H; ++k) {
      ri[k] += z[k];
      rj[k] += z[H + k];
      rt[k] += z[2 * H + k];
    }
  }

  Matrix dP2 = dH2;
  mask_relu(dP2, t.P2);
  Matrix dHW = matmul(t.Ahat, dP2);  // Ahat is symmetric
  accumulate(g.W2, matmul_tn(t.H1, dHW));
  Matrix dP1 = matmul_nt(dHW, p.W2);
  mask_relu(dP1, t.P1);
  Matrix dXW = matmul(t.Ahat, dP1);
  accumulate(g.W1, matmul_tn(inst.X, dXW));
}

double batch_loss(const ModelParams& p, const std::vector<Instance>& batch, double tau, ModelParams* grads) {
  if (batch.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& inst : batch) {
    Tape t = forward(p, inst, tau);
    total += t.loss;
    if (grads) backward(t, p, scale, *grads);
  }
  return total * scale;
}

// ---- optimizer ----

OptimState OptimState::create(const ModelParams& p, AdamConfig cfg) {
  OptimState st;
  st.cfg = cfg;
  for (const Matrix* m : p.tensors()) {
    st.m.emplace_back(m->rows(), m->cols());
    st.v.emplace_back(m->rows(), m->cols());
  }
  return st;
}

void adamw_step(ModelParams& p, const ModelParams& grads, OptimState& st) {
  auto ps = p.tensors();
  auto gs = grads.tensors();
  if (st.m.size() != ps.size()) throw ValidationError("optimizer state does not match parameters");
  for (size_t k = 0; k < ps.size(); ++k) {
    if (gs[k]->rows() != ps[k]->rows() || gs[k]->cols() != ps[k]->cols())
      throw ValidationError("gradient shape mismatch for " + ModelParams::tensor_names()[k]);
    if (!gs[k]->all_finite()) throw NumericError("non-finite gradient in " + ModelParams::tensor_names()[k]);
  }
  const AdamConfig& c = st.cfg;
  ++st.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  for (size_t k = 0; k < ps.size(); ++k) {
    double* th = ps[k]->data();
    const double* g = gs[k]->data();
    double* m = st.m[k].data();
    double* v = st.v[k].data();
    for (size_t i = 0; i < ps[k]->size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      th[i] -= c.lr * (mh / (std::sqrt(vh) + c.eps) + c.weight_decay * th[i]);
    }
  }
}

namespace {

// Sign of every ReLU pre-activation over the batch.
std::vector<bool> relu_pattern(const ModelParams& p, const std::vector<Instance>& batch, double tau) {
  std::vector<bool> out;
  for (const auto& inst : batch) {
    Tape t = forward(p, inst, tau);
    for (const Matrix* m : {&t.P1, &t.P2, &t.A1, &t.A2})
      for (double x : m->values()) out.push_back(x > 0.0);
  }
  return out;
}

}  // namespace

GradCheckResult finite_difference_check(const ModelParams& p, const std::vector<Instance>& batch, double tau,
                                        double step) {
  ModelParams analytic = p.zeros_like();
  batch_loss(p, batch, tau, &analytic);
  ModelParams work = p;
  GradCheckResult r;
  auto wt = work.tensors();
  auto at = analytic.tensors();
  for (size_t k = 0; k < wt.size(); ++k) {
    for (size_t i = 0; i < wt[k]->size(); ++i) {
      double& th = wt[k]->data()[i];
      const double orig = th;
      // a stencil straddling a ReLU kink measures a one-sided mix; shrink it
      double h = step;
      for (int tries = 0; tries < 3; ++tries) {
        th = orig + h;
        auto up = relu_pattern(work, batch, tau);
        th = orig - h;
        auto down = relu_pattern(work, batch, tau);
        if (up == down) break;
        h *= 0.1;
        if (tries == 0) ++r.kink_adjusted;
      }
      th = orig + h;
      double lp = batch_loss(work, batch, tau, nullptr);
      th = orig - h;
      double lm = batch_loss(work, batch, tau, nullptr);
      th = orig;
      double num = (lp - lm) / (2.0 * h);
      double ana = at[k]->data()[i];
      double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
      double rel = std::abs(num - ana) / denom;
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = ModelParams::tensor_names()[k] + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// ---- checkpoint ----

namespace {
constexpr char kCkptMagic[8] = {'O', 'P', 'F', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(std::ostream& os, const ModelParams& p) {
  os.write(kCkptMagic, 8);
  put_u32(os, kCkptVersion);
  put_u32(os, static_cast<uint32_t>(p.D));
  put_u32(os, static_cast<uint32_t>(p.H));
  put_u32(os, static_cast<uint32_t>(p.M));
  put_u64(os, p.seed);
  auto ts = p.tensors();
  put_u32(os, static_cast<uint32_t>(ts.size()));
  for (const Matrix* m : ts) {
    put_u32(os, static_cast<uint32_t>(m->rows()));
    put_u32(os, static_cast<uint32_t>(m->cols()));
  }
  for (const Matrix* m : ts)
    for (double x : m->values()) put_f64(os, x);
}

ModelParams load_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || !std::equal(magic, magic + 8, kCkptMagic)) throw ValidationError("not a checkpoint file");
  uint32_t ver = get_u32(is);
  if (ver != kCkptVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(ver));
  int D = static_cast<int>(get_u32(is));
  int H = static_cast<int>(get_u32(is));
  int M = static_cast<int>(get_u32(is));
  uint64_t seed = get_u64(is);
  if (D <= 0 || H <= 0 || M <= 0 || D > (1 << 20) || H > (1 << 16) || M > (1 << 16))
    throw ValidationError("checkpoint has invalid dimensions");
  ModelParams p = ModelParams::create(D, H, M, seed, InitScheme::zeros);
  auto ts = p.tensors();
  if (get_u32(is) != ts.size()) throw ValidationError("checkpoint tensor count mismatch");
  for (Matrix* m : ts) {
    uint32_t r = get_u32(is), c = get_u32(is);
    if (r != m->rows() || c != m->cols()) throw ValidationError("checkpoint tensor shape mismatch");
  }
  for (Matrix* m : ts)
    for (double& x : m->values()) x = get_f64(is);
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes in checkpoint");
  if (!p.all_finite()) throw NumericError("checkpoint contains non-finite values");
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ostringstream os;
  save_checkpoint(os, p);
  write_file(path, os.str());
}

ModelParams load_checkpoint(const std::string& path) {
  std::istringstream is(read_file(path));
  try {
    return load_checkpoint(is);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace opflow
