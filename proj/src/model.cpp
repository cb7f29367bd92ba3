#include "dqkd/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dqkd/binio.hpp"

namespace dqkd::model {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kInitScale = 0.02;
constexpr std::uint32_t kCheckpointMagic = 0x4451434d;  // "DQCM"
constexpr std::uint32_t kCheckpointVersion = 1;

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// out[r] = W[r,:] . u  for W stored row-major [rows x cols]
inline void matvec(const double* w, const double* u, double* out, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = dot(w + r * cols, u, cols);
}

// du += W^T . dout
inline void matvec_t_acc(const double* w, const double* dout, double* du, std::size_t rows,
                         std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy(dout[r], w + r * cols, du, cols);
}

// dW[r,:] += dout[r] * u
inline void outer_acc(double* dw, const double* dout, const double* u, std::size_t rows,
                      std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy(dout[r], u, dw + r * cols, cols);
}

inline double rms_scale(const double* x, std::size_t n) {
  double ms = 0.0;
  for (std::size_t i = 0; i < n; ++i) ms += x[i] * x[i];
  return std::sqrt(ms / static_cast<double>(n) + kNormEps);
}

inline void rmsnorm(const double* x, double* y, std::size_t n) {
  double inv = 1.0 / rms_scale(x, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * inv;
}

// dx += backward of y = x / rms(x) given dy; recomputes y from x.
inline void rmsnorm_backward_acc(const double* x, const double* dy, double* dx, std::size_t n) {
  double r = rms_scale(x, n);
  double dot_dyy = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot_dyy += dy[i] * x[i];
  dot_dyy /= r;  // dot(dy, y)
  double mean_corr = dot_dyy / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) dx[i] += (dy[i] - (x[i] / r) * mean_corr) / r;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
  if (context_length < 2) throw ValidationError("context_length must be >= 2");
  if (d_model == 0 || n_layers == 0 || n_heads == 0) {
    throw ValidationError("d_model, n_layers and n_heads must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("d_model must be divisible by n_heads");
  }
}

void TrainingExample::validate(const ModelConfig& cfg) const {
  if (x.empty()) throw ValidationError("sample " + std::to_string(sample_id) + ": empty input x");
  if (y.empty()) throw ValidationError("sample " + std::to_string(sample_id) + ": empty target y");
  if (x.size() + y.size() > cfg.context_length) {
    throw ValidationError("sample " + std::to_string(sample_id) + ": |x|+L=" +
                          std::to_string(x.size() + y.size()) + " exceeds context length " +
                          std::to_string(cfg.context_length));
  }
  for (auto id : x) {
    if (id >= cfg.vocab_size) {
      throw ValidationError("sample " + std::to_string(sample_id) + ": token id out of range");
    }
  }
  for (auto id : y) {
    if (id >= cfg.vocab_size) {
      throw ValidationError("sample " + std::to_string(sample_id) + ": token id out of range");
    }
  }
}

std::size_t TensorInfo::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Model Model::init(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.config_ = cfg;
  auto add = [&m](const std::string& name, std::vector<std::uint32_t> dims) {
    TensorInfo t{name, 0, std::move(dims)};
    t.offset = m.params_.size();
    m.params_.resize(t.offset + t.numel());
    m.tensors_.push_back(std::move(t));
  };
  const auto V = cfg.vocab_size, C = cfg.context_length, D = cfg.d_model;
  add("wte", {V, D});
  add("wpe", {C, D});
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    add(p + "attn_wq", {D, D});
    add(p + "attn_wk", {D, D});
    add(p + "attn_wv", {D, D});
    add(p + "attn_wo", {D, D});
    add(p + "mlp_fc1", {4 * D, D});
    add(p + "mlp_fc2", {D, 4 * D});
  }
  add("head", {V, D});

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> dist(0.0, kInitScale);
  for (auto& p : m.params_) p = dist(rng);
  return m;
}

std::span<const double> Model::tensor(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return {params_.data() + t.offset, t.numel()};
  }
  throw ValidationError("unknown tensor: " + name);
}

// ---------------------------------------------------------------------------
// Forward / backward engine
// ---------------------------------------------------------------------------

struct Engine {
  const Model& m;
  const ModelConfig& cfg;
  std::size_t D, H, HD, V;
  double attn_scale;

  // Weight views, resolved once.
  const double* wte;
  const double* wpe;
  const double* head;
  struct LayerW {
    const double* wq;
    const double* wk;
    const double* wv;
    const double* wo;
    const double* fc1;
    const double* fc2;
  };
  std::vector<LayerW> layers;

  // Offsets mirroring the weight views, for gradient accumulation.
  std::size_t off_wte, off_wpe, off_head;
  struct LayerOff {
    std::size_t wq, wk, wv, wo, fc1, fc2;
  };
  std::vector<LayerOff> layer_off;

  explicit Engine(const Model& model)
      : m(model),
        cfg(model.config()),
        D(cfg.d_model),
        H(cfg.n_heads),
        HD(cfg.d_model / cfg.n_heads),
        V(cfg.vocab_size),
        attn_scale(1.0 / std::sqrt(static_cast<double>(cfg.d_model / cfg.n_heads))) {
    auto view = [this](const std::string& name, std::size_t& off) {
      for (const auto& t : m.tensors_) {
        if (t.name == name) {
          off = t.offset;
          return m.params_.data() + t.offset;
        }
      }
      throw ValidationError("unknown tensor: " + name);
    };
    wte = view("wte", off_wte);
    wpe = view("wpe", off_wpe);
    head = view("head", off_head);
    layers.resize(cfg.n_layers);
    layer_off.resize(cfg.n_layers);
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      layers[l].wq = view(p + "attn_wq", layer_off[l].wq);
      layers[l].wk = view(p + "attn_wk", layer_off[l].wk);
      layers[l].wv = view(p + "attn_wv", layer_off[l].wv);
      layers[l].wo = view(p + "attn_wo", layer_off[l].wo);
      layers[l].fc1 = view(p + "mlp_fc1", layer_off[l].fc1);
      layers[l].fc2 = view(p + "mlp_fc2", layer_off[l].fc2);
    }
  }

  struct LayerCache {
    std::vector<double> xin;      // T x D, block input
    std::vector<double> normed1;  // T x D
    std::vector<double> q, k, v;  // T x D each
    std::vector<double> attw;     // H x T x T, rows are softmaxed
    std::vector<double> ctx;      // T x D
    std::vector<double> x1;       // T x D, after attention residual
    std::vector<double> normed2;  // T x D
    std::vector<double> z1;       // T x 4D, pre-ReLU
    std::vector<double> x2;       // T x D, block output
  };

  struct Cache {
    std::size_t T = 0;
    std::vector<std::uint32_t> input;     // x ++ y[:-1]
    std::vector<std::size_t> out_pos;     // positions producing logits
    std::vector<LayerCache> layer;
    std::vector<double> hfin;             // L x D, final-norm output at out_pos
    std::vector<std::vector<double>> logits;  // L x V
  };

  Cache forward(const TrainingExample& ex) const {
    ex.validate(cfg);
    Cache c;
    c.input = ex.x;
    c.input.insert(c.input.end(), ex.y.begin(), ex.y.end() - 1);
    const std::size_t T = c.input.size();
    const std::size_t L = ex.y.size();
    c.T = T;
    c.out_pos.resize(L);
    for (std::size_t n = 0; n < L; ++n) c.out_pos[n] = ex.x.size() - 1 + n;

    c.layer.resize(cfg.n_layers);
    std::vector<double> emb(T * D);
    for (std::size_t t = 0; t < T; ++t) {
      const double* te = wte + static_cast<std::size_t>(c.input[t]) * D;
      const double* pe = wpe + t * D;
      for (std::size_t i = 0; i < D; ++i) emb[t * D + i] = te[i] + pe[i];
    }

    const std::vector<double>* cur = &emb;
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
      LayerCache& lc = c.layer[l];
      const LayerW& w = layers[l];
      lc.xin = *cur;
      lc.normed1.resize(T * D);
      lc.q.resize(T * D);
      lc.k.resize(T * D);
      lc.v.resize(T * D);
      lc.attw.assign(H * T * T, 0.0);
      lc.ctx.assign(T * D, 0.0);
      lc.x1.resize(T * D);
      for (std::size_t t = 0; t < T; ++t) {
        rmsnorm(&lc.xin[t * D], &lc.normed1[t * D], D);
        matvec(w.wq, &lc.normed1[t * D], &lc.q[t * D], D, D);
        matvec(w.wk, &lc.normed1[t * D], &lc.k[t * D], D, D);
        matvec(w.wv, &lc.normed1[t * D], &lc.v[t * D], D, D);
      }
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t hs = h * HD;
        for (std::size_t t = 0; t < T; ++t) {
          double* row = &lc.attw[(h * T + t) * T];
          double mx = -1e300;
          for (std::size_t j = 0; j <= t; ++j) {
            row[j] = dot(&lc.q[t * D + hs], &lc.k[j * D + hs], HD) * attn_scale;
            mx = std::max(mx, row[j]);
          }
          double total = 0.0;
          for (std::size_t j = 0; j <= t; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
          }
          double* out = &lc.ctx[t * D + hs];
          for (std::size_t j = 0; j <= t; ++j) {
            row[j] /= total;
            axpy(row[j], &lc.v[j * D + hs], out, HD);
          }
        }
      }
      std::vector<double> attn_out(D);
      for (std::size_t t = 0; t < T; ++t) {
        matvec(w.wo, &lc.ctx[t * D], attn_out.data(), D, D);
        for (std::size_t i = 0; i < D; ++i) lc.x1[t * D + i] = lc.xin[t * D + i] + attn_out[i];
      }

      lc.normed2.resize(T * D);
      lc.z1.resize(T * 4 * D);
      lc.x2.resize(T * D);
      std::vector<double> mlp_out(D);
      std::vector<double> f1(4 * D);
      for (std::size_t t = 0; t < T; ++t) {
        rmsnorm(&lc.x1[t * D], &lc.normed2[t * D], D);
        matvec(w.fc1, &lc.normed2[t * D], &lc.z1[t * 4 * D], 4 * D, D);
        for (std::size_t i = 0; i < 4 * D; ++i) f1[i] = std::max(lc.z1[t * 4 * D + i], 0.0);
        matvec(w.fc2, f1.data(), mlp_out.data(), D, 4 * D);
        for (std::size_t i = 0; i < D; ++i) lc.x2[t * D + i] = lc.x1[t * D + i] + mlp_out[i];
      }
      cur = &lc.x2;
    }

    c.hfin.resize(L * D);
    c.logits.assign(L, std::vector<double>(V));
    for (std::size_t n = 0; n < L; ++n) {
      const std::size_t t = c.out_pos[n];
      rmsnorm(&(*cur)[t * D], &c.hfin[n * D], D);
      matvec(head, &c.hfin[n * D], c.logits[n].data(), V, D);
    }
    return c;
  }

  // Accumulates d(loss)/d(theta) into `grads` given d(loss)/d(logits).
  void backward(const Cache& c, const std::vector<std::vector<double>>& dlogits,
                std::vector<double>& grads) const {
    const std::size_t T = c.T;
    const std::size_t L = c.out_pos.size();
    if (dlogits.size() != L) throw ValidationError("dlogits length mismatch");

    std::vector<double> dx(T * D, 0.0);  // gradient w.r.t. current block output
    {
      std::vector<double> dh(D);
      const std::vector<double>& xlast =
          cfg.n_layers > 0 ? c.layer.back().x2 : c.layer.front().xin;
      for (std::size_t n = 0; n < L; ++n) {
        const std::size_t t = c.out_pos[n];
        std::fill(dh.begin(), dh.end(), 0.0);
        outer_acc(grads.data() + off_head, dlogits[n].data(), &c.hfin[n * D], V, D);
        matvec_t_acc(head, dlogits[n].data(), dh.data(), V, D);
        rmsnorm_backward_acc(&xlast[t * D], dh.data(), &dx[t * D], D);
      }
    }

    std::vector<double> df1(4 * D), dz1(4 * D), dnormed(D), f1(4 * D);
    std::vector<double> dx1(T * D), dctx(T * D), dq(T * D), dk(T * D), dv(T * D);
    std::vector<double> datt(T);
    for (std::uint32_t li = cfg.n_layers; li-- > 0;) {
      const LayerCache& lc = c.layer[li];
      const LayerW& w = layers[li];
      const LayerOff& off = layer_off[li];

      // MLP block: x2 = x1 + fc2(relu(fc1(rmsnorm(x1))))
      std::fill(dx1.begin(), dx1.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double* dout = &dx[t * D];
        for (std::size_t i = 0; i < 4 * D; ++i) f1[i] = std::max(lc.z1[t * 4 * D + i], 0.0);
        outer_acc(grads.data() + off.fc2, dout, f1.data(), D, 4 * D);
        std::fill(df1.begin(), df1.end(), 0.0);
        matvec_t_acc(w.fc2, dout, df1.data(), D, 4 * D);
        for (std::size_t i = 0; i < 4 * D; ++i) {
          dz1[i] = lc.z1[t * 4 * D + i] > 0.0 ? df1[i] : 0.0;
        }
        outer_acc(grads.data() + off.fc1, dz1.data(), &lc.normed2[t * D], 4 * D, D);
        std::fill(dnormed.begin(), dnormed.end(), 0.0);
        matvec_t_acc(w.fc1, dz1.data(), dnormed.data(), 4 * D, D);
        // residual + norm path
        for (std::size_t i = 0; i < D; ++i) dx1[t * D + i] += dout[i];
        rmsnorm_backward_acc(&lc.x1[t * D], dnormed.data(), &dx1[t * D], D);
      }

      // Attention block: x1 = xin + wo(attend(rmsnorm(xin)))
      std::fill(dctx.begin(), dctx.end(), 0.0);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double* dout = &dx1[t * D];
        outer_acc(grads.data() + off.wo, dout, &lc.ctx[t * D], D, D);
        matvec_t_acc(w.wo, dout, &dctx[t * D], D, D);
      }
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t hs = h * HD;
        for (std::size_t t = 0; t < T; ++t) {
          const double* att = &lc.attw[(h * T + t) * T];
          const double* dctx_t = &dctx[t * D + hs];
          double inner = 0.0;
          for (std::size_t j = 0; j <= t; ++j) {
            datt[j] = dot(dctx_t, &lc.v[j * D + hs], HD);
            axpy(att[j], dctx_t, &dv[j * D + hs], HD);
            inner += datt[j] * att[j];
          }
          for (std::size_t j = 0; j <= t; ++j) {
            double dscore = att[j] * (datt[j] - inner) * attn_scale;
            axpy(dscore, &lc.k[j * D + hs], &dq[t * D + hs], HD);
            axpy(dscore, &lc.q[t * D + hs], &dk[j * D + hs], HD);
          }
        }
      }
      // dx becomes the gradient w.r.t. this block's input
      std::fill(dx.begin(), dx.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        outer_acc(grads.data() + off.wq, &dq[t * D], &lc.normed1[t * D], D, D);
        outer_acc(grads.data() + off.wk, &dk[t * D], &lc.normed1[t * D], D, D);
        outer_acc(grads.data() + off.wv, &dv[t * D], &lc.normed1[t * D], D, D);
        std::fill(dnormed.begin(), dnormed.end(), 0.0);
        matvec_t_acc(w.wq, &dq[t * D], dnormed.data(), D, D);
        matvec_t_acc(w.wk, &dk[t * D], dnormed.data(), D, D);
        matvec_t_acc(w.wv, &dv[t * D], dnormed.data(), D, D);
        for (std::size_t i = 0; i < D; ++i) dx[t * D + i] += dx1[t * D + i];
        rmsnorm_backward_acc(&lc.xin[t * D], dnormed.data(), &dx[t * D], D);
      }
    }

    // Embeddings
    for (std::size_t t = 0; t < T; ++t) {
      double* g_tok = grads.data() + off_wte + static_cast<std::size_t>(c.input[t]) * D;
      double* g_pos = grads.data() + off_wpe + t * D;
      for (std::size_t i = 0; i < D; ++i) {
        g_tok[i] += dx[t * D + i];
        g_pos[i] += dx[t * D + i];
      }
    }
  }
};

std::vector<std::vector<double>> Model::forward_logits(const TrainingExample& ex) const {
  Engine eng(*this);
  return eng.forward(ex).logits;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

// Softmax of a full logit row, in place, returning -log p[target].
double softmax_xent_inplace(std::vector<double>& row, std::uint32_t target) {
  double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (auto& z : row) {
    z = std::exp(z - mx);
    total += z;
  }
  for (auto& z : row) z /= total;
  return -std::log(std::max(row[target], kdcore::kProbFloor));
}

}  // namespace

LossResult ce_loss_and_grads(const Model& m, std::span<const TrainingExample> batch) {
  if (batch.empty()) throw ValidationError("cross-entropy over an empty batch");
  Engine eng(m);
  LossResult res;
  res.grads.assign(m.num_params(), 0.0);
  std::size_t total_tokens = 0;
  for (const auto& ex : batch) total_tokens += ex.y.size();
  res.token_count = total_tokens;
  const double inv_tokens = 1.0 / static_cast<double>(total_tokens);

  for (const auto& ex : batch) {
    Engine::Cache cache = eng.forward(ex);
    std::vector<std::vector<double>> dlogits(ex.y.size());
    for (std::size_t n = 0; n < ex.y.size(); ++n) {
      std::vector<double> probs = cache.logits[n];
      res.loss += softmax_xent_inplace(probs, ex.y[n]) * inv_tokens;
      probs[ex.y[n]] -= 1.0;
      for (auto& p : probs) p *= inv_tokens;
      dlogits[n] = std::move(probs);
    }
    eng.backward(cache, dlogits, res.grads);
  }
  return res;
}

LossResult kd_loss_and_grads(const Model& m, std::span<const TrainingExample> batch,
                             const TeacherRecords& teacher,
                             std::uint64_t teacher_vocab_hash,
                             const vocab::AlignmentMap* alignment,
                             const kdcore::DivergenceConfig& config, double alpha) {
  if (batch.empty()) throw ValidationError("kd loss over an empty batch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0,1]");
  config.validate();
  if (alpha == 0.0) return ce_loss_and_grads(m, batch);
  if (alignment && alignment->teacher_vocab_hash != teacher_vocab_hash) {
    throw ValidationError("alignment map does not match the teacher vocabulary hash");
  }

  Engine eng(m);
  LossResult res;
  res.grads.assign(m.num_params(), 0.0);
  std::size_t total_tokens = 0;
  for (const auto& ex : batch) total_tokens += ex.y.size();
  res.token_count = total_tokens;
  const double inv_tokens = 1.0 / static_cast<double>(total_tokens);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  double kd_total = 0.0;
  double ce_total = 0.0;
  for (const auto& ex : batch) {
    auto it = teacher.find(ex.sample_id);
    if (it == teacher.end()) {
      throw ValidationError("no teacher records for sample " + std::to_string(ex.sample_id));
    }
    const auto& records = it->second;
    if (records.size() != ex.y.size()) {
      throw ValidationError("teacher record count mismatch for sample " +
                            std::to_string(ex.sample_id));
    }

    Engine::Cache cache = eng.forward(ex);

    // Per-position aligned pairs.
    std::vector<kdcore::PositionPair> positions(records.size());
    std::vector<logitstore::TopKLogitRecord> projected(records.size());
    for (std::size_t n = 0; n < records.size(); ++n) {
      const logitstore::TopKLogitRecord* rec = &records[n];
      if (alignment) {
        projected[n] = vocab::project_topk(*rec, teacher_vocab_hash, *alignment);
        rec = &projected[n];
      } else {
        projected[n] = *rec;
      }
      if (!rec->entries.empty()) {
        positions[n] = kdcore::gather_position(*rec, cache.logits[n]);
      }
    }
    kd_total += kdcore::token_level_loss(positions, config) * inv_batch;
    auto pos_grads = kdcore::loss_gradient_wrt_student_logits(positions, config);

    std::vector<std::vector<double>> dlogits(ex.y.size(),
                                             std::vector<double>(m.config().vocab_size, 0.0));
    for (std::size_t n = 0; n < records.size(); ++n) {
      const auto& g = pos_grads[n];
      for (std::size_t i = 0; i < g.size(); ++i) {
        dlogits[n][projected[n].entries[i].token_id] += alpha * inv_batch * g[i];
      }
    }
    if (alpha < 1.0) {
      for (std::size_t n = 0; n < ex.y.size(); ++n) {
        std::vector<double> probs = cache.logits[n];
        ce_total += softmax_xent_inplace(probs, ex.y[n]) * inv_tokens;
        probs[ex.y[n]] -= 1.0;
        for (std::size_t vi = 0; vi < probs.size(); ++vi) {
          dlogits[n][vi] += (1.0 - alpha) * inv_tokens * probs[vi];
        }
      }
    }
    eng.backward(cache, dlogits, res.grads);
  }
  res.loss = alpha * kd_total + (1.0 - alpha) * ce_total;
  return res;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamState AdamState::for_model(const Model& m) {
  AdamState s;
  s.m.assign(m.num_params(), 0.0);
  s.v.assign(m.num_params(), 0.0);
  return s;
}

void optimizer_step(Model& m, std::span<const double> grads, double lr, AdamState& state) {
  if (grads.size() != m.num_params() || state.m.size() != m.num_params() ||
      state.v.size() != m.num_params()) {
    throw ValidationError("gradient/optimizer state shape mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw ValidationError("non-finite gradient; step rejected");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  auto params = m.params_mut();
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * grads[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
  }
  m.set_step(m.step() + 1);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void Model::save(const std::string& path) const {
  binio::Writer w;
  w.u32(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(config_.vocab_size);
  w.u32(config_.context_length);
  w.u32(config_.d_model);
  w.u32(config_.n_layers);
  w.u32(config_.n_heads);
  w.u64(config_.seed);
  w.u64(step_);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& t : tensors_) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      w.f32(static_cast<float>(params_[t.offset + i]));
    }
  }
  binio::write_file(path, w.data());
}

Model Model::load(const std::string& path) {
  std::string data = binio::read_file(path);
  binio::Reader r(data.data(), data.size(), "checkpoint " + path);
  if (r.u32() != kCheckpointMagic) throw ParseError("checkpoint " + path + ": bad magic");
  auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.vocab_size = r.u32();
  cfg.context_length = r.u32();
  cfg.d_model = r.u32();
  cfg.n_layers = r.u32();
  cfg.n_heads = r.u32();
  cfg.seed = r.u64();
  std::uint64_t step = r.u64();

  Model m = Model::init(cfg);
  m.step_ = step;
  auto n_tensors = r.u32();
  if (n_tensors != m.tensors_.size()) {
    throw ParseError("checkpoint " + path + ": tensor count mismatch");
  }
  for (const auto& expect : m.tensors_) {
    auto name_len = r.u32();
    std::string name = r.bytes(name_len);
    if (name != expect.name) {
      throw ParseError("checkpoint " + path + ": tensor '" + name + "' where '" + expect.name +
                       "' was expected");
    }
    auto rank = r.u32();
    if (rank != expect.dims.size()) {
      throw ParseError("checkpoint " + path + ": rank mismatch on " + name);
    }
    for (std::size_t i = 0; i < rank; ++i) {
      if (r.u32() != expect.dims[i]) {
        throw ParseError("checkpoint " + path + ": shape mismatch on " + name);
      }
    }
    for (std::size_t i = 0; i < expect.numel(); ++i) {
      m.params_[expect.offset + i] = static_cast<double>(r.f32());
    }
  }
  if (!r.done()) {
    throw ParseError("checkpoint " + path + ": trailing bytes at offset " +
                     std::to_string(r.offset()));
  }
  return m;
}

std::vector<std::uint32_t> greedy_decode(const Model& m, std::vector<std::uint32_t> prompt,
                                         std::size_t max_new_tokens) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < max_new_tokens; ++i) {
    if (prompt.size() + 1 >= m.config().context_length) break;
    TrainingExample probe;
    probe.x = prompt;
    probe.y = {0};  // single dummy target: we only want the next-token logits
    auto logits = m.forward_logits(probe);
    const auto& row = logits[0];
    std::uint32_t best = static_cast<std::uint32_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
    out.push_back(best);
    prompt.push_back(best);
  }
  return out;
}

}  // namespace dqkd::model
