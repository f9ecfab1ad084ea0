#pragma once

// Chunk-level bidirectional transformer with a vector-regression head.
//
// Inputs are frozen chunk vectors (d_in). CLS, SEP and the mask token are
// trainable d_in vectors substituted by slot kind before the input
// projection; PAD is the constant zero vector and is never trained. Chunk
// vectors themselves receive no gradient. The stack is pre-LN by default
// (post-LN available), with learned absolute position embeddings and exact
// erf GELU. The head predicts the original chunk vector at selected
// positions; training minimizes smooth L1 against the pre-masking vectors.
//
// All gradients are analytic and templated on the scalar type, so the same
// code path runs in double for finite-difference verification.

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "masking.hpp"
#include "packing.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace nlm {

struct ModelConfig {
    int d_in = 64;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int ffn_hidden = 0;   // 0 -> 4 * d_model
    int head_hidden = 0;  // 0 -> d_model
    int seq_len = 64;
    double dropout = 0.1;
    double loss_beta = 1.0;
    bool pre_ln = true;

    void finalize() {
        if (ffn_hidden == 0) ffn_hidden = 4 * d_model;
        if (head_hidden == 0) head_hidden = d_model;
    }

    void validate() const {
        if (d_in < 1 || d_model < 1) throw DataError("model dimensions must be positive");
        if (n_layers < 0) throw DataError("layer count must be non-negative");
        if (n_heads < 1 || d_model % n_heads != 0) {
            throw DataError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                            std::to_string(n_heads) + ")");
        }
        if (ffn_hidden < 1 || head_hidden < 1) throw DataError("config not finalized: hidden sizes unset");
        if (seq_len < 3) throw DataError("sequence length must be at least 3");
        if (dropout < 0.0 || dropout >= 1.0) throw DataError("dropout must be in [0, 1)");
        if (loss_beta <= 0.0) throw DataError("loss beta must be positive");
    }
};

inline void to_json(nlohmann::ordered_json& j, const ModelConfig& c) {
    j = {{"d_in", c.d_in},           {"d_model", c.d_model},       {"n_layers", c.n_layers},
         {"n_heads", c.n_heads},     {"ffn_hidden", c.ffn_hidden}, {"head_hidden", c.head_hidden},
         {"seq_len", c.seq_len},     {"dropout", c.dropout},       {"loss_beta", c.loss_beta},
         {"pre_ln", c.pre_ln}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig defaults;
    c.d_in = j.value("d_in", defaults.d_in);
    c.d_model = j.value("d_model", defaults.d_model);
    c.n_layers = j.value("n_layers", defaults.n_layers);
    c.n_heads = j.value("n_heads", defaults.n_heads);
    c.ffn_hidden = j.value("ffn_hidden", defaults.ffn_hidden);
    c.head_hidden = j.value("head_hidden", defaults.head_hidden);
    c.seq_len = j.value("seq_len", defaults.seq_len);
    c.dropout = j.value("dropout", defaults.dropout);
    c.loss_beta = j.value("loss_beta", defaults.loss_beta);
    c.pre_ln = j.value("pre_ln", defaults.pre_ln);
}

// Tokens a document can see at once: tokens per chunk times chunk slots.
inline uint64_t effective_context(uint64_t chunk_tokens, uint64_t seq_len) {
    return chunk_tokens * seq_len;
}

template <typename T>
struct LayerParams {
    Matrix<T> ln1_gain, ln1_bias;
    Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix<T> ln2_gain, ln2_bias;
    Matrix<T> w1, b1, w2, b2;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    Matrix<T> input_w, input_b;  // d_model x d_in, d_model
    Matrix<T> pos_emb;           // seq_len x d_model
    Matrix<T> cls, sep, mask;    // d_in each
    std::vector<LayerParams<T>> layers;
    Matrix<T> final_ln_gain, final_ln_bias;
    Matrix<T> head_w1, head_b1;          // head_hidden x d_model, head_hidden
    Matrix<T> head_ln_gain, head_ln_bias;
    Matrix<T> head_w2, head_b2;          // d_in x head_hidden, d_in
};

template <typename T>
struct TensorView {
    std::string name;
    std::vector<size_t> shape;
    T* data = nullptr;
    size_t size = 0;
    bool decay = false;
};

template <typename T>
std::vector<TensorView<T>> tensors(ModelParams<T>& p) {
    std::vector<TensorView<T>> out;
    auto add = [&](const std::string& name, Matrix<T>& m, bool decay) {
        TensorView<T> v;
        v.name = name;
        v.shape = m.rows > 1 ? std::vector<size_t>{m.rows, m.cols} : std::vector<size_t>{m.size()};
        v.data = m.data.data();
        v.size = m.size();
        v.decay = decay;
        out.push_back(std::move(v));
    };
    add("input_proj.w", p.input_w, true);
    add("input_proj.b", p.input_b, false);
    add("pos_emb", p.pos_emb, true);
    add("special.cls", p.cls, false);
    add("special.sep", p.sep, false);
    add("special.mask", p.mask, false);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        std::string base = "layers." + std::to_string(i) + ".";
        LayerParams<T>& l = p.layers[i];
        add(base + "ln1.gain", l.ln1_gain, false);
        add(base + "ln1.bias", l.ln1_bias, false);
        add(base + "attn.wq", l.wq, true);
        add(base + "attn.bq", l.bq, false);
        add(base + "attn.wk", l.wk, true);
        add(base + "attn.bk", l.bk, false);
        add(base + "attn.wv", l.wv, true);
        add(base + "attn.bv", l.bv, false);
        add(base + "attn.wo", l.wo, true);
        add(base + "attn.bo", l.bo, false);
        add(base + "ln2.gain", l.ln2_gain, false);
        add(base + "ln2.bias", l.ln2_bias, false);
        add(base + "ffn.w1", l.w1, true);
        add(base + "ffn.b1", l.b1, false);
        add(base + "ffn.w2", l.w2, true);
        add(base + "ffn.b2", l.b2, false);
    }
    add("final_ln.gain", p.final_ln_gain, false);
    add("final_ln.bias", p.final_ln_bias, false);
    add("head.w1", p.head_w1, true);
    add("head.b1", p.head_b1, false);
    add("head.ln.gain", p.head_ln_gain, false);
    add("head.ln.bias", p.head_ln_bias, false);
    add("head.w2", p.head_w2, true);
    add("head.b2", p.head_b2, false);
    return out;
}

namespace detail {
template <typename T>
void alloc_params(ModelParams<T>& p, const ModelConfig& cfg) {
    size_t dm = static_cast<size_t>(cfg.d_model), di = static_cast<size_t>(cfg.d_in);
    size_t ff = static_cast<size_t>(cfg.ffn_hidden), hh = static_cast<size_t>(cfg.head_hidden);
    p.config = cfg;
    p.input_w = Matrix<T>(dm, di);
    p.input_b = Matrix<T>(1, dm);
    p.pos_emb = Matrix<T>(static_cast<size_t>(cfg.seq_len), dm);
    p.cls = Matrix<T>(1, di);
    p.sep = Matrix<T>(1, di);
    p.mask = Matrix<T>(1, di);
    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
        l.ln1_gain = Matrix<T>(1, dm);
        l.ln1_bias = Matrix<T>(1, dm);
        l.wq = Matrix<T>(dm, dm);
        l.bq = Matrix<T>(1, dm);
        l.wk = Matrix<T>(dm, dm);
        l.bk = Matrix<T>(1, dm);
        l.wv = Matrix<T>(dm, dm);
        l.bv = Matrix<T>(1, dm);
        l.wo = Matrix<T>(dm, dm);
        l.bo = Matrix<T>(1, dm);
        l.ln2_gain = Matrix<T>(1, dm);
        l.ln2_bias = Matrix<T>(1, dm);
        l.w1 = Matrix<T>(ff, dm);
        l.b1 = Matrix<T>(1, ff);
        l.w2 = Matrix<T>(dm, ff);
        l.b2 = Matrix<T>(1, dm);
    }
    p.final_ln_gain = Matrix<T>(1, dm);
    p.final_ln_bias = Matrix<T>(1, dm);
    p.head_w1 = Matrix<T>(hh, dm);
    p.head_b1 = Matrix<T>(1, hh);
    p.head_ln_gain = Matrix<T>(1, hh);
    p.head_ln_bias = Matrix<T>(1, hh);
    p.head_w2 = Matrix<T>(di, hh);
    p.head_b2 = Matrix<T>(1, di);
}
}  // namespace detail

// Weights: truncated normal, std 0.02. Biases zero, LN gains one. Each
// tensor draws from its own stream keyed by name, so init is stable under
// enumeration-order changes.
template <typename T>
ModelParams<T> init_params(ModelConfig cfg, uint64_t seed) {
    cfg.finalize();
    cfg.validate();
    ModelParams<T> p;
    detail::alloc_params(p, cfg);
    for (auto& t : tensors(p)) {
        bool gain = t.name.size() >= 4 && t.name.compare(t.name.size() - 4, 4, "gain") == 0;
        Rng rng(derive_seed(seed, {hash_bytes(t.name)}));
        if (gain) {
            for (size_t i = 0; i < t.size; ++i) t.data[i] = T(1);
        } else if (t.decay || t.name.rfind("special.", 0) == 0 || t.name == "pos_emb") {
            for (size_t i = 0; i < t.size; ++i) t.data[i] = static_cast<T>(rng.truncated_normal(0.02));
        } else {
            for (size_t i = 0; i < t.size; ++i) t.data[i] = T(0);
        }
    }
    return p;
}

template <typename T>
ModelParams<T> zero_like(const ModelParams<T>& p) {
    ModelParams<T> g;
    detail::alloc_params(g, p.config);
    return g;
}

// Identity model: no layers, identity projection, zero position embeddings.
// Its contextualized output equals its input, which makes pooled embeddings
// coincide with the plain mean of raw chunk vectors.
template <typename T>
ModelParams<T> make_passthrough(int dim, int seq_len) {
    ModelConfig cfg;
    cfg.d_in = dim;
    cfg.d_model = dim;
    cfg.n_layers = 0;
    cfg.n_heads = 1;
    cfg.seq_len = seq_len;
    cfg.dropout = 0.0;
    cfg.finalize();
    cfg.validate();
    ModelParams<T> p;
    detail::alloc_params(p, cfg);
    for (int i = 0; i < dim; ++i) p.input_w(static_cast<size_t>(i), static_cast<size_t>(i)) = T(1);
    for (size_t i = 0; i < p.final_ln_gain.size(); ++i) p.final_ln_gain.data[i] = T(1);
    for (size_t i = 0; i < p.head_ln_gain.size(); ++i) p.head_ln_gain.data[i] = T(1);
    return p;
}

struct DropoutCtx {
    bool enabled = false;
    uint64_t seed = 0;
    uint64_t step = 0;
};

namespace detail {

inline constexpr double kLnEps = 1e-5;

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
    const T inv_sqrt2pi = T(0.3989422804014327);
    return T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2)))) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
}

// y[n, :] = W x[n, :] + b for row-major W (out x in).
template <typename T>
void linear_forward(const Matrix<T>& w, const Matrix<T>& b, const T* x, T* y, size_t n) {
    const size_t in = w.cols, out = w.rows;
    for (size_t r = 0; r < n; ++r) {
        const T* xr = x + r * in;
        T* yr = y + r * out;
        for (size_t o = 0; o < out; ++o) {
            T acc = b.data[o];
            const T* wr = w.row(o);
            for (size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
}

template <typename T>
void linear_backward(const Matrix<T>& w, const T* x, const T* dy, T* dx, Matrix<T>& dw, Matrix<T>& db,
                     size_t n) {
    const size_t in = w.cols, out = w.rows;
    for (size_t r = 0; r < n; ++r) {
        const T* xr = x + r * in;
        const T* dyr = dy + r * out;
        T* dxr = dx ? dx + r * in : nullptr;
        for (size_t o = 0; o < out; ++o) {
            T g = dyr[o];
            if (g == T(0)) continue;
            db.data[o] += g;
            T* dwr = dw.row(o);
            const T* wr = w.row(o);
            for (size_t i = 0; i < in; ++i) {
                dwr[i] += g * xr[i];
                if (dxr) dxr[i] += g * wr[i];
            }
        }
    }
}

template <typename T>
void layernorm_forward(const T* x, const Matrix<T>& gain, const Matrix<T>& bias, T* y, T* mean, T* rstd,
                       size_t n, size_t d) {
    for (size_t r = 0; r < n; ++r) {
        const T* xr = x + r * d;
        T* yr = y + r * d;
        T mu = T(0);
        for (size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= T(d);
        T var = T(0);
        for (size_t i = 0; i < d; ++i) {
            T c = xr[i] - mu;
            var += c * c;
        }
        var /= T(d);
        T rs = T(1) / std::sqrt(var + T(kLnEps));
        mean[r] = mu;
        rstd[r] = rs;
        for (size_t i = 0; i < d; ++i) yr[i] = gain.data[i] * (xr[i] - mu) * rs + bias.data[i];
    }
}

template <typename T>
void layernorm_backward(const T* x, const Matrix<T>& gain, const T* mean, const T* rstd, const T* dy,
                        T* dx, Matrix<T>& dgain, Matrix<T>& dbias, size_t n, size_t d) {
    for (size_t r = 0; r < n; ++r) {
        const T* xr = x + r * d;
        const T* dyr = dy + r * d;
        T* dxr = dx + r * d;
        T mu = mean[r], rs = rstd[r];
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (size_t i = 0; i < d; ++i) {
            T xhat = (xr[i] - mu) * rs;
            T dxhat = dyr[i] * gain.data[i];
            dgain.data[i] += dyr[i] * xhat;
            dbias.data[i] += dyr[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        for (size_t i = 0; i < d; ++i) {
            T xhat = (xr[i] - mu) * rs;
            T dxhat = dyr[i] * gain.data[i];
            dxr[i] += rs * (dxhat - sum_dxhat / T(d) - xhat * sum_dxhat_xhat / T(d));
        }
    }
}

// Inverted dropout. Fills mask with 0 or 1/(1-p); multiplies x in place.
template <typename T>
void dropout_forward(T* x, T* mask, size_t n, double p, Rng& rng) {
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (size_t i = 0; i < n; ++i) {
        T m = rng.uniform01() < p ? T(0) : scale;
        mask[i] = m;
        x[i] *= m;
    }
}

}  // namespace detail

template <typename T>
struct LayerCache {
    std::vector<T> x;       // layer input
    std::vector<T> ln1_mean, ln1_rstd;
    std::vector<T> a_in;    // attention input
    std::vector<T> q, k, v;
    std::vector<T> probs;      // batch * heads * L * L, post-dropout
    std::vector<T> probs_pre;  // pre-dropout softmax, only kept when dropout is on
    std::vector<T> probs_mask;
    std::vector<T> heads;   // concatenated head outputs
    std::vector<T> attn_out;
    std::vector<T> attn_mask;
    std::vector<T> sum1;
    std::vector<T> r1;
    std::vector<T> ln2_mean, ln2_rstd;
    std::vector<T> f_in;
    std::vector<T> ffn_pre;
    std::vector<T> ffn_act;
    std::vector<T> ffn_out;
    std::vector<T> ffn_mask;
    std::vector<T> sum2;
    std::vector<T> out;
};

template <typename T>
struct ForwardCache {
    int batch = 0, seq_len = 0;
    std::vector<T> x0;        // inputs after special substitution, batch*L*d_in
    std::vector<T> proj;      // batch*L*d_model before dropout
    std::vector<T> emb;       // after position add and dropout
    std::vector<T> emb_mask;
    std::vector<LayerCache<T>> layers;
    std::vector<T> final_mean, final_rstd;
    std::vector<T> ctx;       // contextualized outputs, batch*L*d_model

    // head, filled by mlm_head_forward
    std::vector<size_t> loss_rows;  // indices into plan.selected
    std::vector<T> head_in;         // rows x d_model
    std::vector<T> head_pre;        // rows x head_hidden
    std::vector<T> head_act;
    std::vector<T> head_ln_mean, head_ln_rstd;
    std::vector<T> head_norm;
    std::vector<T> pred;            // rows x d_in
};

// Runs the stack and fills cache.ctx. Masked positions read the model's own
// mask vector (it is a trainable parameter); random/kept substitutions stay
// as the batch holds them and remain frozen. Pass plan = nullptr for
// unmasked evaluation.
template <typename T>
void forward(const ModelParams<T>& p, const Batch& batch, const MaskPlan* plan, const DropoutCtx& drop,
             ForwardCache<T>& cache) {
    const ModelConfig& cfg = p.config;
    cfg.validate();
    if (batch.seq_len != cfg.seq_len) {
        throw DataError("batch sequence length " + std::to_string(batch.seq_len) +
                        " does not match model sequence length " + std::to_string(cfg.seq_len));
    }
    const size_t B = static_cast<size_t>(batch.batch);
    const size_t L = static_cast<size_t>(cfg.seq_len);
    const size_t di = static_cast<size_t>(cfg.d_in);
    const size_t dm = static_cast<size_t>(cfg.d_model);
    const size_t H = static_cast<size_t>(cfg.n_heads);
    const size_t dh = dm / H;
    const size_t N = B * L;
    const bool use_dropout = drop.enabled && cfg.dropout > 0.0;

    cache.batch = batch.batch;
    cache.seq_len = batch.seq_len;
    cache.x0.assign(N * di, T(0));
    for (size_t b = 0; b < B; ++b) {
        for (size_t t = 0; t < L; ++t) {
            const Slot& s = batch.slot(static_cast<int>(b), static_cast<int>(t));
            T* dst = cache.x0.data() + (b * L + t) * di;
            const float* src = batch.input(static_cast<int>(b), static_cast<int>(t));
            switch (s.kind) {
                case SlotKind::Cls:
                    for (size_t i = 0; i < di; ++i) dst[i] = p.cls.data[i];
                    break;
                case SlotKind::Sep:
                    for (size_t i = 0; i < di; ++i) dst[i] = p.sep.data[i];
                    break;
                case SlotKind::Chunk:
                    if (plan && plan->action(static_cast<int>(b), static_cast<int>(t)) == MaskAction::Masked) {
                        for (size_t i = 0; i < di; ++i) dst[i] = p.mask.data[i];
                    } else {
                        for (size_t i = 0; i < di; ++i) dst[i] = static_cast<T>(src[i]);
                    }
                    break;
                case SlotKind::Pad:
                    break;  // stays zero
            }
        }
    }

    cache.proj.assign(N * dm, T(0));
    detail::linear_forward(p.input_w, p.input_b, cache.x0.data(), cache.proj.data(), N);
    cache.emb = cache.proj;
    for (size_t b = 0; b < B; ++b) {
        for (size_t t = 0; t < L; ++t) {
            T* e = cache.emb.data() + (b * L + t) * dm;
            const T* pe = p.pos_emb.row(t);
            for (size_t i = 0; i < dm; ++i) e[i] += pe[i];
        }
    }
    if (use_dropout) {
        cache.emb_mask.resize(N * dm);
        Rng rng(derive_seed(drop.seed, {drop.step, 0xd0u, 0}));
        detail::dropout_forward(cache.emb.data(), cache.emb_mask.data(), N * dm, cfg.dropout, rng);
    }

    const T neg_inf = T(-1e30);
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    cache.layers.assign(static_cast<size_t>(cfg.n_layers), LayerCache<T>{});
    const std::vector<T>* h = &cache.emb;
    for (size_t li = 0; li < static_cast<size_t>(cfg.n_layers); ++li) {
        const LayerParams<T>& lp = p.layers[li];
        LayerCache<T>& lc = cache.layers[li];
        lc.x = *h;
        lc.ln1_mean.resize(N);
        lc.ln1_rstd.resize(N);
        lc.a_in.resize(N * dm);
        if (cfg.pre_ln) {
            detail::layernorm_forward(lc.x.data(), lp.ln1_gain, lp.ln1_bias, lc.a_in.data(),
                                      lc.ln1_mean.data(), lc.ln1_rstd.data(), N, dm);
        } else {
            lc.a_in = lc.x;
        }

        lc.q.assign(N * dm, T(0));
        lc.k.assign(N * dm, T(0));
        lc.v.assign(N * dm, T(0));
        detail::linear_forward(lp.wq, lp.bq, lc.a_in.data(), lc.q.data(), N);
        detail::linear_forward(lp.wk, lp.bk, lc.a_in.data(), lc.k.data(), N);
        detail::linear_forward(lp.wv, lp.bv, lc.a_in.data(), lc.v.data(), N);

        lc.probs.assign(B * H * L * L, T(0));
        lc.heads.assign(N * dm, T(0));
        for (size_t b = 0; b < B; ++b) {
            for (size_t hd = 0; hd < H; ++hd) {
                T* probs = lc.probs.data() + (b * H + hd) * L * L;
                for (size_t tq = 0; tq < L; ++tq) {
                    T* row = probs + tq * L;
                    const T* qv = lc.q.data() + (b * L + tq) * dm + hd * dh;
                    T maxv = -std::numeric_limits<T>::infinity();
                    for (size_t tk = 0; tk < L; ++tk) {
                        const Slot& ks = batch.slot(static_cast<int>(b), static_cast<int>(tk));
                        T score;
                        if (ks.kind == SlotKind::Pad) {
                            score = neg_inf;
                        } else {
                            const T* kv = lc.k.data() + (b * L + tk) * dm + hd * dh;
                            T acc = T(0);
                            for (size_t i = 0; i < dh; ++i) acc += qv[i] * kv[i];
                            score = acc * inv_sqrt_dh;
                        }
                        row[tk] = score;
                        if (score > maxv) maxv = score;
                    }
                    T denom = T(0);
                    for (size_t tk = 0; tk < L; ++tk) {
                        T e = std::exp(row[tk] - maxv);
                        row[tk] = e;
                        denom += e;
                    }
                    for (size_t tk = 0; tk < L; ++tk) row[tk] /= denom;
                }
            }
        }
        if (use_dropout) {
            lc.probs_pre = lc.probs;  // dropped entries are unrecoverable from the product
            lc.probs_mask.resize(lc.probs.size());
            Rng rng(derive_seed(drop.seed, {drop.step, 0xd1u, li}));
            detail::dropout_forward(lc.probs.data(), lc.probs_mask.data(), lc.probs.size(), cfg.dropout,
                                    rng);
        }
        for (size_t b = 0; b < B; ++b) {
            for (size_t hd = 0; hd < H; ++hd) {
                const T* probs = lc.probs.data() + (b * H + hd) * L * L;
                for (size_t tq = 0; tq < L; ++tq) {
                    T* outv = lc.heads.data() + (b * L + tq) * dm + hd * dh;
                    const T* row = probs + tq * L;
                    for (size_t tk = 0; tk < L; ++tk) {
                        T w = row[tk];
                        if (w == T(0)) continue;
                        const T* vv = lc.v.data() + (b * L + tk) * dm + hd * dh;
                        for (size_t i = 0; i < dh; ++i) outv[i] += w * vv[i];
                    }
                }
            }
        }

        lc.attn_out.assign(N * dm, T(0));
        detail::linear_forward(lp.wo, lp.bo, lc.heads.data(), lc.attn_out.data(), N);
        if (use_dropout) {
            lc.attn_mask.resize(N * dm);
            Rng rng(derive_seed(drop.seed, {drop.step, 0xd2u, li}));
            detail::dropout_forward(lc.attn_out.data(), lc.attn_mask.data(), N * dm, cfg.dropout, rng);
        }
        lc.sum1.resize(N * dm);
        for (size_t i = 0; i < N * dm; ++i) lc.sum1[i] = lc.x[i] + lc.attn_out[i];

        lc.ln2_mean.resize(N);
        lc.ln2_rstd.resize(N);
        if (cfg.pre_ln) {
            lc.r1 = lc.sum1;
            lc.f_in.resize(N * dm);
            detail::layernorm_forward(lc.r1.data(), lp.ln2_gain, lp.ln2_bias, lc.f_in.data(),
                                      lc.ln2_mean.data(), lc.ln2_rstd.data(), N, dm);
        } else {
            lc.r1.resize(N * dm);
            detail::layernorm_forward(lc.sum1.data(), lp.ln1_gain, lp.ln1_bias, lc.r1.data(),
                                      lc.ln1_mean.data(), lc.ln1_rstd.data(), N, dm);
            lc.f_in = lc.r1;
        }

        const size_t ff = static_cast<size_t>(cfg.ffn_hidden);
        lc.ffn_pre.assign(N * ff, T(0));
        detail::linear_forward(lp.w1, lp.b1, lc.f_in.data(), lc.ffn_pre.data(), N);
        lc.ffn_act.resize(N * ff);
        for (size_t i = 0; i < N * ff; ++i) lc.ffn_act[i] = detail::gelu(lc.ffn_pre[i]);
        lc.ffn_out.assign(N * dm, T(0));
        detail::linear_forward(lp.w2, lp.b2, lc.ffn_act.data(), lc.ffn_out.data(), N);
        if (use_dropout) {
            lc.ffn_mask.resize(N * dm);
            Rng rng(derive_seed(drop.seed, {drop.step, 0xd3u, li}));
            detail::dropout_forward(lc.ffn_out.data(), lc.ffn_mask.data(), N * dm, cfg.dropout, rng);
        }
        lc.sum2.resize(N * dm);
        for (size_t i = 0; i < N * dm; ++i) lc.sum2[i] = lc.r1[i] + lc.ffn_out[i];

        if (cfg.pre_ln) {
            lc.out = lc.sum2;
        } else {
            lc.out.resize(N * dm);
            detail::layernorm_forward(lc.sum2.data(), lp.ln2_gain, lp.ln2_bias, lc.out.data(),
                                      lc.ln2_mean.data(), lc.ln2_rstd.data(), N, dm);
        }
        for (size_t i = 0; i < N * dm; ++i) {
            if (!std::isfinite(static_cast<double>(lc.out[i]))) {
                throw NumericError("non-finite activation in layer " + std::to_string(li));
            }
        }
        h = &lc.out;
    }

    if (cfg.pre_ln && cfg.n_layers > 0) {
        cache.final_mean.resize(N);
        cache.final_rstd.resize(N);
        cache.ctx.resize(N * dm);
        detail::layernorm_forward(h->data(), p.final_ln_gain, p.final_ln_bias, cache.ctx.data(),
                                  cache.final_mean.data(), cache.final_rstd.data(), N, dm);
    } else {
        cache.ctx = *h;
    }
    for (const T& v : cache.ctx) {
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite model output");
    }
}

// Smooth L1 averaged over vector components.
template <typename T>
T smooth_l1(const T* pred, const T* target, size_t d, T beta) {
    T acc = T(0);
    for (size_t i = 0; i < d; ++i) {
        T diff = pred[i] - target[i];
        T a = std::abs(diff);
        acc += a < beta ? T(0.5) * diff * diff / beta : a - T(0.5) * beta;
    }
    return acc / T(d);
}

template <typename T>
T smooth_l1_grad(T diff, T beta) {
    if (std::abs(diff) < beta) return diff / beta;
    return diff > T(0) ? T(1) : T(-1);
}

struct LossStats {
    double loss = 0.0;
    double mean_cosine = 0.0;
    size_t positions = 0;
};

// Head forward at loss positions. When masked_only is set, only positions
// whose action was Masked contribute; otherwise every selected position does.
template <typename T>
LossStats mlm_head_forward(const ModelParams<T>& p, const MaskPlan& plan, ForwardCache<T>& cache,
                           bool masked_only = false) {
    const ModelConfig& cfg = p.config;
    const size_t dm = static_cast<size_t>(cfg.d_model);
    const size_t hh = static_cast<size_t>(cfg.head_hidden);
    const size_t di = static_cast<size_t>(cfg.d_in);
    const size_t L = static_cast<size_t>(cfg.seq_len);

    cache.loss_rows.clear();
    for (size_t i = 0; i < plan.selected.size(); ++i) {
        auto [b, t] = plan.selected[i];
        if (masked_only && plan.action(b, t) != MaskAction::Masked) continue;
        cache.loss_rows.push_back(i);
    }
    LossStats stats;
    stats.positions = cache.loss_rows.size();
    if (cache.loss_rows.empty()) return stats;
    const size_t n = cache.loss_rows.size();

    cache.head_in.resize(n * dm);
    for (size_t r = 0; r < n; ++r) {
        auto [b, t] = plan.selected[cache.loss_rows[r]];
        const T* src = cache.ctx.data() + (static_cast<size_t>(b) * L + static_cast<size_t>(t)) * dm;
        std::copy(src, src + dm, cache.head_in.data() + r * dm);
    }
    cache.head_pre.assign(n * hh, T(0));
    detail::linear_forward(p.head_w1, p.head_b1, cache.head_in.data(), cache.head_pre.data(), n);
    cache.head_act.resize(n * hh);
    for (size_t i = 0; i < n * hh; ++i) cache.head_act[i] = detail::gelu(cache.head_pre[i]);
    cache.head_ln_mean.resize(n);
    cache.head_ln_rstd.resize(n);
    cache.head_norm.resize(n * hh);
    detail::layernorm_forward(cache.head_act.data(), p.head_ln_gain, p.head_ln_bias,
                              cache.head_norm.data(), cache.head_ln_mean.data(), cache.head_ln_rstd.data(),
                              n, hh);
    cache.pred.assign(n * di, T(0));
    detail::linear_forward(p.head_w2, p.head_b2, cache.head_norm.data(), cache.pred.data(), n);

    const T beta = static_cast<T>(cfg.loss_beta);
    double loss = 0.0, cos_sum = 0.0;
    std::vector<T> tgt(di);
    std::vector<double> pd(di), td(di);
    for (size_t r = 0; r < n; ++r) {
        const size_t sel = cache.loss_rows[r];
        const T* pr = cache.pred.data() + r * di;
        for (size_t i = 0; i < di; ++i) {
            tgt[i] = static_cast<T>(plan.targets(sel, i));
            pd[i] = static_cast<double>(pr[i]);
            td[i] = static_cast<double>(plan.targets(sel, i));
        }
        loss += static_cast<double>(smooth_l1(pr, tgt.data(), di, beta));
        cos_sum += cosine(pd.data(), td.data(), di);
    }
    stats.loss = loss / static_cast<double>(n);
    stats.mean_cosine = cos_sum / static_cast<double>(n);
    return stats;
}

// Backward through the stack from d(ctx). Adds into grads; dctx is consumed.
template <typename T>
void stack_backward(const ModelParams<T>& p, const Batch& batch, const MaskPlan* plan,
                    const ForwardCache<T>& cache, std::vector<T>& dctx, ModelParams<T>& grads) {
    const ModelConfig& cfg = p.config;
    const size_t B = static_cast<size_t>(batch.batch);
    const size_t L = static_cast<size_t>(cfg.seq_len);
    const size_t di = static_cast<size_t>(cfg.d_in);
    const size_t dm = static_cast<size_t>(cfg.d_model);
    const size_t H = static_cast<size_t>(cfg.n_heads);
    const size_t dh = dm / H;
    const size_t N = B * L;
    const size_t ff = static_cast<size_t>(cfg.ffn_hidden);

    std::vector<T> dh_buf(N * dm, T(0));
    if (cfg.pre_ln && cfg.n_layers > 0) {
        const std::vector<T>& last = cache.layers.back().out;
        detail::layernorm_backward(last.data(), p.final_ln_gain, cache.final_mean.data(),
                                   cache.final_rstd.data(), dctx.data(), dh_buf.data(), grads.final_ln_gain,
                                   grads.final_ln_bias, N, dm);
    } else {
        dh_buf = dctx;
    }

    for (int li = cfg.n_layers - 1; li >= 0; --li) {
        const LayerParams<T>& lp = p.layers[static_cast<size_t>(li)];
        LayerParams<T>& lg = grads.layers[static_cast<size_t>(li)];
        const LayerCache<T>& lc = cache.layers[static_cast<size_t>(li)];

        std::vector<T> dsum2(N * dm, T(0));
        if (cfg.pre_ln) {
            dsum2 = dh_buf;
        } else {
            detail::layernorm_backward(lc.sum2.data(), lp.ln2_gain, lc.ln2_mean.data(), lc.ln2_rstd.data(),
                                       dh_buf.data(), dsum2.data(), lg.ln2_gain, lg.ln2_bias, N, dm);
        }

        // sum2 = r1 + drop(ffn_out)
        std::vector<T> dffn_out = dsum2;
        if (!lc.ffn_mask.empty()) {
            for (size_t i = 0; i < N * dm; ++i) dffn_out[i] *= lc.ffn_mask[i];
        }
        std::vector<T> dr1 = dsum2;

        std::vector<T> dffn_act(N * ff, T(0));
        detail::linear_backward(lp.w2, lc.ffn_act.data(), dffn_out.data(), dffn_act.data(), lg.w2, lg.b2,
                                N);
        std::vector<T> dffn_pre(N * ff);
        for (size_t i = 0; i < N * ff; ++i) dffn_pre[i] = dffn_act[i] * detail::gelu_grad(lc.ffn_pre[i]);
        std::vector<T> df_in(N * dm, T(0));
        detail::linear_backward(lp.w1, lc.f_in.data(), dffn_pre.data(), df_in.data(), lg.w1, lg.b1, N);

        std::vector<T> dsum1(N * dm, T(0));
        if (cfg.pre_ln) {
            // f_in = ln2(r1), r1 = sum1
            detail::layernorm_backward(lc.r1.data(), lp.ln2_gain, lc.ln2_mean.data(), lc.ln2_rstd.data(),
                                       df_in.data(), dsum1.data(), lg.ln2_gain, lg.ln2_bias, N, dm);
            for (size_t i = 0; i < N * dm; ++i) dsum1[i] += dr1[i];
        } else {
            // f_in = r1 = ln1(sum1)
            for (size_t i = 0; i < N * dm; ++i) df_in[i] += dr1[i];
            detail::layernorm_backward(lc.sum1.data(), lp.ln1_gain, lc.ln1_mean.data(), lc.ln1_rstd.data(),
                                       df_in.data(), dsum1.data(), lg.ln1_gain, lg.ln1_bias, N, dm);
        }

        // sum1 = x + drop(attn_out)
        std::vector<T> dattn_out = dsum1;
        if (!lc.attn_mask.empty()) {
            for (size_t i = 0; i < N * dm; ++i) dattn_out[i] *= lc.attn_mask[i];
        }
        std::vector<T> dx = dsum1;

        std::vector<T> dheads(N * dm, T(0));
        detail::linear_backward(lp.wo, lc.heads.data(), dattn_out.data(), dheads.data(), lg.wo, lg.bo, N);

        std::vector<T> dq(N * dm, T(0)), dk(N * dm, T(0)), dv(N * dm, T(0));
        const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
        std::vector<T> dprobs(L * L);
        for (size_t b = 0; b < B; ++b) {
            for (size_t hd = 0; hd < H; ++hd) {
                const T* probs = lc.probs.data() + (b * H + hd) * L * L;
                const T* pmask =
                    lc.probs_mask.empty() ? nullptr : lc.probs_mask.data() + (b * H + hd) * L * L;
                const T* pre =
                    lc.probs_pre.empty() ? nullptr : lc.probs_pre.data() + (b * H + hd) * L * L;
                std::fill(dprobs.begin(), dprobs.end(), T(0));
                for (size_t tq = 0; tq < L; ++tq) {
                    const T* doutv = dheads.data() + (b * L + tq) * dm + hd * dh;
                    const T* row = probs + tq * L;
                    T* drow = dprobs.data() + tq * L;
                    for (size_t tk = 0; tk < L; ++tk) {
                        const T* vv = lc.v.data() + (b * L + tk) * dm + hd * dh;
                        T* dvv = dv.data() + (b * L + tk) * dm + hd * dh;
                        T w = row[tk];
                        T acc = T(0);
                        for (size_t i = 0; i < dh; ++i) {
                            acc += doutv[i] * vv[i];
                            dvv[i] += w * doutv[i];
                        }
                        drow[tk] = acc;
                    }
                }
                // chain through dropout, then softmax backward per row
                for (size_t tq = 0; tq < L; ++tq) {
                    T* drow = dprobs.data() + tq * L;
                    const T* soft = pre ? pre + tq * L : probs + tq * L;
                    if (pmask) {
                        const T* mrow = pmask + tq * L;
                        for (size_t tk = 0; tk < L; ++tk) drow[tk] *= mrow[tk];
                    }
                    T dot = T(0);
                    for (size_t tk = 0; tk < L; ++tk) dot += drow[tk] * soft[tk];
                    const T* qv = lc.q.data() + (b * L + tq) * dm + hd * dh;
                    T* dqv = dq.data() + (b * L + tq) * dm + hd * dh;
                    for (size_t tk = 0; tk < L; ++tk) {
                        const Slot& ks = batch.slot(static_cast<int>(b), static_cast<int>(tk));
                        if (ks.kind == SlotKind::Pad) continue;
                        T dscore = soft[tk] * (drow[tk] - dot) * inv_sqrt_dh;
                        if (dscore == T(0)) continue;
                        const T* kv = lc.k.data() + (b * L + tk) * dm + hd * dh;
                        T* dkv = dk.data() + (b * L + tk) * dm + hd * dh;
                        for (size_t i = 0; i < dh; ++i) {
                            dqv[i] += dscore * kv[i];
                            dkv[i] += dscore * qv[i];
                        }
                    }
                }
            }
        }

        std::vector<T> da_in(N * dm, T(0));
        detail::linear_backward(lp.wq, lc.a_in.data(), dq.data(), da_in.data(), lg.wq, lg.bq, N);
        detail::linear_backward(lp.wk, lc.a_in.data(), dk.data(), da_in.data(), lg.wk, lg.bk, N);
        detail::linear_backward(lp.wv, lc.a_in.data(), dv.data(), da_in.data(), lg.wv, lg.bv, N);

        if (cfg.pre_ln) {
            detail::layernorm_backward(lc.x.data(), lp.ln1_gain, lc.ln1_mean.data(), lc.ln1_rstd.data(),
                                       da_in.data(), dx.data(), lg.ln1_gain, lg.ln1_bias, N, dm);
        } else {
            for (size_t i = 0; i < N * dm; ++i) dx[i] += da_in[i];
        }
        dh_buf = std::move(dx);
    }

    // embedding backward
    std::vector<T>& demb = dh_buf;
    if (!cache.emb_mask.empty()) {
        for (size_t i = 0; i < N * dm; ++i) demb[i] *= cache.emb_mask[i];
    }
    for (size_t b = 0; b < B; ++b) {
        for (size_t t = 0; t < L; ++t) {
            const T* d = demb.data() + (b * L + t) * dm;
            T* gp = grads.pos_emb.row(t);
            for (size_t i = 0; i < dm; ++i) gp[i] += d[i];
        }
    }
    std::vector<T> dx0(N * di, T(0));
    detail::linear_backward(p.input_w, cache.x0.data(), demb.data(), dx0.data(), grads.input_w,
                            grads.input_b, N);

    // Route input gradients to the trainable special vectors. Frozen chunk
    // vectors (including random/kept substitutions) absorb no gradient.
    for (size_t b = 0; b < B; ++b) {
        for (size_t t = 0; t < L; ++t) {
            const Slot& s = batch.slot(static_cast<int>(b), static_cast<int>(t));
            const T* d = dx0.data() + (b * L + t) * di;
            if (s.kind == SlotKind::Cls) {
                for (size_t i = 0; i < di; ++i) grads.cls.data[i] += d[i];
            } else if (s.kind == SlotKind::Sep) {
                for (size_t i = 0; i < di; ++i) grads.sep.data[i] += d[i];
            } else if (s.kind == SlotKind::Chunk && plan &&
                       plan->action(static_cast<int>(b), static_cast<int>(t)) == MaskAction::Masked) {
                for (size_t i = 0; i < di; ++i) grads.mask.data[i] += d[i];
            }
        }
    }
}

// Full backward for the regression objective. dloss scales the upstream
// gradient (1/n_micro under gradient accumulation).
template <typename T>
void mlm_backward(const ModelParams<T>& p, const Batch& batch, const MaskPlan& plan,
                  const ForwardCache<T>& cache, ModelParams<T>& grads, T dloss = T(1)) {
    const ModelConfig& cfg = p.config;
    const size_t dm = static_cast<size_t>(cfg.d_model);
    const size_t hh = static_cast<size_t>(cfg.head_hidden);
    const size_t di = static_cast<size_t>(cfg.d_in);
    const size_t L = static_cast<size_t>(cfg.seq_len);
    const size_t n = cache.loss_rows.size();
    std::vector<T> dctx(static_cast<size_t>(batch.batch) * L * dm, T(0));
    if (n > 0) {
        const T beta = static_cast<T>(cfg.loss_beta);
        const T scale = dloss / (T(n) * T(di));
        std::vector<T> dpred(n * di);
        for (size_t r = 0; r < n; ++r) {
            const size_t sel = cache.loss_rows[r];
            for (size_t i = 0; i < di; ++i) {
                T diff = cache.pred[r * di + i] - static_cast<T>(plan.targets(sel, i));
                dpred[r * di + i] = smooth_l1_grad(diff, beta) * scale;
            }
        }
        std::vector<T> dnorm(n * hh, T(0));
        detail::linear_backward(p.head_w2, cache.head_norm.data(), dpred.data(), dnorm.data(),
                                grads.head_w2, grads.head_b2, n);
        std::vector<T> dact(n * hh, T(0));
        detail::layernorm_backward(cache.head_act.data(), p.head_ln_gain, cache.head_ln_mean.data(),
                                   cache.head_ln_rstd.data(), dnorm.data(), dact.data(),
                                   grads.head_ln_gain, grads.head_ln_bias, n, hh);
        std::vector<T> dpre(n * hh);
        for (size_t i = 0; i < n * hh; ++i) dpre[i] = dact[i] * detail::gelu_grad(cache.head_pre[i]);
        std::vector<T> dhead_in(n * dm, T(0));
        detail::linear_backward(p.head_w1, cache.head_in.data(), dpre.data(), dhead_in.data(),
                                grads.head_w1, grads.head_b1, n);
        for (size_t r = 0; r < n; ++r) {
            auto [b, t] = plan.selected[cache.loss_rows[r]];
            T* dst = dctx.data() + (static_cast<size_t>(b) * L + static_cast<size_t>(t)) * dm;
            const T* src = dhead_in.data() + r * dm;
            for (size_t i = 0; i < dm; ++i) dst[i] += src[i];
        }
    }
    stack_backward(p, batch, &plan, cache, dctx, grads);
}

template <typename T>
void check_finite_grads(ModelParams<T>& grads) {
    for (auto& t : tensors(grads)) {
        for (size_t i = 0; i < t.size; ++i) {
            if (!std::isfinite(static_cast<double>(t.data[i]))) {
                throw NumericError("non-finite gradient in " + t.name);
            }
        }
    }
}

// ---- checkpoint io ----------------------------------------------------

namespace detail {
inline constexpr char kModelMagic[4] = {'N', 'L', 'M', 'P'};
inline constexpr uint32_t kModelVersion = 1;
}  // namespace detail

template <typename T>
void save_model(const ModelParams<T>& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(detail::kModelMagic, 4);
    put_u32(out, detail::kModelVersion);
    nlohmann::ordered_json j;
    to_json(j, p.config);
    put_string(out, j.dump());
    auto& nonconst = const_cast<ModelParams<T>&>(p);
    auto views = tensors(nonconst);
    put_u32(out, static_cast<uint32_t>(views.size()));
    for (const auto& t : views) {
        put_string(out, t.name);
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (size_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (size_t i = 0; i < t.size; ++i) put_f32(out, static_cast<float>(t.data[i]));
    }
    if (!out) throw DataError("write failure on checkpoint: " + path);
}

struct RawTensor {
    std::string name;
    std::vector<size_t> shape;
    std::vector<float> data;
};

inline std::vector<RawTensor> read_checkpoint_tensors(std::istream& in, const std::string& path) {
    uint32_t count = get_u32(in);
    std::vector<RawTensor> out(count);
    for (uint32_t i = 0; i < count; ++i) {
        out[i].name = get_string(in);
        uint32_t rank = get_u32(in);
        if (rank > 4) throw DataError("corrupt checkpoint (tensor rank " + std::to_string(rank) + "): " + path);
        size_t total = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            size_t d = get_u32(in);
            out[i].shape.push_back(d);
            total *= d;
        }
        out[i].data.resize(total);
        get_f32_array(in, out[i].data.data(), total);
    }
    return out;
}

template <typename T>
ModelParams<T> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, detail::kModelMagic, 4) != 0) {
        throw DataError("not a model checkpoint: " + path);
    }
    uint32_t version = get_u32(in);
    if (version != detail::kModelVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    }
    ModelConfig cfg;
    try {
        from_json(nlohmann::json::parse(get_string(in)), cfg);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint config in " + path + ": " + e.what());
    }
    cfg.finalize();
    cfg.validate();
    ModelParams<T> p;
    detail::alloc_params(p, cfg);
    auto raw = read_checkpoint_tensors(in, path);
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& r : raw) by_name[r.name] = &r;
    for (auto& t : tensors(p)) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw DataError("checkpoint missing tensor '" + t.name + "': " + path);
        if (it->second->data.size() != t.size) {
            throw DataError("checkpoint tensor '" + t.name + "' has wrong size: " + path);
        }
        for (size_t i = 0; i < t.size; ++i) t.data[i] = static_cast<T>(it->second->data[i]);
    }
    return p;
}

struct TransferReport {
    std::vector<std::string> transferred;
    std::vector<std::string> missing;  // destination tensors with no source
    std::vector<std::string> unused;   // source tensors nothing consumed
};

// Copies same-named tensors from a checkpoint into dst. name_map renames
// destination tensors to their source names before lookup.
template <typename T>
TransferReport transfer_weights(const std::string& checkpoint_path, ModelParams<T>& dst,
                                const std::map<std::string, std::string>& name_map = {}) {
    std::ifstream in(checkpoint_path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + checkpoint_path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, detail::kModelMagic, 4) != 0) {
        throw DataError("not a model checkpoint: " + checkpoint_path);
    }
    get_u32(in);        // version
    get_string(in);     // config, not needed for transfer
    auto raw = read_checkpoint_tensors(in, checkpoint_path);
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& r : raw) by_name[r.name] = &r;
    std::map<std::string, bool> used;

    TransferReport report;
    for (auto& t : tensors(dst)) {
        auto mapped = name_map.count(t.name) ? name_map.at(t.name) : t.name;
        auto it = by_name.find(mapped);
        if (it == by_name.end()) {
            report.missing.push_back(t.name);
            continue;
        }
        const RawTensor& src = *it->second;
        if (src.data.size() != t.size) {
            auto shape_str = [](const std::vector<size_t>& s) {
                std::string out = "[";
                for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
                return out + "]";
            };
            throw DataError("shape mismatch for '" + t.name + "': destination " + shape_str(t.shape) +
                            ", source '" + mapped + "' " + shape_str(src.shape));
        }
        for (size_t i = 0; i < t.size; ++i) t.data[i] = static_cast<T>(src.data[i]);
        report.transferred.push_back(t.name);
        used[mapped] = true;
    }
    for (const auto& r : raw) {
        if (!used.count(r.name)) report.unused.push_back(r.name);
    }
    return report;
}

}  // namespace nlm
