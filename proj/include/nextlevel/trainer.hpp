#pragma once

// Pretraining loop: AdamW with decoupled weight decay, linear warmup into a
// cosine decay, deterministic batching and masking.
//
// Every random draw of step s comes from a stream derived from (seed, s), so
// resuming from a saved state replays the exact computation: run A over 2N
// steps and run B that stops at N and resumes are bit-identical.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cache.hpp"
#include "common.hpp"
#include "masking.hpp"
#include "model.hpp"
#include "packing.hpp"
#include "rng.hpp"

namespace nlm {

struct TrainConfig {
    uint64_t seed = 0;
    int total_steps = 1000;
    int batch_size = 512;
    int micro_batch = 0;  // 0: whole batch in one pass
    double max_lr = 1e-4;
    double warmup_frac = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    MaskingConfig masking;
    bool loss_on_masked_only = false;
    int metrics_every = 10;
    int checkpoint_every = 0;  // 0: only at the end

    void validate() const {
        if (total_steps < 1) throw DataError("total steps must be positive");
        if (batch_size < 1) throw DataError("batch size must be positive");
        if (micro_batch < 0) throw DataError("micro batch must be non-negative");
        if (max_lr <= 0.0) throw DataError("learning rate must be positive");
        if (warmup_frac < 0.0 || warmup_frac > 1.0) throw DataError("warmup fraction must be in [0, 1]");
        masking.validate();
    }
};

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
    j = {{"seed", c.seed},
         {"total_steps", c.total_steps},
         {"batch_size", c.batch_size},
         {"micro_batch", c.micro_batch},
         {"max_lr", c.max_lr},
         {"warmup_frac", c.warmup_frac},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},
         {"weight_decay", c.weight_decay},
         {"mask_rate", c.masking.rate},
         {"p_mask", c.masking.p_mask},
         {"p_random", c.masking.p_random},
         {"simple_masking", c.masking.simple_mode},
         {"loss_on_masked_only", c.loss_on_masked_only},
         {"metrics_every", c.metrics_every},
         {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.seed = j.value("seed", d.seed);
    c.total_steps = j.value("total_steps", d.total_steps);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.micro_batch = j.value("micro_batch", d.micro_batch);
    c.max_lr = j.value("max_lr", d.max_lr);
    c.warmup_frac = j.value("warmup_frac", d.warmup_frac);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.masking.rate = j.value("mask_rate", d.masking.rate);
    c.masking.p_mask = j.value("p_mask", d.masking.p_mask);
    c.masking.p_random = j.value("p_random", d.masking.p_random);
    c.masking.simple_mode = j.value("simple_masking", d.masking.simple_mode);
    c.loss_on_masked_only = j.value("loss_on_masked_only", d.loss_on_masked_only);
    c.metrics_every = j.value("metrics_every", d.metrics_every);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

// Linear warmup over round(warmup_frac * total) steps, then cosine decay to
// zero at `total`. The peak sits exactly at the end of warmup.
inline double lr_at(uint64_t step, uint64_t total, double max_lr, double warmup_frac) {
    if (total == 0) throw DataError("schedule needs at least one step");
    uint64_t warmup = static_cast<uint64_t>(std::llround(warmup_frac * static_cast<double>(total)));
    if (warmup >= total) {
        throw DataError("degenerate schedule: warmup (" + std::to_string(warmup) +
                        ") covers every step (" + std::to_string(total) + ")");
    }
    if (step >= total) return 0.0;
    if (step < warmup) return max_lr * static_cast<double>(step) / static_cast<double>(warmup);
    double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return max_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// One AdamW update over a flat array. t is 1-based; decay is decoupled and
// applied only when `decay` is set.
inline void adamw_update(float* w, const float* g, float* m, float* v, size_t n, uint64_t t, double lr,
                         const AdamConfig& cfg, bool decay) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < n; ++i) {
        double gi = static_cast<double>(g[i]);
        double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
        double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        double update = mhat / (std::sqrt(vhat) + cfg.eps);
        if (decay) update += cfg.weight_decay * static_cast<double>(w[i]);
        w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * update);
    }
}

struct TrainState {
    uint64_t seed = 0;
    uint64_t step = 0;  // completed steps
    double loss_ema = 0.0;
    bool ema_init = false;
    ModelParams<float> m, v;
};

inline TrainState init_train_state(const ModelParams<float>& params, uint64_t seed) {
    TrainState s;
    s.seed = seed;
    s.m = zero_like(params);
    s.v = zero_like(params);
    return s;
}

inline void adamw_step(ModelParams<float>& params, ModelParams<float>& grads, TrainState& state,
                       double lr, const AdamConfig& cfg) {
    auto pw = tensors(params);
    auto gw = tensors(grads);
    auto mw = tensors(state.m);
    auto vw = tensors(state.v);
    const uint64_t t = state.step + 1;
    for (size_t i = 0; i < pw.size(); ++i) {
        adamw_update(pw[i].data, gw[i].data, mw[i].data, vw[i].data, pw[i].size, t, lr, cfg, pw[i].decay);
    }
}

namespace detail {
inline constexpr char kStateMagic[4] = {'N', 'L', 'M', 'T'};
inline constexpr uint32_t kStateVersion = 1;
}  // namespace detail

inline void save_train_state(const TrainState& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write train state: " + path);
    out.write(detail::kStateMagic, 4);
    put_u32(out, detail::kStateVersion);
    put_u64(out, s.seed);
    put_u64(out, s.step);
    put_f64(out, s.loss_ema);
    put_u8(out, s.ema_init ? 1 : 0);
    auto& m = const_cast<ModelParams<float>&>(s.m);
    auto& v = const_cast<ModelParams<float>&>(s.v);
    auto mt = tensors(m);
    auto vt = tensors(v);
    put_u32(out, static_cast<uint32_t>(mt.size()));
    for (size_t i = 0; i < mt.size(); ++i) {
        put_string(out, mt[i].name);
        put_u64(out, mt[i].size);
        put_f32_array(out, mt[i].data, mt[i].size);
        put_f32_array(out, vt[i].data, vt[i].size);
    }
    if (!out) throw DataError("write failure on train state: " + path);
}

inline TrainState load_train_state(const std::string& path, const ModelParams<float>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open train state: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, detail::kStateMagic, 4) != 0) {
        throw DataError("not a train state file: " + path);
    }
    uint32_t version = get_u32(in);
    if (version != detail::kStateVersion) {
        throw DataError("unsupported train state version " + std::to_string(version) + ": " + path);
    }
    TrainState s;
    s.seed = get_u64(in);
    s.step = get_u64(in);
    s.loss_ema = get_f64(in);
    s.ema_init = get_u8(in) != 0;
    s.m = zero_like(params);
    s.v = zero_like(params);
    auto mt = tensors(s.m);
    auto vt = tensors(s.v);
    uint32_t count = get_u32(in);
    if (count != mt.size()) throw DataError("train state tensor count mismatch: " + path);
    for (size_t i = 0; i < mt.size(); ++i) {
        std::string name = get_string(in);
        if (name != mt[i].name) {
            throw DataError("train state tensor '" + name + "' does not match model tensor '" +
                            mt[i].name + "': " + path);
        }
        uint64_t n = get_u64(in);
        if (n != mt[i].size) throw DataError("train state tensor '" + name + "' has wrong size: " + path);
        get_f32_array(in, mt[i].data, n);
        get_f32_array(in, vt[i].data, n);
    }
    return s;
}

// In-memory training corpus: packed layout plus per-document vectors.
struct TrainData {
    PackedCorpus packed;
    std::vector<Matrix<float>> vectors;
    int dim = 0;
};

inline TrainData load_train_data(const EmbeddingCache& cache, int seq_len) {
    TrainData data;
    data.dim = cache.spec().dim;
    std::vector<DocExtent> docs;
    for (const auto& id : cache.doc_ids()) {
        docs.push_back({id, cache.chunk_count(id)});
    }
    data.packed = pack_corpus(std::move(docs), seq_len);
    data.vectors.reserve(cache.doc_ids().size());
    for (const auto& id : cache.doc_ids()) data.vectors.push_back(cache.read_doc(id));
    return data;
}

struct StepMetrics {
    uint64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double masked_cosine = 0.0;
    size_t positions = 0;
};

namespace detail {

inline std::vector<size_t> pick_sequences(size_t n_seq, int batch_size, uint64_t seed, uint64_t step) {
    std::vector<size_t> idx(n_seq);
    for (size_t i = 0; i < n_seq; ++i) idx[i] = i;
    if (static_cast<size_t>(batch_size) >= n_seq) return idx;
    Rng rng(derive_seed(seed, {0xba7c9u, step}));
    for (size_t i = 0; i < static_cast<size_t>(batch_size); ++i) {
        size_t j = i + static_cast<size_t>(rng.below(n_seq - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<size_t>(batch_size));
    return idx;
}

}  // namespace detail

// Runs one optimizer step (possibly over several micro batches) and returns
// its metrics. `grads` and `cache` are scratch reused across steps.
inline StepMetrics train_step(ModelParams<float>& params, TrainState& state, const TrainData& data,
                              const TrainConfig& cfg, ModelParams<float>& grads,
                              ForwardCache<float>& cache) {
    const uint64_t step = state.step;
    auto lookup = [&](int32_t doc, int32_t chunk) {
        return data.vectors[static_cast<size_t>(doc)].row(static_cast<size_t>(chunk));
    };
    std::vector<size_t> picked =
        detail::pick_sequences(data.packed.sequences.size(), cfg.batch_size, cfg.seed, step);
    const size_t micro =
        cfg.micro_batch > 0 ? static_cast<size_t>(cfg.micro_batch) : picked.size();
    const size_t n_micro = (picked.size() + micro - 1) / micro;

    for (auto& t : tensors(grads)) std::fill(t.data, t.data + t.size, 0.0f);

    Rng mask_rng(derive_seed(cfg.seed, {0x3a5cu, step}));
    DropoutCtx drop{true, cfg.seed, step};
    double loss_sum = 0.0, cos_sum = 0.0;
    size_t positions = 0;
    size_t micros_with_loss = 0;
    for (size_t mb = 0; mb < n_micro; ++mb) {
        size_t begin = mb * micro;
        size_t end = std::min(begin + micro, picked.size());
        std::vector<size_t> part(picked.begin() + static_cast<std::ptrdiff_t>(begin),
                                 picked.begin() + static_cast<std::ptrdiff_t>(end));
        Batch batch = make_batch(data.packed, part, data.dim, lookup);
        MaskPlan plan = apply_masking(batch, cfg.masking, params.mask.data.data(), mask_rng);
        forward(params, batch, &plan, drop, cache);
        LossStats stats = mlm_head_forward(params, plan, cache, cfg.loss_on_masked_only);
        if (stats.positions > 0) {
            if (!std::isfinite(stats.loss)) {
                throw NumericError("non-finite loss at step " + std::to_string(step));
            }
            loss_sum += stats.loss;
            cos_sum += stats.mean_cosine;
            positions += stats.positions;
            ++micros_with_loss;
        }
        mlm_backward(params, batch, plan, cache, grads, 1.0f / static_cast<float>(n_micro));
    }
    check_finite_grads(grads);

    StepMetrics metrics;
    metrics.step = step;
    metrics.lr = lr_at(step, static_cast<uint64_t>(cfg.total_steps), cfg.max_lr, cfg.warmup_frac);
    metrics.loss = micros_with_loss ? loss_sum / static_cast<double>(micros_with_loss) : 0.0;
    metrics.masked_cosine = micros_with_loss ? cos_sum / static_cast<double>(micros_with_loss) : 0.0;
    metrics.positions = positions;

    AdamConfig adam{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
    adamw_step(params, grads, state, metrics.lr, adam);
    state.step += 1;
    if (state.ema_init) {
        state.loss_ema = 0.99 * state.loss_ema + 0.01 * metrics.loss;
    } else {
        state.loss_ema = metrics.loss;
        state.ema_init = true;
    }
    return metrics;
}

inline void save_checkpoint(const ModelParams<float>& params, const TrainState& state,
                            const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_model(params, dir + "/model.nlmp.tmp");
    save_train_state(state, dir + "/state.nlmt.tmp");
    std::filesystem::rename(dir + "/model.nlmp.tmp", dir + "/model.nlmp");
    std::filesystem::rename(dir + "/state.nlmt.tmp", dir + "/state.nlmt");
}

struct TrainResult {
    uint64_t steps_run = 0;
    double final_loss = 0.0;
    double final_cosine = 0.0;
    double first_loss = 0.0;
};

// Trains until cfg.total_steps, appending metrics to out_dir/metrics.jsonl.
// On a numeric failure the last saved checkpoint is left untouched.
inline TrainResult train(ModelParams<float>& params, TrainState& state, const TrainData& data,
                         const TrainConfig& cfg, const std::string& out_dir,
                         std::ostream* progress = nullptr) {
    cfg.validate();
    if (state.seed != cfg.seed) throw DataError("train state seed does not match config seed");
    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::app);
    if (!metrics) throw DataError("cannot write metrics in " + out_dir);

    ModelParams<float> grads = zero_like(params);
    ForwardCache<float> cache;
    TrainResult result;
    bool first = true;
    while (state.step < static_cast<uint64_t>(cfg.total_steps)) {
        StepMetrics sm = train_step(params, state, data, cfg, grads, cache);
        if (first) {
            result.first_loss = sm.loss;
            first = false;
        }
        result.final_loss = sm.loss;
        result.final_cosine = sm.masked_cosine;
        ++result.steps_run;
        bool last = state.step == static_cast<uint64_t>(cfg.total_steps);
        if (last || cfg.metrics_every <= 1 || sm.step % static_cast<uint64_t>(cfg.metrics_every) == 0) {
            nlohmann::ordered_json line = {{"step", sm.step},
                                           {"lr", sm.lr},
                                           {"loss", sm.loss},
                                           {"masked_cosine", sm.masked_cosine},
                                           {"loss_ema", state.loss_ema}};
            metrics << line.dump() << '\n';
            metrics.flush();
            if (progress) {
                *progress << "step " << sm.step << " lr " << sm.lr << " loss " << sm.loss
                          << " cosine " << sm.masked_cosine << '\n';
            }
        }
        if (cfg.checkpoint_every > 0 && state.step % static_cast<uint64_t>(cfg.checkpoint_every) == 0 &&
            !last) {
            save_checkpoint(params, state, out_dir);
        }
    }
    save_checkpoint(params, state, out_dir);
    return result;
}

}  // namespace nlm
