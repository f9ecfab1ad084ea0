#pragma once

// Document embeddings and downstream evaluation.
//
// A document is embedded by splitting its chunk sequence into windows of at
// most seq_len-2 chunks, running each window through the model without
// masking, and averaging the contextualized outputs at chunk positions over
// all windows (MeanContextualized). MeanRaw skips the model and averages the
// raw chunk vectors; it is the frozen-encoder baseline.
//
// Retrieval ranks candidates by descending cosine, ids ascending on ties.
// Classification tasks fine-tune the whole model plus a small ReLU head;
// gradients flow through the pooled embedding into the transformer.

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunker.hpp"
#include "common.hpp"
#include "encoder.hpp"
#include "model.hpp"
#include "packing.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "trainer.hpp"

namespace nlm {

enum class Pooling { MeanRaw, MeanContextualized };

inline Pooling pooling_from_string(const std::string& s) {
    if (s == "mean_raw") return Pooling::MeanRaw;
    if (s == "mean_contextualized") return Pooling::MeanContextualized;
    throw DataError("unknown pooling mode: " + s);
}

// Turns free text into chunk vectors the same way the corpus was prepared.
struct TextEncoder {
    EncoderSpec spec;
    uint64_t seed = 0;
    ChunkMode mode = ChunkMode::Fixed;
    int chunk_size = 32;

    Matrix<float> vectors(const std::string& text) const {
        RawDocument doc{"query", text};
        ChunkedDocument chunked = chunk_document(doc, mode, chunk_size);
        if (chunked.chunks.empty()) throw DataError("text produced no chunks");
        Matrix<float> m(chunked.chunks.size(), static_cast<size_t>(spec.dim));
        for (size_t i = 0; i < chunked.chunks.size(); ++i) {
            ChunkVector v = reference_encode(chunked.chunks[i], spec, seed);
            std::copy(v.values.begin(), v.values.end(), m.row(i));
        }
        return m;
    }
};

inline std::vector<float> mean_raw_embedding(const Matrix<float>& chunks) {
    if (chunks.rows == 0) throw DataError("cannot embed a document with no chunks");
    std::vector<double> acc(chunks.cols, 0.0);
    for (size_t r = 0; r < chunks.rows; ++r) {
        const float* row = chunks.row(r);
        for (size_t i = 0; i < chunks.cols; ++i) acc[i] += static_cast<double>(row[i]);
    }
    std::vector<float> out(chunks.cols);
    for (size_t i = 0; i < chunks.cols; ++i) {
        out[i] = static_cast<float>(acc[i] / static_cast<double>(chunks.rows));
    }
    return out;
}

// One unmasked forward over all windows of a document. Kept around so a
// fine-tuning pass can push gradients back through the pooling.
struct EmbedForward {
    Batch batch;
    ForwardCache<float> cache;
    size_t n_chunks = 0;
    std::vector<float> embedding;  // d_model
};

inline EmbedForward embed_forward(const ModelParams<float>& model, const Matrix<float>& chunks) {
    if (chunks.rows == 0) throw DataError("cannot embed a document with no chunks");
    const ModelConfig& cfg = model.config;
    if (chunks.cols != static_cast<size_t>(cfg.d_in)) {
        throw DataError("chunk vectors have dimension " + std::to_string(chunks.cols) +
                        ", model expects " + std::to_string(cfg.d_in));
    }
    auto spans = make_windows(static_cast<uint32_t>(chunks.rows), cfg.seq_len - 2);

    PackedCorpus packed;
    packed.seq_len = cfg.seq_len;
    packed.docs.push_back({"doc", static_cast<uint32_t>(chunks.rows)});
    for (auto [begin, end] : spans) {
        PackedSequence seq;
        seq.slots.assign(static_cast<size_t>(cfg.seq_len), Slot{});
        seq.slots[0].kind = SlotKind::Cls;
        int cursor = 1;
        for (int32_t c = begin; c < end; ++c) {
            Slot& s = seq.slots[static_cast<size_t>(cursor++)];
            s.kind = SlotKind::Chunk;
            s.doc = 0;
            s.chunk = c;
        }
        seq.slots[static_cast<size_t>(cursor)].kind = SlotKind::Sep;
        packed.sequences.push_back(std::move(seq));
    }
    std::vector<size_t> all(packed.sequences.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;

    EmbedForward ef;
    ef.n_chunks = chunks.rows;
    ef.batch = make_batch(packed, all, cfg.d_in,
                          [&](int32_t, int32_t chunk) { return chunks.row(static_cast<size_t>(chunk)); });
    DropoutCtx no_drop;
    forward(model, ef.batch, nullptr, no_drop, ef.cache);

    const size_t dm = static_cast<size_t>(cfg.d_model);
    const size_t L = static_cast<size_t>(cfg.seq_len);
    std::vector<double> acc(dm, 0.0);
    for (int b = 0; b < ef.batch.batch; ++b) {
        for (int t = 0; t < ef.batch.seq_len; ++t) {
            if (ef.batch.slot(b, t).kind != SlotKind::Chunk) continue;
            const float* row = ef.cache.ctx.data() + (static_cast<size_t>(b) * L + t) * dm;
            for (size_t i = 0; i < dm; ++i) acc[i] += static_cast<double>(row[i]);
        }
    }
    ef.embedding.resize(dm);
    for (size_t i = 0; i < dm; ++i) {
        ef.embedding[i] = static_cast<float>(acc[i] / static_cast<double>(ef.n_chunks));
    }
    return ef;
}

inline void embed_backward(const ModelParams<float>& model, const EmbedForward& ef,
                           const float* d_embedding, ModelParams<float>& grads) {
    const size_t dm = static_cast<size_t>(model.config.d_model);
    const size_t L = static_cast<size_t>(model.config.seq_len);
    std::vector<float> dctx(static_cast<size_t>(ef.batch.batch) * L * dm, 0.0f);
    const float scale = 1.0f / static_cast<float>(ef.n_chunks);
    for (int b = 0; b < ef.batch.batch; ++b) {
        for (int t = 0; t < ef.batch.seq_len; ++t) {
            if (ef.batch.slot(b, t).kind != SlotKind::Chunk) continue;
            float* row = dctx.data() + (static_cast<size_t>(b) * L + t) * dm;
            for (size_t i = 0; i < dm; ++i) row[i] = d_embedding[i] * scale;
        }
    }
    stack_backward(model, ef.batch, nullptr, ef.cache, dctx, grads);
}

struct Embedder {
    const ModelParams<float>* model = nullptr;
    Pooling pooling = Pooling::MeanContextualized;
    TextEncoder encoder;

    int out_dim() const {
        if (pooling == Pooling::MeanRaw) return encoder.spec.dim;
        if (!model) throw DataError("contextualized pooling needs a model");
        return model->config.d_model;
    }

    std::vector<float> embed_vectors(const Matrix<float>& chunks) const {
        if (pooling == Pooling::MeanRaw) return mean_raw_embedding(chunks);
        if (!model) throw DataError("contextualized pooling needs a model");
        return embed_forward(*model, chunks).embedding;
    }

    std::vector<float> embed_text(const std::string& text) const {
        return embed_vectors(encoder.vectors(text));
    }
};

// ---- retrieval ---------------------------------------------------------

struct RetrievalInstance {
    std::string query_id;
    std::string text;      // exactly one of text / doc_id is set
    std::string doc_id;
    std::vector<std::string> gold_ids;
};

inline std::vector<RetrievalInstance> read_retrieval_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open task file: " + path);
    std::vector<RetrievalInstance> out;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + " row " + std::to_string(row) + ": " + e.what());
        }
        RetrievalInstance inst;
        inst.query_id = j.at("query_id").get<std::string>();
        bool has_text = j.contains("text"), has_doc = j.contains("doc_id");
        if (has_text == has_doc) {
            throw DataError(path + " row " + std::to_string(row) +
                            ": query needs exactly one of 'text' or 'doc_id'");
        }
        if (has_text) inst.text = j.at("text").get<std::string>();
        if (has_doc) inst.doc_id = j.at("doc_id").get<std::string>();
        for (const auto& g : j.at("gold_ids")) inst.gold_ids.push_back(g.get<std::string>());
        if (inst.gold_ids.empty()) {
            throw DataError(path + " row " + std::to_string(row) + ": gold_ids is empty");
        }
        out.push_back(std::move(inst));
    }
    if (out.empty()) throw DataError("task file has no instances: " + path);
    return out;
}

// Cosine accumulated in double regardless of the stored precision, so
// rankings do not depend on summation quirks of float.
inline double cosine_double(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw DataError("embedding dimensions differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// 1-based rank of the best-ranked gold candidate under descending cosine,
// lexicographic id as the tie break. Returns {rank, gold id}.
inline std::pair<size_t, std::string> best_gold_rank(
    const std::vector<float>& query, const std::vector<std::pair<std::string, std::vector<float>>>& candidates,
    const std::set<std::string>& gold) {
    std::vector<double> scores(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        scores[i] = cosine_double(candidates[i].second, query);
    }
    size_t best_rank = 0;
    std::string best_id;
    for (size_t g = 0; g < candidates.size(); ++g) {
        if (!gold.count(candidates[g].first)) continue;
        size_t rank = 1;
        for (size_t c = 0; c < candidates.size(); ++c) {
            if (c == g) continue;
            if (scores[c] > scores[g] ||
                (scores[c] == scores[g] && candidates[c].first < candidates[g].first)) {
                ++rank;
            }
        }
        if (best_rank == 0 || rank < best_rank ||
            (rank == best_rank && candidates[g].first < best_id)) {
            best_rank = rank;
            best_id = candidates[g].first;
        }
    }
    if (best_rank == 0) throw DataError("no gold candidate present in the candidate pool");
    return {best_rank, best_id};
}

struct LengthBin {
    uint64_t lo = 0, hi = 0;  // token range [lo, hi)
    size_t count = 0;
    double mrr = 0.0;
    double hr_at_10 = 0.0;
};

struct QueryOutcome {
    std::string query_id;
    size_t rank = 0;
    std::string best_gold;
};

struct RetrievalReport {
    size_t queries = 0;
    double mrr = 0.0;
    double hr_at_10 = 0.0;
    std::vector<LengthBin> bins;
    std::vector<QueryOutcome> outcomes;
};

inline void to_json(nlohmann::ordered_json& j, const RetrievalReport& r) {
    j = {{"queries", r.queries}, {"mrr", r.mrr}, {"hr_at_10", r.hr_at_10}};
    j["bins"] = nlohmann::ordered_json::array();
    for (const auto& b : r.bins) {
        j["bins"].push_back({{"lo", b.lo},
                             {"hi", b.hi},
                             {"count", b.count},
                             {"mrr", b.mrr},
                             {"hr_at_10", b.hr_at_10}});
    }
}

// Length bins with base-2 edges from 64: [0,64), [64,128), [128,256), ...
inline std::pair<uint64_t, uint64_t> length_bin_for(uint64_t tokens) {
    if (tokens < 64) return {0, 64};
    uint64_t lo = 64;
    while (lo * 2 <= tokens) lo *= 2;
    return {lo, lo * 2};
}

// Queries arrive pre-embedded so callers decide the pooling; token_counts
// bins each query by its best-ranked gold document's length.
inline RetrievalReport retrieval_eval(
    const std::vector<RetrievalInstance>& instances, const std::vector<std::vector<float>>& query_embeddings,
    const std::vector<std::pair<std::string, std::vector<float>>>& candidates,
    const std::map<std::string, uint64_t>& token_counts) {
    if (instances.size() != query_embeddings.size()) {
        throw DataError("query embedding count does not match instance count");
    }
    RetrievalReport report;
    report.queries = instances.size();
    std::map<uint64_t, LengthBin> bins;
    for (size_t q = 0; q < instances.size(); ++q) {
        std::set<std::string> gold(instances[q].gold_ids.begin(), instances[q].gold_ids.end());
        std::vector<std::pair<std::string, std::vector<float>>> pool;
        if (!instances[q].doc_id.empty()) {
            // a document used as its own query never competes as a candidate
            pool.reserve(candidates.size());
            for (const auto& c : candidates) {
                if (c.first != instances[q].doc_id) pool.push_back(c);
            }
        }
        const auto& use_pool = instances[q].doc_id.empty() ? candidates : pool;
        auto [rank, gold_id] = best_gold_rank(query_embeddings[q], use_pool, gold);
        double rr = 1.0 / static_cast<double>(rank);
        report.mrr += rr;
        report.hr_at_10 += rank <= 10 ? 1.0 : 0.0;
        report.outcomes.push_back({instances[q].query_id, rank, gold_id});

        auto tc = token_counts.find(gold_id);
        uint64_t tokens = tc == token_counts.end() ? 0 : tc->second;
        auto [lo, hi] = length_bin_for(tokens);
        LengthBin& bin = bins[lo];
        bin.lo = lo;
        bin.hi = hi;
        bin.count += 1;
        bin.mrr += rr;
        bin.hr_at_10 += rank <= 10 ? 1.0 : 0.0;
    }
    report.mrr /= static_cast<double>(report.queries);
    report.hr_at_10 /= static_cast<double>(report.queries);
    for (auto& [lo, bin] : bins) {
        bin.mrr /= static_cast<double>(bin.count);
        bin.hr_at_10 /= static_cast<double>(bin.count);
        report.bins.push_back(bin);
    }
    return report;
}

// ---- classification ----------------------------------------------------

struct BinaryInstance {
    std::string doc_id;
    std::string question;
    int label = 0;
};

inline std::vector<BinaryInstance> read_binary_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open task file: " + path);
    std::vector<BinaryInstance> out;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + " row " + std::to_string(row) + ": " + e.what());
        }
        BinaryInstance inst;
        inst.doc_id = j.at("doc_id").get<std::string>();
        inst.question = j.at("question").get<std::string>();
        inst.label = j.at("label").get<int>();
        if (inst.label != 0 && inst.label != 1) {
            throw DataError(path + " row " + std::to_string(row) + ": label must be 0 or 1");
        }
        out.push_back(std::move(inst));
    }
    if (out.empty()) throw DataError("task file has no instances: " + path);
    return out;
}

struct ChoiceInstance {
    std::string doc_id;
    std::string question;
    std::array<std::string, 4> answers;
    int correct_index = 0;
};

inline std::vector<ChoiceInstance> read_choice_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open task file: " + path);
    std::vector<ChoiceInstance> out;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + " row " + std::to_string(row) + ": " + e.what());
        }
        ChoiceInstance inst;
        inst.doc_id = j.at("doc_id").get<std::string>();
        inst.question = j.at("question").get<std::string>();
        const auto& answers = j.at("answers");
        if (answers.size() != 4) {
            throw DataError(path + " row " + std::to_string(row) + ": expected 4 answers, found " +
                            std::to_string(answers.size()));
        }
        for (size_t i = 0; i < 4; ++i) inst.answers[i] = answers[i].get<std::string>();
        inst.correct_index = j.at("correct_index").get<int>();
        if (inst.correct_index < 0 || inst.correct_index > 3) {
            throw DataError(path + " row " + std::to_string(row) + ": correct_index must be in [0, 3]");
        }
        out.push_back(std::move(inst));
    }
    if (out.empty()) throw DataError("task file has no instances: " + path);
    return out;
}

// Two-layer ReLU head over concatenated embeddings, one logit per input.
struct ClassifierHead {
    Matrix<float> w1, b1, w2, b2;
    Matrix<float> m_w1, v_w1, m_b1, v_b1, m_w2, v_w2, m_b2, v_b2;

    static ClassifierHead init(int in_dim, int hidden, uint64_t seed) {
        ClassifierHead h;
        h.w1 = Matrix<float>(static_cast<size_t>(hidden), static_cast<size_t>(in_dim));
        h.b1 = Matrix<float>(1, static_cast<size_t>(hidden));
        h.w2 = Matrix<float>(1, static_cast<size_t>(hidden));
        h.b2 = Matrix<float>(1, 1);
        Rng rng(derive_seed(seed, {0xc1a55u}));
        for (auto& x : h.w1.data) x = static_cast<float>(rng.truncated_normal(0.02));
        for (auto& x : h.w2.data) x = static_cast<float>(rng.truncated_normal(0.02));
        auto zero = [](const Matrix<float>& m) { return Matrix<float>(m.rows, m.cols); };
        h.m_w1 = zero(h.w1); h.v_w1 = zero(h.w1);
        h.m_b1 = zero(h.b1); h.v_b1 = zero(h.b1);
        h.m_w2 = zero(h.w2); h.v_w2 = zero(h.w2);
        h.m_b2 = zero(h.b2); h.v_b2 = zero(h.b2);
        return h;
    }

    float forward(const std::vector<float>& x, std::vector<float>& hidden_out) const {
        const size_t hdim = w1.rows;
        hidden_out.resize(hdim);
        for (size_t o = 0; o < hdim; ++o) {
            float acc = b1.data[o];
            const float* wr = w1.row(o);
            for (size_t i = 0; i < x.size(); ++i) acc += wr[i] * x[i];
            hidden_out[o] = acc > 0.0f ? acc : 0.0f;
        }
        float logit = b2.data[0];
        for (size_t o = 0; o < hdim; ++o) logit += w2.data[o] * hidden_out[o];
        return logit;
    }

    // dlogit in, gradient on the input out; accumulates its own update via adam.
    void backward_update(const std::vector<float>& x, const std::vector<float>& hidden,
                         float dlogit, std::vector<float>& dx, uint64_t t, double lr,
                         const AdamConfig& adam) {
        const size_t hdim = w1.rows;
        std::vector<float> g_w2(hdim), g_hidden(hdim);
        for (size_t o = 0; o < hdim; ++o) {
            g_w2[o] = dlogit * hidden[o];
            g_hidden[o] = hidden[o] > 0.0f ? dlogit * w2.data[o] : 0.0f;
        }
        float g_b2 = dlogit;
        std::vector<float> g_w1(w1.size(), 0.0f), g_b1(hdim, 0.0f);
        dx.assign(x.size(), 0.0f);
        for (size_t o = 0; o < hdim; ++o) {
            float g = g_hidden[o];
            if (g == 0.0f) continue;
            g_b1[o] = g;
            float* row = g_w1.data() + o * x.size();
            const float* wr = w1.row(o);
            for (size_t i = 0; i < x.size(); ++i) {
                row[i] = g * x[i];
                dx[i] += g * wr[i];
            }
        }
        adamw_update(w1.data.data(), g_w1.data(), m_w1.data.data(), v_w1.data.data(), w1.size(), t, lr, adam, true);
        adamw_update(b1.data.data(), g_b1.data(), m_b1.data.data(), v_b1.data.data(), b1.size(), t, lr, adam, false);
        adamw_update(w2.data.data(), g_w2.data(), m_w2.data.data(), v_w2.data.data(), w2.size(), t, lr, adam, true);
        adamw_update(b2.data.data(), &g_b2, m_b2.data.data(), v_b2.data.data(), 1, t, lr, adam, false);
    }
};

struct FinetuneConfig {
    double lr = 5e-5;
    int epochs = 3;
    int hidden = 0;  // 0: twice the concatenated input width
    uint64_t seed = 0;
    double eval_frac = 0.2;
    AdamConfig adam;
};

struct BinaryReport {
    size_t train_n = 0, eval_n = 0;
    size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double majority = 0.0;
    bool single_class_train = false;
    bool single_class_eval = false;
};

inline void to_json(nlohmann::ordered_json& j, const BinaryReport& r) {
    j = {{"train_n", r.train_n}, {"eval_n", r.eval_n}, {"accuracy", r.accuracy},
         {"f1", r.f1},           {"tp", r.tp},         {"fp", r.fp},
         {"fn", r.fn},           {"tn", r.tn},         {"majority", r.majority},
         {"single_class_train", r.single_class_train}, {"single_class_eval", r.single_class_eval}};
}

inline double f1_score(size_t tp, size_t fp, size_t fn) {
    double denom = static_cast<double>(2 * tp + fp + fn);
    if (denom == 0.0) return 0.0;
    return 2.0 * static_cast<double>(tp) / denom;
}

namespace detail {
inline std::vector<size_t> split_indices(size_t n, double eval_frac, uint64_t seed,
                                         std::vector<size_t>& eval_out) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, {0x59117u}));
    rng.shuffle(idx);
    size_t eval_n = static_cast<size_t>(std::llround(eval_frac * static_cast<double>(n)));
    if (eval_n == 0 && n > 1) eval_n = 1;
    if (eval_n >= n) eval_n = n - 1;
    eval_out.assign(idx.end() - static_cast<std::ptrdiff_t>(eval_n), idx.end());
    idx.resize(n - eval_n);
    return idx;
}
}  // namespace detail

// Fine-tunes the model and a fresh head on [doc; question] embeddings with a
// sigmoid objective. Mutates `model`. Documents come from `doc_vectors`;
// questions are encoded on the fly.
inline BinaryReport finetune_binary(ModelParams<float>& model, const TextEncoder& enc,
                                    const std::map<std::string, Matrix<float>>& doc_vectors,
                                    const std::vector<BinaryInstance>& data, const FinetuneConfig& cfg,
                                    std::ostream* log = nullptr) {
    if (data.size() < 2) throw DataError("need at least two instances to fine-tune");
    for (const auto& inst : data) {
        if (!doc_vectors.count(inst.doc_id)) {
            throw DataError("task references document not in cache: " + inst.doc_id);
        }
    }
    const int dm = model.config.d_model;
    const int in_dim = 2 * dm;
    const int hidden = cfg.hidden > 0 ? cfg.hidden : 2 * in_dim;
    ClassifierHead head = ClassifierHead::init(in_dim, hidden, cfg.seed);
    TrainState state = init_train_state(model, cfg.seed);

    std::vector<size_t> eval_idx;
    std::vector<size_t> train_idx = detail::split_indices(data.size(), cfg.eval_frac, cfg.seed, eval_idx);

    auto count_classes = [&](const std::vector<size_t>& idx) {
        std::array<size_t, 2> n{0, 0};
        for (size_t i : idx) n[static_cast<size_t>(data[i].label)]++;
        return n;
    };
    BinaryReport report;
    report.train_n = train_idx.size();
    report.eval_n = eval_idx.size();
    auto train_classes = count_classes(train_idx);
    auto eval_classes = count_classes(eval_idx);
    report.single_class_train = train_classes[0] == 0 || train_classes[1] == 0;
    report.single_class_eval = eval_classes[0] == 0 || eval_classes[1] == 0;
    if ((report.single_class_train || report.single_class_eval) && log) {
        *log << "warning: a split contains a single class (train " << train_classes[0] << "/"
             << train_classes[1] << ", eval " << eval_classes[0] << "/" << eval_classes[1] << ")\n";
    }

    std::map<std::string, Matrix<float>> question_vectors;
    for (const auto& inst : data) {
        if (!question_vectors.count(inst.question)) {
            question_vectors.emplace(inst.question, enc.vectors(inst.question));
        }
    }

    ModelParams<float> grads = zero_like(model);
    uint64_t t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        Rng rng(derive_seed(cfg.seed, {0xe90cu, static_cast<uint64_t>(epoch)}));
        rng.shuffle(order);
        for (size_t i : order) {
            const BinaryInstance& inst = data[i];
            EmbedForward doc_f = embed_forward(model, doc_vectors.at(inst.doc_id));
            EmbedForward q_f = embed_forward(model, question_vectors.at(inst.question));
            std::vector<float> x(static_cast<size_t>(in_dim));
            std::copy(doc_f.embedding.begin(), doc_f.embedding.end(), x.begin());
            std::copy(q_f.embedding.begin(), q_f.embedding.end(), x.begin() + dm);
            std::vector<float> hidden_out;
            float logit = head.forward(x, hidden_out);
            float p = 1.0f / (1.0f + std::exp(-logit));
            float dlogit = p - static_cast<float>(inst.label);

            ++t;
            std::vector<float> dx;
            head.backward_update(x, hidden_out, dlogit, dx, t, cfg.lr, cfg.adam);
            for (auto& g : tensors(grads)) std::fill(g.data, g.data + g.size, 0.0f);
            embed_backward(model, doc_f, dx.data(), grads);
            embed_backward(model, q_f, dx.data() + dm, grads);
            check_finite_grads(grads);
            state.step = t - 1;
            adamw_step(model, grads, state, cfg.lr, cfg.adam);
        }
    }

    for (size_t i : eval_idx) {
        const BinaryInstance& inst = data[i];
        EmbedForward doc_f = embed_forward(model, doc_vectors.at(inst.doc_id));
        EmbedForward q_f = embed_forward(model, question_vectors.at(inst.question));
        std::vector<float> x(static_cast<size_t>(in_dim));
        std::copy(doc_f.embedding.begin(), doc_f.embedding.end(), x.begin());
        std::copy(q_f.embedding.begin(), q_f.embedding.end(), x.begin() + dm);
        std::vector<float> hidden_out;
        float logit = head.forward(x, hidden_out);
        int pred = logit >= 0.0f ? 1 : 0;  // sigmoid(logit) >= 0.5
        if (pred == 1 && inst.label == 1) report.tp++;
        else if (pred == 1 && inst.label == 0) report.fp++;
        else if (pred == 0 && inst.label == 1) report.fn++;
        else report.tn++;
    }
    size_t correct = report.tp + report.tn;
    report.accuracy = report.eval_n ? static_cast<double>(correct) / static_cast<double>(report.eval_n) : 0.0;
    report.f1 = f1_score(report.tp, report.fp, report.fn);
    size_t pos = eval_classes[1], neg = eval_classes[0];
    report.majority = report.eval_n
                          ? static_cast<double>(std::max(pos, neg)) / static_cast<double>(report.eval_n)
                          : 0.0;
    return report;
}

struct ChoiceReport {
    size_t train_n = 0, eval_n = 0;
    size_t correct = 0;
    double accuracy = 0.0;
    double chance = 0.25;
};

inline void to_json(nlohmann::ordered_json& j, const ChoiceReport& r) {
    j = {{"train_n", r.train_n},
         {"eval_n", r.eval_n},
         {"correct", r.correct},
         {"accuracy", r.accuracy},
         {"chance", r.chance}};
}

// Four-way choice: each answer is scored by the head over [doc; question;
// answer]; the four scores go through a softmax and cross entropy.
inline ChoiceReport finetune_choice(ModelParams<float>& model, const TextEncoder& enc,
                                    const std::map<std::string, Matrix<float>>& doc_vectors,
                                    const std::vector<ChoiceInstance>& data, const FinetuneConfig& cfg,
                                    std::ostream* log = nullptr) {
    if (data.size() < 2) throw DataError("need at least two instances to fine-tune");
    for (const auto& inst : data) {
        if (!doc_vectors.count(inst.doc_id)) {
            throw DataError("task references document not in cache: " + inst.doc_id);
        }
    }
    const int dm = model.config.d_model;
    const int in_dim = 3 * dm;
    const int hidden = cfg.hidden > 0 ? cfg.hidden : 2 * in_dim;
    ClassifierHead head = ClassifierHead::init(in_dim, hidden, cfg.seed);
    TrainState state = init_train_state(model, cfg.seed);

    std::vector<size_t> eval_idx;
    std::vector<size_t> train_idx = detail::split_indices(data.size(), cfg.eval_frac, cfg.seed, eval_idx);
    ChoiceReport report;
    report.train_n = train_idx.size();
    report.eval_n = eval_idx.size();
    (void)log;

    std::map<std::string, Matrix<float>> text_vectors;
    auto text_vecs = [&](const std::string& text) -> const Matrix<float>& {
        auto it = text_vectors.find(text);
        if (it == text_vectors.end()) it = text_vectors.emplace(text, enc.vectors(text)).first;
        return it->second;
    };

    auto score_instance = [&](const ChoiceInstance& inst, std::vector<EmbedForward>& fwds,
                              std::vector<std::vector<float>>& xs,
                              std::vector<std::vector<float>>& hiddens) {
        fwds.clear();
        fwds.push_back(embed_forward(model, doc_vectors.at(inst.doc_id)));
        fwds.push_back(embed_forward(model, text_vecs(inst.question)));
        for (const auto& a : inst.answers) fwds.push_back(embed_forward(model, text_vecs(a)));
        xs.assign(4, std::vector<float>(static_cast<size_t>(in_dim)));
        hiddens.assign(4, {});
        std::array<float, 4> scores{};
        for (int a = 0; a < 4; ++a) {
            std::copy(fwds[0].embedding.begin(), fwds[0].embedding.end(), xs[a].begin());
            std::copy(fwds[1].embedding.begin(), fwds[1].embedding.end(), xs[a].begin() + dm);
            const auto& ae = fwds[static_cast<size_t>(2 + a)].embedding;
            std::copy(ae.begin(), ae.end(), xs[a].begin() + 2 * dm);
            scores[static_cast<size_t>(a)] = head.forward(xs[a], hiddens[a]);
        }
        return scores;
    };

    ModelParams<float> grads = zero_like(model);
    uint64_t t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        Rng rng(derive_seed(cfg.seed, {0xe90cu, static_cast<uint64_t>(epoch)}));
        rng.shuffle(order);
        for (size_t i : order) {
            const ChoiceInstance& inst = data[i];
            std::vector<EmbedForward> fwds;
            std::vector<std::vector<float>> xs, hiddens;
            auto scores = score_instance(inst, fwds, xs, hiddens);
            float maxs = *std::max_element(scores.begin(), scores.end());
            std::array<float, 4> probs{};
            float denom = 0.0f;
            for (int a = 0; a < 4; ++a) {
                probs[static_cast<size_t>(a)] = std::exp(scores[static_cast<size_t>(a)] - maxs);
                denom += probs[static_cast<size_t>(a)];
            }
            for (auto& p : probs) p /= denom;

            ++t;
            std::vector<float> d_doc(static_cast<size_t>(dm), 0.0f), d_q(static_cast<size_t>(dm), 0.0f);
            std::array<std::vector<float>, 4> d_ans;
            for (int a = 0; a < 4; ++a) {
                float dscore = probs[static_cast<size_t>(a)] - (a == inst.correct_index ? 1.0f : 0.0f);
                std::vector<float> dx;
                head.backward_update(xs[a], hiddens[a], dscore, dx, t, cfg.lr, cfg.adam);
                for (int k = 0; k < dm; ++k) {
                    d_doc[static_cast<size_t>(k)] += dx[static_cast<size_t>(k)];
                    d_q[static_cast<size_t>(k)] += dx[static_cast<size_t>(dm + k)];
                }
                d_ans[static_cast<size_t>(a)].assign(dx.begin() + 2 * dm, dx.end());
            }
            for (auto& g : tensors(grads)) std::fill(g.data, g.data + g.size, 0.0f);
            embed_backward(model, fwds[0], d_doc.data(), grads);
            embed_backward(model, fwds[1], d_q.data(), grads);
            for (int a = 0; a < 4; ++a) {
                embed_backward(model, fwds[static_cast<size_t>(2 + a)], d_ans[static_cast<size_t>(a)].data(),
                               grads);
            }
            check_finite_grads(grads);
            state.step = t - 1;
            adamw_step(model, grads, state, cfg.lr, cfg.adam);
        }
    }

    for (size_t i : eval_idx) {
        std::vector<EmbedForward> fwds;
        std::vector<std::vector<float>> xs, hiddens;
        auto scores = score_instance(data[i], fwds, xs, hiddens);
        int pred = 0;
        for (int a = 1; a < 4; ++a) {
            if (scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(pred)]) pred = a;
        }
        if (pred == data[i].correct_index) report.correct++;
    }
    report.accuracy =
        report.eval_n ? static_cast<double>(report.correct) / static_cast<double>(report.eval_n) : 0.0;
    return report;
}

}  // namespace nlm
