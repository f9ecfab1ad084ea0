// Acceptance suite: nine numbered checks, one PASS/FAIL line each.
// Every tolerance and budget is pinned here; exits nonzero if any check fails.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nextlevel/nextlevel.hpp"

using namespace nlm;

namespace {

struct Failure {
    std::string msg;
};

void require(bool ok, const std::string& msg) {
    if (!ok) throw Failure{msg};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::filesystem::path scratch_root() {
    static std::filesystem::path p = [] {
        auto root = std::filesystem::temp_directory_path() /
                    ("nlm-accept-" + std::to_string(::getpid()));
        std::filesystem::create_directories(root);
        return root;
    }();
    return p;
}

std::string scratch(const std::string& child) {
    auto p = scratch_root() / child;
    std::filesystem::create_directories(p);
    return p.string();
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Masking statistics at scale.
void check_masking_stats() {
    const int chunks_per_doc = 15;
    const int n_docs = 70000;  // 1.05M chunk slots
    const int L = chunks_per_doc + 2;
    const int dim = 4;

    std::vector<DocExtent> docs;
    docs.reserve(n_docs);
    for (int i = 0; i < n_docs; ++i) {
        docs.push_back({"d" + std::to_string(i), static_cast<uint32_t>(chunks_per_doc)});
    }
    PackedCorpus packed = pack_corpus(std::move(docs), L);
    require(packed.sequences.size() == static_cast<size_t>(n_docs), "one sequence per document");

    std::vector<size_t> all(packed.sequences.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<float> buf(dim);
    Batch batch = make_batch(packed, all, dim, [&](int32_t doc, int32_t chunk) {
        for (int i = 0; i < dim; ++i)
            buf[static_cast<size_t>(i)] = static_cast<float>(doc % 97) + 0.25f * static_cast<float>(chunk) +
                                          0.01f * static_cast<float>(i);
        return buf.data();
    });

    MaskingConfig cfg;  // rate 0.15, actions 0.8 / 0.1 / 0.1
    std::vector<float> mask_vec(dim, 9.0f);
    Rng rng(derive_seed(2024, {1}));
    MaskPlan plan = apply_masking(batch, cfg, mask_vec.data(), rng);
    MaskStats st = accumulate_stats(batch, plan);

    require(st.chunk_slots >= 1000000, "need at least 1e6 chunk positions, got " +
                                           std::to_string(st.chunk_slots));
    double sel_rate = double(st.selected) / double(st.chunk_slots);
    require(std::abs(sel_rate - 0.15) <= 0.002,
            "selection rate " + fmt(sel_rate) + " outside 0.15 +/- 0.002");

    require(st.selected >= 100000, "need at least 1e5 selected positions, got " +
                                       std::to_string(st.selected));
    double f_mask = double(st.masked) / double(st.selected);
    double f_rand = double(st.random) / double(st.selected);
    double f_keep = double(st.kept) / double(st.selected);
    require(std::abs(f_mask - 0.80) <= 0.01, "mask fraction " + fmt(f_mask) + " outside 0.80 +/- 0.01");
    require(std::abs(f_rand - 0.10) <= 0.01, "random fraction " + fmt(f_rand) + " outside 0.10 +/- 0.01");
    require(std::abs(f_keep - 0.10) <= 0.01, "keep fraction " + fmt(f_keep) + " outside 0.10 +/- 0.01");

    // Simple mode: every selected position is replaced by the mask vector.
    MaskingConfig simple;
    simple.simple_mode = true;
    Rng rng2(derive_seed(2024, {2}));
    MaskPlan plan2 = apply_masking(batch, simple, mask_vec.data(), rng2);
    MaskStats st2 = accumulate_stats(batch, plan2);
    require(st2.selected > 0, "simple mode selected nothing");
    require(st2.masked == st2.selected && st2.random == 0 && st2.kept == 0,
            "simple mode must mask every selected position");
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradient coverage of every parameter class.
void check_gradients() {
    ModelConfig cfg;
    cfg.d_in = 10;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.ffn_hidden = 24;
    cfg.head_hidden = 12;
    cfg.seq_len = 8;
    cfg.dropout = 0.0;
    cfg.finalize();

    PackedCorpus packed = pack_corpus({{"a", 4}, {"b", 3}}, cfg.seq_len);
    Rng vec_rng(derive_seed(404, {1}));
    std::vector<std::vector<float>> store;
    for (int i = 0; i < 16; ++i) {
        std::vector<float> v(static_cast<size_t>(cfg.d_in));
        for (auto& f : v) f = static_cast<float>(vec_rng.gaussian() * 0.5);
        store.push_back(std::move(v));
    }
    Batch batch = make_batch(packed, {0, 1}, cfg.d_in, [&](int32_t doc, int32_t chunk) {
        return store[static_cast<size_t>(doc * 8 + chunk)].data();
    });
    MaskingConfig mask_cfg{0.7, 0.4, 0.3, false};
    Rng mask_rng(derive_seed(404, {2}));
    std::vector<float> mask_vec(static_cast<size_t>(cfg.d_in), 0.0f);
    MaskPlan plan = apply_masking(batch, mask_cfg, mask_vec.data(), mask_rng);
    MaskStats st = accumulate_stats(batch, plan);
    require(st.masked > 0 && st.random > 0 && st.kept > 0, "fixture must exercise all action types");

    auto p = init_params<double>(cfg, 1234);
    ForwardCache<double> cache;
    forward(p, batch, &plan, DropoutCtx{}, cache);
    LossStats stats = mlm_head_forward(p, plan, cache, false);
    require(stats.positions > 0, "no loss positions");
    auto grads = zero_like(p);
    mlm_backward(p, batch, plan, cache, grads, 1.0);

    auto loss_of = [&](const ModelParams<double>& q) {
        ForwardCache<double> c;
        forward(q, batch, &plan, DropoutCtx{}, c);
        return mlm_head_forward(q, plan, c, false).loss;
    };

    auto views = tensors(p);
    auto gviews = tensors(grads);
    require(views.size() == 46, "expected 46 parameter tensors for 2 layers, got " +
                                    std::to_string(views.size()));
    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name = "-";
    for (size_t ti = 0; ti < views.size(); ++ti) {
        auto& v = views[ti];
        for (size_t k = 0; k < v.size; ++k) {
            double keep = v.data[k];
            v.data[k] = keep + h;
            double up = loss_of(p);
            v.data[k] = keep - h;
            double down = loss_of(p);
            v.data[k] = keep;
            double numeric = (up - down) / (2 * h);
            double analytic = gviews[ti].data[k];
            double rel = std::abs(analytic - numeric) /
                         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            // Central differences on an order-1e-1 loss resolve nothing below
            // ~1e-12; differences under this floor are measurement noise.
            if (std::abs(analytic - numeric) < 1e-10) rel = 0.0;
            if (rel > worst) {
                worst = rel;
                worst_name = v.name + "[" + std::to_string(k) + "]";
            }
        }
    }
    require(worst < 1e-4, "worst relative error " + fmt(worst) + " at " + worst_name);
}

// ---------------------------------------------------------------------------
// Shared small-corpus pipeline: synthetic corpus -> chunks -> reference cache.
struct Pipeline {
    SynthCorpus corpus;
    std::vector<ChunkedDocument> manifest;
    std::string cache_dir;

    Pipeline(const SynthConfig& scfg, int encode_dim, const std::string& tag) {
        corpus = make_corpus(scfg);
        manifest = chunk_corpus(corpus.docs, ChunkMode::Fixed, scfg.chunk_tokens, 1);
        EncoderSpec spec;
        spec.dim = encode_dim;
        cache_dir = scratch(tag);
        encode_corpus_reference(manifest, spec, 5, cache_dir, 1024, 1);
    }
};

struct MaskedEval {
    double loss = 0.0;
    double cosine = 0.0;
};

// Mean training-style loss and masked-only cosine over fresh deterministic plans.
MaskedEval masked_eval(const ModelParams<float>& params, const TrainData& data, uint64_t seed) {
    std::vector<size_t> all(data.packed.sequences.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    MaskedEval out;
    const int reps = 4;
    int cos_reps = 0;
    for (int e = 0; e < reps; ++e) {
        Batch b = make_batch(data.packed, all, data.dim, [&](int32_t doc, int32_t chunk) {
            return data.vectors[static_cast<size_t>(doc)].row(static_cast<size_t>(chunk));
        });
        MaskingConfig mcfg;
        std::vector<float> zeros(static_cast<size_t>(data.dim), 0.0f);
        Rng rng(derive_seed(seed, {static_cast<uint64_t>(e)}));
        MaskPlan plan = apply_masking(b, mcfg, zeros.data(), rng);
        ForwardCache<float> cache;
        forward(params, b, &plan, DropoutCtx{}, cache);
        LossStats all_stats = mlm_head_forward(params, plan, cache, false);
        out.loss += all_stats.loss;
        LossStats masked = mlm_head_forward(params, plan, cache, true);
        if (masked.positions > 0) {
            out.cosine += masked.mean_cosine;
            ++cos_reps;
        }
    }
    out.loss /= reps;
    out.cosine /= std::max(1, cos_reps);
    return out;
}

// 3. A two-layer model memorizes a 32-document corpus.
void check_overfit() {
    SynthConfig scfg;
    scfg.seed = 7;
    scfg.n_docs = 32;
    scfg.topics = 8;
    scfg.words_per_topic = 6;
    scfg.chunk_tokens = 16;
    scfg.min_chunks = 6;
    scfg.max_chunks = 14;

    Pipeline pipe(scfg, 64, "overfit-cache");
    auto cache = EmbeddingCache::open(pipe.cache_dir);
    TrainData data = load_train_data(cache, 64);

    ModelConfig mc;
    mc.d_in = 64;
    mc.d_model = 64;
    mc.n_layers = 2;
    mc.n_heads = 4;
    mc.seq_len = 64;
    mc.dropout = 0.0;  // memorization check: regularization off
    mc.finalize();
    auto params = init_params<float>(mc, 7);
    TrainState state = init_train_state(params, 7);

    TrainConfig tc;  // small-batch memorization recipe
    tc.seed = 7;
    tc.total_steps = 2000;
    tc.batch_size = 8;
    tc.max_lr = 1e-3;
    tc.weight_decay = 0.0;

    MaskedEval initial = masked_eval(params, data, 909);
    require(initial.loss > 0, "initial loss must be positive");

    ModelParams<float> grads = zero_like(params);
    ForwardCache<float> cache_fw;
    MaskedEval now;
    uint64_t steps = 0;
    bool met = false;
    while (state.step < static_cast<uint64_t>(tc.total_steps)) {
        train_step(params, state, data, tc, grads, cache_fw);
        ++steps;
        if (state.step % 25 == 0 || state.step == static_cast<uint64_t>(tc.total_steps)) {
            now = masked_eval(params, data, 909);
            if (now.loss <= 0.1 * initial.loss && now.cosine >= 0.95) {
                met = true;
                break;
            }
        }
    }
    require(met, "after " + std::to_string(steps) + " steps: loss " + fmt(now.loss) + " vs initial " +
                     fmt(initial.loss) + " (need <= " + fmt(0.1 * initial.loss) + "), masked cosine " +
                     fmt(now.cosine) + " (need >= 0.95)");
}

// ---------------------------------------------------------------------------
// 4. Passthrough contextualized pooling equals the raw mean.
void check_passthrough() {
    const int dim = 16;
    const int L = 10;  // capacity 8 forces windowing for larger documents
    auto params = make_passthrough<float>(dim, L);
    Rng rng(31);
    double worst = 0.0;
    for (int d = 0; d < 100; ++d) {
        size_t n = 1 + static_cast<size_t>(rng.below(40));
        Matrix<float> chunks(n, dim);
        for (auto& v : chunks.data) v = static_cast<float>(rng.gaussian());
        std::vector<float> raw = mean_raw_embedding(chunks);
        std::vector<float> ctx = embed_forward(params, chunks).embedding;
        require(raw.size() == ctx.size(), "embedding dims differ");
        for (size_t i = 0; i < raw.size(); ++i) {
            worst = std::max(worst, static_cast<double>(std::abs(raw[i] - ctx[i])));
        }
    }
    require(worst <= 1e-6, "max |contextualized - raw| = " + fmt(worst) + " > 1e-6");
}

// ---------------------------------------------------------------------------
// 5. Retrieval metrics against an independent brute-force oracle.
void check_retrieval_oracle() {
    const int dim = 16;
    const size_t n_cand = 200, n_inst = 1000;
    Rng rng(57);

    std::vector<std::pair<std::string, std::vector<float>>> candidates;
    for (size_t c = 0; c < n_cand; ++c) {
        char id[16];
        std::snprintf(id, sizeof(id), "c%03zu", c);
        std::vector<float> v(dim);
        for (auto& x : v) x = static_cast<float>(rng.gaussian());
        candidates.emplace_back(id, std::move(v));
    }

    std::vector<RetrievalInstance> instances(n_inst);
    std::vector<std::vector<float>> queries(n_inst);
    for (size_t q = 0; q < n_inst; ++q) {
        instances[q].query_id = "q" + std::to_string(q);
        size_t n_gold = 1 + rng.below(3);
        std::set<std::string> gold;
        while (gold.size() < n_gold) gold.insert(candidates[rng.below(n_cand)].first);
        bool doc_query = rng.below(10) == 0;
        if (doc_query) {
            // a candidate doubling as the query; it must not be its own gold
            std::string self = candidates[rng.below(n_cand)].first;
            gold.erase(self);
            if (gold.empty()) gold.insert(candidates[rng.below(n_cand)].first);
            gold.erase(self);
            if (gold.empty()) gold.insert(self == "c000" ? "c001" : "c000");
            instances[q].doc_id = self;
            for (const auto& c : candidates) {
                if (c.first == self) queries[q] = c.second;
            }
        } else {
            instances[q].text = "unused";
            queries[q].resize(dim);
            for (auto& x : queries[q]) x = static_cast<float>(rng.gaussian());
        }
        instances[q].gold_ids.assign(gold.begin(), gold.end());
    }

    RetrievalReport report = retrieval_eval(instances, queries, candidates, {});

    // Oracle: full sort by (-cosine, id); rank of the best gold; ties prefer
    // the lexicographically smaller id, doc-as-query excluded from the pool.
    auto cos_d = [&](const std::vector<float>& a, const std::vector<float>& b) {
        double dot = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            dot += double(a[i]) * double(b[i]);
            na += double(a[i]) * double(a[i]);
            nb += double(b[i]) * double(b[i]);
        }
        if (na == 0 || nb == 0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    double mrr = 0, hr = 0;
    for (size_t q = 0; q < n_inst; ++q) {
        std::vector<std::pair<double, std::string>> order;
        for (const auto& c : candidates) {
            if (!instances[q].doc_id.empty() && c.first == instances[q].doc_id) continue;
            order.emplace_back(-cos_d(queries[q], c.second), c.first);
        }
        std::sort(order.begin(), order.end());
        std::set<std::string> gold(instances[q].gold_ids.begin(), instances[q].gold_ids.end());
        size_t rank = 0;
        for (size_t i = 0; i < order.size(); ++i) {
            if (gold.count(order[i].second)) {
                rank = i + 1;
                break;
            }
        }
        require(rank > 0, "oracle found no gold for query " + std::to_string(q));
        require(rank == report.outcomes[q].rank,
                "query " + std::to_string(q) + ": oracle rank " + std::to_string(rank) +
                    " != reported " + std::to_string(report.outcomes[q].rank));
        mrr += 1.0 / double(rank);
        hr += rank <= 10 ? 1.0 : 0.0;
    }
    mrr /= double(n_inst);
    hr /= double(n_inst);
    require(mrr == report.mrr, "oracle MRR " + fmt(mrr) + " != reported " + fmt(report.mrr));
    require(hr == report.hr_at_10, "oracle HR@10 " + fmt(hr) + " != reported " + fmt(report.hr_at_10));

    // Gold always at rank 1 -> MRR exactly 1.
    std::vector<RetrievalInstance> easy(150);
    std::vector<std::vector<float>> easy_q(150);
    for (size_t q = 0; q < easy.size(); ++q) {
        size_t g = rng.below(n_cand);
        easy[q].query_id = "e" + std::to_string(q);
        easy[q].text = "unused";
        easy[q].gold_ids = {candidates[g].first};
        easy_q[q] = candidates[g].second;
    }
    RetrievalReport perfect = retrieval_eval(easy, easy_q, candidates, {});
    require(perfect.mrr == 1.0, "exact-match MRR " + fmt(perfect.mrr) + " != 1.0");
    require(perfect.hr_at_10 == 1.0, "exact-match HR@10 != 1.0");

    // One query whose single gold sits at rank 2 -> MRR exactly 0.5.
    std::vector<std::pair<std::string, std::vector<float>>> trio = {
        {"a", {1.0f, 0.0f, 0.0f, 0.0f}},
        {"b", {0.9f, 0.1f, 0.0f, 0.0f}},
        {"c", {0.0f, 1.0f, 0.0f, 0.0f}},
    };
    RetrievalInstance one;
    one.query_id = "rank2";
    one.text = "unused";
    one.gold_ids = {"b"};
    RetrievalReport half = retrieval_eval({one}, {{1.0f, 0.0f, 0.0f, 0.0f}}, trio, {});
    require(half.mrr == 0.5, "rank-2 MRR " + fmt(half.mrr) + " != 0.5");
}

// ---------------------------------------------------------------------------
// 6. Receptive-field arithmetic.
void check_effective_context() {
    require(effective_context(512, 512) == 262144ull,
            "effective_context(512, 512) != 262144");
    require(effective_context(4096, 4096) == 16777216ull,
            "effective_context(4096, 4096) != 16777216");
}

// ---------------------------------------------------------------------------
// 7. Pretraining beats both the raw mean and an untrained model on retrieval.
void check_functional_separation() {
    // Long documents are what gives attention enough same-topic context to
    // denoise chunk states past what plain averaging can do; short-doc or
    // low-step variants of this setup do not separate reliably.
    double avg_raw = 0, avg_pre = 0, avg_rnd = 0;
    for (uint64_t s = 1; s <= 3; ++s) {
        SynthConfig scfg;
        scfg.seed = 200 + s;
        scfg.n_docs = 256;
        scfg.topics = 16;
        scfg.words_per_topic = 10;
        scfg.chunk_tokens = 6;
        scfg.min_chunks = 8;
        scfg.max_chunks = 14;
        scfg.filler_frac = 0.5;
        scfg.filler_words = 24;
        scfg.noise_frac = 0.15;
        scfg.query_purity = 0.9;

        Pipeline pipe(scfg, 32, "separation-" + std::to_string(s));
        auto cache = EmbeddingCache::open(pipe.cache_dir);
        TrainData data = load_train_data(cache, 16);

        ModelConfig mc;
        mc.d_in = 32;
        mc.d_model = 64;
        mc.n_layers = 2;
        mc.n_heads = 4;
        mc.seq_len = 16;
        mc.finalize();
        auto params = init_params<float>(mc, s);
        TrainState state = init_train_state(params, s);
        TrainConfig tc;
        tc.seed = s;
        tc.total_steps = 5000;
        tc.batch_size = 8;
        tc.max_lr = 1e-3;
        tc.masking.rate = 0.4;
        train(params, state, data, tc, scratch("separation-run-" + std::to_string(s)));

        auto random_params = init_params<float>(mc, 1000 + s);

        TextEncoder enc;
        enc.spec = cache.spec();
        enc.seed = 5;
        enc.chunk_size = scfg.chunk_tokens;

        auto instances = make_retrieval(pipe.corpus, scfg);
        auto mrr_with = [&](Pooling pooling, const ModelParams<float>* model) {
            Embedder emb;
            emb.pooling = pooling;
            emb.encoder = enc;
            emb.model = model;
            std::vector<std::pair<std::string, std::vector<float>>> cands;
            for (const auto& id : cache.doc_ids()) {
                cands.emplace_back(id, emb.embed_vectors(cache.read_doc(id)));
            }
            std::vector<std::vector<float>> qs;
            for (const auto& inst : instances) qs.push_back(emb.embed_text(inst.text));
            return retrieval_eval(instances, qs, cands, {}).mrr;
        };
        avg_raw += mrr_with(Pooling::MeanRaw, nullptr);
        avg_pre += mrr_with(Pooling::MeanContextualized, &params);
        avg_rnd += mrr_with(Pooling::MeanContextualized, &random_params);
    }
    avg_raw /= 3;
    avg_pre /= 3;
    avg_rnd /= 3;
    require(avg_pre > avg_raw, "pretrained MRR " + fmt(avg_pre) + " not above raw-mean MRR " +
                                   fmt(avg_raw) + " (random-init " + fmt(avg_rnd) + ")");
    require(avg_pre > avg_rnd, "pretrained MRR " + fmt(avg_pre) + " not above random-init MRR " +
                                   fmt(avg_rnd) + " (raw-mean " + fmt(avg_raw) + ")");
}

// ---------------------------------------------------------------------------
// 8. Bit-exact reproducibility: straight runs, resume, and evaluation reports.
void check_reproducibility() {
    SynthConfig scfg;
    scfg.seed = 40;
    scfg.n_docs = 24;
    scfg.topics = 6;
    scfg.words_per_topic = 5;
    scfg.chunk_tokens = 8;
    scfg.min_chunks = 3;
    scfg.max_chunks = 8;

    Pipeline pipe(scfg, 16, "repro-cache");
    auto cache = EmbeddingCache::open(pipe.cache_dir);
    TrainData data = load_train_data(cache, 16);

    ModelConfig mc;
    mc.d_in = 16;
    mc.d_model = 32;
    mc.n_layers = 1;
    mc.n_heads = 4;
    mc.seq_len = 16;
    mc.finalize();
    TrainConfig tc;
    tc.seed = 9;
    tc.total_steps = 12;
    tc.batch_size = 4;

    auto run_full = [&](const std::string& dir) {
        auto params = init_params<float>(mc, 9);
        TrainState state = init_train_state(params, 9);
        train(params, state, data, tc, dir);
        return params;
    };
    std::string dir_a = scratch("repro-a");
    std::string dir_b = scratch("repro-b");
    run_full(dir_a);
    run_full(dir_b);
    require(read_bytes(dir_a + "/model.nlmp") == read_bytes(dir_b + "/model.nlmp"),
            "identical runs produced different model checkpoints");
    require(read_bytes(dir_a + "/state.nlmt") == read_bytes(dir_b + "/state.nlmt"),
            "identical runs produced different train states");

    // Interrupt after 6 steps, save, reload, finish under the same schedule.
    std::string dir_c = scratch("repro-c");
    {
        auto params = init_params<float>(mc, 9);
        TrainState state = init_train_state(params, 9);
        ModelParams<float> grads = zero_like(params);
        ForwardCache<float> fw;
        for (int i = 0; i < 6; ++i) train_step(params, state, data, tc, grads, fw);
        save_checkpoint(params, state, dir_c);
    }
    {
        auto params = load_model<float>(dir_c + "/model.nlmp");
        TrainState state = load_train_state(dir_c + "/state.nlmt", params);
        require(state.step == 6, "expected a 6-step checkpoint");
        train(params, state, data, tc, dir_c);
    }
    require(read_bytes(dir_a + "/model.nlmp") == read_bytes(dir_c + "/model.nlmp"),
            "resumed run diverged from the straight run (model bytes)");
    require(read_bytes(dir_a + "/state.nlmt") == read_bytes(dir_c + "/state.nlmt"),
            "resumed run diverged from the straight run (state bytes)");

    // Same seeds, same report: fine-tuning and retrieval evals, twice each.
    auto binary = make_binary(pipe.corpus, scfg);
    TextEncoder enc;
    enc.spec = cache.spec();
    enc.seed = 5;
    enc.chunk_size = scfg.chunk_tokens;
    std::map<std::string, Matrix<float>> doc_vectors;
    for (const auto& id : cache.doc_ids()) doc_vectors.emplace(id, cache.read_doc(id));
    FinetuneConfig fcfg;
    fcfg.seed = 11;
    fcfg.epochs = 1;
    auto report_once = [&] {
        auto params = load_model<float>(dir_a + "/model.nlmp");
        BinaryReport rep = finetune_binary(params, enc, doc_vectors, binary, fcfg);
        nlohmann::ordered_json j;
        to_json(j, rep);
        return j.dump();
    };
    std::string rep1 = report_once();
    std::string rep2 = report_once();
    require(rep1 == rep2, "fine-tuning reports differ across identical runs");

    auto retrieval = make_retrieval(pipe.corpus, scfg);
    auto sts_once = [&] {
        auto params = load_model<float>(dir_a + "/model.nlmp");
        Embedder emb;
        emb.encoder = enc;
        emb.model = &params;
        std::vector<std::pair<std::string, std::vector<float>>> cands;
        for (const auto& id : cache.doc_ids()) {
            cands.emplace_back(id, emb.embed_vectors(cache.read_doc(id)));
        }
        std::vector<std::vector<float>> qs;
        for (const auto& inst : retrieval) qs.push_back(emb.embed_text(inst.text));
        nlohmann::ordered_json j;
        to_json(j, retrieval_eval(retrieval, qs, cands, {}));
        return j.dump();
    };
    require(sts_once() == sts_once(), "retrieval reports differ across identical runs");
}

// ---------------------------------------------------------------------------
// 9. Schedule and optimizer hand anchors.
void check_schedule_anchors() {
    require(lr_at(5, 100, 3e-4, 0.05) == 3e-4, "lr at the end of warmup must be the peak");
    double mid = lr_at(55, 105, 2e-4, 0.05);
    require(std::abs(mid - 1e-4) <= 1e-12, "cosine midpoint " + fmt(mid) + " != max/2");
    require(lr_at(100, 100, 3e-4, 0.05) == 0.0, "lr past the schedule must be zero");
    bool threw = false;
    try {
        lr_at(0, 10, 1e-4, 1.0);
    } catch (const DataError&) {
        threw = true;
    }
    require(threw, "degenerate all-warmup schedule must be rejected");

    float w = 1.0f, g = 1.0f, m = 0.0f, v = 0.0f;
    AdamConfig acfg;
    acfg.eps = 0.0;
    acfg.weight_decay = 0.0;
    adamw_update(&w, &g, &m, &v, 1, 1, 0.1, acfg, true);
    require(std::abs(double(w) - 0.9) <= 1e-7, "AdamW first step w' = " + fmt(w) + " != 0.9");
    adamw_update(&w, &g, &m, &v, 1, 2, 0.1, acfg, true);
    require(std::abs(double(w) - 0.8) <= 1e-7, "AdamW second step w' = " + fmt(w) + " != 0.8");
}

struct Criterion {
    int id;
    const char* label;
    double budget_s;
    std::function<void()> run;
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    std::vector<Criterion> criteria = {
        {1, "masking statistics (rate 0.15 +/- 0.002, split 80/10/10 +/- 0.01)", 10, check_masking_stats},
        {2, "finite-difference gradients (all 46 tensors, rel tol 1e-4)", 120, check_gradients},
        {3, "overfit 32 docs (>=90% loss drop, masked cosine >=0.95, <=2000 steps)", 600, check_overfit},
        {4, "passthrough pooling equals raw mean (100 docs, 1e-6)", 10, check_passthrough},
        {5, "retrieval metrics match brute-force oracle (1000 queries)", 30, check_retrieval_oracle},
        {6, "effective context arithmetic", 1, check_effective_context},
        {7, "pretraining beats raw-mean and random-init retrieval (3 seeds)", 1800, check_functional_separation},
        {8, "bit-exact reruns, resume, and evaluation reports", 900, check_reproducibility},
        {9, "schedule and optimizer hand anchors", 1, check_schedule_anchors},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.run();
        } catch (const Failure& f) {
            error = f.msg;
        } catch (const std::exception& e) {
            error = std::string("unexpected exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (error.empty() && secs > c.budget_s) {
            error = "exceeded time budget: " + fmt(secs) + "s > " + fmt(c.budget_s) + "s";
        }
        if (error.empty()) {
            std::printf("PASS  %d  %s (%.1fs)\n", c.id, c.label, secs);
        } else {
            std::printf("FAIL  %d  %s (%.1fs): %s\n", c.id, c.label, secs, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    std::filesystem::remove_all(scratch_root());
    if (failures != 0) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
