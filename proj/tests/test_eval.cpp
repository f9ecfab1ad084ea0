#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "nextlevel/eval.hpp"
#include "nextlevel/synth.hpp"
#include "test_util.hpp"

using namespace nlm;

namespace {

Matrix<float> rows_of(std::initializer_list<std::initializer_list<float>> rows) {
    Matrix<float> m(rows.size(), rows.begin()->size());
    size_t r = 0;
    for (const auto& row : rows) {
        size_t c = 0;
        for (float v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

std::vector<float> unit2(double theta) {
    return {static_cast<float>(std::cos(theta)), static_cast<float>(std::sin(theta))};
}

}  // namespace

TEST_CASE("mean_raw_embedding averages chunk vectors", "[eval]") {
    Matrix<float> chunks = rows_of({{1.0f, 0.0f}, {0.0f, 1.0f}});
    auto e = mean_raw_embedding(chunks);
    REQUIRE(e.size() == 2);
    CHECK(e[0] == 0.5f);
    CHECK(e[1] == 0.5f);
    Matrix<float> empty(0, 2);
    CHECK_THROWS_AS(mean_raw_embedding(empty), DataError);
}

TEST_CASE("passthrough contextualized pooling equals the raw mean", "[eval]") {
    auto model = make_passthrough<float>(6, 8);
    Rng rng(40);
    for (size_t n_chunks : {1u, 3u, 6u, 10u, 23u}) {  // beyond one window too
        Matrix<float> chunks(n_chunks, 6);
        for (auto& v : chunks.data) v = static_cast<float>(rng.gaussian());
        auto raw = mean_raw_embedding(chunks);
        auto ctx = embed_forward(model, chunks).embedding;
        REQUIRE(ctx.size() == raw.size());
        for (size_t i = 0; i < raw.size(); ++i) {
            CHECK(ctx[i] == Catch::Approx(raw[i]).margin(1e-6));
        }
    }
}

TEST_CASE("cosine_double properties", "[eval]") {
    std::vector<float> a = {1.0f, 0.0f, 2.0f};
    std::vector<float> b = {0.0f, 3.0f, 0.0f};
    CHECK(cosine_double(a, a) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_double(a, b) == 0.0);

    // Power-of-two scaling is exact in float, cosine must not move at all.
    std::vector<float> a4 = {4.0f, 0.0f, 8.0f};
    std::vector<float> c = {0.5f, -1.25f, 0.75f};
    CHECK(cosine_double(a, c) == cosine_double(a4, c));

    std::vector<float> zero = {0.0f, 0.0f, 0.0f};
    CHECK(cosine_double(a, zero) == 0.0);
    std::vector<float> wrong = {1.0f};
    CHECK_THROWS_AS(cosine_double(a, wrong), DataError);
}

TEST_CASE("best_gold_rank orders by cosine with lexicographic ties", "[eval]") {
    std::vector<float> query = {1.0f, 0.0f};
    std::vector<std::pair<std::string, std::vector<float>>> cands = {
        {"x", {1.0f, 0.0f}},
        {"y", {1.0f, 0.0f}},              // exact tie with x
        {"w", unit2(0.4)},
    };
    auto [rank_y, id_y] = best_gold_rank(query, cands, {"y"});
    CHECK(rank_y == 2);  // tie resolved toward the smaller id
    CHECK(id_y == "y");
    auto [rank_x, id_x] = best_gold_rank(query, cands, {"x"});
    CHECK(rank_x == 1);

    // Multiple golds: the best one counts and is reported.
    auto [rank_m, id_m] = best_gold_rank(query, cands, {"w", "x"});
    CHECK(rank_m == 1);
    CHECK(id_m == "x");

    CHECK_THROWS_AS(best_gold_rank(query, cands, {"absent"}), DataError);
}

TEST_CASE("retrieval_eval reproduces hand-computed mrr", "[eval]") {
    // Candidates fan out at increasing angles: rank k has id c<k>.
    std::vector<std::pair<std::string, std::vector<float>>> cands;
    for (int k = 1; k <= 12; ++k) {
        char id[8];
        std::snprintf(id, sizeof(id), "c%02d", k);
        cands.emplace_back(id, unit2(0.1 * k));
    }
    std::vector<RetrievalInstance> instances;
    std::vector<std::vector<float>> queries;
    for (const char* gold : {"c01", "c02", "c04", "c10"}) {
        RetrievalInstance inst;
        inst.query_id = std::string("q_") + gold;
        inst.text = "unused";
        inst.gold_ids = {gold};
        instances.push_back(inst);
        queries.push_back({1.0f, 0.0f});
    }
    std::map<std::string, uint64_t> tokens;
    for (const auto& [id, v] : cands) tokens[id] = 100;  // all in [64,128)

    RetrievalReport report = retrieval_eval(instances, queries, cands, tokens);
    CHECK(report.queries == 4);
    CHECK(report.mrr == Catch::Approx((1.0 + 0.5 + 0.25 + 0.1) / 4.0).epsilon(1e-12));
    CHECK(report.hr_at_10 == 1.0);
    REQUIRE(report.outcomes.size() == 4);
    CHECK(report.outcomes[0].rank == 1);
    CHECK(report.outcomes[1].rank == 2);
    CHECK(report.outcomes[2].rank == 4);
    CHECK(report.outcomes[3].rank == 10);
    REQUIRE(report.bins.size() == 1);
    CHECK(report.bins[0].lo == 64);
    CHECK(report.bins[0].hi == 128);
    CHECK(report.bins[0].count == 4);
    CHECK(report.bins[0].mrr == Catch::Approx(report.mrr).epsilon(1e-12));

    // A single query at rank 2 gives exactly 0.5.
    RetrievalReport single = retrieval_eval({instances[1]}, {queries[1]}, cands, tokens);
    CHECK(single.mrr == 0.5);
}

TEST_CASE("retrieval_eval agrees with a brute-force oracle", "[eval]") {
    Rng rng(314);
    const int dim = 12;
    std::vector<std::pair<std::string, std::vector<float>>> cands;
    for (int i = 0; i < 40; ++i) {
        std::vector<float> v(dim);
        for (auto& f : v) f = static_cast<float>(rng.gaussian());
        char id[16];
        std::snprintf(id, sizeof(id), "doc-%03d", i);
        cands.emplace_back(id, std::move(v));
    }
    std::vector<RetrievalInstance> instances;
    std::vector<std::vector<float>> queries;
    for (int q = 0; q < 25; ++q) {
        std::vector<float> v(dim);
        for (auto& f : v) f = static_cast<float>(rng.gaussian());
        RetrievalInstance inst;
        inst.query_id = "q" + std::to_string(q);
        inst.text = "unused";
        size_t n_gold = 1 + rng.below(3);
        std::set<std::string> gold;
        while (gold.size() < n_gold) gold.insert(cands[rng.below(cands.size())].first);
        inst.gold_ids.assign(gold.begin(), gold.end());
        instances.push_back(inst);
        queries.push_back(std::move(v));
    }
    std::map<std::string, uint64_t> tokens;
    for (const auto& [id, v] : cands) tokens[id] = 1;

    RetrievalReport report = retrieval_eval(instances, queries, cands, tokens);

    // Oracle: sort ids by (cosine desc, id asc), find the best gold position.
    double mrr = 0;
    for (size_t q = 0; q < instances.size(); ++q) {
        std::vector<std::pair<double, std::string>> order;
        for (const auto& [id, v] : cands) order.emplace_back(-cosine_double(queries[q], v), id);
        std::sort(order.begin(), order.end());
        std::set<std::string> gold(instances[q].gold_ids.begin(), instances[q].gold_ids.end());
        size_t rank = 0;
        for (size_t i = 0; i < order.size(); ++i) {
            if (gold.count(order[i].second)) {
                rank = i + 1;
                break;
            }
        }
        REQUIRE(report.outcomes[q].rank == rank);
        mrr += 1.0 / static_cast<double>(rank);
    }
    CHECK(report.mrr == Catch::Approx(mrr / double(instances.size())).epsilon(1e-12));
}

TEST_CASE("document queries never rank against themselves", "[eval]") {
    std::vector<std::pair<std::string, std::vector<float>>> cands = {
        {"a", {1.0f, 0.0f}},
        {"b", {1.0f, 0.0f}},  // identical twin of a
        {"c", {0.0f, 1.0f}},
    };
    RetrievalInstance inst;
    inst.query_id = "q";
    inst.doc_id = "a";
    inst.gold_ids = {"b"};
    std::map<std::string, uint64_t> tokens = {{"a", 10}, {"b", 10}, {"c", 10}};
    RetrievalReport report = retrieval_eval({inst}, {{1.0f, 0.0f}}, cands, tokens);
    // With "a" excluded its twin ranks first; without exclusion the tie
    // would break toward "a" and push the gold to rank 2.
    CHECK(report.outcomes[0].rank == 1);
    CHECK(report.mrr == 1.0);
}

TEST_CASE("length bins use base-2 edges from 64", "[eval]") {
    CHECK(length_bin_for(0) == std::pair<uint64_t, uint64_t>{0, 64});
    CHECK(length_bin_for(63) == std::pair<uint64_t, uint64_t>{0, 64});
    CHECK(length_bin_for(64) == std::pair<uint64_t, uint64_t>{64, 128});
    CHECK(length_bin_for(127) == std::pair<uint64_t, uint64_t>{64, 128});
    CHECK(length_bin_for(128) == std::pair<uint64_t, uint64_t>{128, 256});
    CHECK(length_bin_for(640) == std::pair<uint64_t, uint64_t>{512, 1024});
    CHECK(length_bin_for(4096) == std::pair<uint64_t, uint64_t>{4096, 8192});
}

TEST_CASE("bin statistics decompose the aggregate", "[eval]") {
    std::vector<std::pair<std::string, std::vector<float>>> cands = {
        {"short", {1.0f, 0.0f}},
        {"long", {0.0f, 1.0f}},
    };
    std::map<std::string, uint64_t> tokens = {{"short", 10}, {"long", 5000}};
    std::vector<RetrievalInstance> instances;
    std::vector<std::vector<float>> queries;
    RetrievalInstance s;
    s.query_id = "qs";
    s.text = "u";
    s.gold_ids = {"short"};
    instances.push_back(s);
    queries.push_back({1.0f, 0.0f});  // rank 1
    RetrievalInstance l;
    l.query_id = "ql";
    l.text = "u";
    l.gold_ids = {"long"};
    instances.push_back(l);
    queries.push_back({1.0f, 0.0f});  // rank 2
    RetrievalReport report = retrieval_eval(instances, queries, cands, tokens);
    REQUIRE(report.bins.size() == 2);
    size_t total = 0;
    for (const auto& b : report.bins) total += b.count;
    CHECK(total == report.queries);
    CHECK(report.bins[0].lo == 0);
    CHECK(report.bins[0].mrr == 1.0);
    CHECK(report.bins[1].lo == 4096);
    CHECK(report.bins[1].mrr == 0.5);
}

TEST_CASE("task file readers validate their schemas", "[eval][io]") {
    nlmtest::ScratchDir dir("tasks");

    SECTION("retrieval rows need exactly one query source") {
        nlmtest::write_file_bytes(dir.str("r.jsonl"),
                                  "{\"query_id\": \"q\", \"text\": \"t\", \"doc_id\": \"d\", "
                                  "\"gold_ids\": [\"a\"]}\n");
        CHECK_THROWS_WITH(read_retrieval_jsonl(dir.str("r.jsonl")),
                          Catch::Matchers::ContainsSubstring("exactly one"));
        nlmtest::write_file_bytes(dir.str("r2.jsonl"), "{\"query_id\": \"q\", \"gold_ids\": [\"a\"]}\n");
        CHECK_THROWS_AS(read_retrieval_jsonl(dir.str("r2.jsonl")), DataError);
        nlmtest::write_file_bytes(dir.str("r3.jsonl"),
                                  "{\"query_id\": \"q\", \"text\": \"t\", \"gold_ids\": []}\n");
        CHECK_THROWS_WITH(read_retrieval_jsonl(dir.str("r3.jsonl")),
                          Catch::Matchers::ContainsSubstring("gold_ids is empty"));
        CHECK_THROWS_AS(read_retrieval_jsonl(dir.str("absent.jsonl")), DataError);
    }
    SECTION("binary labels are 0 or 1") {
        nlmtest::write_file_bytes(dir.str("b.jsonl"),
                                  "{\"doc_id\": \"d\", \"question\": \"q\", \"label\": 2}\n");
        CHECK_THROWS_AS(read_binary_jsonl(dir.str("b.jsonl")), DataError);
        nlmtest::write_file_bytes(dir.str("b2.jsonl"),
                                  "{\"doc_id\": \"d\", \"question\": \"q\", \"label\": 1}\n");
        auto rows = read_binary_jsonl(dir.str("b2.jsonl"));
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].label == 1);
    }
    SECTION("choice rows need exactly four answers") {
        nlmtest::write_file_bytes(dir.str("c.jsonl"),
                                  "{\"doc_id\": \"d\", \"question\": \"q\", "
                                  "\"answers\": [\"a\", \"b\", \"c\", \"d\", \"e\"], \"correct_index\": 0}\n");
        CHECK_THROWS_WITH(read_choice_jsonl(dir.str("c.jsonl")),
                          Catch::Matchers::ContainsSubstring("row 1") &&
                              Catch::Matchers::ContainsSubstring("4 answers"));
        nlmtest::write_file_bytes(dir.str("c2.jsonl"),
                                  "{\"doc_id\": \"d\", \"question\": \"q\", "
                                  "\"answers\": [\"a\", \"b\", \"c\", \"d\"], \"correct_index\": 4}\n");
        CHECK_THROWS_WITH(read_choice_jsonl(dir.str("c2.jsonl")),
                          Catch::Matchers::ContainsSubstring("correct_index"));
    }
}

TEST_CASE("f1 score formula", "[eval]") {
    CHECK(f1_score(2, 1, 1) == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(f1_score(0, 0, 0) == 0.0);
    CHECK(f1_score(5, 0, 0) == 1.0);
    CHECK(f1_score(0, 3, 4) == 0.0);
}

TEST_CASE("split_indices is a disjoint deterministic split", "[eval]") {
    std::vector<size_t> eval_a, eval_b;
    auto train_a = nlm::detail::split_indices(20, 0.2, 9, eval_a);
    auto train_b = nlm::detail::split_indices(20, 0.2, 9, eval_b);
    CHECK(train_a == train_b);
    CHECK(eval_a == eval_b);
    CHECK(train_a.size() == 16);
    CHECK(eval_a.size() == 4);
    std::vector<size_t> all = train_a;
    all.insert(all.end(), eval_a.begin(), eval_a.end());
    std::sort(all.begin(), all.end());
    for (size_t i = 0; i < 20; ++i) CHECK(all[i] == i);

    // Tiny sets still leave at least one element on each side.
    std::vector<size_t> eval_c;
    auto train_c = nlm::detail::split_indices(2, 0.0, 1, eval_c);
    CHECK(train_c.size() == 1);
    CHECK(eval_c.size() == 1);
}

TEST_CASE("classifier head learns a single example", "[eval]") {
    ClassifierHead head = ClassifierHead::init(4, 8, 3);
    std::vector<float> x = {1.0f, -0.5f, 0.25f, 2.0f};
    AdamConfig adam;
    std::vector<float> hidden, dx;
    float p_final = 0.0f;
    for (uint64_t t = 1; t <= 300; ++t) {
        float logit = head.forward(x, hidden);
        float p = 1.0f / (1.0f + std::exp(-logit));
        head.backward_update(x, hidden, p - 1.0f, dx, t, 1e-2, adam);
        p_final = p;
    }
    CHECK(p_final > 0.9f);
    // The input gradient points somewhere: fine-tuning can reach the encoder.
    float dx_norm = 0;
    for (float v : dx) dx_norm += v * v;
    CHECK(dx_norm > 0.0f);
}

TEST_CASE("embedder facade picks pooling and dimensions", "[eval]") {
    EncoderSpec spec{"reference", 8, true};
    TextEncoder enc{spec, 7, ChunkMode::Fixed, 4};
    auto model = make_passthrough<float>(8, 8);

    Embedder raw{nullptr, Pooling::MeanRaw, enc};
    CHECK(raw.out_dim() == 8);
    auto e1 = raw.embed_text("alpha beta gamma delta epsilon");
    CHECK(e1.size() == 8);
    CHECK(e1 == mean_raw_embedding(enc.vectors("alpha beta gamma delta epsilon")));

    Embedder ctx{&model, Pooling::MeanContextualized, enc};
    CHECK(ctx.out_dim() == 8);
    auto e2 = ctx.embed_text("alpha beta gamma delta epsilon");
    for (size_t i = 0; i < e2.size(); ++i) CHECK(e2[i] == Catch::Approx(e1[i]).margin(1e-6));

    Embedder broken{nullptr, Pooling::MeanContextualized, enc};
    CHECK_THROWS_AS(broken.embed_text("x"), DataError);
    CHECK_THROWS_AS(pooling_from_string("bogus"), DataError);
    CHECK(pooling_from_string("mean_raw") == Pooling::MeanRaw);
}

TEST_CASE("embed_backward routes gradients into the encoder stack", "[eval]") {
    ModelConfig cfg;
    cfg.d_in = 6;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.seq_len = 8;
    cfg.dropout = 0.0;
    auto model = init_params<float>(cfg, 21);
    Matrix<float> chunks(4, 6);
    Rng rng(2);
    for (auto& v : chunks.data) v = static_cast<float>(rng.gaussian() * 0.3);

    EmbedForward ef = embed_forward(model, chunks);
    auto grads = zero_like(model);
    std::vector<float> dout(8, 1.0f);
    embed_backward(model, ef, dout.data(), grads);

    auto views = tensors(grads);
    double w_norm = 0, mask_norm = 0, cls_norm = 0;
    for (auto& t : views) {
        double n = 0;
        for (size_t i = 0; i < t.size; ++i) n += double(t.data[i]) * t.data[i];
        if (t.name == "special.mask") mask_norm = n;
        else if (t.name == "special.cls") cls_norm = n;
        else w_norm += n;
    }
    CHECK(w_norm > 0.0);
    CHECK(cls_norm > 0.0);     // CLS participates in attention keys
    CHECK(mask_norm == 0.0);   // unmasked forward never touches the mask vector
}

TEST_CASE("binary fine-tuning is deterministic and self-consistent", "[eval][finetune]") {
    SynthConfig scfg;
    scfg.seed = 77;
    scfg.n_docs = 10;
    scfg.topics = 6;
    scfg.chunk_tokens = 6;
    scfg.min_chunks = 2;
    scfg.max_chunks = 4;
    SynthCorpus corpus = make_corpus(scfg);
    auto binary = make_binary(corpus, scfg);

    EncoderSpec spec{"reference", 8, true};
    TextEncoder enc{spec, 5, ChunkMode::Fixed, 8};
    std::map<std::string, Matrix<float>> doc_vectors;
    for (const auto& doc : corpus.docs) {
        auto chunked = chunk_document(doc, ChunkMode::Fixed, 8);
        Matrix<float> m(chunked.chunks.size(), 8);
        for (size_t i = 0; i < chunked.chunks.size(); ++i) {
            auto v = reference_encode(chunked.chunks[i], spec, 5);
            std::copy(v.values.begin(), v.values.end(), m.row(i));
        }
        doc_vectors.emplace(doc.doc_id, std::move(m));
    }

    ModelConfig mcfg;
    mcfg.d_in = 8;
    mcfg.d_model = 8;
    mcfg.n_heads = 2;
    mcfg.n_layers = 1;
    mcfg.ffn_hidden = 16;
    mcfg.head_hidden = 8;
    mcfg.seq_len = 8;
    mcfg.dropout = 0.0;

    FinetuneConfig fcfg;
    fcfg.epochs = 1;
    fcfg.seed = 4;

    auto m1 = init_params<float>(mcfg, 9);
    auto m2 = init_params<float>(mcfg, 9);
    BinaryReport r1 = finetune_binary(m1, enc, doc_vectors, binary, fcfg);
    BinaryReport r2 = finetune_binary(m2, enc, doc_vectors, binary, fcfg);

    CHECK(r1.train_n + r1.eval_n == binary.size());
    CHECK(r1.tp + r1.fp + r1.fn + r1.tn == r1.eval_n);
    CHECK(r1.accuracy == Catch::Approx(double(r1.tp + r1.tn) / double(r1.eval_n)).epsilon(1e-12));
    CHECK(r1.f1 == f1_score(r1.tp, r1.fp, r1.fn));
    CHECK(r1.accuracy == r2.accuracy);
    CHECK(r1.tp == r2.tp);
    CHECK(r1.fn == r2.fn);

    // Fine-tuning actually moved the encoder weights.
    auto v1 = tensors(m1);
    auto frozen = init_params<float>(mcfg, 9);
    auto v0 = tensors(frozen);
    bool moved = false;
    for (size_t i = 0; i < v1.size() && !moved; ++i) {
        moved = std::memcmp(v1[i].data, v0[i].data, v1[i].size * sizeof(float)) != 0;
    }
    CHECK(moved);

    // Unknown document reference is refused.
    auto bad = binary;
    bad[0].doc_id = "ghost";
    auto m3 = init_params<float>(mcfg, 9);
    CHECK_THROWS_WITH(finetune_binary(m3, enc, doc_vectors, bad, fcfg),
                      Catch::Matchers::ContainsSubstring("ghost"));
}

TEST_CASE("single-class splits are reported", "[eval][finetune]") {
    EncoderSpec spec{"reference", 8, true};
    TextEncoder enc{spec, 5, ChunkMode::Fixed, 8};
    std::map<std::string, Matrix<float>> doc_vectors;
    Rng rng(6);
    for (int d = 0; d < 4; ++d) {
        Matrix<float> m(2, 8);
        for (auto& v : m.data) v = static_cast<float>(rng.gaussian());
        doc_vectors.emplace("d" + std::to_string(d), std::move(m));
    }
    std::vector<BinaryInstance> data;
    for (int i = 0; i < 8; ++i) data.push_back({"d" + std::to_string(i % 4), "q" + std::to_string(i), 1});

    ModelConfig mcfg;
    mcfg.d_in = 8;
    mcfg.d_model = 8;
    mcfg.n_heads = 2;
    mcfg.n_layers = 0;
    mcfg.seq_len = 8;
    mcfg.dropout = 0.0;
    auto model = init_params<float>(mcfg, 1);
    FinetuneConfig fcfg;
    fcfg.epochs = 1;
    std::ostringstream log;
    BinaryReport r = finetune_binary(model, enc, doc_vectors, data, fcfg, &log);
    CHECK(r.single_class_train);
    CHECK(r.single_class_eval);
    CHECK(log.str().find("single class") != std::string::npos);
    CHECK(r.majority == 1.0);
}

TEST_CASE("choice fine-tuning is deterministic and bounded", "[eval][finetune]") {
    SynthConfig scfg;
    scfg.seed = 13;
    scfg.n_docs = 8;
    scfg.topics = 6;
    scfg.chunk_tokens = 6;
    scfg.min_chunks = 2;
    scfg.max_chunks = 4;
    SynthCorpus corpus = make_corpus(scfg);
    auto choice = make_choice(corpus, scfg);
    REQUIRE(choice.size() == 8);
    for (const auto& inst : choice) {
        CHECK(inst.correct_index >= 0);
        CHECK(inst.correct_index <= 3);
        std::set<std::string> distinct(inst.answers.begin(), inst.answers.end());
        CHECK(distinct.size() == 4);
    }

    EncoderSpec spec{"reference", 8, true};
    TextEncoder enc{spec, 5, ChunkMode::Fixed, 8};
    std::map<std::string, Matrix<float>> doc_vectors;
    for (const auto& doc : corpus.docs) {
        auto chunked = chunk_document(doc, ChunkMode::Fixed, 8);
        Matrix<float> m(chunked.chunks.size(), 8);
        for (size_t i = 0; i < chunked.chunks.size(); ++i) {
            auto v = reference_encode(chunked.chunks[i], spec, 5);
            std::copy(v.values.begin(), v.values.end(), m.row(i));
        }
        doc_vectors.emplace(doc.doc_id, std::move(m));
    }
    ModelConfig mcfg;
    mcfg.d_in = 8;
    mcfg.d_model = 8;
    mcfg.n_heads = 2;
    mcfg.n_layers = 1;
    mcfg.ffn_hidden = 16;
    mcfg.head_hidden = 8;
    mcfg.seq_len = 8;
    mcfg.dropout = 0.0;
    FinetuneConfig fcfg;
    fcfg.epochs = 1;
    auto m1 = init_params<float>(mcfg, 2);
    auto m2 = init_params<float>(mcfg, 2);
    ChoiceReport r1 = finetune_choice(m1, enc, doc_vectors, choice, fcfg);
    ChoiceReport r2 = finetune_choice(m2, enc, doc_vectors, choice, fcfg);
    CHECK(r1.train_n + r1.eval_n == choice.size());
    CHECK(r1.accuracy == Catch::Approx(double(r1.correct) / double(r1.eval_n)).epsilon(1e-12));
    CHECK(r1.accuracy >= 0.0);
    CHECK(r1.accuracy <= 1.0);
    CHECK(r1.chance == 0.25);
    CHECK(r1.accuracy == r2.accuracy);
    CHECK(r1.correct == r2.correct);
}
