#pragma once

// Synthetic corpora and task files.
//
// Documents are streams of topic chunks: every document owns a small set of
// topics and cycles through them, so the topic of a chunk recurs at a fixed
// stride and can be inferred from far-away neighbors. Each topic has a tiny
// word pool, which keeps chunks of one topic close in embedding space.
// Filler chunks drawn from a pool shared across the corpus dilute the raw
// mean embedding without touching the topical structure.

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunker.hpp"
#include "common.hpp"
#include "eval.hpp"
#include "rng.hpp"

namespace nlm {

struct SynthConfig {
    uint64_t seed = 0;
    int n_docs = 64;
    int topics = 8;
    int words_per_topic = 4;
    int chunk_tokens = 32;
    int min_chunks = 4;
    int max_chunks = 12;
    int topics_per_doc = 2;
    double filler_frac = 0.0;   // probability a chunk comes from the shared pool
    int filler_words = 16;
    double noise_frac = 0.0;    // within-chunk tokens drawn from random topics
    double query_purity = 0.85; // fraction of query tokens from the gold topic
    int query_chunks = 2;

    void validate() const {
        if (n_docs < 1) throw DataError("need at least one document");
        if (topics < 4) throw DataError("need at least four topics");
        if (words_per_topic < 1 || chunk_tokens < 1) throw DataError("word counts must be positive");
        if (min_chunks < 1 || max_chunks < min_chunks) throw DataError("bad chunk count range");
        if (topics_per_doc < 1 || topics_per_doc > topics) throw DataError("bad topics per document");
        if (filler_frac < 0.0 || filler_frac >= 1.0) throw DataError("filler fraction must be in [0, 1)");
        if (noise_frac < 0.0 || noise_frac >= 1.0) throw DataError("noise fraction must be in [0, 1)");
        if (query_purity <= 0.5 || query_purity > 1.0) throw DataError("query purity must be in (0.5, 1]");
        if (query_chunks < 1) throw DataError("need at least one query chunk");
    }
};

inline void to_json(nlohmann::ordered_json& j, const SynthConfig& c) {
    j = {{"seed", c.seed},
         {"n_docs", c.n_docs},
         {"topics", c.topics},
         {"words_per_topic", c.words_per_topic},
         {"chunk_tokens", c.chunk_tokens},
         {"min_chunks", c.min_chunks},
         {"max_chunks", c.max_chunks},
         {"topics_per_doc", c.topics_per_doc},
         {"filler_frac", c.filler_frac},
         {"filler_words", c.filler_words},
         {"noise_frac", c.noise_frac},
         {"query_purity", c.query_purity},
         {"query_chunks", c.query_chunks}};
}

inline std::string topic_word(int topic, int word) {
    return "t" + std::to_string(topic) + "w" + std::to_string(word);
}

inline std::string filler_word(int word) { return "f" + std::to_string(word); }

struct SynthCorpus {
    std::vector<RawDocument> docs;
    std::vector<std::vector<int>> doc_topics;  // per doc, cycling order
};

namespace detail {

inline std::string synth_chunk(int topic, const SynthConfig& cfg, Rng& rng) {
    std::string out;
    for (int t = 0; t < cfg.chunk_tokens; ++t) {
        if (!out.empty()) out += ' ';
        if (topic < 0) {
            out += filler_word(static_cast<int>(rng.below(static_cast<uint64_t>(cfg.filler_words))));
        } else if (cfg.noise_frac > 0.0 && rng.uniform01() < cfg.noise_frac) {
            int other = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.topics)));
            out += topic_word(other, static_cast<int>(rng.below(static_cast<uint64_t>(cfg.words_per_topic))));
        } else {
            out += topic_word(topic, static_cast<int>(rng.below(static_cast<uint64_t>(cfg.words_per_topic))));
        }
    }
    return out;
}

inline std::vector<int> pick_topics(const SynthConfig& cfg, Rng& rng) {
    std::vector<int> all(static_cast<size_t>(cfg.topics));
    for (int i = 0; i < cfg.topics; ++i) all[static_cast<size_t>(i)] = i;
    rng.shuffle(all);
    all.resize(static_cast<size_t>(cfg.topics_per_doc));
    return all;
}

}  // namespace detail

inline SynthCorpus make_corpus(const SynthConfig& cfg) {
    cfg.validate();
    SynthCorpus corpus;
    for (int d = 0; d < cfg.n_docs; ++d) {
        Rng rng(derive_seed(cfg.seed, {0xd0c5u, static_cast<uint64_t>(d)}));
        std::vector<int> topics = detail::pick_topics(cfg, rng);
        int n_chunks = cfg.min_chunks +
                       static_cast<int>(rng.below(static_cast<uint64_t>(cfg.max_chunks - cfg.min_chunks + 1)));
        std::string text;
        for (int c = 0; c < n_chunks; ++c) {
            bool filler = cfg.filler_frac > 0.0 && rng.uniform01() < cfg.filler_frac;
            int topic = filler ? -1 : topics[static_cast<size_t>(c % cfg.topics_per_doc)];
            if (!text.empty()) text += ' ';
            text += detail::synth_chunk(topic, cfg, rng);
        }
        char id[32];
        std::snprintf(id, sizeof(id), "doc-%04d", d);
        corpus.docs.push_back({id, std::move(text)});
        corpus.doc_topics.push_back(std::move(topics));
    }
    return corpus;
}

// One query per document: a short summary whose token mass is dominated by
// the document's first (signature) topic.
inline std::vector<RetrievalInstance> make_retrieval(const SynthCorpus& corpus, const SynthConfig& cfg) {
    std::vector<RetrievalInstance> out;
    for (size_t d = 0; d < corpus.docs.size(); ++d) {
        Rng rng(derive_seed(cfg.seed, {0x9e1u, static_cast<uint64_t>(d)}));
        int gold_topic = corpus.doc_topics[d][0];
        int total = cfg.query_chunks * cfg.chunk_tokens;
        int n_gold = static_cast<int>(std::ceil(cfg.query_purity * total));
        std::vector<std::string> words;
        for (int i = 0; i < total; ++i) {
            if (i < n_gold) {
                words.push_back(topic_word(
                    gold_topic, static_cast<int>(rng.below(static_cast<uint64_t>(cfg.words_per_topic)))));
            } else {
                int other = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.topics)));
                words.push_back(topic_word(
                    other, static_cast<int>(rng.below(static_cast<uint64_t>(cfg.words_per_topic)))));
            }
        }
        rng.shuffle(words);
        std::string text;
        for (const auto& w : words) {
            if (!text.empty()) text += ' ';
            text += w;
        }
        RetrievalInstance inst;
        char qid[32];
        std::snprintf(qid, sizeof(qid), "q-%04zu", d);
        inst.query_id = qid;
        inst.text = std::move(text);
        inst.gold_ids = {corpus.docs[d].doc_id};
        out.push_back(std::move(inst));
    }
    return out;
}

// Balanced yes/no questions: does the document cover this topic.
inline std::vector<BinaryInstance> make_binary(const SynthCorpus& corpus, const SynthConfig& cfg) {
    std::vector<BinaryInstance> out;
    for (size_t d = 0; d < corpus.docs.size(); ++d) {
        Rng rng(derive_seed(cfg.seed, {0xb1du, static_cast<uint64_t>(d)}));
        const auto& topics = corpus.doc_topics[d];
        int pos_topic = topics[static_cast<size_t>(rng.below(topics.size()))];
        int neg_topic;
        do {
            neg_topic = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.topics)));
        } while (std::find(topics.begin(), topics.end(), neg_topic) != topics.end());
        auto question = [&](int topic) {
            std::string q = "about";
            for (int w = 0; w < cfg.words_per_topic; ++w) q += ' ' + topic_word(topic, w);
            return q;
        };
        out.push_back({corpus.docs[d].doc_id, question(pos_topic), 1});
        out.push_back({corpus.docs[d].doc_id, question(neg_topic), 0});
    }
    return out;
}

// Which topic does the document cover: the signature topic against three
// distractor topics the document never uses.
inline std::vector<ChoiceInstance> make_choice(const SynthCorpus& corpus, const SynthConfig& cfg) {
    std::vector<ChoiceInstance> out;
    for (size_t d = 0; d < corpus.docs.size(); ++d) {
        Rng rng(derive_seed(cfg.seed, {0xc401ceu, static_cast<uint64_t>(d)}));
        const auto& topics = corpus.doc_topics[d];
        int gold_topic = topics[0];
        std::vector<int> others;
        for (int t = 0; t < cfg.topics; ++t) {
            if (std::find(topics.begin(), topics.end(), t) == topics.end()) others.push_back(t);
        }
        if (others.size() < 3) throw DataError("not enough topics for three distractors");
        rng.shuffle(others);
        auto summary = [&](int topic) {
            std::string s;
            for (int w = 0; w < cfg.words_per_topic; ++w) {
                if (!s.empty()) s += ' ';
                s += topic_word(topic, w);
            }
            return s;
        };
        ChoiceInstance inst;
        inst.doc_id = corpus.docs[d].doc_id;
        inst.question = "main topic";
        int correct = static_cast<int>(rng.below(4));
        int oi = 0;
        for (int a = 0; a < 4; ++a) {
            inst.answers[static_cast<size_t>(a)] = summary(a == correct ? gold_topic : others[static_cast<size_t>(oi++)]);
        }
        inst.correct_index = correct;
        out.push_back(std::move(inst));
    }
    return out;
}

// ---- writers -------------------------------------------------------------

inline void write_corpus_jsonl(const std::vector<RawDocument>& docs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus: " + path);
    for (const auto& d : docs) {
        nlohmann::ordered_json j = {{"doc_id", d.doc_id}, {"text", d.text}};
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failure on corpus: " + path);
}

inline void write_retrieval_jsonl(const std::vector<RetrievalInstance>& instances,
                                  const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write task file: " + path);
    for (const auto& inst : instances) {
        nlohmann::ordered_json j;
        j["query_id"] = inst.query_id;
        if (!inst.doc_id.empty()) j["doc_id"] = inst.doc_id;
        else j["text"] = inst.text;
        j["gold_ids"] = inst.gold_ids;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failure on task file: " + path);
}

inline void write_binary_jsonl(const std::vector<BinaryInstance>& instances, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write task file: " + path);
    for (const auto& inst : instances) {
        nlohmann::ordered_json j = {{"doc_id", inst.doc_id}, {"question", inst.question}, {"label", inst.label}};
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failure on task file: " + path);
}

inline void write_choice_jsonl(const std::vector<ChoiceInstance>& instances, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write task file: " + path);
    for (const auto& inst : instances) {
        nlohmann::ordered_json j = {{"doc_id", inst.doc_id},
                                    {"question", inst.question},
                                    {"answers", inst.answers},
                                    {"correct_index", inst.correct_index}};
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failure on task file: " + path);
}

}  // namespace nlm
