#pragma once

// Document chunking: fixed-length token chunks or rule-based sentence
// chunks, plus corpus and chunk-manifest IO (JSON-lines).

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "tokenizer.hpp"

namespace nlm {

struct RawDocument {
    std::string doc_id;
    std::string text;
};

struct Chunk {
    std::string doc_id;
    int chunk_index = 0;
    std::string text;
    int token_count = 0;
};

struct ChunkedDocument {
    std::string doc_id;
    std::vector<Chunk> chunks;
    long total_tokens = 0;
};

enum class ChunkMode { Fixed, Sentence };

// Chunks of exactly chunk_size tokens, except a possibly shorter last chunk.
// Chunk text is the tokens re-joined with single spaces.
inline ChunkedDocument split_fixed(const RawDocument& doc, int chunk_size) {
    if (chunk_size < 1) throw DataError("chunk_size must be >= 1");
    ChunkedDocument out;
    out.doc_id = doc.doc_id;
    std::vector<std::string> tokens = tokenize(doc.text);
    out.total_tokens = static_cast<long>(tokens.size());
    for (size_t begin = 0; begin < tokens.size(); begin += static_cast<size_t>(chunk_size)) {
        size_t end = std::min(tokens.size(), begin + static_cast<size_t>(chunk_size));
        std::string text;
        for (size_t i = begin; i < end; ++i) {
            if (i > begin) text.push_back(' ');
            text += tokens[i];
        }
        Chunk c;
        c.doc_id = doc.doc_id;
        c.chunk_index = static_cast<int>(out.chunks.size());
        c.token_count = static_cast<int>(end - begin);
        c.text = std::move(text);
        out.chunks.push_back(std::move(c));
    }
    return out;
}

namespace detail {

// Abbreviations that suppress a sentence boundary at a period. Lowercase;
// matched case-insensitively. Single letters ("J.") are always treated as
// initials and never end a sentence.
inline const std::array<std::string_view, 28>& abbreviations() {
    static const std::array<std::string_view, 28> list = {
        "mr",  "mrs",  "ms",  "dr",   "prof", "sr",     "jr",  "st",  "vs", "etc",
        "e.g", "i.e",  "cf",  "inc",  "ltd",  "co",     "corp", "fig", "no", "vol",
        "pp",  "approx", "mt", "rev", "gen",  "col",    "capt", "sgt"};
    return list;
}

inline bool is_terminal_punct(char c) { return c == '.' || c == '!' || c == '?'; }

inline bool is_closing_mark(std::string_view text, size_t i, size_t& len) {
    char c = text[i];
    if (c == '"' || c == '\'' || c == ')' || c == ']') {
        len = 1;
        return true;
    }
    // UTF-8 curly closers: ” (e2 80 9d) and ’ (e2 80 99)
    if (i + 2 < text.size() && static_cast<unsigned char>(text[i]) == 0xe2 &&
        static_cast<unsigned char>(text[i + 1]) == 0x80) {
        unsigned char b = static_cast<unsigned char>(text[i + 2]);
        if (b == 0x9d || b == 0x99) {
            len = 3;
            return true;
        }
    }
    return false;
}

inline bool starts_sentence(std::string_view text, size_t i) {
    char c = text[i];
    if (std::isupper(static_cast<unsigned char>(c)) != 0) return true;
    if (c == '"' || c == '\'') return true;
    // UTF-8 curly openers: “ (e2 80 9c) and ‘ (e2 80 98)
    if (i + 2 < text.size() && static_cast<unsigned char>(text[i]) == 0xe2 &&
        static_cast<unsigned char>(text[i + 1]) == 0x80) {
        unsigned char b = static_cast<unsigned char>(text[i + 2]);
        if (b == 0x9c || b == 0x98) return true;
    }
    return false;
}

// Word of [A-Za-z.] characters ending just before position i.
inline std::string word_before(std::string_view text, size_t i) {
    size_t p = i;
    while (p > 0) {
        char c = text[p - 1];
        if (std::isalpha(static_cast<unsigned char>(c)) == 0 && c != '.') break;
        --p;
    }
    return std::string(text.substr(p, i - p));
}

inline bool is_abbreviation(std::string_view text, size_t period_pos) {
    std::string word = word_before(text, period_pos);
    while (!word.empty() && word.front() == '.') word.erase(word.begin());
    if (word.empty()) return false;
    if (word.size() == 1 && std::isalpha(static_cast<unsigned char>(word[0])) != 0) return true;
    std::string lower = word;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (std::string_view a : abbreviations()) {
        if (lower == a) return true;
    }
    return false;
}

inline std::string_view trim(std::string_view s) {
    size_t b = 0;
    while (b < s.size() && is_space_byte(static_cast<unsigned char>(s[b]))) ++b;
    size_t e = s.size();
    while (e > b && is_space_byte(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace detail

// Sentence spans found by scanning for terminal punctuation (. ! ?) whose
// run is followed by whitespace and an uppercase letter or opening quote.
// A single period preceded by a known abbreviation or a lone initial does
// not end a sentence. Text without any boundary is one chunk.
inline ChunkedDocument split_sentences(const RawDocument& doc) {
    ChunkedDocument out;
    out.doc_id = doc.doc_id;
    std::string_view text = doc.text;
    const size_t n = text.size();

    std::vector<std::string_view> spans;
    size_t start = 0;
    while (start < n && is_space_byte(static_cast<unsigned char>(text[start]))) ++start;
    size_t i = start;
    while (i < n) {
        if (!detail::is_terminal_punct(text[i])) {
            ++i;
            continue;
        }
        size_t run_begin = i;
        size_t j = i;
        while (j < n && detail::is_terminal_punct(text[j])) ++j;
        size_t close_len = 0;
        while (j < n && detail::is_closing_mark(text, j, close_len)) j += close_len;

        bool boundary;
        if (j >= n) {
            boundary = true;
        } else {
            size_t k = j;
            bool had_space = false;
            while (k < n && is_space_byte(static_cast<unsigned char>(text[k]))) {
                had_space = true;
                ++k;
            }
            boundary = had_space && k < n && detail::starts_sentence(text, k);
        }
        bool single_period = (j - run_begin >= 1) && text[run_begin] == '.' &&
                             (run_begin + 1 >= n || !detail::is_terminal_punct(text[run_begin + 1]));
        if (boundary && single_period && detail::is_abbreviation(text, run_begin)) {
            boundary = false;
        }
        if (boundary) {
            spans.push_back(text.substr(start, j - start));
            start = j;
            while (start < n && is_space_byte(static_cast<unsigned char>(text[start]))) ++start;
            i = start;
        } else {
            i = j;
        }
    }
    if (start < n) spans.push_back(text.substr(start));

    for (std::string_view span : spans) {
        std::string_view trimmed = detail::trim(span);
        if (trimmed.empty()) continue;
        int tc = static_cast<int>(count_tokens(trimmed));
        if (tc == 0) continue;
        Chunk c;
        c.doc_id = doc.doc_id;
        c.chunk_index = static_cast<int>(out.chunks.size());
        c.text = std::string(trimmed);
        c.token_count = tc;
        out.chunks.push_back(std::move(c));
        out.total_tokens += tc;
    }
    return out;
}

inline ChunkedDocument chunk_document(const RawDocument& doc, ChunkMode mode, int chunk_size) {
    return mode == ChunkMode::Fixed ? split_fixed(doc, chunk_size) : split_sentences(doc);
}

// Chunks a corpus, dropping documents that produce zero chunks (warning to
// stderr). Output order follows corpus order regardless of worker count.
inline std::vector<ChunkedDocument> chunk_corpus(const std::vector<RawDocument>& docs, ChunkMode mode,
                                                 int chunk_size, int workers = 1) {
    std::vector<ChunkedDocument> all(docs.size());
    if (workers <= 1 || docs.size() < 2) {
        for (size_t i = 0; i < docs.size(); ++i) all[i] = chunk_document(docs[i], mode, chunk_size);
    } else {
        size_t w = std::min<size_t>(static_cast<size_t>(workers), docs.size());
        std::vector<std::future<void>> futures;
        futures.reserve(w);
        for (size_t t = 0; t < w; ++t) {
            futures.push_back(std::async(std::launch::async, [&, t]() {
                for (size_t i = t; i < docs.size(); i += w) {
                    all[i] = chunk_document(docs[i], mode, chunk_size);
                }
            }));
        }
        for (auto& f : futures) f.get();
    }
    std::vector<ChunkedDocument> kept;
    kept.reserve(all.size());
    for (auto& cd : all) {
        if (cd.chunks.empty()) {
            std::cerr << "warning: document '" << cd.doc_id << "' produced no chunks; dropped\n";
            continue;
        }
        kept.push_back(std::move(cd));
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Corpus and manifest IO

// JSON-lines corpus: one {"doc_id": ..., "text": ...} object per line.
inline std::vector<RawDocument> read_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::vector<RawDocument> docs;
    std::string line;
    size_t line_no = 0;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("doc_id") || !j.contains("text")) {
            throw DataError("corpus line " + std::to_string(line_no) + ": missing doc_id or text");
        }
        RawDocument d{j["doc_id"].get<std::string>(), j["text"].get<std::string>()};
        if (d.doc_id.empty()) throw DataError("corpus line " + std::to_string(line_no) + ": empty doc_id");
        docs.push_back(std::move(d));
    }
    std::vector<std::string> ids;
    ids.reserve(docs.size());
    for (const auto& d : docs) ids.push_back(d.doc_id);
    std::sort(ids.begin(), ids.end());
    auto dup = std::adjacent_find(ids.begin(), ids.end());
    if (dup != ids.end()) throw DataError("duplicate doc_id in corpus: " + *dup);
    return docs;
}

// Plain text file: the whole file is one document named after the file.
inline RawDocument read_plaintext(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open text file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    size_t slash = path.find_last_of("/\\");
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    size_t dot = name.find_last_of('.');
    if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
    return RawDocument{name, buf.str()};
}

inline void write_manifest(const std::string& path, const std::vector<ChunkedDocument>& docs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& d : docs) {
        for (const auto& c : d.chunks) {
            nlohmann::ordered_json j;
            j["doc_id"] = c.doc_id;
            j["chunk_index"] = c.chunk_index;
            j["token_count"] = c.token_count;
            j["text"] = c.text;
            out << j.dump() << '\n';
        }
    }
    if (!out) throw DataError("failed while writing manifest: " + path);
}

inline std::vector<ChunkedDocument> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::vector<ChunkedDocument> docs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        Chunk c;
        c.doc_id = j.at("doc_id").get<std::string>();
        c.chunk_index = j.at("chunk_index").get<int>();
        c.token_count = j.at("token_count").get<int>();
        c.text = j.at("text").get<std::string>();
        if (c.token_count < 1) {
            throw DataError("manifest line " + std::to_string(line_no) + ": token_count < 1");
        }
        if (docs.empty() || docs.back().doc_id != c.doc_id) {
            for (const auto& d : docs) {
                if (d.doc_id == c.doc_id) {
                    throw DataError("manifest rows for document '" + c.doc_id + "' are not contiguous");
                }
            }
            docs.push_back(ChunkedDocument{c.doc_id, {}, 0});
        }
        ChunkedDocument& d = docs.back();
        if (c.chunk_index != static_cast<int>(d.chunks.size())) {
            throw DataError("manifest line " + std::to_string(line_no) + ": chunk_index " +
                            std::to_string(c.chunk_index) + " not contiguous for document '" + c.doc_id + "'");
        }
        d.total_tokens += c.token_count;
        d.chunks.push_back(std::move(c));
    }
    return docs;
}

}  // namespace nlm
