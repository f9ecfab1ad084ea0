#pragma once

// The pluggable chunk-encoder boundary and the deterministic reference
// encoder used at desk scale. Real encoders run out of process; their
// vectors enter through the cache import path.

#include <cmath>
#include <string>
#include <vector>

#include "chunker.hpp"
#include "common.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace nlm {

struct EncoderSpec {
    std::string name = "reference";
    int dim = 64;
    bool normalizes = true;

    void validate() const {
        if (dim < 8 || dim > 4096) {
            throw DataError("encoder dim must be in [8, 4096], got " + std::to_string(dim));
        }
    }
};

struct ChunkVector {
    std::string doc_id;
    int chunk_index = 0;
    std::vector<float> values;
};

namespace detail {
inline constexpr uint64_t kEncoderSalt = 0x4e4c4d456e63ull;  // "NLMEnc"
}

// Deterministic bag-of-tokens encoder. Exact construction:
//   - each token keys an RNG stream: mix64(fnv1a(token) ^ mix64(seed ^ salt))
//   - the stream yields `dim` Irwin-Hall gaussians, L2-normalized to a unit
//     token vector
//   - the chunk vector is the mean of its token vectors, L2-normalized when
//     spec.normalizes, then rounded to f32
// Identical (text, seed, dim) give byte-identical vectors on any platform.
// Shared tokens pull chunk vectors together, so cosine similarity grows
// monotonically with bag overlap in expectation.
inline ChunkVector reference_encode(const Chunk& chunk, const EncoderSpec& spec, uint64_t seed) {
    spec.validate();
    std::vector<std::string> tokens = tokenize(chunk.text);
    if (tokens.empty()) {
        throw DataError("empty chunk: doc '" + chunk.doc_id + "' chunk " + std::to_string(chunk.chunk_index));
    }
    const size_t d = static_cast<size_t>(spec.dim);
    std::vector<double> acc(d, 0.0);
    std::vector<double> tok(d);
    std::vector<double> first(d, 0.0);
    const uint64_t seed_mix = mix64(seed ^ detail::kEncoderSalt);
    for (size_t t = 0; t < tokens.size(); ++t) {
        Rng rng(mix64(hash_bytes(tokens[t]) ^ seed_mix));
        for (size_t i = 0; i < d; ++i) tok[i] = rng.gaussian();
        double norm = 0.0;
        for (size_t i = 0; i < d; ++i) norm += tok[i] * tok[i];
        norm = std::sqrt(norm);
        if (norm < 1e-12) norm = 1.0;
        for (size_t i = 0; i < d; ++i) {
            tok[i] /= norm;
            acc[i] += tok[i];
        }
        if (t == 0) first = tok;
    }
    const double inv_n = 1.0 / static_cast<double>(tokens.size());
    for (size_t i = 0; i < d; ++i) acc[i] *= inv_n;
    if (spec.normalizes) {
        double norm = 0.0;
        for (size_t i = 0; i < d; ++i) norm += acc[i] * acc[i];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            acc = first;  // degenerate mean; fall back to the first token vector
        } else {
            for (size_t i = 0; i < d; ++i) acc[i] /= norm;
        }
    }
    ChunkVector out;
    out.doc_id = chunk.doc_id;
    out.chunk_index = chunk.chunk_index;
    out.values.resize(d);
    for (size_t i = 0; i < d; ++i) out.values[i] = static_cast<float>(acc[i]);
    return out;
}

// Encodes a free-standing text (question or answer) as a single chunk.
inline std::vector<float> encode_text(const std::string& text, const EncoderSpec& spec, uint64_t seed) {
    Chunk c;
    c.doc_id = "$text";
    c.chunk_index = 0;
    c.text = text;
    c.token_count = static_cast<int>(count_tokens(text));
    return reference_encode(c, spec, seed).values;
}

}  // namespace nlm
