#pragma once

// Sharded on-disk store of chunk vectors.
//
// Shard layout (all integers little-endian):
//   magic "NLMC", version u32, dim u32, normalizes u8,
//   encoder name (u32 length + UTF-8 bytes), corpus checksum (32 bytes),
//   zero padding up to byte 4096,
//   records: { doc_id (u32 length + bytes), chunk_count u32,
//              chunk_count x dim f32 },
//   footer sentinel "NLME".
// A shard without the footer was never finalized and must not be read.
// The side file index.json maps doc_id -> {shard, offset, chunk_count} in
// write order; offset is the byte position of the record in its shard.

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunker.hpp"
#include "common.hpp"
#include "encoder.hpp"
#include "tensor.hpp"

namespace nlm {

namespace detail {
inline constexpr char kCacheMagic[4] = {'N', 'L', 'M', 'C'};
inline constexpr char kCacheFooter[4] = {'N', 'L', 'M', 'E'};
inline constexpr uint32_t kCacheVersion = 1;
inline constexpr size_t kHeaderSize = 4096;

inline std::string shard_name(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "shard-%04zu.nlmc", index);
    return buf;
}
}  // namespace detail

// Checksum of a chunk manifest; identifies the corpus a cache was built from.
inline std::array<uint8_t, 32> manifest_checksum(const std::vector<ChunkedDocument>& docs) {
    Checksum256 sum;
    for (const auto& d : docs) {
        for (const auto& c : d.chunks) {
            sum.update(c.doc_id);
            sum.update("\0", 1);
            uint32_t idx = static_cast<uint32_t>(c.chunk_index);
            uint8_t b[4] = {static_cast<uint8_t>(idx), static_cast<uint8_t>(idx >> 8),
                            static_cast<uint8_t>(idx >> 16), static_cast<uint8_t>(idx >> 24)};
            sum.update(b, 4);
            sum.update(c.text);
            sum.update("\0", 1);
        }
    }
    return sum.finish();
}

// Sequential single-writer. Documents are appended in call order; finalize()
// writes the footer of the open shard and the side index.
class CacheWriter {
public:
    CacheWriter(std::string dir, EncoderSpec spec, std::array<uint8_t, 32> checksum,
                size_t docs_per_shard = 1024)
        : dir_(std::move(dir)), spec_(std::move(spec)), checksum_(checksum),
          docs_per_shard_(docs_per_shard == 0 ? 1 : docs_per_shard) {
        spec_.validate();
        std::filesystem::create_directories(dir_);
    }

    void add_document(const std::string& doc_id, const Matrix<float>& vectors) {
        if (finalized_) throw DataError("cache writer already finalized");
        if (vectors.rows == 0) throw DataError("document '" + doc_id + "' has no vectors");
        if (vectors.cols != static_cast<size_t>(spec_.dim)) {
            throw DataError("dimension mismatch for document '" + doc_id + "': encoder produced " +
                            std::to_string(vectors.cols) + ", cache expects " + std::to_string(spec_.dim));
        }
        if (index_.count(doc_id) > 0) throw DataError("duplicate document in cache: " + doc_id);
        for (size_t r = 0; r < vectors.rows; ++r) {
            const float* row = vectors.row(r);
            if (!all_finite(row, vectors.cols)) {
                throw DataError("non-finite vector component in document '" + doc_id + "' chunk " +
                                std::to_string(r));
            }
            if (spec_.normalizes) {
                float norm = l2_norm(row, vectors.cols);
                if (std::abs(norm - 1.0f) >= 1e-5f) {
                    throw DataError("vector not unit-norm in document '" + doc_id + "' chunk " +
                                    std::to_string(r) + " (norm " + std::to_string(norm) + ")");
                }
            }
        }
        if (!shard_.is_open() || docs_in_shard_ >= docs_per_shard_) rotate_();

        uint64_t offset = static_cast<uint64_t>(shard_.tellp());
        put_string(shard_, doc_id);
        put_u32(shard_, static_cast<uint32_t>(vectors.rows));
        put_f32_array(shard_, vectors.data.data(), vectors.data.size());
        if (!shard_) throw DataError("write failure on shard " + detail::shard_name(shard_index_));
        ++docs_in_shard_;

        Entry e;
        e.shard = detail::shard_name(shard_index_);
        e.offset = offset;
        e.chunk_count = static_cast<uint32_t>(vectors.rows);
        order_.push_back(doc_id);
        index_[doc_id] = e;
    }

    void finalize() {
        if (finalized_) return;
        if (order_.empty()) throw DataError("cannot finalize an empty cache");
        close_shard_();
        nlohmann::ordered_json idx;
        for (const auto& id : order_) {
            const Entry& e = index_[id];
            idx[id] = {{"shard", e.shard}, {"offset", e.offset}, {"chunk_count", e.chunk_count}};
        }
        std::ofstream out(dir_ + "/index.json", std::ios::binary);
        if (!out) throw DataError("cannot write cache index in " + dir_);
        out << idx.dump(2) << '\n';
        if (!out) throw DataError("failed while writing cache index in " + dir_);
        finalized_ = true;
    }

private:
    struct Entry {
        std::string shard;
        uint64_t offset = 0;
        uint32_t chunk_count = 0;
    };

    void rotate_() {
        close_shard_();
        shard_index_ = shards_written_;
        std::string path = dir_ + "/" + detail::shard_name(shard_index_);
        shard_.open(path, std::ios::binary);
        if (!shard_) throw DataError("cannot create shard file: " + path);
        shard_.write(detail::kCacheMagic, 4);
        put_u32(shard_, detail::kCacheVersion);
        put_u32(shard_, static_cast<uint32_t>(spec_.dim));
        put_u8(shard_, spec_.normalizes ? 1 : 0);
        put_string(shard_, spec_.name);
        shard_.write(reinterpret_cast<const char*>(checksum_.data()), 32);
        uint64_t pos = static_cast<uint64_t>(shard_.tellp());
        if (pos > detail::kHeaderSize) throw DataError("encoder name too long for shard header");
        for (uint64_t i = pos; i < detail::kHeaderSize; ++i) shard_.put('\0');
        docs_in_shard_ = 0;
        ++shards_written_;
    }

    void close_shard_() {
        if (shard_.is_open()) {
            shard_.write(detail::kCacheFooter, 4);
            shard_.close();
        }
    }

    std::string dir_;
    EncoderSpec spec_;
    std::array<uint8_t, 32> checksum_;
    size_t docs_per_shard_;
    std::ofstream shard_;
    size_t shard_index_ = 0;
    size_t shards_written_ = 0;
    size_t docs_in_shard_ = 0;
    std::vector<std::string> order_;
    std::map<std::string, Entry> index_;
    bool finalized_ = false;
};

// Read-only view of a finalized cache. Each read opens its own stream, so
// concurrent readers need no coordination.
class EmbeddingCache {
public:
    static EmbeddingCache open(const std::string& dir) {
        EmbeddingCache cache;
        cache.dir_ = dir;
        std::ifstream in(dir + "/index.json");
        if (!in) throw DataError("cannot open cache index: " + dir + "/index.json");
        nlohmann::ordered_json idx;
        try {
            in >> idx;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad cache index in " + dir + ": " + e.what());
        }
        std::map<std::string, bool> seen_shards;
        for (auto it = idx.begin(); it != idx.end(); ++it) {
            Entry e;
            e.shard = it.value().at("shard").get<std::string>();
            e.offset = it.value().at("offset").get<uint64_t>();
            e.chunk_count = it.value().at("chunk_count").get<uint32_t>();
            if (e.chunk_count == 0) throw DataError("cache index lists zero chunks for '" + it.key() + "'");
            if (!seen_shards.count(e.shard)) {
                cache.validate_shard_(dir + "/" + e.shard, seen_shards.empty());
                seen_shards[e.shard] = true;
            }
            cache.order_.push_back(it.key());
            cache.index_[it.key()] = e;
        }
        if (cache.order_.empty()) throw DataError("cache index is empty: " + dir);
        return cache;
    }

    const EncoderSpec& spec() const { return spec_; }
    const std::array<uint8_t, 32>& checksum() const { return checksum_; }
    const std::vector<std::string>& doc_ids() const { return order_; }
    size_t doc_count() const { return order_.size(); }

    bool contains(const std::string& doc_id) const { return index_.count(doc_id) > 0; }

    uint32_t chunk_count(const std::string& doc_id) const { return entry_(doc_id).chunk_count; }

    // Vectors in chunk_index order, bit-exact to what was written.
    Matrix<float> read_doc(const std::string& doc_id) const {
        const Entry& e = entry_(doc_id);
        std::ifstream in(dir_ + "/" + e.shard, std::ios::binary);
        if (!in) throw DataError("cannot open shard: " + e.shard);
        in.seekg(static_cast<std::streamoff>(e.offset));
        std::string stored_id = get_string(in);
        if (stored_id != doc_id) {
            throw DataError("cache index out of sync: expected '" + doc_id + "', found '" + stored_id + "'");
        }
        uint32_t count = get_u32(in);
        if (count != e.chunk_count) throw DataError("chunk count mismatch for '" + doc_id + "'");
        Matrix<float> m(count, static_cast<size_t>(spec_.dim));
        get_f32_array(in, m.data.data(), m.data.size());
        return m;
    }

    std::vector<ChunkVector> read_doc_vectors(const std::string& doc_id) const {
        Matrix<float> m = read_doc(doc_id);
        std::vector<ChunkVector> out(m.rows);
        for (size_t r = 0; r < m.rows; ++r) {
            out[r].doc_id = doc_id;
            out[r].chunk_index = static_cast<int>(r);
            out[r].values.assign(m.row(r), m.row(r) + m.cols);
        }
        return out;
    }

    // Full invariant scan: finite components, unit norm when the spec says so.
    void scan_validate() const {
        for (const auto& id : order_) {
            Matrix<float> m = read_doc(id);
            for (size_t r = 0; r < m.rows; ++r) {
                if (!all_finite(m.row(r), m.cols)) {
                    throw DataError("non-finite cached vector: doc '" + id + "' chunk " + std::to_string(r));
                }
                if (spec_.normalizes) {
                    float norm = l2_norm(m.row(r), m.cols);
                    if (std::abs(norm - 1.0f) >= 1e-5f) {
                        throw DataError("cached vector not unit-norm: doc '" + id + "' chunk " +
                                        std::to_string(r));
                    }
                }
            }
        }
    }

private:
    struct Entry {
        std::string shard;
        uint64_t offset = 0;
        uint32_t chunk_count = 0;
    };

    const Entry& entry_(const std::string& doc_id) const {
        auto it = index_.find(doc_id);
        if (it == index_.end()) throw DataError("document not found in cache: " + doc_id);
        return it->second;
    }

    void validate_shard_(const std::string& path, bool first) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open shard: " + path);
        char magic[4];
        in.read(magic, 4);
        if (in.gcount() != 4 || std::memcmp(magic, detail::kCacheMagic, 4) != 0) {
            throw DataError("bad shard magic: " + path);
        }
        uint32_t version = get_u32(in);
        if (version != detail::kCacheVersion) {
            throw DataError("unsupported cache version " + std::to_string(version) + " in " + path);
        }
        EncoderSpec s;
        s.dim = static_cast<int>(get_u32(in));
        s.normalizes = get_u8(in) != 0;
        s.name = get_string(in);
        std::array<uint8_t, 32> sum{};
        in.read(reinterpret_cast<char*>(sum.data()), 32);
        if (in.gcount() != 32) throw DataError("truncated shard header: " + path);
        if (first) {
            spec_ = s;
            checksum_ = sum;
        } else if (s.dim != spec_.dim || s.normalizes != spec_.normalizes || s.name != spec_.name ||
                   sum != checksum_) {
            throw DataError("shard header disagrees with cache: " + path);
        }
        in.seekg(-4, std::ios::end);
        char footer[4];
        in.read(footer, 4);
        if (in.gcount() != 4 || std::memcmp(footer, detail::kCacheFooter, 4) != 0) {
            throw DataError("shard not finalized (missing footer): " + path);
        }
    }

    std::string dir_;
    EncoderSpec spec_;
    std::array<uint8_t, 32> checksum_{};
    std::vector<std::string> order_;
    std::map<std::string, Entry> index_;
};

using ChunkEncoder = std::function<std::vector<float>(const Chunk&)>;

// Encodes every chunk of the manifest and writes a finalized cache.
// Encoding parallelizes over documents; writes happen in corpus order.
inline void encode_corpus(const std::vector<ChunkedDocument>& manifest, const ChunkEncoder& encoder,
                          const EncoderSpec& spec, const std::string& out_dir,
                          size_t docs_per_shard = 1024, int workers = 1) {
    if (manifest.empty()) throw DataError("manifest is empty");
    CacheWriter writer(out_dir, spec, manifest_checksum(manifest), docs_per_shard);

    auto encode_doc = [&](const ChunkedDocument& d) {
        Matrix<float> m(d.chunks.size(), static_cast<size_t>(spec.dim));
        for (size_t i = 0; i < d.chunks.size(); ++i) {
            std::vector<float> v = encoder(d.chunks[i]);
            if (v.size() != static_cast<size_t>(spec.dim)) {
                throw DataError("dimension mismatch: encoder produced " + std::to_string(v.size()) +
                                ", spec says " + std::to_string(spec.dim) + " (doc '" + d.doc_id + "')");
            }
            std::copy(v.begin(), v.end(), m.row(i));
        }
        return m;
    };

    if (workers <= 1 || manifest.size() < 2) {
        for (const auto& d : manifest) writer.add_document(d.doc_id, encode_doc(d));
    } else {
        size_t w = std::min<size_t>(static_cast<size_t>(workers), manifest.size());
        std::vector<Matrix<float>> encoded(manifest.size());
        std::vector<std::future<void>> futures;
        for (size_t t = 0; t < w; ++t) {
            futures.push_back(std::async(std::launch::async, [&, t]() {
                for (size_t i = t; i < manifest.size(); i += w) encoded[i] = encode_doc(manifest[i]);
            }));
        }
        for (auto& f : futures) f.get();
        for (size_t i = 0; i < manifest.size(); ++i) writer.add_document(manifest[i].doc_id, encoded[i]);
    }
    writer.finalize();
}

inline void encode_corpus_reference(const std::vector<ChunkedDocument>& manifest, const EncoderSpec& spec,
                                    uint64_t seed, const std::string& out_dir,
                                    size_t docs_per_shard = 1024, int workers = 1) {
    encode_corpus(
        manifest, [&](const Chunk& c) { return reference_encode(c, spec, seed).values; }, spec, out_dir,
        docs_per_shard, workers);
}

enum class ImportFormat { Jsonl, RawF32 };

// Imports externally computed vectors (e.g. real SBERT embeddings). Rows
// must follow manifest order; the first offending row is named on error.
inline void import_external(const std::string& vectors_path, ImportFormat format,
                            const std::vector<ChunkedDocument>& manifest, const EncoderSpec& spec,
                            const std::string& out_dir, size_t docs_per_shard = 1024) {
    if (manifest.empty()) throw DataError("manifest is empty");
    size_t total_chunks = 0;
    for (const auto& d : manifest) total_chunks += d.chunks.size();
    const size_t dim = static_cast<size_t>(spec.dim);

    std::vector<Matrix<float>> per_doc;
    per_doc.reserve(manifest.size());
    for (const auto& d : manifest) per_doc.emplace_back(d.chunks.size(), dim);

    if (format == ImportFormat::Jsonl) {
        std::ifstream in(vectors_path);
        if (!in) throw DataError("cannot open vectors file: " + vectors_path);
        std::string line;
        size_t row = 0;
        size_t doc_i = 0, chunk_i = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (row >= total_chunks) {
                throw DataError("row " + std::to_string(row + 1) + ": more vector rows than manifest chunks (" +
                                std::to_string(total_chunks) + ")");
            }
            const Chunk& expect = manifest[doc_i].chunks[chunk_i];
            try {
                nlohmann::json j = nlohmann::json::parse(line);
                std::string doc_id = j.at("doc_id").get<std::string>();
                int chunk_index = j.at("chunk_index").get<int>();
                if (doc_id != expect.doc_id || chunk_index != expect.chunk_index) {
                    throw DataError("row " + std::to_string(row + 1) + ": expected doc '" + expect.doc_id +
                                    "' chunk " + std::to_string(expect.chunk_index) + ", found doc '" +
                                    doc_id + "' chunk " + std::to_string(chunk_index));
                }
                auto vals = j.at("values");
                if (vals.size() != dim) {
                    throw DataError("row " + std::to_string(row + 1) + ": dimension " +
                                    std::to_string(vals.size()) + " does not match spec dim " +
                                    std::to_string(dim));
                }
                for (size_t i = 0; i < dim; ++i) per_doc[doc_i](chunk_i, i) = vals[i].get<float>();
            } catch (const nlohmann::json::exception& e) {
                throw DataError("row " + std::to_string(row + 1) + ": " + e.what());
            }
            ++row;
            if (++chunk_i == manifest[doc_i].chunks.size()) {
                chunk_i = 0;
                ++doc_i;
            }
        }
        if (row != total_chunks) {
            throw DataError("vectors file has " + std::to_string(row) + " rows, manifest has " +
                            std::to_string(total_chunks) + " chunks");
        }
    } else {
        std::ifstream in(vectors_path, std::ios::binary);
        if (!in) throw DataError("cannot open vectors file: " + vectors_path);
        in.seekg(0, std::ios::end);
        uint64_t bytes = static_cast<uint64_t>(in.tellg());
        uint64_t expect = static_cast<uint64_t>(total_chunks) * dim * 4;
        if (bytes != expect) {
            throw DataError("vectors file is " + std::to_string(bytes) + " bytes, expected " +
                            std::to_string(expect) + " (" + std::to_string(total_chunks) + " rows x " +
                            std::to_string(dim) + " f32)");
        }
        in.seekg(0);
        for (size_t d = 0; d < manifest.size(); ++d) {
            get_f32_array(in, per_doc[d].data.data(), per_doc[d].data.size());
        }
    }

    CacheWriter writer(out_dir, spec, manifest_checksum(manifest), docs_per_shard);
    for (size_t d = 0; d < manifest.size(); ++d) writer.add_document(manifest[d].doc_id, per_doc[d]);
    writer.finalize();
}

}  // namespace nlm
