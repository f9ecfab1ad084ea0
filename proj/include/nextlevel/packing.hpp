#pragma once

// Packing chunk sequences into fixed-length model inputs.
//
// Slot 0 of every sequence is CLS. Each document window contributes its
// chunks followed by one SEP, so a window of n chunks needs n+1 free slots.
// Packing is greedy in corpus order: when the next window does not fit into
// the open sequence, the remainder is padded and a new sequence starts.
// Documents longer than seq_len-2 chunks are split into consecutive windows
// of at most seq_len-2 chunks each.

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace nlm {

enum class SlotKind : uint8_t { Pad = 0, Cls = 1, Sep = 2, Chunk = 3 };

struct DocExtent {
    std::string doc_id;
    uint32_t chunk_count = 0;
};

// Half-open chunk range [begin, end) of one document.
struct Window {
    int32_t doc = -1;
    int32_t begin = 0;
    int32_t end = 0;
    int32_t sequence = -1;  // sequence the window was packed into
    int32_t slot = -1;      // slot of its first chunk
};

struct Slot {
    SlotKind kind = SlotKind::Pad;
    int32_t doc = -1;
    int32_t chunk = -1;
    int32_t window = -1;
};

struct PackedSequence {
    std::vector<Slot> slots;
};

struct PackedCorpus {
    int seq_len = 0;
    std::vector<DocExtent> docs;
    std::vector<Window> windows;
    std::vector<PackedSequence> sequences;

    size_t chunk_slot_count() const {
        size_t n = 0;
        for (const auto& w : windows) n += static_cast<size_t>(w.end - w.begin);
        return n;
    }

    double pad_fraction() const {
        if (sequences.empty()) return 0.0;
        size_t pads = 0;
        for (const auto& s : sequences)
            for (const auto& slot : s.slots)
                if (slot.kind == SlotKind::Pad) ++pads;
        return static_cast<double>(pads) / (static_cast<double>(sequences.size()) * seq_len);
    }
};

inline std::vector<std::pair<int32_t, int32_t>> make_windows(uint32_t chunk_count, int capacity) {
    std::vector<std::pair<int32_t, int32_t>> out;
    int32_t n = static_cast<int32_t>(chunk_count);
    for (int32_t begin = 0; begin < n; begin += capacity) {
        out.emplace_back(begin, std::min(begin + capacity, n));
    }
    return out;
}

inline PackedCorpus pack_corpus(std::vector<DocExtent> docs, int seq_len) {
    if (seq_len < 3) throw DataError("sequence length must be at least 3 (CLS + chunk + SEP)");
    PackedCorpus out;
    out.seq_len = seq_len;
    out.docs = std::move(docs);
    const int capacity = seq_len - 2;

    for (size_t d = 0; d < out.docs.size(); ++d) {
        if (out.docs[d].chunk_count == 0) {
            throw DataError("document '" + out.docs[d].doc_id + "' has no chunks");
        }
        for (auto [begin, end] : make_windows(out.docs[d].chunk_count, capacity)) {
            Window w;
            w.doc = static_cast<int32_t>(d);
            w.begin = begin;
            w.end = end;
            out.windows.push_back(w);
        }
    }

    PackedSequence current;
    int cursor = 0;
    auto open_sequence = [&]() {
        current.slots.assign(static_cast<size_t>(seq_len), Slot{});
        current.slots[0].kind = SlotKind::Cls;
        cursor = 1;
    };
    auto close_sequence = [&]() {
        if (cursor > 1) {
            out.sequences.push_back(std::move(current));
            cursor = 0;
        }
    };

    open_sequence();
    for (size_t wi = 0; wi < out.windows.size(); ++wi) {
        Window& w = out.windows[wi];
        int need = (w.end - w.begin) + 1;
        if (cursor + need > seq_len) {
            close_sequence();
            open_sequence();
        }
        w.sequence = static_cast<int32_t>(out.sequences.size());
        w.slot = cursor;
        for (int32_t c = w.begin; c < w.end; ++c) {
            Slot& s = current.slots[static_cast<size_t>(cursor++)];
            s.kind = SlotKind::Chunk;
            s.doc = w.doc;
            s.chunk = c;
            s.window = static_cast<int32_t>(wi);
        }
        Slot& sep = current.slots[static_cast<size_t>(cursor++)];
        sep.kind = SlotKind::Sep;
        sep.doc = w.doc;
        sep.window = static_cast<int32_t>(wi);
    }
    close_sequence();
    if (out.sequences.empty()) throw DataError("nothing to pack");
    return out;
}

// Fixed-size minibatch of packed sequences with gathered input vectors.
// CLS/SEP/PAD slots hold zeros; the model substitutes its trained special
// vectors by slot kind.
struct Batch {
    int batch = 0;
    int seq_len = 0;
    int dim = 0;
    std::vector<float> x;     // batch * seq_len * dim
    std::vector<Slot> slots;  // batch * seq_len

    float* input(int b, int t) {
        return x.data() + (static_cast<size_t>(b) * seq_len + t) * dim;
    }
    const float* input(int b, int t) const {
        return x.data() + (static_cast<size_t>(b) * seq_len + t) * dim;
    }
    const Slot& slot(int b, int t) const {
        return slots[static_cast<size_t>(b) * seq_len + t];
    }
};

// Vector source: (doc index, chunk index) -> pointer to dim floats.
template <typename Lookup>
Batch make_batch(const PackedCorpus& packed, const std::vector<size_t>& sequence_indices, int dim,
                 Lookup&& lookup) {
    Batch batch;
    batch.batch = static_cast<int>(sequence_indices.size());
    batch.seq_len = packed.seq_len;
    batch.dim = dim;
    batch.x.assign(static_cast<size_t>(batch.batch) * batch.seq_len * dim, 0.0f);
    batch.slots.resize(static_cast<size_t>(batch.batch) * batch.seq_len);
    for (int b = 0; b < batch.batch; ++b) {
        const PackedSequence& seq = packed.sequences.at(sequence_indices[static_cast<size_t>(b)]);
        for (int t = 0; t < batch.seq_len; ++t) {
            const Slot& s = seq.slots[static_cast<size_t>(t)];
            batch.slots[static_cast<size_t>(b) * batch.seq_len + t] = s;
            if (s.kind == SlotKind::Chunk) {
                const float* v = lookup(s.doc, s.chunk);
                std::copy(v, v + dim, batch.input(b, t));
            }
        }
    }
    return batch;
}

}  // namespace nlm
