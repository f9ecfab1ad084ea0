#pragma once

// Masking of chunk slots in a batch.
//
// Each chunk slot is selected independently with probability `rate`. A
// selected slot is then masked (input replaced by the trainable mask
// vector), swapped for a random donor chunk from another sequence in the
// batch, or kept unchanged, with probabilities p_mask / p_random / the
// remainder. In simple mode every selected slot is masked. Targets are the
// original vectors, captured before any replacement. The regression loss is
// taken over all selected slots regardless of action (a kept slot is still
// a prediction target); trainers may restrict it to masked slots only.

#include <cstdint>
#include <utility>
#include <vector>

#include "common.hpp"
#include "packing.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace nlm {

enum class MaskAction : uint8_t { None = 0, Masked = 1, Random = 2, Kept = 3 };

struct MaskingConfig {
    double rate = 0.15;
    double p_mask = 0.8;
    double p_random = 0.1;
    bool simple_mode = false;

    void validate() const {
        if (!(rate > 0.0 && rate <= 1.0)) throw DataError("masking rate must be in (0, 1]");
        if (p_mask < 0.0 || p_random < 0.0 || p_mask + p_random > 1.0) {
            throw DataError("masking action probabilities must be non-negative and sum to at most 1");
        }
    }
};

struct MaskPlan {
    int batch = 0;
    int seq_len = 0;
    int dim = 0;
    std::vector<MaskAction> actions;              // batch * seq_len
    std::vector<std::pair<int, int>> selected;    // (b, t) in draw order
    Matrix<float> targets;                        // selected.size() x dim

    MaskAction action(int b, int t) const {
        return actions[static_cast<size_t>(b) * seq_len + t];
    }
};

// Mutates batch.x in place. Draws happen in (b, t) order so the plan is a
// pure function of the batch layout and the RNG state. When the batch has a
// single sequence the donor pool falls back to other chunk slots of the same
// sequence; with no donor at all the slot is kept instead.
inline MaskPlan apply_masking(Batch& batch, const MaskingConfig& cfg, const float* mask_vector, Rng& rng) {
    cfg.validate();
    MaskPlan plan;
    plan.batch = batch.batch;
    plan.seq_len = batch.seq_len;
    plan.dim = batch.dim;
    plan.actions.assign(static_cast<size_t>(batch.batch) * batch.seq_len, MaskAction::None);

    std::vector<std::vector<std::pair<int, int>>> chunk_slots(static_cast<size_t>(batch.batch));
    size_t total_chunks = 0;
    for (int b = 0; b < batch.batch; ++b) {
        for (int t = 0; t < batch.seq_len; ++t) {
            if (batch.slot(b, t).kind == SlotKind::Chunk) {
                chunk_slots[static_cast<size_t>(b)].emplace_back(b, t);
                ++total_chunks;
            }
        }
    }

    std::vector<std::pair<int, int>> picks;
    std::vector<MaskAction> pick_actions;
    std::vector<std::pair<int, int>> donors;  // donor slot per pick, (-1,-1) if none
    for (int b = 0; b < batch.batch; ++b) {
        for (const auto& [pb, pt] : chunk_slots[static_cast<size_t>(b)]) {
            if (rng.uniform01() >= cfg.rate) continue;
            MaskAction action = MaskAction::Masked;
            std::pair<int, int> donor{-1, -1};
            if (!cfg.simple_mode) {
                double u = rng.uniform01();
                if (u < cfg.p_mask) {
                    action = MaskAction::Masked;
                } else if (u < cfg.p_mask + cfg.p_random) {
                    size_t pool = total_chunks - chunk_slots[static_cast<size_t>(b)].size();
                    bool same_seq = false;
                    if (pool == 0) {
                        pool = chunk_slots[static_cast<size_t>(b)].size() - 1;
                        same_seq = true;
                    }
                    if (pool == 0) {
                        action = MaskAction::Kept;
                    } else {
                        action = MaskAction::Random;
                        uint64_t k = rng.below(pool);
                        if (same_seq) {
                            for (const auto& slot : chunk_slots[static_cast<size_t>(b)]) {
                                if (slot.first == pb && slot.second == pt) continue;
                                if (k == 0) { donor = slot; break; }
                                --k;
                            }
                        } else {
                            for (int ob = 0; ob < batch.batch && donor.first < 0; ++ob) {
                                if (ob == b) continue;
                                const auto& slots = chunk_slots[static_cast<size_t>(ob)];
                                if (k < slots.size()) donor = slots[static_cast<size_t>(k)];
                                else k -= slots.size();
                            }
                        }
                    }
                } else {
                    action = MaskAction::Kept;
                }
            }
            picks.emplace_back(pb, pt);
            pick_actions.push_back(action);
            donors.push_back(donor);
        }
    }

    plan.selected = picks;
    plan.targets = Matrix<float>(picks.size(), static_cast<size_t>(batch.dim));
    for (size_t i = 0; i < picks.size(); ++i) {
        auto [b, t] = picks[i];
        const float* original = batch.input(b, t);
        std::copy(original, original + batch.dim, plan.targets.row(i));
    }
    // Replacements happen after all targets are captured so a donor read
    // always sees an original vector, not an already-masked one.
    std::vector<std::vector<float>> donor_values(picks.size());
    for (size_t i = 0; i < picks.size(); ++i) {
        if (pick_actions[i] == MaskAction::Random) {
            const float* v = batch.input(donors[i].first, donors[i].second);
            donor_values[i].assign(v, v + batch.dim);
        }
    }
    for (size_t i = 0; i < picks.size(); ++i) {
        auto [b, t] = picks[i];
        plan.actions[static_cast<size_t>(b) * batch.seq_len + t] = pick_actions[i];
        if (pick_actions[i] == MaskAction::Masked) {
            std::copy(mask_vector, mask_vector + batch.dim, batch.input(b, t));
        } else if (pick_actions[i] == MaskAction::Random) {
            std::copy(donor_values[i].begin(), donor_values[i].end(), batch.input(b, t));
        }
    }
    return plan;
}

struct MaskStats {
    size_t chunk_slots = 0;
    size_t selected = 0;
    size_t masked = 0;
    size_t random = 0;
    size_t kept = 0;
};

inline MaskStats accumulate_stats(const Batch& batch, const MaskPlan& plan, MaskStats stats = {}) {
    for (int b = 0; b < batch.batch; ++b) {
        for (int t = 0; t < batch.seq_len; ++t) {
            if (batch.slot(b, t).kind != SlotKind::Chunk) continue;
            ++stats.chunk_slots;
            switch (plan.action(b, t)) {
                case MaskAction::Masked: ++stats.selected; ++stats.masked; break;
                case MaskAction::Random: ++stats.selected; ++stats.random; break;
                case MaskAction::Kept: ++stats.selected; ++stats.kept; break;
                case MaskAction::None: break;
            }
        }
    }
    return stats;
}

}  // namespace nlm
